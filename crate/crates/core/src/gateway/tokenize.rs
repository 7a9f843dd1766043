use alloc::vec::Vec;

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

/// Token-boundary function used by mock backends.
pub trait Tokenizer: Send + Sync {
    /// Ordered, non-overlapping token spans of `text`.
    fn spans(&self, text: &str) -> Vec<Span>;
}

/// One token per Unicode scalar value.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn spans(&self, text: &str) -> Vec<Span> {
        text.char_indices()
            .map(|(i, c)| Span::new(i, i + c.len_utf8()))
            .collect()
    }
}

/// Words with their leading whitespace attached, so the spans tile the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut start = 0;
        let mut in_word = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if in_word {
                    spans.push(Span::new(start, i));
                    start = i;
                    in_word = false;
                }
            } else {
                in_word = true;
            }
        }
        if start < text.len() {
            spans.push(Span::new(start, text.len()));
        }
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_spans_follow_utf8_widths() {
        let spans = CharTokenizer.spans("aé✓");
        assert_eq!(spans, [Span::new(0, 1), Span::new(1, 3), Span::new(3, 6)]);
    }

    #[test]
    fn whitespace_spans_tile() {
        let text = " ab  cd e";
        let spans = WhitespaceTokenizer.spans(text);
        assert_eq!(spans, [Span::new(0, 3), Span::new(3, 7), Span::new(7, 9)]);
    }

    #[test]
    fn trailing_whitespace_becomes_its_own_span() {
        let spans = WhitespaceTokenizer.spans("ab  ");
        assert_eq!(spans, [Span::new(0, 2), Span::new(2, 4)]);
    }
}
