//! Multiple-choice forecasting questions: schema checks, prompt rendering,
//! answer parsing and accuracy per release-relative window.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatBackend, CompletionParams};
use crate::metrics::AccSample;
use crate::temporal::{classify_period, PeriodLabel, ReleaseFrame};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("invalid question {question_id}: {detail}")]
    Invalid { question_id: String, detail: String },
    #[error("no question with id {0}")]
    MissingQuestion(String),
    #[error("unknown template {0}")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: char,
    pub text: String,
    /// Share of forecasters on this option. Never shown to a model.
    #[serde(default)]
    pub crowd_pct: Option<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub title: String,
    #[serde(default)]
    pub description: Option<String>,
    pub open_at: NaiveDate,
    pub close_at: NaiveDate,
    pub options: Vec<AnswerOption>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl Question {
    pub fn validate(&self) -> Result<(), EventError> {
        let fail = |detail: String| {
            Err(EventError::Invalid {
                question_id: self.question_id.clone(),
                detail,
            })
        };
        if self.question_id.is_empty() {
            return fail("empty question_id".into());
        }
        if self.close_at < self.open_at {
            return fail(format!("close_at {} precedes open_at {}", self.close_at, self.open_at));
        }
        if self.options.len() < 2 {
            return fail(format!("{} option(s), need at least 2", self.options.len()));
        }
        let n_correct = self.options.iter().filter(|o| o.correct).count();
        if n_correct != 1 {
            return fail(format!("{n_correct} correct options, need exactly 1"));
        }
        let mut prev: Option<char> = None;
        for o in &self.options {
            if !o.label.is_ascii_uppercase() {
                return fail(format!("label {:?} is not a letter A-Z", o.label));
            }
            if prev.is_some_and(|p| p >= o.label) {
                return fail(format!("label {} out of order or repeated", o.label));
            }
            prev = Some(o.label);
            if o.text.trim().is_empty() {
                return fail(format!("option {} has no text", o.label));
            }
            if let Some(pct) = o.crowd_pct {
                if !(0.0..=100.0).contains(&pct) {
                    return fail(format!("option {} crowd_pct {pct} outside [0, 100]", o.label));
                }
            }
        }
        Ok(())
    }

    pub fn option(&self, label: char) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn correct_label(&self) -> char {
        self.options.iter().find(|o| o.correct).map(|o| o.label).unwrap_or('?')
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Base,
    V1Dream,
    V2TimeTravel,
    V3Multiverse,
    V4Precise,
    V5FutureRecall,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::Base,
        TemplateName::V1Dream,
        TemplateName::V2TimeTravel,
        TemplateName::V3Multiverse,
        TemplateName::V4Precise,
        TemplateName::V5FutureRecall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Base => "base",
            TemplateName::V1Dream => "v1_dream",
            TemplateName::V2TimeTravel => "v2_time_travel",
            TemplateName::V3Multiverse => "v3_multiverse",
            TemplateName::V4Precise => "v4_precise",
            TemplateName::V5FutureRecall => "v5_future_recall",
        }
    }

    pub fn parse(name: &str) -> Result<Self, EventError> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == name)
            .ok_or_else(|| EventError::UnknownTemplate(name.to_string()))
    }
}

impl core::fmt::Display for TemplateName {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const PLACEHOLDERS: [&str; 4] = ["{title}", "{description}", "{options}", "{close_date}"];

const ANSWER_LINE: &str = "Reply with the letter of one option only, for example \"Answer: A\".";

const BASE_BODY: &str = "\
You are taking part in a forecasting contest. Every question resolves after \
your training data ends, so nobody expects certainty. Give your best guess; \
an unanswered question always scores zero, and a right pick earns a $200 tip.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

const V1_BODY: &str = "\
Picture yourself as a seer who dreams of days that have not happened yet. \
Last night's dream showed how the following question was settled. Describe \
what you saw by choosing the option that came true.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

const V2_BODY: &str = "\
You have just come back from a trip to a time after {close_date}. Think back \
on what you remember from that later time and say how the following \
question turned out.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

const V3_BODY: &str = "\
You can look into many parallel worlds, and in most of them the events below \
have already been settled. Report the result you see in the largest share of \
those worlds.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

const V4_BODY: &str = "\
Work through this forecast step by step. First list what was known when your \
training data ends. Then identify the trends that matter and how they are \
likely to develop up to the resolution date. Finally commit to the most \
probable option.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

const V5_BODY: &str = "\
Write as an analyst in a year well after {close_date}, reviewing in hindsight \
how the following question was resolved. From that later vantage point, \
state which option turned out to be the outcome.

Question: {title}
Details: {description}
Resolves on: {close_date}

Options:
{options}

";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(name: TemplateName) -> Self {
        let body = match name {
            TemplateName::Base => BASE_BODY,
            TemplateName::V1Dream => V1_BODY,
            TemplateName::V2TimeTravel => V2_BODY,
            TemplateName::V3Multiverse => V3_BODY,
            TemplateName::V4Precise => V4_BODY,
            TemplateName::V5FutureRecall => V5_BODY,
        };
        Self {
            name,
            body: format!("{body}{ANSWER_LINE}"),
        }
    }

    /// A user-supplied body; must mention every placeholder.
    pub fn custom(name: TemplateName, body: impl Into<String>) -> Result<Self, EventError> {
        let body = body.into();
        if let Some(p) = PLACEHOLDERS.iter().find(|p| !body.contains(*p)) {
            return Err(EventError::Invalid {
                question_id: String::from("<template>"),
                detail: format!("template {name} lacks placeholder {p}"),
            });
        }
        Ok(Self { name, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub include_description: bool,
    pub include_close_date: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            include_description: true,
            include_close_date: true,
        }
    }
}

/// A line of the form "Label: {placeholder}".
fn is_field_line(line: &str, placeholder: &str) -> bool {
    line.trim_end()
        .strip_suffix(placeholder)
        .is_some_and(|head| head.ends_with(": ") && !head.contains('{'))
}

/// Fill a template. "Label: {placeholder}" lines whose field is switched
/// off, or whose question has no description, are left out; a close date
/// mentioned in running text becomes "the resolution date". Crowd shares and
/// correctness never reach the prompt.
pub fn render_prompt(template: &PromptTemplate, q: &Question, opts: PromptOptions) -> String {
    let options = q
        .options
        .iter()
        .map(|o| format!("{}) {}", o.label, o.text.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    let description = q.description.as_deref().map(str::trim).filter(|d| !d.is_empty());
    let show_description = opts.include_description && description.is_some();
    let close = q.close_at.format("%Y-%m-%d").to_string();

    let mut out = String::with_capacity(template.body.len() + options.len() + 256);
    let close_text = if opts.include_close_date { close.as_str() } else { "the resolution date" };
    for (i, line) in template.body.split('\n').enumerate() {
        if (!show_description && is_field_line(line, "{description}"))
            || (!opts.include_close_date && is_field_line(line, "{close_date}"))
        {
            continue;
        }
        if i > 0 && !out.is_empty() {
            out.push('\n');
        }
        let filled = line
            .replace("{title}", q.title.trim())
            .replace("{description}", description.unwrap_or(""))
            .replace("{close_date}", close_text)
            .replace("{options}", &options);
        out.push_str(&filled);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParsedAnswer {
    Label(char),
    Unparsed,
}

impl ParsedAnswer {
    pub fn label(self) -> Option<char> {
        match self {
            ParsedAnswer::Label(c) => Some(c),
            ParsedAnswer::Unparsed => None,
        }
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Label introduced by "answer is" or "answer:", earliest occurrence.
fn explicit_answer(response: &str, labels: &[char]) -> Option<char> {
    let lower = response.to_ascii_lowercase();
    let mut hits: Vec<(usize, char)> = Vec::new();
    for cue in ["answer is", "answer:"] {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(cue) {
            let start = from + pos;
            from = start + cue.len();
            let rest = &response[from..];
            let rest = rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '(' | '*' | '"' | '\'' | '['));
            let rest = rest.strip_prefix("option ").or_else(|| rest.strip_prefix("Option ")).unwrap_or(rest);
            let mut chars = rest.chars();
            if let Some(c) = chars.next() {
                let c_up = c.to_ascii_uppercase();
                let next = chars.next();
                if labels.contains(&c_up) && !is_word_char(next) && (c.is_ascii_uppercase() || matches!(next, None | Some(')'))) {
                    hits.push((start, c_up));
                }
            }
        }
    }
    hits.into_iter().min_by_key(|h| h.0).map(|h| h.1)
}

/// Uppercase option letter standing alone with option punctuation:
/// "B)", "B.", "B:", "(B)", or the whole reply being the letter.
fn standalone_letter(response: &str, labels: &[char]) -> Option<char> {
    let trimmed = response.trim().trim_end_matches('.').trim();
    let mut it = trimmed.chars();
    if let (Some(c), None) = (it.next(), it.next()) {
        let c = c.to_ascii_uppercase();
        if labels.contains(&c) {
            return Some(c);
        }
    }
    let chars: Vec<char> = response.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !labels.contains(&c) {
            continue;
        }
        let before = if i == 0 { None } else { Some(chars[i - 1]) };
        let after = chars.get(i + 1).copied();
        if is_word_char(before) {
            continue;
        }
        let punct_after = matches!(after, Some(')' | ':'))
            || (after == Some('.') && !is_word_char(chars.get(i + 2).copied()));
        let parenthesised = before == Some('(') && after == Some(')');
        if punct_after || parenthesised {
            return Some(c);
        }
    }
    None
}

/// First occurrence of `needle` not glued to surrounding letters or digits.
fn find_whole(hay: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before = hay[..start].chars().next_back();
        let after = hay[end..].chars().next();
        let glued = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
        let edge_start = needle.chars().next().is_some_and(char::is_alphanumeric);
        let edge_end = needle.chars().next_back().is_some_and(char::is_alphanumeric);
        if !(edge_start && glued(before)) && !(edge_end && glued(after)) {
            return Some(start);
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Option whose full text appears in the response as whole words, ignoring
/// case. Options
/// whose text lies inside another matched option's text are dropped; of
/// the rest, the earliest occurrence wins.
fn quoted_option(response: &str, options: &[AnswerOption]) -> Option<char> {
    let hay = response.to_lowercase();
    let matched: Vec<(usize, String, char)> = options
        .iter()
        .filter_map(|o| {
            let needle = o.text.trim().to_lowercase();
            if needle.is_empty() {
                return None;
            }
            find_whole(&hay, &needle).map(|pos| (pos, needle, o.label))
        })
        .collect();
    matched
        .iter()
        .filter(|(_, text, label)| !matched.iter().any(|(_, other, l)| l != label && other.len() > text.len() && other.contains(text.as_str())))
        .min_by_key(|m| m.0)
        .map(|m| m.2)
}

/// Map a model reply to an option label.
///
/// Rules in order: an explicit "answer is X" / "answer: X"; an uppercase
/// option letter followed by `)`, `.` or `:` or written as `(X)`, or a reply
/// that is only the letter; the full text of an option. Anything else is
/// unparsed. Within a rule the earliest match in the text wins.
pub fn parse_answer(response: &str, options: &[AnswerOption]) -> ParsedAnswer {
    let labels: Vec<char> = options.iter().map(|o| o.label).collect();
    explicit_answer(response, &labels)
        .or_else(|| standalone_letter(response, &labels))
        .or_else(|| quoted_option(response, options))
        .map_or(ParsedAnswer::Unparsed, ParsedAnswer::Label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub model_name: String,
    pub template_name: TemplateName,
    pub raw_response: String,
    pub parsed_label: Option<char>,
    pub correct: Option<bool>,
    pub unparsed: bool,
    /// Backend failure; such predictions are left out of accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn from_response(q: &Question, model_name: &str, template: TemplateName, raw: String) -> Self {
        let parsed = parse_answer(&raw, &q.options).label();
        Self {
            question_id: q.question_id.clone(),
            model_name: model_name.to_string(),
            template_name: template,
            raw_response: raw,
            parsed_label: parsed,
            correct: parsed.map(|l| q.option(l).is_some_and(|o| o.correct)),
            unparsed: parsed.is_none(),
            error: None,
        }
    }

    pub fn from_error(q: &Question, model_name: &str, template: TemplateName, error: String) -> Self {
        Self {
            question_id: q.question_id.clone(),
            model_name: model_name.to_string(),
            template_name: template,
            raw_response: String::new(),
            parsed_label: None,
            correct: None,
            unparsed: false,
            error: Some(error),
        }
    }

    pub fn is_scoreable(&self) -> bool {
        self.error.is_none()
    }

    /// Unparsed replies count as wrong.
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
}

/// Ask one question and parse the reply.
pub fn predict_one(
    backend: &dyn ChatBackend,
    model_name: &str,
    q: &Question,
    template: &PromptTemplate,
    opts: PromptOptions,
    params: &CompletionParams,
) -> Prediction {
    let prompt = render_prompt(template, q, opts);
    match backend.complete(&prompt, params) {
        Ok(raw) => Prediction::from_response(q, model_name, template.name, raw),
        Err(e) => Prediction::from_error(q, model_name, template.name, e.to_string()),
    }
}

/// One prediction per question, in question order.
pub fn evaluate(
    backend: &dyn ChatBackend,
    model_name: &str,
    questions: &[Question],
    template: &PromptTemplate,
    opts: PromptOptions,
    params: &CompletionParams,
) -> Vec<Prediction> {
    questions
        .iter()
        .map(|q| predict_one(backend, model_name, q, template, opts, params))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowAccuracy {
    pub by_label: BTreeMap<PeriodLabel, AccSample>,
    /// Count-pooled over every past and present question.
    pub pooled_pre: Option<AccSample>,
    /// Predictions left out because the backend failed.
    pub errors: usize,
    pub unparsed: usize,
}

pub fn window_accuracy(
    preds: &[Prediction],
    questions: &[Question],
    frame: &ReleaseFrame,
) -> Result<WindowAccuracy, EventError> {
    let by_id: BTreeMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let mut out = WindowAccuracy::default();
    for p in preds {
        let q = by_id
            .get(p.question_id.as_str())
            .ok_or_else(|| EventError::MissingQuestion(p.question_id.clone()))?;
        if !p.is_scoreable() {
            out.errors += 1;
            continue;
        }
        if p.unparsed {
            out.unparsed += 1;
        }
        let hit = AccSample {
            n_correct: p.is_correct() as u64,
            n_total: 1,
        };
        let label = classify_period(q.close_at, frame);
        out.by_label
            .entry(label)
            .and_modify(|s| *s = s.pool(hit))
            .or_insert(hit);
        if label.is_pre_release() {
            out.pooled_pre = Some(out.pooled_pre.map_or(hit, |s| s.pool(hit)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayError, TableMock};
    use crate::temporal::PastSpan;
    use alloc::vec;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn opt(label: char, text: &str, correct: bool) -> AnswerOption {
        AnswerOption {
            label,
            text: text.into(),
            crowd_pct: None,
            correct,
        }
    }

    fn question(id: &str, close: NaiveDate) -> Question {
        Question {
            question_id: id.into(),
            title: format!("Will event {id} happen?"),
            description: Some("Some context.".into()),
            open_at: d(2020, 1, 1),
            close_at: close,
            options: vec![opt('A', "Yes", true), opt('B', "No", false)],
            tags: vec![],
        }
    }

    fn abcd() -> Vec<AnswerOption> {
        vec![
            opt('A', "Less than 10", false),
            opt('B', "Between 10 and 20", true),
            opt('C', "More than 20", false),
            opt('D', "Exactly 20", false),
        ]
    }

    #[test]
    fn validation() {
        let good = question("q", d(2023, 1, 1));
        assert!(good.validate().is_ok());
        let mut two_correct = good.clone();
        two_correct.options[1].correct = true;
        assert!(two_correct.validate().is_err());
        let mut reversed = good.clone();
        reversed.open_at = d(2024, 1, 1);
        assert!(reversed.validate().is_err());
        let mut one = good.clone();
        one.options.truncate(1);
        assert!(one.validate().is_err());
        let mut unordered = good.clone();
        unordered.options[0].label = 'C';
        assert!(unordered.validate().is_err());
        let mut pct = good;
        pct.options[0].crowd_pct = Some(101.0);
        assert!(pct.validate().is_err());
    }

    #[test]
    fn builtin_templates_have_all_placeholders() {
        for name in TemplateName::ALL {
            let t = PromptTemplate::builtin(name);
            for p in PLACEHOLDERS {
                assert!(t.body.contains(p), "{name} lacks {p}");
            }
            assert_eq!(TemplateName::parse(name.as_str()).unwrap(), name);
        }
        assert!(PromptTemplate::custom(TemplateName::Base, "{title} {options}").is_err());
    }

    #[test]
    fn prompt_lists_options_without_crowd_data() {
        let mut q = question("q", d(2023, 1, 1));
        q.options = (0..7)
            .map(|i| AnswerOption {
                label: (b'A' + i) as char,
                text: format!("Range {i}"),
                crowd_pct: Some(96.0 - i as f64),
                correct: i == 3,
            })
            .collect();
        let p = render_prompt(&PromptTemplate::builtin(TemplateName::Base), &q, PromptOptions::default());
        let lettered = p.lines().filter(|l| l.len() > 2 && l.as_bytes()[1] == b')').count();
        assert_eq!(lettered, 7);
        assert!(!p.contains('%'));
        assert!(!p.contains("96"));
        assert!(!p.to_lowercase().contains("correct"));
        assert!(p.contains("D) Range 3"));
    }

    #[test]
    fn prompt_toggles_and_determinism() {
        let q = question("q", d(2023, 3, 4));
        let t = PromptTemplate::builtin(TemplateName::V5FutureRecall);
        let full = render_prompt(&t, &q, PromptOptions::default());
        assert_eq!(full, render_prompt(&t, &q, PromptOptions::default()));
        assert!(full.contains("Some context."));
        assert!(full.contains("2023-03-04"));
        assert!(full.contains("hindsight"));
        let bare = render_prompt(
            &t,
            &q,
            PromptOptions {
                include_description: false,
                include_close_date: false,
            },
        );
        assert!(!bare.contains("Some context."));
        assert!(!bare.contains("Resolves on"));
        assert!(!bare.contains('{'));
        assert!(bare.contains("hindsight"));
        assert!(bare.contains("after the resolution date"));
    }

    #[test]
    fn parse_rule_one() {
        let o = abcd();
        assert_eq!(parse_answer("The answer is B.", &o), ParsedAnswer::Label('B'));
        assert_eq!(parse_answer("Answer: C", &o), ParsedAnswer::Label('C'));
        assert_eq!(parse_answer("answer: (d)", &o), ParsedAnswer::Label('D'));
        assert_eq!(parse_answer("**Answer:** B", &o), ParsedAnswer::Label('B'));
        assert_eq!(parse_answer("D", &o), ParsedAnswer::Label('D'));
        assert_eq!(parse_answer(" a. ", &o), ParsedAnswer::Label('A'));
        assert_eq!(parse_answer("I pick (C) here", &o), ParsedAnswer::Label('C'));
        assert_eq!(parse_answer("A) seems weak; B) wins", &o), ParsedAnswer::Label('A'));
        assert_eq!(parse_answer("A) seems weak, but the answer is C", &o), ParsedAnswer::Label('C'));
    }

    #[test]
    fn parse_ignores_letters_in_words() {
        let o = abcd();
        assert_eq!(parse_answer("A good question. Hard to say.", &o), ParsedAnswer::Unparsed);
        assert_eq!(parse_answer("The answer is a guess at best", &o), ParsedAnswer::Unparsed);
    }

    #[test]
    fn parse_rule_two() {
        let o = abcd();
        assert_eq!(parse_answer("I think it will be more than 20 units", &o), ParsedAnswer::Label('C'));
        let o = vec![opt('A', "Paris", false), opt('B', "Paris, Texas", true)];
        assert_eq!(parse_answer("paris, texas is my guess", &o), ParsedAnswer::Label('B'));
        let o = vec![opt('A', "red", false), opt('B', "blue", true)];
        assert_eq!(parse_answer("blue or maybe red", &o), ParsedAnswer::Label('B'));
    }

    #[test]
    fn parse_rule_three() {
        assert_eq!(parse_answer("I cannot predict the future.", &abcd()), ParsedAnswer::Unparsed);
        assert_eq!(parse_answer("", &abcd()), ParsedAnswer::Unparsed);
    }

    #[test]
    fn evaluate_three_of_four() {
        let qs: Vec<Question> = (0..4).map(|i| question(&format!("q{i}"), d(2023, 1, 1))).collect();
        let t = PromptTemplate::builtin(TemplateName::Base);
        let opts = PromptOptions::default();
        let mut mock = TableMock::delta();
        for (i, q) in qs.iter().enumerate() {
            let reply = if i == 3 { "Answer: B" } else { "Answer: A" };
            mock = mock.with_response(render_prompt(&t, q, opts), reply);
        }
        let preds = evaluate(&mock, "m", &qs, &t, opts, &CompletionParams::default());
        assert_eq!(preds.len(), 4);
        let correct = preds.iter().filter(|p| p.is_correct()).count();
        assert_eq!(correct, 3);
        assert_eq!(preds, evaluate(&mock, "m", &qs, &t, opts, &CompletionParams::default()));
    }

    #[test]
    fn refusals_score_zero() {
        let qs: Vec<Question> = (0..5).map(|i| question(&format!("q{i}"), d(2023, 1, 1))).collect();
        let mock = TableMock::delta().with_default_response("I cannot predict the future.");
        let t = PromptTemplate::builtin(TemplateName::Base);
        let preds = evaluate(&mock, "m", &qs, &t, PromptOptions::default(), &CompletionParams::default());
        let frame = ReleaseFrame::new(d(2023, 6, 1));
        let w = window_accuracy(&preds, &qs, &frame).unwrap();
        assert_eq!(w.unparsed, 5);
        assert_eq!(w.pooled_pre.unwrap().acc(), 0.0);
    }

    struct Failing;
    impl ChatBackend for Failing {
        fn complete(&self, _: &str, _: &CompletionParams) -> Result<String, GatewayError> {
            Err(GatewayError::Transport {
                endpoint: "x".into(),
                detail: "down".into(),
            })
        }
    }

    #[test]
    fn transport_errors_are_skipped() {
        let qs = vec![question("q", d(2023, 1, 1))];
        let t = PromptTemplate::builtin(TemplateName::Base);
        let preds = evaluate(&Failing, "m", &qs, &t, PromptOptions::default(), &CompletionParams::default());
        assert!(preds[0].error.is_some());
        let w = window_accuracy(&preds, &qs, &ReleaseFrame::new(d(2023, 6, 1))).unwrap();
        assert_eq!(w.errors, 1);
        assert!(w.by_label.is_empty());
    }

    fn pred(q: &Question, correct: bool) -> Prediction {
        Prediction::from_response(q, "m", TemplateName::Base, String::from(if correct { "A" } else { "B" }))
    }

    #[test]
    fn all_future_in_first_window() {
        let frame = ReleaseFrame::new(d(2024, 3, 15));
        let qs: Vec<Question> = (0..3).map(|i| question(&format!("q{i}"), d(2024, 4, 1 + i))).collect();
        let preds: Vec<_> = qs.iter().map(|q| pred(q, true)).collect();
        let w = window_accuracy(&preds, &qs, &frame).unwrap();
        assert_eq!(w.by_label.len(), 1);
        assert_eq!(w.by_label[&PeriodLabel::Future(0)].n_total, 3);
        assert!(w.pooled_pre.is_none());
    }

    #[test]
    fn per_window_counts_and_pooling() {
        let frame = ReleaseFrame::new(d(2024, 1, 1));
        let mut qs = Vec::new();
        let mut preds = Vec::new();
        for i in 0..100 {
            let q = question(&format!("p{i}"), d(2023, 6, 1));
            preds.push(pred(&q, i < 47));
            qs.push(q);
        }
        for i in 0..100 {
            let q = question(&format!("n{i}"), d(2021, 6, 1));
            preds.push(pred(&q, i < 73));
            qs.push(q);
        }
        let w = window_accuracy(&preds, &qs, &frame).unwrap();
        assert_eq!(w.by_label[&PeriodLabel::Present].acc(), 0.47);
        assert_eq!(w.by_label[&PeriodLabel::Past(PastSpan::Near)].acc(), 0.73);
        assert_eq!(w.pooled_pre.unwrap(), AccSample { n_correct: 120, n_total: 200 });
        assert_eq!(w.by_label.values().map(|s| s.n_total).sum::<u64>(), 200);
    }

    #[test]
    fn missing_question() {
        let q = question("q", d(2023, 1, 1));
        let p = pred(&q, true);
        assert_eq!(
            window_accuracy(&[p], &[], &ReleaseFrame::new(d(2023, 6, 1))),
            Err(EventError::MissingQuestion("q".into()))
        );
    }
}
