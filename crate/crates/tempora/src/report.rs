//! Table rendering: bias, accuracy over windows, TBI, decline, correlation.
//! Every table renders to aligned markdown and to CSV with the same cells.

use std::fmt::Write as _;

use tempora_core::metrics::{AccSample, DeclineClass, DeclineReport};
use tempora_core::stats::{ResultLabel, Significance, TestKind, TestResult};
use tempora_core::temporal::{PastSpan, TrendReport, CHANGE_OFFSETS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    /// Plain value, as written to CSV.
    pub text: String,
    /// Markdown form; equals `text` unless the cell carries emphasis.
    pub markdown: String,
}

impl Cell {
    pub fn plain(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            markdown: text.clone(),
            text,
        }
    }

    fn marked(text: String, markdown: String) -> Self {
        Self { text, markdown }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.headers.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_markdown(&self) -> String {
        let escape = |s: &str| s.replace('|', "\\|");
        let width = |s: &str| s.chars().count();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| width(&escape(h)).max(3)).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(width(&escape(&c.markdown)));
            }
        }
        let line = |cells: Vec<String>| {
            let mut s = String::from("|");
            for (c, w) in cells.iter().zip(&widths) {
                let pad = w - width(c);
                let _ = write!(s, " {c}{} |", " ".repeat(pad));
            }
            s.push('\n');
            s
        };
        let mut out = line(self.headers.iter().map(|h| escape(h)).collect());
        out.push('|');
        for w in &widths {
            out.push_str(&format!("{}|", "-".repeat(w + 2)));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row.iter().map(|c| escape(&c.markdown)).collect()));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.text.as_str())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// Parse a markdown table produced by [`Table::to_markdown`] back into its
/// header and cell texts, with emphasis markers removed.
pub fn parse_markdown_table(md: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let split = |line: &str| -> Vec<String> {
        let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
        let mut cells = Vec::new();
        let mut cur = String::new();
        let mut chars = inner.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '\\' if chars.peek() == Some(&'|') => {
                    cur.push('|');
                    chars.next();
                }
                '|' => cells.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
        cells.push(cur);
        cells.into_iter().map(|c| strip_emphasis(c.trim())).collect()
    };
    let mut lines = md.lines().filter(|l| l.trim_start().starts_with('|'));
    let headers = lines.next().map(split).unwrap_or_default();
    let rows = lines.skip(1).map(split).collect();
    (headers, rows)
}

fn strip_emphasis(s: &str) -> String {
    if let Some(inner) = s.strip_prefix("**").and_then(|x| x.strip_suffix("**")) {
        return inner.to_string();
    }
    if let Some(inner) = s.strip_prefix('_').and_then(|x| x.strip_suffix('_')) {
        return inner.to_string();
    }
    s.to_string()
}

/// Fixed-point formatting without a negative zero.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn signed(v: f64, decimals: usize) -> String {
    let s = fixed(v, decimals);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

pub fn daggers(s: Significance) -> &'static str {
    ["", "†", "††", "†††"][s.level()]
}

pub fn stars(s: Significance) -> &'static str {
    ["", "*", "**", "***"][s.level()]
}

/// "→ ††" for present-favouring, "← †" for past-favouring, "−" when
/// neither direction is significant.
pub fn render_bias_cell(r: &TestResult) -> String {
    match (r.label, r.test) {
        (ResultLabel::Dash, _) => String::from("−"),
        (_, TestKind::NeophiliaT1) => format!("→ {}", daggers(r.significance)),
        (_, TestKind::NostalgiaT2) => format!("← {}", daggers(r.significance)),
        (_, TestKind::DegenerationT3) => stars(r.significance).to_string(),
    }
}

pub fn acc_cell(s: &AccSample, sig: &str) -> String {
    format!("{}{} (n={})", fixed(s.acc(), 2), sig, s.n_total)
}

pub fn span_header(span: PastSpan) -> &'static str {
    match span {
        PastSpan::Near => "20-40",
        PastSpan::Middle => "40-60",
        PastSpan::Distant => "60-80",
        PastSpan::Beyond => ">80",
    }
}

/// Inputs for one model's row in the bias table.
pub struct BiasRow<'a> {
    pub model: &'a str,
    pub present: Option<AccSample>,
    /// Results for [`PastSpan::TABLE`], in that order.
    pub results: [Option<TestResult>; 3],
}

pub fn bias_table(rows: &[BiasRow]) -> Table {
    let mut headers = vec!["model".to_string(), "present".to_string()];
    headers.extend(PastSpan::TABLE.iter().map(|s| span_header(*s).to_string()));
    let mut t = Table::new(headers);
    for r in rows {
        let mut cells = vec![
            Cell::plain(r.model),
            Cell::plain(r.present.as_ref().map(|s| acc_cell(s, "")).unwrap_or_else(|| "-".into())),
        ];
        cells.extend(
            r.results
                .iter()
                .map(|res| Cell::plain(res.as_ref().map(render_bias_cell).unwrap_or_else(|| "n/a".into()))),
        );
        t.push(cells);
    }
    t
}

pub fn window_header(k: u32, interval: u32) -> String {
    format!("+{}-{}m", k * interval, (k + 1) * interval)
}

/// Inputs for one model's row in the accuracy table.
pub struct AccuracyRow<'a> {
    pub model: &'a str,
    pub pooled_pre: Option<AccSample>,
    /// Future windows by index, each with its degeneration test.
    pub windows: Vec<(u32, AccSample, Option<TestResult>)>,
}

/// The `pre` column holds the pooled pre-release accuracy that each
/// future window is tested against; stars mark a significant decline.
pub fn accuracy_table(rows: &[AccuracyRow], interval_months: u32) -> Table {
    let n_windows = rows
        .iter()
        .flat_map(|r| r.windows.iter().map(|w| w.0 + 1))
        .max()
        .unwrap_or(0);
    let mut headers = vec!["model".to_string(), "pre".to_string()];
    headers.extend((0..n_windows).map(|k| window_header(k, interval_months)));
    let mut t = Table::new(headers);
    for r in rows {
        let mut cells = vec![
            Cell::plain(r.model),
            Cell::plain(r.pooled_pre.as_ref().map(|s| acc_cell(s, "")).unwrap_or_else(|| "-".into())),
        ];
        for k in 0..n_windows {
            let cell = match r.windows.iter().find(|w| w.0 == k) {
                Some((_, s, test)) => acc_cell(s, test.as_ref().map(|t| stars(t.significance)).unwrap_or("")),
                None => "-".into(),
            };
            cells.push(Cell::plain(cell));
        }
        t.push(cells);
    }
    t
}

pub fn tbi_table(trends: &[TrendReport]) -> Table {
    let mut headers: Vec<String> = ["model", "dataset", "release", "TBI*1000", "n", "base BPC"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    headers.extend(CHANGE_OFFSETS.iter().map(|m| format!("+{m}m %")));
    let mut t = Table::new(headers);
    for r in trends {
        let mut cells = vec![
            Cell::plain(&r.model_name),
            Cell::plain(&r.dataset_id),
            Cell::plain(r.release_date.format("%Y-%m-%d").to_string()),
            Cell::plain(r.tbi.map(|v| fixed(v * 1000.0, 1)).unwrap_or_else(|| "-".into())),
            Cell::plain(r.n_points.to_string()),
            Cell::plain(r.base_bpc.map(|v| fixed(v, 3)).unwrap_or_else(|| "-".into())),
        ];
        for m in CHANGE_OFFSETS {
            let v = r.changes.get(&m).copied().flatten();
            cells.push(Cell::plain(v.map(|v| signed(v, 3)).unwrap_or_else(|| "-".into())));
        }
        t.push(cells);
    }
    t
}

pub struct DeclineRow<'a> {
    pub model: &'a str,
    pub report: DeclineReport,
    pub n_pre: Option<u64>,
    pub n_post: Option<u64>,
}

pub fn class_name(c: DeclineClass) -> &'static str {
    match c {
        DeclineClass::Stable => "stable",
        DeclineClass::Moderate => "moderate",
        DeclineClass::Degraded => "degraded",
    }
}

/// Stable rows are bold and degraded rows underlined (as `_x_`) in the
/// percentage column; CSV carries the class in its own column.
pub fn decline_table(rows: &[DeclineRow]) -> Table {
    let mut t = Table::new(["model", "pre", "post", "decline", "decline %", "class", "n pre", "n post"]);
    for r in rows {
        let pct = format!("{}%", fixed(r.report.decline_pct, 2));
        let md = match r.report.class {
            DeclineClass::Stable => format!("**{pct}**"),
            DeclineClass::Degraded => format!("_{pct}_"),
            DeclineClass::Moderate => pct.clone(),
        };
        let n = |v: Option<u64>| v.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        t.push(vec![
            Cell::plain(r.model),
            Cell::plain(fixed(r.report.pre_acc, 2)),
            Cell::plain(fixed(r.report.post_acc, 2)),
            Cell::plain(fixed(r.report.decline_abs, 2)),
            Cell::marked(pct, md),
            Cell::plain(class_name(r.report.class)),
            Cell::plain(n(r.n_pre)),
            Cell::plain(n(r.n_post)),
        ]);
    }
    t
}
