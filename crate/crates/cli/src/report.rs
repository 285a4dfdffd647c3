//! Tabular output in CSV, markdown or aligned text.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    Csv,
    Md,
    #[default]
    Text,
}

/// One table. When any row carries an annotation an `annotations` column is
/// appended to every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportDocument {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub annotations: Vec<Option<String>>,
}

impl ReportDocument {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            annotations: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        self.push_annotated(cells, None);
    }

    pub fn push_annotated(&mut self, cells: Vec<String>, note: Option<String>) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match the column schema");
        self.rows.push(cells);
        self.annotations.push(note.filter(|n| !n.is_empty()));
    }

    fn annotated(&self) -> bool {
        self.annotations.iter().any(Option::is_some)
    }

    fn header(&self) -> Vec<&str> {
        let mut h: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        if self.annotated() {
            h.push("annotations");
        }
        h
    }

    fn body(&self) -> Vec<Vec<&str>> {
        let extra = self.annotated();
        self.rows
            .iter()
            .zip(&self.annotations)
            .map(|(r, a)| {
                let mut cells: Vec<&str> = r.iter().map(String::as_str).collect();
                if extra {
                    cells.push(a.as_deref().unwrap_or(""));
                }
                cells
            })
            .collect()
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.csv(),
            Format::Md => self.markdown(),
            Format::Text => self.text(),
        }
    }

    fn csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in self.body() {
            w.write_record(row.iter().map(|c| plain(c).into_owned())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("utf-8 input")
    }

    fn markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = format!("### {}\n\n", self.title);
        let header = self.header();
        let _ = writeln!(out, "| {} |", header.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in self.body() {
            let _ = writeln!(out, "| {} |", row.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        }
        out
    }

    fn text(&self) -> String {
        let header = self.header();
        let body = self.body();
        let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[&str]| -> String {
            let last = cells.len().saturating_sub(1);
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
                if i == last {
                    s.push_str(c);
                } else {
                    let _ = write!(s, "{c:<w$}  ");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&line(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>()));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// Drops thousands separators from numeric cells so CSV stays machine-readable.
fn plain(cell: &str) -> std::borrow::Cow<'_, str> {
    let numeric = cell.contains(',')
        && cell.chars().all(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '-' | '$'))
        && cell.chars().any(|c| c.is_ascii_digit());
    if numeric {
        cell.replace(',', "").into()
    } else {
        cell.into()
    }
}

/// Several tables, separated by a blank line.
pub fn render_all(docs: &[ReportDocument], format: Format) -> String {
    docs.iter().map(|d| d.render(format)).collect::<Vec<_>>().join("\n")
}

/// Fixed decimals with thousands separators, e.g. `14,575.6`.
pub fn num(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.*}", decimals, x.abs());
    let (int, frac) = s.split_once('.').map_or((s.as_str(), None), |(i, f)| (i, Some(f)));
    let mut grouped = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    let sign = if x < 0.0 && s.chars().any(|c| c.is_ascii_digit() && c != '0') { "-" } else { "" };
    match frac {
        Some(f) => format!("{sign}{grouped}.{f}"),
        None => format!("{sign}{grouped}"),
    }
}
