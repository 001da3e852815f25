//! Deterministic text output: fixed 6-significant-digit formatting and a
//! small column-aligned table writer with optional ANSI color.

use std::io::IsTerminal;

/// Format with six significant digits: plain decimal in a readable range,
/// scientific notation outside it.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-3..6).contains(&exp) {
        let precision = (5 - exp).max(0) as usize;
        format!("{x:.precision$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Seconds rendered as seconds plus an approximate day count when large.
pub fn seconds_with_days(seconds: f64) -> String {
    let days = seconds / 86_400.0;
    if days >= 1.0 {
        format!("{} s  (\u{2248} {:.0} days)", sig6(seconds), days)
    } else {
        format!("{} s", sig6(seconds))
    }
}

pub fn gib(bytes: f64) -> String {
    sig6(bytes / 1e9)
}

/// Color is used only for human-facing tables on a terminal and can be
/// disabled with PTDP_NO_COLOR.
pub fn color_enabled() -> bool {
    std::env::var_os("PTDP_NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    /// Row index rendered highlighted (the table's "best" entry).
    pub highlight: Option<usize>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            highlight: None,
        }
    }

    pub fn add_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn render(&self, color: bool) -> String {
        let columns = self.headers.len();
        let mut widths = vec![0usize; columns];
        for (i, h) in self.headers.iter().enumerate() {
            widths[i] = h.len();
        }
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let mut out = String::new();
        let format_row = |cells: &[String]| {
            let mut line = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                line.push_str(cell);
                line.push_str(&" ".repeat(widths[i] - cell.len()));
            }
            line.trim_end().to_string()
        };
        if color {
            out.push_str(&format!("\x1b[1m{}\x1b[0m\n", format_row(&self.headers)));
        } else {
            out.push_str(&format_row(&self.headers));
            out.push('\n');
        }
        for (idx, row) in self.rows.iter().enumerate() {
            let line = format_row(row);
            if color && self.highlight == Some(idx) {
                out.push_str(&format!("\x1b[32m{line}\x1b[0m\n"));
            } else {
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }
}
