//! Helpers for the line-oriented text formats used by model, scenario, graph,
//! and index files.
//!
//! Numbers are written with Rust's shortest round-trip decimal formatting, so
//! re-serializing a parsed file reproduces it byte for byte.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unexpected end of file: expected {0}")]
    UnexpectedEof(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Append floats to a line, space-separated, in shortest round-trip form.
pub fn push_floats(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(out, " {v}");
    }
}

/// Cursor over the non-empty, non-comment lines of a document.
pub struct Lines<'a> {
    iter: std::iter::Peekable<std::vec::IntoIter<(usize, &'a str)>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { iter: lines.into_iter().peekable() }
    }

    pub fn next_line(&mut self, expect: &str) -> Result<(usize, &'a str), ParseError> {
        self.iter.next().ok_or_else(|| ParseError::UnexpectedEof(expect.to_string()))
    }

    pub fn peek(&mut self) -> Option<&'a str> {
        self.iter.peek().map(|(_, l)| *l)
    }

    pub fn is_empty(&mut self) -> bool {
        self.iter.peek().is_none()
    }
}

/// Expect a `key value...` line whose first token is `key`; returns the rest.
pub fn expect_keyword<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, Vec<&'a str>), ParseError> {
    let (n, line) = lines.next_line(key)?;
    let mut tokens = line.split_whitespace();
    match tokens.next() {
        Some(k) if k == key => Ok((n, tokens.collect())),
        other => Err(ParseError::Malformed {
            line: n,
            msg: format!("expected `{key}`, found `{}`", other.unwrap_or("")),
        }),
    }
}

pub fn parse_f64(token: &str, line: usize) -> Result<f64, ParseError> {
    token.parse().map_err(|_| ParseError::Malformed {
        line,
        msg: format!("not a number: `{token}`"),
    })
}

pub fn parse_usize(token: &str, line: usize) -> Result<usize, ParseError> {
    token.parse().map_err(|_| ParseError::Malformed {
        line,
        msg: format!("not an integer: `{token}`"),
    })
}

pub fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, ParseError> {
    tokens.iter().map(|t| parse_f64(t, line)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip_formatting() {
        let mut s = String::new();
        push_floats(&mut s, [0.1, -2.5, 1.0 / 3.0]);
        assert_eq!(s, " 0.1 -2.5 0.3333333333333333");
        for tok in s.split_whitespace() {
            let v: f64 = tok.parse().unwrap();
            assert_eq!(format!("{v}"), tok);
        }
    }

    #[test]
    fn lines_skip_blanks_and_comments() {
        let mut lines = Lines::new("# header\n\nfoo 1 2\n  \nbar\n");
        let (_, rest) = expect_keyword(&mut lines, "foo").unwrap();
        assert_eq!(rest, vec!["1", "2"]);
        let (n, _) = lines.next_line("bar").unwrap();
        assert_eq!(n, 5);
        assert!(lines.is_empty());
    }
}
