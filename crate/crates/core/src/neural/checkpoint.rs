//! Line-oriented text checkpoints.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every `f64` bit for bit.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Default)]
pub struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line_f64(&mut self, values: &[f64]) {
        self.line_words(values.iter().map(|v| format!("{v:?}")));
    }

    pub fn line_usize(&mut self, values: &[usize]) {
        self.line_words(values.iter().map(|v| v.to_string()));
    }

    pub fn line_words<I, S>(&mut self, words: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for w in words {
            if !first {
                self.buf.push(' ');
            }
            self.buf.push_str(w.as_ref());
            first = false;
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }

    pub fn save(self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub struct TextReader<'a> {
    source: String,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> TextReader<'a> {
    pub fn new(source: impl Into<String>, text: &'a str) -> Self {
        Self {
            source: source.into(),
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    pub fn error(&self, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.source.clone(),
            reason: format!("line {}: {reason}", self.line_no),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, line)) => {
                self.line_no = i + 1;
                Ok(line)
            }
            None => Err(self.error("unexpected end of file")),
        }
    }

    pub fn line_words(&mut self) -> Result<Vec<String>> {
        Ok(self.next_line()?.split_whitespace().map(str::to_string).collect())
    }

    pub fn line_usize(&mut self) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        line.split_whitespace()
            .map(|w| w.parse().map_err(|_| self.error(&format!("bad integer `{w}`"))))
            .collect()
    }

    pub fn line_f64(&mut self) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        line.split_whitespace()
            .map(|w| w.parse().map_err(|_| self.error(&format!("bad number `{w}`"))))
            .collect()
    }

    pub fn line_f64_exact(&mut self, len: usize) -> Result<Vec<f64>> {
        let v = self.line_f64()?;
        if v.len() != len {
            return Err(self.error(&format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    }

    /// Expects a line consisting of exactly `tag`.
    pub fn expect_tag(&mut self, tag: &str) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() != tag {
            return Err(self.error(&format!("expected `{tag}`, found `{}`", line.trim())));
        }
        Ok(())
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
