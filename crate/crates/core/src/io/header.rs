//! Line-oriented text headers shared by the binary file formats.
//!
//! A header is a magic line `MAGIC VERSION`, then `key value...` lines, then
//! a line reading `end`. The binary payload starts right after that line.

use std::fmt::Write;

use crate::{Error, Result};

pub(crate) struct Header<'a> {
    context: String,
    entries: Vec<(usize, &'a str, Vec<&'a str>)>,
}

/// Splits `bytes` into a parsed header and the payload that follows it.
pub(crate) fn parse<'a>(
    bytes: &'a [u8],
    context: &str,
    magic: &str,
    version: u32,
) -> Result<(Header<'a>, &'a [u8])> {
    let err = |line: usize, msg: String| Error::format(context, format!("line {line}"), msg);
    let mut offset = 0;
    let mut lineno = 0;
    let mut entries = Vec::new();
    loop {
        lineno += 1;
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(lineno, "header is not terminated by an `end` line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| err(lineno, "header line is not valid UTF-8".into()))?;
        offset += nl + 1;
        let mut words = line.split_ascii_whitespace();
        if lineno == 1 {
            let (m, v) = (words.next(), words.next());
            if m != Some(magic) {
                return Err(err(1, format!("expected magic `{magic}`, found `{line}`")));
            }
            match v.map(str::parse::<u32>) {
                Some(Ok(v)) if v == version => {}
                Some(Ok(v)) => {
                    return Err(err(1, format!("unsupported version {v} (expected {version})")));
                }
                _ => return Err(err(1, "missing or malformed version".into())),
            }
            continue;
        }
        let Some(key) = words.next() else {
            return Err(err(lineno, "empty header line".into()));
        };
        if key == "end" {
            break;
        }
        if entries.iter().any(|(_, k, _)| *k == key) {
            return Err(err(lineno, format!("duplicate key `{key}`")));
        }
        entries.push((lineno, key, words.collect()));
    }
    let header = Header {
        context: context.to_string(),
        entries,
    };
    Ok((header, &bytes[offset..]))
}

impl<'a> Header<'a> {
    fn err(&self, line: usize, msg: String) -> Error {
        Error::format(self.context.clone(), format!("line {line}"), msg)
    }

    /// Rejects keys outside `known`.
    pub(crate) fn only(&self, known: &[&str]) -> Result<()> {
        for (line, key, _) in &self.entries {
            if !known.contains(key) {
                return Err(self.err(*line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub(crate) fn words(&self, key: &str) -> Result<(usize, &[&'a str])> {
        self.entries
            .iter()
            .find(|(_, k, _)| *k == key)
            .map(|(l, _, w)| (*l, w.as_slice()))
            .ok_or_else(|| Error::format(self.context.clone(), "header", format!("missing key `{key}`")))
    }

    pub(crate) fn has(&self, key: &str) -> bool {
        self.entries.iter().any(|(_, k, _)| *k == key)
    }

    pub(crate) fn text(&self, key: &str) -> Result<&'a str> {
        let (line, w) = self.words(key)?;
        match w {
            [one] => Ok(one),
            _ => Err(self.err(line, format!("`{key}` takes exactly one value"))),
        }
    }

    pub(crate) fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        let (line, w) = self.words(key)?;
        w.iter()
            .map(|s| s.parse().map_err(|_| self.err(line, format!("`{key}`: `{s}` is not a count"))))
            .collect()
    }

    pub(crate) fn usize(&self, key: &str) -> Result<usize> {
        let (line, _) = self.words(key)?;
        match self.usizes(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(self.err(line, format!("`{key}` takes exactly one value"))),
        }
    }

    pub(crate) fn u64(&self, key: &str) -> Result<u64> {
        let (line, _) = self.words(key)?;
        self.text(key)?
            .parse()
            .map_err(|_| self.err(line, format!("`{key}` is not an unsigned integer")))
    }

    pub(crate) fn f64s(&self, key: &str) -> Result<Vec<f64>> {
        let (line, w) = self.words(key)?;
        w.iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(self.err(line, format!("`{key}`: `{s}` is not a finite number"))),
            })
            .collect()
    }

    pub(crate) fn flag(&self, key: &str) -> Result<bool> {
        let (line, _) = self.words(key)?;
        match self.text(key)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(self.err(line, format!("`{key}` must be 0 or 1, found `{other}`"))),
        }
    }

    /// Bounds are written as `lo hi` pairs, one per axis.
    pub(crate) fn bounds(&self, key: &str) -> Result<Vec<(f64, f64)>> {
        let (line, _) = self.words(key)?;
        let flat = self.f64s(key)?;
        if flat.is_empty() || flat.len() % 2 != 0 {
            return Err(self.err(line, format!("`{key}` needs lo/hi pairs")));
        }
        Ok(flat.chunks(2).map(|c| (c[0], c[1])).collect())
    }
}

/// Incremental writer for the same layout.
pub(crate) struct HeaderWriter(String);

impl HeaderWriter {
    pub(crate) fn new(magic: &str, version: u32) -> Self {
        HeaderWriter(format!("{magic} {version}\n"))
    }

    pub(crate) fn line(&mut self, key: &str, values: impl IntoIterator<Item = String>) -> &mut Self {
        self.0.push_str(key);
        for v in values {
            let _ = write!(self.0, " {v}");
        }
        self.0.push('\n');
        self
    }

    pub(crate) fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        // `{:?}` prints the shortest representation that parses back exactly
        self.line(key, values.iter().map(|v| format!("{v:?}")))
    }

    pub(crate) fn bounds(&mut self, key: &str, bounds: &[(f64, f64)]) -> &mut Self {
        let flat: Vec<f64> = bounds.iter().flat_map(|&(a, b)| [a, b]).collect();
        self.floats(key, &flat)
    }

    pub(crate) fn finish(&mut self) -> Vec<u8> {
        self.0.push_str("end\n");
        std::mem::take(&mut self.0).into_bytes()
    }
}
