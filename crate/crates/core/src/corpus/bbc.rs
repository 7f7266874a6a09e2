//! BBC-style line records.
//!
//! One story per line, fields separated by tabs, each field written as
//! `Name: value`:
//!
//! ```text
//! ID: http://...<TAB>Date: 2010/08/09 15:51:53<TAB>Title: ...<TAB>Body: ...<TAB>Related: http://...
//! ```
//!
//! `Related` may repeat. Inside values `\t`, `\n` and `\\` are escapes.
//! Blank lines and lines starting with `#` are ignored.

use std::io::BufRead;

use log::warn;

use super::{ParseOutcome, RawDocument, Result, TimestampFormat};

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

#[cfg(test)]
fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

pub fn parse_bbc<R: BufRead>(input: R) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (mut id, mut date, mut title, mut body) = (None, None, String::new(), String::new());
        let mut related = Vec::new();
        let mut malformed = None;
        for field in line.split('\t') {
            let Some((name, value)) = field.split_once(':') else {
                malformed = Some(format!("field without a name: {field:?}"));
                break;
            };
            let value = unescape(value.strip_prefix(' ').unwrap_or(value));
            match name.trim() {
                "ID" => id = Some(value),
                "Date" => date = Some(value),
                "Title" => title = value,
                "Body" => body = value,
                "Related" => related.push(value),
                other => warn!("line {}: unknown field {other:?} ignored", lineno + 1),
            }
        }
        let id = id.filter(|s| !s.trim().is_empty());
        let date = date.filter(|s| !s.trim().is_empty());
        let reason = match (&malformed, &id, &date) {
            (Some(m), _, _) => Some(m.clone()),
            (_, None, _) => Some("missing ID".into()),
            (_, _, None) => Some("missing Date".into()),
            _ if body.trim().is_empty() => Some("empty Body".into()),
            _ => None,
        };
        if let Some(reason) = reason {
            warn!("line {}: {reason}, record skipped", lineno + 1);
            out.skipped += 1;
            continue;
        }
        out.documents.push(RawDocument {
            id: id.unwrap(),
            timestamp_text: date.unwrap().trim().to_string(),
            format: TimestampFormat::Bbc,
            title,
            body,
            related_ids: related,
        });
    }
    Ok(out)
}
