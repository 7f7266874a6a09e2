//! Reuters-21578 style SGML.
//!
//! Only a small tag scanner is needed: records are `REUTERS` elements and
//! the fields of interest are the `DATE`, `TITLE` and `BODY` children.
//! Declarations (`<!DOCTYPE ...>`) are skipped.

use log::warn;

use super::{CorpusError, ParseOutcome, RawDocument, Result, TimestampFormat};

#[derive(Default)]
struct Record {
    id: Option<String>,
    date: Option<String>,
    title: String,
    body: Option<String>,
}

fn parse_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(CorpusError::Parse { offset, msg: msg.into() })
}

/// Decodes `&amp; &lt; &gt; &quot; &apos;` and numeric references. Unknown
/// references are kept verbatim.
pub(crate) fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let decoded = rest.find(';').filter(|&j| j <= 10).and_then(|j| {
            let name = &rest[1..j];
            let c = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ => {
                    let code = if let Some(h) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(h, 16).ok()
                    } else if let Some(d) = name.strip_prefix('#') {
                        d.parse().ok()
                    } else {
                        None
                    };
                    code.and_then(char::from_u32)
                }
            };
            c.map(|c| (c, j))
        });
        match decoded {
            Some((c, j)) => {
                out.push(c);
                rest = &rest[j + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn attribute(attrs: &str, key: &str) -> Option<String> {
    let mut rest = attrs;
    while let Some(eq) = rest.find('=') {
        let name = rest[..eq].trim();
        let after = rest[eq + 1..].trim_start();
        let (value, tail) = if let Some(q) = after.strip_prefix('"') {
            let end = q.find('"')?;
            (&q[..end], &q[end + 1..])
        } else {
            let end = after.find(char::is_whitespace).unwrap_or(after.len());
            (&after[..end], &after[end..])
        };
        if name.eq_ignore_ascii_case(key) {
            return Some(value.to_string());
        }
        rest = tail;
    }
    None
}

/// Parses concatenated `REUTERS` records.
///
/// Records without a date or with an empty body are skipped and counted.
pub fn parse_reuters(sgml: &[u8]) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut stack: Vec<(String, usize)> = Vec::new();
    let mut record: Option<Record> = None;
    let mut text_start = 0;
    let mut pos = 0;
    let n = sgml.len();

    while pos < n {
        let Some(lt) = sgml[pos..].iter().position(|&b| b == b'<').map(|i| pos + i) else {
            break;
        };
        let segment = &sgml[text_start..lt];
        let gt = match sgml[lt..].iter().position(|&b| b == b'>') {
            Some(i) => lt + i,
            None => return parse_err(lt, "unterminated tag"),
        };
        let inner = String::from_utf8_lossy(&sgml[lt + 1..gt]).into_owned();
        pos = gt + 1;

        if inner.starts_with('!') || inner.starts_with('?') {
            text_start = pos;
            continue;
        }
        let text = String::from_utf8_lossy(segment);
        if let (Some(rec), Some((top, _))) = (record.as_mut(), stack.last()) {
            match top.as_str() {
                "DATE" => rec.date.get_or_insert_with(String::new).push_str(&text),
                "TITLE" => rec.title.push_str(&text),
                "BODY" => rec.body.get_or_insert_with(String::new).push_str(&text),
                _ => {}
            }
        }
        text_start = pos;

        if let Some(name) = inner.strip_prefix('/') {
            let name = name.trim().to_ascii_uppercase();
            match stack.pop() {
                Some((open, _)) if open == name => {}
                Some((open, at)) => {
                    return parse_err(lt, format!("</{name}> closes <{open}> opened at byte {at}"));
                }
                None => return parse_err(lt, format!("</{name}> without a matching open tag")),
            }
            if name == "REUTERS" {
                let rec = record.take().expect("record open");
                finish_record(rec, out.total_records(), &mut out);
            }
            continue;
        }

        let self_closing = inner.ends_with('/');
        let body = inner.trim_end_matches('/');
        let (name, attrs) = match body.find(char::is_whitespace) {
            Some(i) => (&body[..i], &body[i..]),
            None => (body, ""),
        };
        let name = name.to_ascii_uppercase();
        if name.is_empty() {
            return parse_err(lt, "empty tag name");
        }
        if self_closing {
            continue;
        }
        if name == "REUTERS" {
            if record.is_some() {
                return parse_err(lt, "nested REUTERS record");
            }
            record = Some(Record { id: attribute(attrs, "NEWID"), ..Record::default() });
        } else if record.is_none() {
            return parse_err(lt, format!("<{name}> outside of a REUTERS record"));
        }
        stack.push((name, lt));
    }
    if let Some((open, at)) = stack.pop() {
        return parse_err(at, format!("<{open}> is never closed"));
    }
    Ok(out)
}

fn finish_record(rec: Record, ordinal: usize, out: &mut ParseOutcome) {
    let id = rec.id.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("reuters-{}", ordinal + 1));
    let date = rec.date.map(|d| decode_entities(d.trim())).unwrap_or_default();
    if date.is_empty() {
        warn!("reuters record {id}: no DATE, skipped");
        out.skipped += 1;
        return;
    }
    let body = rec.body.map(|b| decode_entities(&b)).unwrap_or_default();
    if body.trim().is_empty() {
        warn!("reuters record {id}: empty BODY, skipped");
        out.skipped += 1;
        return;
    }
    out.documents.push(RawDocument {
        id,
        timestamp_text: date,
        format: TimestampFormat::Reuters,
        title: decode_entities(rec.title.trim()),
        body,
        related_ids: vec![],
    });
}
