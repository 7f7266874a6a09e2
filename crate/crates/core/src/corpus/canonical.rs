//! Canonical corpus files: one JSON object per line
//! (`{"id","ts","title","body_counts":[[index,count],...],"related":[...]}`),
//! and vocabulary files with one term per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document, Result, Vocabulary};

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    ts: f64,
    title: String,
    body_counts: Vec<(usize, u32)>,
    related: Vec<String>,
}

pub fn write_canonical<W: Write>(docs: &[Document], mut w: W) -> Result<()> {
    for d in docs {
        let line = Line {
            id: d.id.clone(),
            ts: d.timestamp,
            title: d.title.clone(),
            body_counts: d.counts.clone(),
            related: d.related.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a canonical file. Blank lines are ignored.
pub fn read_canonical<R: BufRead>(r: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CorpusError::Record { line: i + 1, msg };
        let l: Line = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if l.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if !l.ts.is_finite() {
            return Err(bad("timestamp is not finite".into()));
        }
        if l.body_counts.windows(2).any(|w| w[0].0 >= w[1].0) || l.body_counts.iter().any(|c| c.1 == 0) {
            return Err(bad("body_counts must have increasing indices and positive counts".into()));
        }
        docs.push(Document { id: l.id, timestamp: l.ts, title: l.title, counts: l.body_counts, related: l.related });
    }
    Ok(docs)
}

pub fn write_vocabulary<W: Write>(vocab: &Vocabulary, mut w: W) -> Result<()> {
    for t in vocab.terms() {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocabulary<R: BufRead>(r: R) -> Result<Vocabulary> {
    let terms = r.lines().collect::<std::io::Result<Vec<String>>>()?;
    Vocabulary::from_terms(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_doc() -> impl Strategy<Value = Document> {
        (
            "[a-z0-9:/._-]{1,20}",
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            "\\PC{0,30}",
            proptest::collection::btree_map(0usize..5000, 1u32..1000, 1..20),
            proptest::collection::vec("[a-z:/.]{1,15}", 0..3),
        )
            .prop_map(|(id, ts, title, counts, related)| Document {
                id,
                timestamp: ts,
                title,
                counts: counts.into_iter().collect(),
                related,
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(docs in proptest::collection::vec(arb_doc(), 0..8)) {
            let mut buf = Vec::new();
            write_canonical(&docs, &mut buf).unwrap();
            let back = read_canonical(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), docs.len());
            for (a, b) in back.iter().zip(&docs) {
                prop_assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            }
            prop_assert_eq!(&back, &docs);
            let mut again = Vec::new();
            write_canonical(&back, &mut again).unwrap();
            prop_assert_eq!(again, buf);
        }
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(read_canonical(&b"{\"id\":\"a\"}\n"[..]).is_err());
        let line = br#"{"id":"a","ts":1.5,"title":"","body_counts":[[3,1],[2,1]],"related":[]}"#;
        assert!(matches!(read_canonical(&line[..]), Err(CorpusError::Record { line: 1, .. })));
    }

    #[test]
    fn vocabulary_file() {
        let v = Vocabulary::from_terms(vec!["b".into(), "a".into()]).unwrap();
        let mut buf = Vec::new();
        write_vocabulary(&v, &mut buf).unwrap();
        assert_eq!(buf, b"b\na\n");
        let back = read_vocabulary(&buf[..]).unwrap();
        assert_eq!(back.terms(), v.terms());
        assert!(read_vocabulary(&b"a\na\n"[..]).is_err());
    }
}
