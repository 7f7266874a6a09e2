use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result};

const STOPWORDS: &str = include_str!("stopwords.txt");

pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub min_token_length: usize,
    pub stopwords: BTreeSet<String>,
    /// Split on any non-alphanumeric character; otherwise split on whitespace only.
    pub strip_non_alphanumeric: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { lowercase: true, min_token_length: 2, stopwords: default_stopwords(), strip_non_alphanumeric: true }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_token_length == 0 {
            return Err(CorpusError::Config("min_token_length must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn for_each_token(&self, body: &str, mut f: impl FnMut(String)) {
        let pieces: Box<dyn Iterator<Item = &str>> = if self.strip_non_alphanumeric {
            Box::new(body.split(|c: char| !c.is_alphanumeric()))
        } else {
            Box::new(body.split_whitespace())
        };
        for p in pieces {
            if p.chars().count() < self.min_token_length {
                continue;
            }
            let tok = if self.lowercase { p.to_lowercase() } else { p.to_string() };
            if !self.stopwords.contains(&tok) {
                f(tok);
            }
        }
    }
}

/// Bag of words for `body`.
pub fn tokenize(body: &str, cfg: &TokenizerConfig) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    cfg.for_each_token(body, |t| *out.entry(t).or_insert(0) += 1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn news_sentence() {
        let got = tokenize("Showers continued throughout the week", &TokenizerConfig::default());
        let want: BTreeMap<String, usize> =
            [("showers", 1), ("continued", 1), ("week", 1)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn trivial_cases() {
        let cfg = TokenizerConfig::default();
        assert!(tokenize("", &cfg).is_empty());
        assert_eq!(tokenize("Aa aa AA", &cfg), BTreeMap::from([("aa".to_string(), 3)]));
        assert_eq!(tokenize("a b c-d x", &cfg).len(), 0);
        assert_eq!(tokenize("cocoa,cocoa;COCOA", &cfg)["cocoa"], 3);
    }

    #[test]
    fn stopword_list_size() {
        let s = default_stopwords();
        assert!((280..=340).contains(&s.len()));
        assert!(s.contains("the") && s.contains("throughout"));
        assert!(!s.contains("week") && !s.contains("continued"));
    }

    #[test]
    fn whitespace_mode_keeps_punctuation() {
        let cfg = TokenizerConfig { strip_non_alphanumeric: false, ..TokenizerConfig::default() };
        assert_eq!(tokenize("u.s. oil", &cfg).len(), 2);
    }

    proptest! {
        #[test]
        fn idempotent_on_own_output(s in "[A-Za-z0-9 ,.;:'!?-]{0,200}") {
            let cfg = TokenizerConfig::default();
            let once = tokenize(&s, &cfg);
            let text: Vec<String> = once.iter().flat_map(|(t, &n)| std::iter::repeat_n(t.clone(), n)).collect();
            prop_assert_eq!(tokenize(&text.join(" "), &cfg), once);
        }
    }
}
