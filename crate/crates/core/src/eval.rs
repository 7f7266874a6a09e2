//! Evaluation: per-word log-likelihood series, smoothing, timeline
//! assignment with confusion metrics, and wall-clock benchmarks.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{train_cdtm, CdtmConfig};
use crate::cidtm::{CidtmConfig, CidtmModel};
use crate::corpus::Document;
use crate::ohdp::{DocScore, HdpHyper, OnlineHdp};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model failure: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub id: String,
    pub timestamp: f64,
    pub per_word: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSeries {
    pub points: Vec<SeriesPoint>,
    pub smoothed: Vec<f64>,
}

impl EvalSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.per_word).collect()
    }

    /// Replaces `smoothed` with the trailing moving average of the values.
    pub fn smooth(mut self, window: usize) -> Result<Self> {
        self.smoothed = moving_average(&self.values(), window)?;
        Ok(self)
    }

    /// Unweighted mean of the per-word values.
    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.per_word).sum::<f64>() / self.points.len().max(1) as f64
    }
}

/// Unsmoothed series; `smoothed` starts as a copy of the values.
pub fn per_word_series(per_doc: &[DocScore]) -> Result<EvalSeries> {
    let mut points = Vec::with_capacity(per_doc.len());
    for (i, d) in per_doc.iter().enumerate() {
        if d.tokens == 0 {
            return Err(EvalError::Parameter(format!("document {} (entry {i}) has no words", d.id)));
        }
        if let Some(prev) = points.last().map(|p: &SeriesPoint| p.timestamp) {
            if d.timestamp < prev {
                return Err(EvalError::Parameter(format!("timestamps decrease at entry {i}")));
            }
        }
        points.push(SeriesPoint { id: d.id.clone(), timestamp: d.timestamp, per_word: d.per_word() });
    }
    let smoothed = points.iter().map(|p| p.per_word).collect();
    Ok(EvalSeries { points, smoothed })
}

/// Trailing mean over the last `min(window, i + 1)` values.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(EvalError::Parameter("window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let lo = (i + 1).saturating_sub(window);
        let w = &values[lo..=i];
        out.push(w.iter().sum::<f64>() / w.len() as f64);
    }
    Ok(out)
}

/// Marks documents whose weight on `target_topic` reaches `threshold`.
pub fn timeline_assign(docs: &[Document], weights: &[Vec<f64>], target_topic: usize, threshold: f64) -> Result<Vec<bool>> {
    if docs.len() != weights.len() {
        return Err(EvalError::Parameter(format!("{} documents but {} weight vectors", docs.len(), weights.len())));
    }
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.get(target_topic).map(|&x| x >= threshold).ok_or_else(|| {
                EvalError::Parameter(format!("topic {target_topic} out of range for document {i} ({} topics)", w.len()))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn from_labels(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(EvalError::Parameter("predictions and labels differ in length".into()));
        }
        let mut m = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => m.tp += 1,
                (false, true) => m.fn_ += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// `None` marks an undefined ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

pub fn confusion_metrics(m: &ConfusionMatrix) -> Result<Metrics> {
    if m.total() == 0 {
        return Err(EvalError::Parameter("empty confusion matrix".into()));
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    Ok(Metrics {
        accuracy: (m.tp + m.tn) as f64 / m.total() as f64,
        recall: ratio(m.tp, m.tp + m.fn_),
        precision: ratio(m.tp, m.tp + m.fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ohdp,
    Cidtm,
    Cdtm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ohdp => "ohdp",
            Self::Cidtm => "cidtm",
            Self::Cdtm => "cdtm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub hyper: HdpHyper,
    pub cidtm: CidtmConfig,
    pub cdtm: CdtmConfig,
    pub cdtm_topics: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            hyper: HdpHyper::default(),
            cidtm: CidtmConfig::default(),
            cdtm: CdtmConfig::default(),
            cdtm_topics: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimePoint {
    pub size: usize,
    pub wall_seconds: f64,
}

/// Trains `kind` from scratch on `docs`.
pub fn train_prefix(kind: ModelKind, docs: &[Document], vocab_size: usize, cfg: &BenchConfig) -> Result<()> {
    let d = docs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let err = |e: String| EvalError::Model(e);
    match kind {
        ModelKind::Ohdp => {
            let mut m = OnlineHdp::new(cfg.hyper, vocab_size, d, &mut rng).map_err(|e| err(e.to_string()))?;
            for b in docs.chunks(cfg.batch_size) {
                m.process_batch(b).map_err(|e| err(e.to_string()))?;
            }
        }
        ModelKind::Cidtm => {
            let mut m = CidtmModel::new(cfg.cidtm, vocab_size, d, &mut rng).map_err(|e| err(e.to_string()))?;
            for b in docs.chunks(cfg.batch_size) {
                m.process_batch(b, d).map_err(|e| err(e.to_string()))?;
            }
        }
        ModelKind::Cdtm => {
            train_cdtm(docs, vocab_size, cfg.cdtm_topics, &cfg.cdtm, &mut rng).map_err(|e| err(e.to_string()))?;
        }
    }
    Ok(())
}

/// Wall-clock training time on each corpus prefix. One discarded warm-up
/// run on the smallest prefix precedes the measurements.
pub fn runtime_benchmark(
    kind: ModelKind,
    docs: &[Document],
    vocab_size: usize,
    sizes: &[usize],
    cfg: &BenchConfig,
) -> Result<Vec<RuntimePoint>> {
    if cfg.batch_size == 0 {
        return Err(EvalError::Parameter("batch size must be >= 1".into()));
    }
    if sizes.windows(2).any(|w| w[1] < w[0]) || sizes.iter().any(|&s| s == 0 || s > docs.len()) {
        return Err(EvalError::Parameter(format!("prefix sizes {sizes:?} must ascend within 1..={}", docs.len())));
    }
    let Some(&first) = sizes.first() else { return Ok(vec![]) };
    train_prefix(kind, &docs[..first], vocab_size, cfg)?;
    sizes
        .iter()
        .map(|&size| {
            let t = Instant::now();
            train_prefix(kind, &docs[..size], vocab_size, cfg)?;
            Ok(RuntimePoint { size, wall_seconds: t.elapsed().as_secs_f64() })
        })
        .collect()
}

pub fn write_series_tsv<W: Write>(series: &EvalSeries, mut w: W) -> Result<()> {
    if series.smoothed.len() != series.points.len() {
        return Err(EvalError::Parameter("smoothed series length differs from the points".into()));
    }
    writeln!(w, "doc_id\ttimestamp\tpwll_nats\tpwll_ma100")?;
    for (p, s) in series.points.iter().zip(&series.smoothed) {
        writeln!(w, "{}\t{}\t{}\t{}", p.id, p.timestamp, p.per_word, s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_runtime_tsv<W: Write>(rows: &[(ModelKind, RuntimePoint)], mut w: W) -> Result<()> {
    writeln!(w, "model\tcorpus_size\twall_seconds")?;
    for (k, p) in rows {
        writeln!(w, "{}\t{}\t{}", k.name(), p.size, p.wall_seconds)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn score(id: &str, ts: f64, loglik: f64, tokens: u64) -> DocScore {
        DocScore { id: id.into(), timestamp: ts, loglik, tokens }
    }

    #[test]
    fn per_word_examples() {
        let s = per_word_series(&[score("a", 0.0, -46.0517, 10), score("b", 1.0, 0.0, 3)]).unwrap();
        assert_abs_diff_eq!(s.points[0].per_word, -4.60517, epsilon = 1e-12);
        assert_eq!(s.points[1].per_word, 0.0);
        assert!(per_word_series(&[score("a", 0.0, -1.0, 0)]).is_err());
        assert!(per_word_series(&[score("a", 1.0, -1.0, 1), score("b", 0.0, -1.0, 1)]).is_err());
    }

    #[test]
    fn per_word_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let docs: Vec<DocScore> =
            (0..50).map(|i| score(&i.to_string(), i as f64, -rng.random_range(1.0..500.0), rng.random_range(1..200))).collect();
        let s = per_word_series(&docs).unwrap();
        for (p, d) in s.points.iter().zip(&docs) {
            assert_eq!(p.per_word, d.loglik / d.tokens as f64);
        }
    }

    #[test]
    fn uniform_model_sits_at_ln_one_over_v() {
        let v = 37.0f64;
        let docs: Vec<DocScore> = (1..40).map(|n| score("d", n as f64, n as f64 * (1.0 / v).ln(), n)).collect();
        for p in per_word_series(&docs).unwrap().points {
            assert_abs_diff_eq!(p.per_word, (1.0 / v).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[3.0; 5], 2).unwrap(), vec![3.0; 5]);
        assert_eq!(moving_average(&[0.0, 2.0], 2).unwrap(), vec![0.0, 1.0]);
        assert!(moving_average(&[1.0], 0).is_err());
        assert!(moving_average(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn moving_average_matches_prefix_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut prefix = vec![0.0];
        for v in &x {
            prefix.push(prefix.last().unwrap() + v);
        }
        let ma = moving_average(&x, 100).unwrap();
        for i in 0..x.len() {
            let lo = (i + 1).saturating_sub(100);
            let want = (prefix[i + 1] - prefix[lo]) / (i + 1 - lo) as f64;
            assert_abs_diff_eq!(ma[i], want, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn moving_average_is_linear(x in proptest::collection::vec(-1e3f64..1e3, 0..200), a in -50.0f64..50.0, w in 1usize..30) {
            let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
            let lhs = moving_average(&scaled, w).unwrap();
            let rhs = moving_average(&x, w).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - a * r).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }
    }

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document { id: i.to_string(), timestamp: i as f64, title: String::new(), counts: vec![(0, 1)], related: vec![] })
            .collect()
    }

    #[test]
    fn timeline_examples() {
        let w = vec![
            vec![0.9, 0.1],
            vec![0.04, 0.96],
            vec![0.05, 0.95],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
        ];
        let d = docs(5);
        assert_eq!(timeline_assign(&d, &w, 0, 0.05).unwrap(), vec![true, false, true, true, false]);
        assert_eq!(timeline_assign(&d, &w, 1, 0.0).unwrap(), vec![true; 5]);
        assert_eq!(timeline_assign(&d, &w[..], 0, 1.0).unwrap(), vec![false; 5]);
        assert!(timeline_assign(&d, &w, 2, 0.5).is_err());
        assert!(timeline_assign(&d[..4], &w, 0, 0.5).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = confusion_metrics(&ConfusionMatrix::new(51, 10, 0, 13)).unwrap();
        assert_eq!(format!("{:.3}", m.accuracy), "0.865");
        assert_eq!(format!("{:.3}", m.recall.unwrap()), "0.836");
        assert_eq!(m.precision, Some(1.0));
        let m = confusion_metrics(&ConfusionMatrix::new(57, 4, 0, 13)).unwrap();
        assert_eq!(format!("{:.3}/{:.3}", m.accuracy, m.recall.unwrap()), "0.946/0.934");
        let m = confusion_metrics(&ConfusionMatrix::new(5, 0, 0, 5)).unwrap();
        assert_eq!((m.accuracy, m.recall, m.precision), (1.0, Some(1.0), Some(1.0)));
        let m = confusion_metrics(&ConfusionMatrix::new(0, 0, 0, 4)).unwrap();
        assert_eq!((m.recall, m.precision), (None, None));
        assert!(confusion_metrics(&ConfusionMatrix::default()).is_err());
        let m = ConfusionMatrix::from_labels(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!(m, ConfusionMatrix::new(1, 1, 1, 1));
    }

    #[test]
    fn benchmark_shapes() {
        let c = crate::synth::linear_drift_corpus(120, 30, 1);
        let cfg = BenchConfig {
            batch_size: 20,
            hyper: HdpHyper { k_corpus: 5, t_doc: 3, ..HdpHyper::default() },
            cidtm: CidtmConfig { hyper: HdpHyper { k_corpus: 5, t_doc: 3, ..HdpHyper::default() }, ..CidtmConfig::default() },
            cdtm: CdtmConfig { sweeps: 2, ..CdtmConfig::default() },
            cdtm_topics: 2,
            seed: 1,
        };
        for kind in [ModelKind::Ohdp, ModelKind::Cidtm, ModelKind::Cdtm] {
            let r = runtime_benchmark(kind, &c.docs, 30, &[100], &cfg).unwrap();
            assert_eq!(r.len(), 1);
            assert_eq!(r[0].size, 100);
        }
        assert!(runtime_benchmark(ModelKind::Ohdp, &c.docs, 30, &[60, 50], &cfg).is_err());
        assert!(runtime_benchmark(ModelKind::Ohdp, &c.docs, 30, &[500], &cfg).is_err());
    }

    #[test]
    fn tsv_layout() {
        let s = per_word_series(&[score("a", 1.5, -3.0, 2), score("b", 2.0, -1.0, 1)]).unwrap().smooth(100).unwrap();
        let mut buf = Vec::new();
        write_series_tsv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "doc_id\ttimestamp\tpwll_nats\tpwll_ma100\na\t1.5\t-1.5\t-1.5\nb\t2\t-1\t-1.25\n");
        let mut buf = Vec::new();
        write_runtime_tsv(&[(ModelKind::Cidtm, RuntimePoint { size: 10, wall_seconds: 0.5 })], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model\tcorpus_size\twall_seconds\ncidtm\t10\t0.5\n");
    }
}
