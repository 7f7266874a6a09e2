use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use topicstream::baselines::{cdtm_doc_mixture, cdtm_heldout_loglik, train_cdtm, CdtmError};
use topicstream::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use topicstream::cidtm::{CidtmError, CidtmModel};
use topicstream::corpus::{
    build_vocabulary, parse_bbc, parse_reuters, read_canonical, read_vocabulary, to_documents, write_canonical,
    write_vocabulary, Document, RawDocument, TokenizerConfig, Vocabulary,
};
use topicstream::dp_sim::{crfp_sample, crp_partition, dim_sum_sample, tdpm_decayed_counts};
use topicstream::eval::{
    confusion_metrics, per_word_series, runtime_benchmark, timeline_assign, write_runtime_tsv, write_series_tsv,
    BenchConfig, ConfusionMatrix, ModelKind,
};
use topicstream::kalman::KalmanError;
use topicstream::ohdp::{infer_batch, DocScore, HdpError, OnlineHdp};
use topicstream::synth::{dormancy_stream, linear_drift_corpus, static_corpus, DormancySpec, StaticSpec, SyntheticCorpus};

use crate::config::{load_config_file, ModelArg, RunConfig, RunOverrides};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

fn hdp_err(e: HdpError) -> CliError {
    match e {
        HdpError::Numerical { .. } => CliError::Numerical(e.to_string()),
        _ => usage(e),
    }
}

fn kalman_err(e: KalmanError) -> CliError {
    match e {
        KalmanError::Observation { .. } => CliError::Numerical(e.to_string()),
        _ => usage(e),
    }
}

fn cidtm_err(e: CidtmError) -> CliError {
    match e {
        CidtmError::Hdp(e) => hdp_err(e),
        CidtmError::Kalman(e) => kalman_err(e),
        _ => usage(e),
    }
}

fn cdtm_err(e: CdtmError) -> CliError {
    match e {
        CdtmError::Kalman(e) => kalman_err(e),
        _ => usage(e),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_at(path))
}

fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    read_canonical(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    read_vocabulary(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("TM_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| usage(format!("TM_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Reuters,
    Bbc,
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_at(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file() && !e.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn ingest(inputs: &[PathBuf], format: FormatArg, out_corpus: &Path, out_vocab: &Path, min_df: usize) -> Result<()> {
    let mut raw: Vec<RawDocument> = Vec::new();
    let mut skipped = 0;
    for path in expand_inputs(inputs)? {
        let parsed = match format {
            FormatArg::Reuters => parse_reuters(&std::fs::read(&path).map_err(io_at(&path))?),
            FormatArg::Bbc => parse_bbc(open(&path)?),
        }
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        info!("{}: {} records, {} skipped", path.display(), parsed.documents.len(), parsed.skipped);
        skipped += parsed.skipped;
        raw.extend(parsed.documents);
    }
    let cfg = TokenizerConfig::default();
    let vocab = build_vocabulary(&raw, &cfg, min_df).map_err(usage)?;
    let docs = to_documents(&raw, &vocab, &cfg);
    let mut w = create(out_corpus)?;
    write_canonical(&docs, &mut w).map_err(usage)?;
    w.flush().map_err(io_at(out_corpus))?;
    let mut w = create(out_vocab)?;
    write_vocabulary(&vocab, &mut w).map_err(usage)?;
    w.flush().map_err(io_at(out_vocab))?;
    println!("documents\t{}", docs.len());
    println!("vocabulary\t{}", vocab.len());
    println!("mean_unique_terms\t{:.4}", vocab.stats.mean_unique_terms);
    println!("skipped\t{skipped}");
    Ok(())
}

fn check_scores(scores: &[DocScore]) -> Result<()> {
    match scores.iter().find(|s| !s.loglik.is_finite()) {
        Some(s) => Err(CliError::Numerical(format!("log-likelihood of document {} is {}", s.id, s.loglik))),
        None => Ok(()),
    }
}

/// Trains one model; the scores are prequential for the online models and
/// held-out for the fixed-K baseline.
fn train_one(docs: &[Document], vocab_size: usize, cfg: &RunConfig) -> Result<(Checkpoint, Vec<DocScore>)> {
    let d = docs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scores = Vec::with_capacity(d);
    match cfg.model {
        ModelKind::Ohdp => {
            let mut m = OnlineHdp::new(cfg.hyper, vocab_size, d, &mut rng).map_err(hdp_err)?;
            for b in docs.chunks(cfg.batch_size) {
                scores.extend(m.process_batch(b).map_err(hdp_err)?.scores);
            }
            Ok((Checkpoint::Ohdp(m), scores))
        }
        ModelKind::Cidtm => {
            let mut m = CidtmModel::new(cfg.cidtm, vocab_size, d, &mut rng).map_err(cidtm_err)?;
            for b in docs.chunks(cfg.batch_size) {
                let r = m.process_batch(b, d).map_err(cidtm_err)?;
                if !r.topics_born.is_empty() || !r.topics_died.is_empty() {
                    info!("batch ending {}: born {:?}, died {:?}", b[b.len() - 1].id, r.topics_born, r.topics_died);
                }
                scores.extend(r.per_doc);
            }
            Ok((Checkpoint::Cidtm(m), scores))
        }
        ModelKind::Cdtm => {
            let n_train = ((d as f64) * cfg.train_fraction).round() as usize;
            if n_train == 0 || n_train == d {
                return Err(usage(format!("train fraction {} leaves an empty split of {d} documents", cfg.train_fraction)));
            }
            let mut idx: Vec<usize> = (0..d).collect();
            idx.shuffle(&mut rng);
            let mut is_train = vec![false; d];
            for &i in &idx[..n_train] {
                is_train[i] = true;
            }
            let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(d - n_train));
            for (doc, t) in docs.iter().zip(is_train) {
                if t { train.push(doc.clone()) } else { test.push(doc.clone()) }
            }
            let m = train_cdtm(&train, vocab_size, cfg.cdtm_topics, &cfg.cdtm, &mut rng).map_err(cdtm_err)?;
            scores = cdtm_heldout_loglik(&m, &test).map_err(cdtm_err)?;
            Ok((Checkpoint::Cdtm(m), scores))
        }
    }
}

fn indexed(path: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return path.to_path_buf();
    }
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{i}"));
    PathBuf::from(s)
}

pub fn train(
    corpus: &Path,
    vocab: &Path,
    config: Option<&Path>,
    flags: &RunOverrides,
    checkpoint: &Path,
    output: &Path,
    window: usize,
) -> Result<()> {
    let base = match config {
        Some(p) => load_config_file(p)?,
        None => vec![RunOverrides::default()],
    };
    let env = RunOverrides { seed: env_seed()?, ..RunOverrides::default() };
    let runs = base.iter().map(|b| b.layer(&env).layer(flags).resolve()).collect::<Result<Vec<_>>>()?;
    let docs = load_corpus(corpus)?;
    if docs.is_empty() {
        return Err(usage(format!("{}: corpus is empty", corpus.display())));
    }
    let vocab_size = load_vocab(vocab)?.len();
    for (i, cfg) in runs.iter().enumerate() {
        info!("run {i}: {}", serde_json::to_string(cfg).unwrap_or_default());
        let (cp, scores) = train_one(&docs, vocab_size, cfg)?;
        check_scores(&scores)?;
        let series = per_word_series(&scores).and_then(|s| s.smooth(window)).map_err(usage)?;
        let cp_path = indexed(checkpoint, i, runs.len());
        let mut w = create(&cp_path)?;
        save_checkpoint(&cp, &mut w).map_err(usage)?;
        w.flush().map_err(io_at(&cp_path))?;
        let out_path = indexed(output, i, runs.len());
        let mut w = create(&out_path)?;
        write_series_tsv(&series, &mut w).map_err(usage)?;
        w.flush().map_err(io_at(&out_path))?;
        println!("{}\tbatch {}\tscored {}\tmean_pwll {:.6}", cfg.model.name(), cfg.batch_size, scores.len(), series.mean());
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, bool>> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let mut labels = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("doc_id")) {
            continue;
        }
        let bad = || usage(format!("{}:{}: expected `doc_id<TAB>0|1`", path.display(), n + 1));
        let (id, label) = line.split_once('\t').ok_or_else(bad)?;
        let label = match label.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad()),
        };
        labels.insert(id.to_string(), label);
    }
    Ok(labels)
}

fn ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn timeline(
    checkpoint: &Path,
    corpus: &Path,
    topic: usize,
    threshold: f64,
    labels: Option<&Path>,
    output: &Path,
    confusion: Option<&Path>,
) -> Result<()> {
    let cp = load_checkpoint(open(checkpoint)?).map_err(|e| usage(format!("{}: {e}", checkpoint.display())))?;
    let docs = load_corpus(corpus)?;
    if docs.is_empty() {
        return Err(usage(format!("{}: corpus is empty", corpus.display())));
    }
    let weights: Vec<Vec<f64>> = match &cp {
        Checkpoint::Ohdp(m) => {
            let (_, rs, _) = infer_batch(&docs, &m.global, &m.hyper).map_err(hdp_err)?;
            rs.iter().map(|r| r.variational.topic_mixture()).collect()
        }
        Checkpoint::Cidtm(m) => {
            let (_, rs, _) = infer_batch(&docs, &m.hdp, &m.config.hyper).map_err(hdp_err)?;
            rs.iter().map(|r| r.variational.topic_mixture()).collect()
        }
        Checkpoint::Cdtm(m) => docs.iter().map(|d| cdtm_doc_mixture(m, d)).collect::<std::result::Result<_, _>>().map_err(cdtm_err)?,
    };
    let k = weights[0].len();
    if topic >= k {
        return Err(usage(format!("topic {topic} does not exist; the model has {k} topics")));
    }
    let assigned = timeline_assign(&docs, &weights, topic, threshold).map_err(usage)?;
    let mut w = create(output)?;
    let io = io_at(output);
    writeln!(w, "doc_id\ttimestamp\tassigned\tweight\tweights").map_err(&io)?;
    for ((d, a), th) in docs.iter().zip(&assigned).zip(&weights) {
        let all: Vec<String> = th.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(w, "{}\t{}\t{}\t{:.6}\t{}", d.id, d.timestamp, u8::from(*a), th[topic], all.join(",")).map_err(&io)?;
    }
    w.flush().map_err(&io)?;
    let n_assigned = assigned.iter().filter(|&&a| a).count();
    println!("assigned\t{n_assigned}\tof\t{}", docs.len());

    let Some(labels_path) = labels else { return Ok(()) };
    let labels = read_labels(labels_path)?;
    let (pred, truth): (Vec<bool>, Vec<bool>) =
        docs.iter().zip(&assigned).filter_map(|(d, &a)| labels.get(&d.id).map(|&t| (a, t))).unzip();
    if pred.is_empty() {
        return Err(usage(format!("{}: no label matches a corpus document", labels_path.display())));
    }
    let m = ConfusionMatrix::from_labels(&pred, &truth).map_err(usage)?;
    write_confusion(&m, confusion)
}

fn write_confusion(m: &ConfusionMatrix, path: Option<&Path>) -> Result<()> {
    let metrics = confusion_metrics(m).map_err(usage)?;
    let rows = [
        ("tp", m.tp.to_string()),
        ("fn", m.fn_.to_string()),
        ("fp", m.fp.to_string()),
        ("tn", m.tn.to_string()),
        ("accuracy", format!("{:.6}", metrics.accuracy)),
        ("recall", ratio(metrics.recall)),
        ("precision", ratio(metrics.precision)),
    ];
    let mut text = String::from("metric\tvalue\n");
    for (k, v) in rows {
        text.push_str(&format!("{k}\t{v}\n"));
    }
    match path {
        Some(p) => std::fs::write(p, &text).map_err(io_at(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Process {
    /// Chinese restaurant process.
    Crp {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Chinese restaurant franchise over restaurants of the given sizes.
    Crfp {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Franchise whose dish parameters drift as a Brownian motion.
    Dimsum {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.01)]
        drift_v: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Time-decayed topic counts from a JSON count matrix, oldest epoch first.
    Tdpm {
        #[arg(long)]
        history: String,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 1.0)]
        decay: f64,
    },
}

#[derive(Serialize)]
struct SimRecord<T: Serialize> {
    run: usize,
    seed: u64,
    #[serde(flatten)]
    state: T,
}

pub fn simulate(process: &Process, seed: u64, runs: usize, output: Option<&Path>) -> Result<()> {
    let mut lines = Vec::with_capacity(runs);
    for run in 0..runs {
        let run_seed = seed.wrapping_add(run as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        let state = match process {
            Process::Crp { n, alpha } => serde_json::to_value(crp_partition(*n, *alpha, &mut rng).map_err(usage)?),
            Process::Crfp { sizes, alpha, gamma } => {
                serde_json::to_value(crfp_sample(sizes, *alpha, *gamma, &mut rng).map_err(usage)?)
            }
            Process::Dimsum { sizes, times, alpha, gamma, drift_v, dim } => {
                let mut drift_rng = ChaCha8Rng::seed_from_u64(run_seed);
                drift_rng.set_stream(1);
                let t = dim_sum_sample(sizes, times, *alpha, *gamma, *drift_v, *dim, &mut rng, &mut drift_rng)
                    .map_err(usage)?;
                serde_json::to_value(t)
            }
            Process::Tdpm { history, width, decay } => {
                let h: Vec<Vec<f64>> =
                    serde_json::from_str(history).map_err(|e| usage(format!("--history is not a JSON matrix: {e}")))?;
                let weights = tdpm_decayed_counts(&h, *width, *decay).map_err(usage)?;
                Ok(serde_json::json!({ "weights": weights }))
            }
        }
        .map_err(usage)?;
        lines.push(serde_json::to_string(&SimRecord { run, seed: run_seed, state }).map_err(usage)?);
    }
    let mut text = lines.join("\n");
    text.push('\n');
    match output {
        Some(p) => std::fs::write(p, text).map_err(io_at(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Three static block topics over 50 words.
    Static,
    /// A topic sliding between word blocks.
    Drift,
    /// A topic that goes silent and returns with shifted vocabulary.
    Dormancy,
}

pub fn synth(kind: SynthKind, n_docs: usize, seed: u64, out_corpus: &Path, out_vocab: &Path) -> Result<()> {
    if n_docs == 0 {
        return Err(usage("--docs must be >= 1"));
    }
    let corpus: SyntheticCorpus = match kind {
        SynthKind::Static => static_corpus(&StaticSpec { n_docs, ..StaticSpec::default() }, seed),
        SynthKind::Drift => linear_drift_corpus(n_docs, 40, seed),
        SynthKind::Dormancy => dormancy_stream(&DormancySpec::default(), seed).corpus,
    };
    let vocab = Vocabulary::from_terms(corpus.vocabulary()).map_err(usage)?;
    let mut w = create(out_corpus)?;
    write_canonical(&corpus.docs, &mut w).map_err(usage)?;
    w.flush().map_err(io_at(out_corpus))?;
    let mut w = create(out_vocab)?;
    write_vocabulary(&vocab, &mut w).map_err(usage)?;
    w.flush().map_err(io_at(out_vocab))?;
    println!("documents\t{}", corpus.docs.len());
    println!("vocabulary\t{}", vocab.len());
    Ok(())
}

pub fn bench(
    corpus: &Path,
    vocab: &Path,
    models: &[ModelArg],
    sizes: &[usize],
    flags: &RunOverrides,
    output: &Path,
) -> Result<()> {
    let docs = load_corpus(corpus)?;
    let vocab_size = load_vocab(vocab)?.len();
    let env = RunOverrides { seed: env_seed()?, ..RunOverrides::default() };
    let mut rows = Vec::new();
    for &model in models {
        let cfg = env.layer(flags).layer(&RunOverrides { model: Some(model), ..RunOverrides::default() }).resolve()?;
        let bench_cfg = BenchConfig {
            batch_size: cfg.batch_size,
            hyper: cfg.hyper,
            cidtm: cfg.cidtm,
            cdtm: cfg.cdtm,
            cdtm_topics: cfg.cdtm_topics,
            seed: cfg.seed,
        };
        for p in runtime_benchmark(cfg.model, &docs, vocab_size, sizes, &bench_cfg).map_err(usage)? {
            println!("{}\t{}\t{:.3}", cfg.model.name(), p.size, p.wall_seconds);
            rows.push((cfg.model, p));
        }
    }
    let mut w = create(output)?;
    write_runtime_tsv(&rows, &mut w).map_err(usage)?;
    w.flush().map_err(io_at(output))
}
