use std::path::Path;

use serde::{Deserialize, Serialize};
use topicstream::baselines::CdtmConfig;
use topicstream::cidtm::CidtmConfig;
use topicstream::eval::ModelKind;
use topicstream::ohdp::HdpHyper;
use topicstream::synth::DAY;

use crate::CliError;

/// Settings of one training run. Every field is optional so that a config
/// file and command-line flags can be layered over the model defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub k_corpus: Option<usize>,
    #[arg(long)]
    pub t_doc: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Drift variance per day.
    #[arg(long)]
    pub drift_v: Option<f64>,
    #[arg(long)]
    pub obs_var: Option<f64>,
    /// Active timer length in days.
    #[arg(long)]
    pub timer: Option<f64>,
    /// Relevance threshold for the topic lifecycle.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of topics of the fixed-K baseline.
    #[arg(long)]
    pub cdtm_topics: Option<usize>,
    #[arg(long)]
    pub cdtm_sweeps: Option<usize>,
    /// Dirichlet prior of the fixed-K baseline.
    #[arg(long)]
    pub cdtm_alpha: Option<f64>,
    /// Share of documents the fixed-K baseline trains on.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Cidtm,
    Ohdp,
    Cdtm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cidtm => ModelKind::Cidtm,
            ModelArg::Ohdp => ModelKind::Ohdp,
            ModelArg::Cdtm => ModelKind::Cdtm,
        }
    }
}

pub const DEFAULT_SEED: u64 = 42;

impl RunOverrides {
    /// `other` wins wherever it is set.
    pub fn layer(&self, other: &RunOverrides) -> RunOverrides {
        macro_rules! pick {
            ($($f:ident),*) => { RunOverrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            model, batch_size, gamma, alpha0, eta, k_corpus, t_doc, kappa, tau0, drift_v, obs_var, timer, threshold,
            cdtm_topics, cdtm_sweeps, cdtm_alpha, train_fraction, seed
        )
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let model: ModelKind = self.model.ok_or_else(|| CliError::Usage("--model is required".into()))?.into();
        let mut hyper = match model {
            ModelKind::Cidtm => CidtmConfig::default().hyper,
            _ => HdpHyper::default(),
        };
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(hyper.gamma, self.gamma);
        set!(hyper.alpha0, self.alpha0);
        set!(hyper.eta, self.eta);
        set!(hyper.k_corpus, self.k_corpus);
        set!(hyper.t_doc, self.t_doc);
        set!(hyper.kappa, self.kappa);
        set!(hyper.tau0, self.tau0);
        let mut cidtm = CidtmConfig { hyper, ..CidtmConfig::default() };
        set!(cidtm.drift_v_per_day, self.drift_v);
        set!(cidtm.obs_var, self.obs_var);
        set!(cidtm.relevance_threshold, self.threshold);
        if let Some(days) = self.timer {
            cidtm.active_timer_len = days * DAY;
        }
        let mut cdtm = CdtmConfig::default();
        set!(cdtm.drift_v_per_day, self.drift_v);
        set!(cdtm.sweeps, self.cdtm_sweeps);
        set!(cdtm.alpha, self.cdtm_alpha);
        let cfg = RunConfig {
            model,
            batch_size: self.batch_size.unwrap_or(match model {
                ModelKind::Cidtm => 256,
                _ => 64,
            }),
            hyper,
            cidtm,
            cdtm,
            cdtm_topics: self.cdtm_topics.unwrap_or(10),
            train_fraction: self.train_fraction.unwrap_or(0.5),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub hyper: HdpHyper,
    pub cidtm: CidtmConfig,
    pub cdtm: CdtmConfig,
    pub cdtm_topics: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: String| CliError::Usage(e);
        if self.batch_size == 0 {
            return Err(usage("batch size must be >= 1".into()));
        }
        match self.model {
            ModelKind::Ohdp => self.hyper.validate().map_err(|e| usage(e.to_string())),
            ModelKind::Cidtm => self.cidtm.validate().map_err(|e| usage(e.to_string())),
            ModelKind::Cdtm => {
                if self.cdtm_topics == 0 {
                    return Err(usage("--cdtm-topics must be >= 1".into()));
                }
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return Err(usage(format!("--train-fraction must be in (0, 1), got {}", self.train_fraction)));
                }
                self.cdtm.validate().map_err(|e| usage(e.to_string()))
            }
        }
    }
}

/// A config file holds one run or a list of runs.
#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    One(Box<RunOverrides>),
    Many(Vec<RunOverrides>),
}

pub fn load_config_file(path: &Path) -> Result<Vec<RunOverrides>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parsed: ConfigFile =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run config: {e}", path.display())))?;
    Ok(match parsed {
        ConfigFile::One(r) => vec![*r],
        ConfigFile::Many(v) if v.is_empty() => return Err(CliError::Usage(format!("{}: empty run list", path.display()))),
        ConfigFile::Many(v) => v,
    })
}
