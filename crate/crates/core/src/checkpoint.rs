//! Versioned JSON checkpoints for every model kind.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::CdtmModel;
use crate::cidtm::CidtmModel;
use crate::eval::ModelKind;
use crate::ohdp::OnlineHdp;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint state is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
pub enum Checkpoint {
    Ohdp(OnlineHdp),
    Cidtm(CidtmModel),
    Cdtm(CdtmModel),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Ohdp(_) => ModelKind::Ohdp,
            Self::Cidtm(_) => ModelKind::Cidtm,
            Self::Cdtm(_) => ModelKind::Cdtm,
        }
    }

    fn validate(&self) -> Result<()> {
        let r = match self {
            Self::Ohdp(m) => m.global.validate().map_err(|e| e.to_string()),
            Self::Cidtm(m) => m.validate().map_err(|e| e.to_string()),
            Self::Cdtm(m) => {
                let expected = m.k * m.steps.len() * m.vocab_size;
                if m.natural.len() == expected {
                    Ok(())
                } else {
                    Err(format!("{} natural parameters, expected {expected}", m.natural.len()))
                }
            }
        };
        r.map_err(CheckpointError::Invalid)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    model: T,
}

#[derive(Deserialize)]
struct Header {
    version: u32,
}

pub fn save_checkpoint<W: Write>(cp: &Checkpoint, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &Envelope { version: CHECKPOINT_VERSION, model: cp })
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let header: Header = serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: header.version });
    }
    let env: Envelope<Checkpoint> = serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    env.model.validate()?;
    Ok(env.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_cdtm, CdtmConfig};
    use crate::cidtm::CidtmConfig;
    use crate::ohdp::HdpHyper;
    use crate::synth::linear_drift_corpus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn round_trip(cp: &Checkpoint) -> Checkpoint {
        let mut buf = Vec::new();
        save_checkpoint(cp, &mut buf).unwrap();
        let back = load_checkpoint(&buf[..]).unwrap();
        let mut again = Vec::new();
        save_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        back
    }

    #[test]
    fn every_kind_round_trips_exactly() {
        let c = linear_drift_corpus(60, 30, 1);
        let hyper = HdpHyper { k_corpus: 6, t_doc: 3, ..HdpHyper::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut o = OnlineHdp::new(hyper, 30, 60, &mut rng).unwrap();
        let mut m = CidtmModel::new(CidtmConfig { hyper, ..CidtmConfig::default() }, 30, 60, &mut rng).unwrap();
        for b in c.docs.chunks(15) {
            o.process_batch(b).unwrap();
            m.process_batch(b, 60).unwrap();
        }
        let d = train_cdtm(&c.docs, 30, 2, &CdtmConfig { sweeps: 3, ..CdtmConfig::default() }, &mut rng).unwrap();
        for cp in [Checkpoint::Ohdp(o), Checkpoint::Cidtm(m), Checkpoint::Cdtm(d)] {
            let back = round_trip(&cp);
            assert_eq!(back, cp);
            assert_eq!(back.kind(), cp.kind());
        }
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let text = r#"{"version":7,"model":{}}"#;
        assert!(matches!(load_checkpoint(text.as_bytes()), Err(CheckpointError::Version { found: 7 })));
        assert!(matches!(load_checkpoint(&b"not json"[..]), Err(CheckpointError::Format(_))));
        let bad = r#"{"version":1,"model":{"kind":"cdtm","state":{"k":2,"vocab_size":3,"config":{"alpha":1.0,"drift_v_per_day":0.0,"prior_mean":0.0,"prior_var":1.0,"obs_smoothing":0.5,"time_bins":1,"sweeps":1,"tol":0.0,"doc_max_iter":1,"doc_tol":1e-6},"steps":[0.0],"natural":[0.0],"trained":true,"objective_trace":[]}}}"#;
        assert!(matches!(load_checkpoint(bad.as_bytes()), Err(CheckpointError::Invalid(_))));
    }
}
