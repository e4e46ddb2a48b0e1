//! Self-describing JSON checkpoints: model specs, hyperparameters and the
//! full optimizer state. JSON float serialization is shortest-round-trip,
//! so save/load is bit-exact.

use std::path::Path;

use anyhow::{Context, Result};
use mpmc_core::mpmc::MpmcSpec;
use mpmc_core::segmodel::SegmentorSpec;
use mpmc_core::train::{TrainHyper, TrainState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub segmentor: SegmentorSpec,
    pub mpmc: MpmcSpec,
    pub hyper: TrainHyper,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string(self)?;
        // Write via a temp file so an interrupted save never leaves a
        // truncated checkpoint behind.
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing checkpoint {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpmc_core::mpmc::MpmcHead;
    use mpmc_core::segmodel::Segmentor;

    #[test]
    fn round_trip_is_exact() {
        let seg_spec = SegmentorSpec::default();
        let mpmc_spec = MpmcSpec::default();
        let segmentor = Segmentor::new(seg_spec.clone()).unwrap();
        let head = MpmcHead::new(mpmc_spec.clone()).unwrap();
        let mut state = TrainState::new(&segmentor, &head, 42);
        // Perturb with awkward values that stress float round-tripping.
        state.student_seg[0] = 0.1 + 0.2;
        state.momentum_seg[1] = -1.0e-17;
        state.step = 123;
        let ckpt = Checkpoint {
            config_hash: "deadbeefdeadbeef".into(),
            segmentor: seg_spec,
            mpmc: mpmc_spec,
            hyper: TrainHyper::default(),
            state,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
    }
}
