//! Three-stage training (style translation, change segmentation, alternating
//! fine-tuning), the learning-rate schedule and full-image inference.

mod config;
mod inference;
mod schedule;
mod stages;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{AdamConfig, GeneratorShape, LrRange, Phase, Precision, SegmenterShape, TrainConfig, SEED_ENV};
pub use inference::infer_full_image;
pub use schedule::{lr_at_step, WarmupCosine, DEFAULT_WARMUP_FRACTION};
pub use stages::{
    derived_seed, init_generators, init_segmenter, run_stage1, run_stage2, run_stage3, stage3_objective,
    train_stage1, train_stage2, train_stage3, PatchPairs, StageReport,
};

use crate::error::{CcdfError, Result};
use crate::nn::{Generator, SegmentationNet};

pub const G12_FILE: &str = "g12.safetensors";
pub const G21_FILE: &str = "g21.safetensors";
pub const SEGMENTER_FILE: &str = "segmenter.safetensors";
pub const REPORT_FILE: &str = "train_report.json";

/// Everything a training run produced, serialized as JSON next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub stages: Vec<StageReport>,
    pub wall_clock_secs: f64,
    /// Checkpoint file name to parameter fingerprint.
    pub checkpoints: BTreeMap<String, String>,
}

impl TrainReport {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            stages: Vec::new(),
            wall_clock_secs: 0.0,
            checkpoints: BTreeMap::new(),
        }
    }

    pub fn stage(&self, stage: u8) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| CcdfError::io(path, e))
    }
}

pub struct TrainedModels {
    pub g12: Generator,
    pub g21: Generator,
    pub segmenter: SegmentationNet,
    pub report: TrainReport,
}

/// Runs all three stages back to back.
pub fn train_all(pairs: &PatchPairs, cfg: &TrainConfig) -> Result<TrainedModels> {
    let start = Instant::now();
    let mut report = TrainReport::new(cfg.clone());
    let (g12, g21, r1) = run_stage1(pairs, cfg)?;
    report.stages.push(r1);
    let (s, r2) = run_stage2(pairs, &g12, cfg)?;
    report.stages.push(r2);
    let (g12, segmenter, r3) = run_stage3(pairs, g12, s, cfg)?;
    report.stages.push(r3);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainedModels {
        g12,
        g21,
        segmenter,
        report,
    })
}

fn checkpoint_meta(cfg: &TrainConfig, stage: u8) -> Result<HashMap<String, String>> {
    let mut meta = HashMap::new();
    meta.insert("train_config".into(), serde_json::to_string(cfg)?);
    meta.insert("stage".into(), stage.to_string());
    Ok(meta)
}

/// Writes `g` to `dir/file` with the config attached and records its fingerprint.
pub fn save_generator(
    dir: &Path,
    file: &str,
    g: &Generator,
    cfg: &TrainConfig,
    stage: u8,
    report: &mut TrainReport,
) -> Result<()> {
    g.save(dir.join(file), checkpoint_meta(cfg, stage)?)?;
    report.checkpoints.insert(file.into(), g.params().fingerprint()?);
    Ok(())
}

pub fn save_generators(
    dir: &Path,
    g12: &Generator,
    g21: &Generator,
    cfg: &TrainConfig,
    stage: u8,
    report: &mut TrainReport,
) -> Result<()> {
    save_generator(dir, G12_FILE, g12, cfg, stage, report)?;
    save_generator(dir, G21_FILE, g21, cfg, stage, report)
}

pub fn save_segmenter(
    dir: &Path,
    s: &SegmentationNet,
    cfg: &TrainConfig,
    stage: u8,
    report: &mut TrainReport,
) -> Result<()> {
    s.save(dir.join(SEGMENTER_FILE), checkpoint_meta(cfg, stage)?)?;
    report.checkpoints.insert(SEGMENTER_FILE.into(), s.params().fingerprint()?);
    Ok(())
}
