use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Phase, TrainConfig};
use super::schedule::WarmupCosine;
use crate::change_segmentation::seg_loss;
use crate::cycle_consistency::{reconstruction_loss, stage1_terms};
use crate::dataio::ImageTensor;
use crate::error::{CcdfError, Result};
use crate::nn::{patches_to_tensor, FeatureExtractor, Generator, SegmentationNet};
use crate::preprocess::{standardize_with, tile, PatchGrid};
use crate::semantic_consistency::{stage2_loss, Augmentation};

/// Co-located patches of the two dates.
#[derive(Debug, Clone)]
pub struct PatchPairs {
    t1: PatchGrid,
    t2: PatchGrid,
}

impl PatchPairs {
    pub fn new(t1: PatchGrid, t2: PatchGrid) -> Result<Self> {
        if t1.is_empty() || t2.is_empty() {
            return Err(CcdfError::InvalidArgument("empty patch grid".into()));
        }
        if t1.offsets() != t2.offsets()
            || t1.patch_size() != t2.patch_size()
            || t1.source_size() != t2.source_size()
            || t1.channels() != t2.channels()
        {
            return Err(CcdfError::InvalidArgument(
                "patch grids are not aligned (offsets, patch size, source size or channels differ)".into(),
            ));
        }
        Ok(Self { t1, t2 })
    }

    /// Standardizes and tiles both images with the configured grid.
    pub fn from_images(i1: &ImageTensor, i2: &ImageTensor, cfg: &TrainConfig) -> Result<Self> {
        check_same_size(i1, i2)?;
        let s1 = standardize_with(i1, cfg.standardize)?;
        let s2 = standardize_with(i2, cfg.standardize)?;
        Self::new(
            tile(&s1, cfg.patch_size, cfg.overlap)?,
            tile(&s2, cfg.patch_size, cfg.overlap)?,
        )
    }

    pub fn t1(&self) -> &PatchGrid {
        &self.t1
    }

    pub fn t2(&self) -> &PatchGrid {
        &self.t2
    }

    pub fn len(&self) -> usize {
        self.t1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t1.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.t1.channels()
    }

    pub fn offsets_of(&self, idx: &[usize]) -> Vec<(usize, usize)> {
        idx.iter().map(|&i| self.t1.offsets()[i]).collect()
    }

    pub fn batch(&self, idx: &[usize], dtype: DType) -> Result<(Tensor, Tensor)> {
        Ok((
            patches_to_tensor(idx.iter().map(|&i| &self.t1.patches()[i]), dtype)?,
            patches_to_tensor(idx.iter().map(|&i| &self.t2.patches()[i]), dtype)?,
        ))
    }
}

pub(crate) fn check_same_size(i1: &ImageTensor, i2: &ImageTensor) -> Result<()> {
    let d1 = i1.data().dim();
    let d2 = i2.data().dim();
    if d1 != d2 {
        return Err(CcdfError::shape(format!("{d1:?}"), format!("{d2:?}")));
    }
    Ok(())
}

/// Loss trace and bookkeeping for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Mean optimized loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    /// Parameter fingerprints of the networks after the stage.
    pub fingerprints: BTreeMap<String, String>,
}

impl StageReport {
    /// True when the loss traces (not the timings) agree.
    pub fn same_trace(&self, other: &StageReport) -> bool {
        self.stage == other.stage && self.epoch_losses == other.epoch_losses && self.fingerprints == other.fingerprints
    }
}

/// Seed for an independent random stream derived from the run seed.
pub fn derived_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

pub(crate) mod streams {
    pub const G12_INIT: u64 = 1;
    pub const G21_INIT: u64 = 2;
    pub const S_INIT: u64 = 3;
    pub const STAGE1: u64 = 11;
    pub const STAGE2: u64 = 12;
    pub const STAGE3: u64 = 13;
}

pub fn init_generators(channels: usize, cfg: &TrainConfig) -> Result<(Generator, Generator)> {
    let gc = cfg.generator.with_channels(channels);
    Ok((
        Generator::new(gc.clone(), cfg.dtype(), derived_seed(cfg.rng_seed, streams::G12_INIT))?,
        Generator::new(gc, cfg.dtype(), derived_seed(cfg.rng_seed, streams::G21_INIT))?,
    ))
}

pub fn init_segmenter(channels: usize, cfg: &TrainConfig) -> Result<SegmentationNet> {
    SegmentationNet::new(
        cfg.segmenter.with_channels(channels),
        cfg.dtype(),
        derived_seed(cfg.rng_seed, streams::S_INIT),
    )
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn adam(vars: Vec<Var>, cfg: &TrainConfig, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: cfg.adam.beta1,
            beta2: cfg.adam.beta2,
            eps: cfg.adam.eps,
            weight_decay: 0.0,
        },
    )?)
}

fn finite_value(loss: &Tensor, stage: &str, batch: usize, pairs: &PatchPairs, idx: &[usize]) -> Result<f64> {
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(CcdfError::NonFiniteLoss {
            stage: stage.into(),
            batch,
            value,
            offsets: pairs.offsets_of(idx),
        });
    }
    Ok(value)
}

fn build_phi(pairs: &PatchPairs, cfg: &TrainConfig) -> Result<Box<dyn FeatureExtractor>> {
    cfg.features.build(pairs.channels(), cfg.dtype())
}

fn check_channels(pairs: &PatchPairs, got: usize, what: &str) -> Result<()> {
    if got != pairs.channels() {
        return Err(CcdfError::shape(
            format!("{what} with {} channels", pairs.channels()),
            format!("{got} channels"),
        ));
    }
    Ok(())
}

/// Trains both generators on the stage-1 objective (without the cycle terms
/// when `cfg.use_cycle` is false).
pub fn run_stage1(pairs: &PatchPairs, cfg: &TrainConfig) -> Result<(Generator, Generator, StageReport)> {
    cfg.validate()?;
    let (g12, g21) = init_generators(pairs.channels(), cfg)?;
    let report = train_stage1(pairs, &g12, &g21, cfg)?;
    Ok((g12, g21, report))
}

/// Stage-1 loop on existing generators.
pub fn train_stage1(pairs: &PatchPairs, g12: &Generator, g21: &Generator, cfg: &TrainConfig) -> Result<StageReport> {
    check_channels(pairs, g12.config().channels, "generator")?;
    check_channels(pairs, g21.config().channels, "generator")?;
    let start = Instant::now();
    let dtype = cfg.dtype();
    let phi = build_phi(pairs, cfg)?;
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.rng_seed, streams::STAGE1));
    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total = batches_per_epoch * cfg.stage_epochs[0];
    let sched = WarmupCosine::new(total, cfg.lr_stage12.min, cfg.lr_stage12.max, cfg.warmup_fraction)?;
    let mut vars = g12.params().vars();
    vars.extend(g21.params().vars());
    let mut opt = adam(vars, cfg, sched.at(0)?)?;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.stage_epochs[0]);
    for epoch in 0..cfg.stage_epochs[0] {
        let mut sum = 0.0;
        let batches = shuffled_batches(pairs.len(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let (p1, p2) = pairs.batch(idx, dtype)?;
            let terms = stage1_terms(g12, g21, &p1, &p2, phi.as_ref(), &weights)?;
            let loss = if cfg.use_cycle {
                terms.total()?
            } else {
                terms.total_without_cycle()?
            };
            sum += finite_value(&loss, "stage 1", step, pairs, idx)?;
            opt.set_learning_rate(sched.at(step)?);
            opt.backward_step(&loss)?;
            step += 1;
        }
        let mean = sum / batches.len() as f64;
        log::info!("stage 1 epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.stage_epochs[0]);
        epoch_losses.push(mean);
    }
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("g12".into(), g12.params().fingerprint()?);
    fingerprints.insert("g21".into(), g21.params().fingerprint()?);
    Ok(StageReport {
        stage: 1,
        epoch_losses,
        steps: step,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        fingerprints,
    })
}

/// Trains a fresh segmenter against the frozen `g12`.
pub fn run_stage2(pairs: &PatchPairs, g12: &Generator, cfg: &TrainConfig) -> Result<(SegmentationNet, StageReport)> {
    cfg.validate()?;
    let s = init_segmenter(pairs.channels(), cfg)?;
    let report = train_stage2(pairs, g12, &s, cfg)?;
    Ok((s, report))
}

/// Stage-2 loop on an existing segmenter. `g12` only runs forward and its
/// output is detached, so its parameters never change.
pub fn train_stage2(pairs: &PatchPairs, g12: &Generator, s: &SegmentationNet, cfg: &TrainConfig) -> Result<StageReport> {
    check_channels(pairs, g12.config().channels, "generator")?;
    check_channels(pairs, s.config().channels, "segmenter")?;
    let start = Instant::now();
    let dtype = cfg.dtype();
    let phi = build_phi(pairs, cfg)?;
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.rng_seed, streams::STAGE2));
    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total = batches_per_epoch * cfg.stage_epochs[1];
    let sched = WarmupCosine::new(total, cfg.lr_stage12.min, cfg.lr_stage12.max, cfg.warmup_fraction)?;
    let mut opt = adam(s.params().vars(), cfg, sched.at(0)?)?;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.stage_epochs[1]);
    for epoch in 0..cfg.stage_epochs[1] {
        let mut sum = 0.0;
        let batches = shuffled_batches(pairs.len(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let (p1, p2) = pairs.batch(idx, dtype)?;
            let translated = g12.translate(&p1)?.detach();
            let aug = Augmentation::sample(&mut rng);
            let loss = stage2_loss(s, &translated, &p1, &p2, aug, phi.as_ref(), &weights)?;
            sum += finite_value(&loss, "stage 2", step, pairs, idx)?;
            opt.set_learning_rate(sched.at(step)?);
            opt.backward_step(&loss)?;
            step += 1;
        }
        let mean = sum / batches.len() as f64;
        log::info!("stage 2 epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.stage_epochs[1]);
        epoch_losses.push(mean);
    }
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("g12".into(), g12.params().fingerprint()?);
    fingerprints.insert("segmenter".into(), s.params().fingerprint()?);
    Ok(StageReport {
        stage: 2,
        epoch_losses,
        steps: step,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        fingerprints,
    })
}

/// Alternating fine-tuning. Generator phases minimize the T1 -> T2 generation
/// loss, segmenter phases minimize the segmentation loss with the generator
/// output detached. Phases switch every `alternation_period` batches.
pub fn run_stage3(
    pairs: &PatchPairs,
    g12: Generator,
    s: SegmentationNet,
    cfg: &TrainConfig,
) -> Result<(Generator, SegmentationNet, StageReport)> {
    cfg.validate()?;
    let report = train_stage3(pairs, &g12, &s, cfg)?;
    Ok((g12, s, report))
}

pub fn train_stage3(pairs: &PatchPairs, g12: &Generator, s: &SegmentationNet, cfg: &TrainConfig) -> Result<StageReport> {
    check_channels(pairs, g12.config().channels, "generator")?;
    check_channels(pairs, s.config().channels, "segmenter")?;
    let start = Instant::now();
    let dtype = cfg.dtype();
    let phi = build_phi(pairs, cfg)?;
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.rng_seed, streams::STAGE3));
    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let period = cfg.alternation_period.unwrap_or(batches_per_epoch);
    let total = batches_per_epoch * cfg.stage_epochs[2];
    let sched = WarmupCosine::new(total, cfg.lr_stage3.min, cfg.lr_stage3.max, cfg.warmup_fraction)?;
    let mut opt_g = adam(g12.params().vars(), cfg, sched.at(0)?)?;
    let mut opt_s = adam(s.params().vars(), cfg, sched.at(0)?)?;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.stage_epochs[2]);
    for epoch in 0..cfg.stage_epochs[2] {
        let mut sum = 0.0;
        let batches = shuffled_batches(pairs.len(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let (p1, p2) = pairs.batch(idx, dtype)?;
            let lr = sched.at(step)?;
            let generator_turn = ((step / period) % 2 == 0) == (cfg.stage3_first == Phase::Generator);
            if generator_turn {
                let translated = g12.translate(&p1)?;
                let loss = reconstruction_loss(&translated, &p2, phi.as_ref(), &weights)?;
                sum += finite_value(&loss, "stage 3 (generator)", step, pairs, idx)?;
                opt_g.set_learning_rate(lr);
                opt_g.backward_step(&loss)?;
            } else {
                let translated = g12.translate(&p1)?.detach();
                let mask = crate::change_segmentation::predict_mask(s, &p1, &p2)?;
                let loss = seg_loss(&translated, &p2, &mask, phi.as_ref(), &weights)?;
                sum += finite_value(&loss, "stage 3 (segmenter)", step, pairs, idx)?;
                opt_s.set_learning_rate(lr);
                opt_s.backward_step(&loss)?;
            }
            step += 1;
        }
        let mean = sum / batches.len() as f64;
        log::info!("stage 3 epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.stage_epochs[2]);
        epoch_losses.push(mean);
    }
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("g12".into(), g12.params().fingerprint()?);
    fingerprints.insert("segmenter".into(), s.params().fingerprint()?);
    Ok(StageReport {
        stage: 3,
        epoch_losses,
        steps: step,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        fingerprints,
    })
}

/// The stage-3 objective: `L_gen(T2) + L_seg` on one batch.
pub fn stage3_objective(
    g12: &Generator,
    s: &SegmentationNet,
    p1: &Tensor,
    p2: &Tensor,
    phi: &dyn FeatureExtractor,
    cfg: &TrainConfig,
) -> Result<Tensor> {
    let weights = cfg.weights();
    let translated = g12.translate(p1)?;
    let gen = reconstruction_loss(&translated, p2, phi, &weights)?;
    let mask = crate::change_segmentation::predict_mask(s, p1, p2)?;
    Ok((gen + seg_loss(&translated, p2, &mask, phi, &weights)?)?)
}
