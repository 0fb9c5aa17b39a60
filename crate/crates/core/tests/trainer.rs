//! Stage contracts on a small synthetic scene.

mod common;

use candle_core::{DType, Tensor};
use ccdf_core::dataio::{make_synthetic_pair, ImageTensor, StyleShift, SyntheticSpec};
use ccdf_core::error::CcdfError;
use ccdf_core::nn::{ConvFeatures, FeatureExtractor};
use ccdf_core::preprocess::{standardize, tile, PatchGrid};
use ccdf_core::trainer::{
    infer_full_image, init_generators, init_segmenter, lr_at_step, run_stage1, run_stage2, run_stage3,
    stage3_objective, train_all, LrRange, PatchPairs, TrainConfig,
};
use ccdf_core::change_segmentation::{predict_mask, seg_loss};
use ccdf_core::cycle_consistency::generation_loss;
use common::{flat_params, scalar, small_config, small_pair};
use ndarray::Array3;

fn pairs_for(cfg: &TrainConfig, seed: u64) -> PatchPairs {
    let (i1, i2, _) = small_pair(seed);
    PatchPairs::from_images(&i1, &i2, cfg).unwrap()
}

#[test]
fn misaligned_or_empty_grids_are_rejected() {
    let cfg = small_config();
    let (i1, i2, _) = small_pair(0);
    let g1 = tile(&standardize(&i1).unwrap(), 16, 4).unwrap();
    let g2 = tile(&standardize(&i2).unwrap(), 16, 0).unwrap();
    assert!(PatchPairs::new(g1.clone(), g2).is_err());
    let empty = PatchGrid::from_parts(vec![], vec![], g1.source_size(), 16, 4);
    if let Ok(empty) = empty {
        assert!(PatchPairs::new(g1.clone(), empty).is_err());
    }
    let small = ImageTensor::new(Array3::from_shape_fn((40, 48, 2), |(y, x, c)| (x + y + c) as f32)).unwrap();
    assert!(PatchPairs::from_images(&i1, &small, &cfg).is_err());
}

#[test]
fn stage1_reduces_loss_on_identity_pair() {
    let spec = SyntheticSpec {
        style_shift: StyleShift::identity(2),
        noise_sigma: 0.0,
        change_regions: vec![],
        ..common::small_spec(3)
    };
    let (i1, i2, _) = make_synthetic_pair(&spec).unwrap();
    let cfg = TrainConfig {
        stage_epochs: [5, 1, 1],
        ..small_config()
    };
    let pairs = PatchPairs::from_images(&i1, &i2, &cfg).unwrap();
    let (_, _, report) = run_stage1(&pairs, &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), 5);
    assert!(report.epoch_losses[4] < report.epoch_losses[0], "{:?}", report.epoch_losses);
}

#[test]
fn stage1_is_deterministic() {
    let cfg = small_config();
    let pairs = pairs_for(&cfg, 1);
    let (a12, a21, ra) = run_stage1(&pairs, &cfg).unwrap();
    let (b12, b21, rb) = run_stage1(&pairs, &cfg).unwrap();
    assert!(ra.same_trace(&rb));
    assert_eq!(a12.params().fingerprint().unwrap(), b12.params().fingerprint().unwrap());
    assert_eq!(a21.params().fingerprint().unwrap(), b21.params().fingerprint().unwrap());
    let other = TrainConfig {
        rng_seed: cfg.rng_seed + 1,
        ..cfg.clone()
    };
    let (_, _, rc) = run_stage1(&pairs, &other).unwrap();
    assert_ne!(ra.epoch_losses, rc.epoch_losses);
}

#[test]
fn trace_lengths_follow_config() {
    let cfg = TrainConfig {
        stage_epochs: [2, 3, 1],
        ..small_config()
    };
    let pairs = pairs_for(&cfg, 2);
    let models = train_all(&pairs, &cfg).unwrap();
    let lens: Vec<usize> = models.report.stages.iter().map(|s| s.epoch_losses.len()).collect();
    assert_eq!(lens, [2, 3, 1]);
    let json = models.report.to_json().unwrap();
    let back: ccdf_core::trainer::TrainReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, models.report);
    assert_eq!(back.config, cfg);
}

#[test]
fn stage2_needs_a_generator_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let err = ccdf_core::nn::Generator::load(dir.path().join("missing.safetensors"), DType::F32);
    assert!(matches!(err, Err(CcdfError::MissingCheckpoint(_))));
}

#[test]
fn infinite_alternation_period_only_moves_the_generator() {
    let cfg = TrainConfig {
        alternation_period: Some(usize::MAX),
        ..small_config()
    };
    let pairs = pairs_for(&cfg, 4);
    let (g12, _) = init_generators(pairs.channels(), &cfg).unwrap();
    let s = init_segmenter(pairs.channels(), &cfg).unwrap();
    let (g_before, s_before) = (flat_params(g12.params()), flat_params(s.params()));
    let (g12, s, _) = run_stage3(&pairs, g12, s, &cfg).unwrap();
    assert_ne!(flat_params(g12.params()), g_before);
    assert_eq!(flat_params(s.params()), s_before);

    let cfg = TrainConfig {
        stage3_first: ccdf_core::trainer::Phase::Segmenter,
        ..cfg
    };
    let (g12, s, _) = run_stage3(&pairs, g12, s, &cfg).unwrap();
    let g_after = flat_params(g12.params());
    assert_ne!(flat_params(s.params()), s_before);
    let (g12, _, _) = run_stage3(&pairs, g12, s, &cfg).unwrap();
    assert_eq!(flat_params(g12.params()), g_after);
}

#[test]
fn stage3_objective_is_generation_plus_segmentation() {
    let cfg = small_config();
    let pairs = pairs_for(&cfg, 5);
    let (g12, _) = init_generators(pairs.channels(), &cfg).unwrap();
    let s = init_segmenter(pairs.channels(), &cfg).unwrap();
    let phi = ConvFeatures::random(2, &[4], None, 3, DType::F32).unwrap();
    let (p1, p2) = pairs.batch(&[0, 3, 5], DType::F32).unwrap();
    let total = scalar(&stage3_objective(&g12, &s, &p1, &p2, &phi, &cfg).unwrap());
    let w = cfg.weights();
    let gen = scalar(&generation_loss(&g12, &p1, &p2, &phi, &w).unwrap());
    let translated = g12.translate(&p1).unwrap();
    let mask = predict_mask(&s, &p1, &p2).unwrap();
    let seg = scalar(&seg_loss(&translated, &p2, &mask, &phi, &w).unwrap());
    assert!((total - (gen + seg)).abs() <= 1e-5 * total.abs().max(1.0), "{total} vs {gen} + {seg}");
    // the phi used above equals the one the config builds
    let built = cfg.features.build(2, DType::F32).unwrap();
    let probe = p1.clone();
    assert_eq!(
        common::values(&built.extract(&probe).unwrap()),
        common::values(&phi.extract(&probe).unwrap())
    );
}

#[test]
fn stage_isolation_in_stage2() {
    let cfg = small_config();
    let pairs = pairs_for(&cfg, 6);
    let (g12, _, _) = run_stage1(&pairs, &cfg).unwrap();
    let hash = g12.params().fingerprint().unwrap();
    let (_, report) = run_stage2(&pairs, &g12, &cfg).unwrap();
    assert_eq!(g12.params().fingerprint().unwrap(), hash);
    assert_eq!(report.fingerprints["g12"], hash);
}

#[test]
fn non_finite_loss_aborts_with_offsets() {
    let cfg = TrainConfig {
        lr_stage12: LrRange { min: 1e30, max: 1e30 },
        stage_epochs: [3, 1, 1],
        ..small_config()
    };
    let pairs = pairs_for(&cfg, 7);
    match run_stage1(&pairs, &cfg) {
        Err(CcdfError::NonFiniteLoss { stage, offsets, value, .. }) => {
            assert_eq!(stage, "stage 1");
            assert!(!value.is_finite());
            assert!(!offsets.is_empty());
            assert!(offsets.iter().all(|o| pairs.t1().offsets().contains(o)));
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with an absurd learning rate stayed finite"),
    }
}

fn constant_segmenter(value: f64) -> impl Fn(&Tensor, &Tensor) -> candle_core::Result<Tensor> {
    move |p1: &Tensor, _: &Tensor| {
        let (n, _, h, w) = p1.dims4()?;
        Tensor::full(value, (n, 1, h, w), p1.device())?.to_dtype(p1.dtype())
    }
}

#[test]
fn inference_with_constant_stubs() {
    let cfg = small_config();
    let (i1, i2, _) = small_pair(8);
    let (s1, s2) = (standardize(&i1).unwrap(), standardize(&i2).unwrap());
    let (mask, binary) = infer_full_image(&s1, &s2, &constant_segmenter(0.0), &cfg).unwrap();
    assert_eq!((mask.width(), mask.height()), (48, 48));
    assert_eq!(binary.changed_count(), 0);
    let (_, binary) = infer_full_image(&s1, &s2, &constant_segmenter(1.0), &cfg).unwrap();
    assert_eq!(binary.changed_count(), 48 * 48);
    let cropped = ImageTensor::new(s2.data().slice(ndarray::s![..40, .., ..]).to_owned()).unwrap();
    assert!(infer_full_image(&s1, &cropped, &constant_segmenter(0.0), &cfg).is_err());
}

#[test]
fn inference_on_full_scene_counts_patches() {
    let cfg = TrainConfig {
        patch_size: 224,
        overlap: 12,
        ..TrainConfig::toy()
    };
    let img = ImageTensor::new(Array3::from_shape_fn((1000, 1000, 1), |(y, x, _)| ((x * 31 + y * 17) % 97) as f32)).unwrap();
    let calls = std::cell::Cell::new(0usize);
    let s = |p1: &Tensor, _: &Tensor| {
        calls.set(calls.get() + p1.dim(0)?);
        let (n, _, h, w) = p1.dims4()?;
        Tensor::full(0.75f32, (n, 1, h, w), p1.device())
    };
    let (mask, binary) = infer_full_image(&img, &img, &s, &cfg).unwrap();
    assert_eq!(calls.get(), 25);
    assert_eq!((mask.width(), mask.height()), (1000, 1000));
    assert_eq!(binary.changed_count(), 1000 * 1000);
}

#[test]
fn schedule_examples() {
    let total = 250;
    assert_eq!(lr_at_step(0, total, 1e-5, 1e-4).unwrap(), 1e-5);
    assert!((lr_at_step(25, total, 1e-5, 1e-4).unwrap() - 1e-4).abs() < 1e-12);
    assert!((lr_at_step(total - 1, total, 1e-5, 1e-4).unwrap() - 1e-5).abs() < 1e-8);
    assert!(lr_at_step(total, total, 1e-5, 1e-4).is_err());
}

#[test]
fn seed_env_override() {
    let mut cfg = small_config();
    // No other test in this binary touches the variable.
    std::env::set_var(ccdf_core::trainer::SEED_ENV, "1234");
    cfg.apply_env().unwrap();
    assert_eq!(cfg.rng_seed, 1234);
    std::env::set_var(ccdf_core::trainer::SEED_ENV, "not-a-number");
    assert!(cfg.apply_env().is_err());
    std::env::remove_var(ccdf_core::trainer::SEED_ENV);
}
