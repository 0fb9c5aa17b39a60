#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use ccdf_core::dataio::{make_synthetic_pair, ChangeRegion, ReplacementContent, StyleShift, SyntheticSpec};
use ccdf_core::nn::ParamStore;
use ccdf_core::trainer::{GeneratorShape, LrRange, SegmenterShape, TrainConfig};
use ccdf_core::nn::FeatureConfig;
use ccdf_core::cycle_consistency::Reduction;
use rand::Rng;

pub fn t(values: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn scalar(x: &Tensor) -> f64 {
    x.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn values(x: &Tensor) -> Vec<f64> {
    x.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    t(&v, shape)
}

/// Rebuilds a tensor from its values so it shares no graph with the original.
pub fn constant_copy(x: &Tensor) -> Tensor {
    t(&values(x), x.dims())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Flattened parameter values in name order.
pub fn flat_params(store: &ParamStore) -> Vec<f64> {
    store.snapshot().unwrap().into_values().flatten().collect()
}

/// Central finite differences of `f` with respect to every scalar in `vars`.
pub fn numeric_gradient(vars: &[Var], h: f64, mut f: impl FnMut() -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for var in vars {
        let base = values(var.as_tensor());
        let dims = var.dims().to_vec();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + h;
            var.set(&t(&v, &dims)).unwrap();
            let plus = f();
            v[i] = base[i] - h;
            var.set(&t(&v, &dims)).unwrap();
            let minus = f();
            out.push((plus - minus) / (2.0 * h));
        }
        var.set(&t(&base, &dims)).unwrap();
    }
    out
}

/// A small synthetic scene and a matching config that trains in seconds.
pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width: 48,
        height: 48,
        channels: 2,
        style_shift: StyleShift {
            gain: vec![1.2, 0.8],
            bias: vec![0.1, -0.1],
        },
        noise_sigma: 0.01,
        change_regions: vec![ChangeRegion {
            x: 16,
            y: 20,
            width: 12,
            height: 12,
            content: ReplacementContent::Texture,
        }],
        rng_seed: seed,
    }
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        patch_size: 16,
        overlap: 4,
        batch_size: 4,
        stage_epochs: [4, 3, 2],
        lr_stage12: LrRange { min: 1e-4, max: 1e-2 },
        lr_stage3: LrRange { min: 1e-4, max: 2e-3 },
        reduction: Reduction::Mean,
        generator: GeneratorShape {
            base_width: 4,
            depth: 1,
            res_blocks: 1,
            global_skip: true,
        },
        segmenter: SegmenterShape { base_width: 4, depth: 1 },
        features: FeatureConfig::RandomConv {
            widths: vec![4],
            seed: 3,
            bands: None,
        },
        rng_seed: 5,
        ..TrainConfig::toy()
    }
}

pub fn small_pair(seed: u64) -> (ccdf_core::dataio::ImageTensor, ccdf_core::dataio::ImageTensor, ccdf_core::dataio::ReferenceMap) {
    make_synthetic_pair(&small_spec(seed)).unwrap()
}
