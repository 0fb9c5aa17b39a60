//! Analytic gradients of the stage-1 and stage-2 objectives against central
//! finite differences on networks with at most 500 parameters.

mod common;

use candle_core::{DType, Var};
use ccdf_core::change_segmentation::{predict_mask, seg_loss};
use ccdf_core::cycle_consistency::{l1_loss, stage1_loss, LossWeights, Reduction};
use ccdf_core::nn::{ConvFeatures, Generator, GeneratorConfig, IdentityExtractor, SegmentationNet, SegmenterConfig};
use ccdf_core::semantic_consistency::{augmented_reference, stage2_loss, Augmentation};
use common::{constant_copy, numeric_gradient, random_tensor, scalar, values};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const MAX_REL: f64 = 1e-3;

fn analytic(loss: &candle_core::Tensor, vars: &[Var]) -> Vec<f64> {
    let grads = loss.backward().unwrap();
    vars.iter()
        .flat_map(|v| match grads.get(v.as_tensor()) {
            Some(g) => values(g),
            None => vec![0.0; v.elem_count()],
        })
        .collect()
}

/// Largest per-parameter relative error, with magnitudes below 1e-4 treated
/// as 1e-4 so that vanishing gradients are compared absolutely.
fn worst_relative_error(a: &[f64], n: &[f64]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn tiny_generator(seed: u64) -> Generator {
    Generator::new(
        GeneratorConfig {
            channels: 1,
            base_width: 1,
            depth: 1,
            res_blocks: 1,
            global_skip: true,
        },
        DType::F64,
        seed,
    )
    .unwrap()
}

fn tiny_segmenter(seed: u64) -> SegmentationNet {
    SegmentationNet::new(
        SegmenterConfig {
            channels: 1,
            base_width: 2,
            depth: 1,
        },
        DType::F64,
        seed,
    )
    .unwrap()
}

#[test]
fn stage1_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let g12 = tiny_generator(1);
    let g21 = tiny_generator(2);
    let count = g12.params().parameter_count() + g21.params().parameter_count();
    assert!(count <= 500, "{count} parameters");
    let p1 = random_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let p2 = random_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let phi = ConvFeatures::random(1, &[2], None, 5, DType::F64).unwrap();
    for reduction in [Reduction::Sum, Reduction::Mean] {
        let w = LossWeights {
            lambda_cont: 0.2,
            lambda_reg: 0.0,
            lambda_sem: 0.0,
            reduction,
        };
        let mut vars = g12.params().vars();
        vars.extend(g21.params().vars());
        let a = analytic(&stage1_loss(&g12, &g21, &p1, &p2, &phi, &w).unwrap(), &vars);
        let n = numeric_gradient(&vars, H, || scalar(&stage1_loss(&g12, &g21, &p1, &p2, &phi, &w).unwrap()));
        assert!(a.iter().any(|v| v.abs() > 1e-3));
        let err = worst_relative_error(&a, &n);
        assert!(err <= MAX_REL, "{reduction:?}: relative error {err}");
    }
}

#[test]
fn stage2_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = tiny_segmenter(3);
    assert!(s.params().parameter_count() <= 500);
    let p1 = random_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let p2 = random_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let translated = random_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let phi = ConvFeatures::random(1, &[2], None, 5, DType::F64).unwrap();
    let w = LossWeights {
        lambda_cont: 0.2,
        lambda_reg: 0.75,
        lambda_sem: 0.7,
        reduction: Reduction::Sum,
    };
    let vars = s.params().vars();
    for aug in Augmentation::ALL {
        let a = analytic(&stage2_loss(&s, &translated, &p1, &p2, aug, &phi, &w).unwrap(), &vars);
        // The augmented branch is a constant reference for differentiation.
        let target = constant_copy(&augmented_reference(&s, &p1, &p2, aug).unwrap());
        let n = numeric_gradient(&vars, H, || {
            let m = predict_mask(&s, &p1, &p2).unwrap();
            scalar(&seg_loss(&translated, &p2, &m, &phi, &w).unwrap())
                + w.lambda_sem * scalar(&l1_loss(&target, &m, w.reduction).unwrap())
        });
        let err = worst_relative_error(&a, &n);
        assert!(err <= MAX_REL, "{aug:?}: relative error {err}");
    }
}

#[test]
fn seg_gradient_with_identity_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = tiny_segmenter(9);
    let p1 = random_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
    let p2 = random_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
    let translated = random_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
    let w = LossWeights {
        lambda_cont: 0.4,
        lambda_reg: 0.65,
        lambda_sem: 0.0,
        reduction: Reduction::Mean,
    };
    let vars = s.params().vars();
    let f = || seg_loss(&translated, &p2, &predict_mask(&s, &p1, &p2).unwrap(), &IdentityExtractor, &w).unwrap();
    let a = analytic(&f(), &vars);
    let n = numeric_gradient(&vars, H, || scalar(&f()));
    let err = worst_relative_error(&a, &n);
    assert!(err <= MAX_REL, "relative error {err}");
}
