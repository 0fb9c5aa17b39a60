//! Mask-gated reconstruction: the segmenter learns a mask that hides what the
//! T1 -> T2 generator cannot reconstruct, with a mean-mask sparsity penalty.

use candle_core::{DType, Tensor};
use ndarray::Array2;

pub use crate::dataio::{BinaryMap, ChangeMask};
use crate::cycle_consistency::{abs, content_loss, same_shape, LossWeights};
use crate::error::{CcdfError, Result};
use crate::nn::{FeatureExtractor, Segmenter};

/// Runs the segmenter on a patch-pair batch and checks the mask contract:
/// `(N, 1, P, P)` with every value in `[0, 1]`.
pub fn predict_mask<S: Segmenter + ?Sized>(s: &S, patch1: &Tensor, patch2: &Tensor) -> Result<Tensor> {
    same_shape(patch1, patch2)?;
    let (n, _, h, w) = patch1.dims4()?;
    let m = s.segment(patch1, patch2)?;
    if m.dims() != [n, 1, h, w] {
        return Err(CcdfError::shape(format!("{:?}", [n, 1, h, w]), format!("{:?}", m.dims())));
    }
    let lo = m.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let hi = m.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(CcdfError::InvalidArgument(format!("mask values span [{lo}, {hi}], outside [0, 1]")));
    }
    Ok(m)
}

/// Mean of all mask values.
pub fn reg_loss(mask: &Tensor) -> Result<Tensor> {
    if mask.elem_count() == 0 {
        return Err(CcdfError::InvalidArgument("empty mask".into()));
    }
    Ok(mask.mean_all()?)
}

/// The three terms of the segmentation objective, unweighted.
pub struct SegTerms {
    pub masked_l1: Tensor,
    /// `None` when `lambda_cont == 0` and the term was skipped.
    pub masked_content: Option<Tensor>,
    pub reg: Tensor,
}

impl SegTerms {
    pub fn total(&self, weights: &LossWeights) -> Result<Tensor> {
        let mut total = (&self.masked_l1 + (&self.reg * weights.lambda_reg)?)?;
        if let Some(c) = &self.masked_content {
            total = (total + (c * weights.lambda_cont)?)?;
        }
        Ok(total)
    }
}

fn check_mask(mask: &Tensor, image: &Tensor) -> Result<()> {
    let (n, _, h, w) = image.dims4()?;
    if mask.dims() != [n, 1, h, w] {
        return Err(CcdfError::shape(format!("mask {:?}", [n, 1, h, w]), format!("{:?}", mask.dims())));
    }
    Ok(())
}

/// Evaluates the segmentation terms. The single-channel mask broadcasts over
/// all image channels. The L1 term is taken as `(1 - m) * |g - x|`, equal in
/// value to `|(1 - m) g - (1 - m) x|` but with the right gradient where the
/// mask saturates at exactly one.
pub fn seg_terms(
    translated: &Tensor,
    patch2: &Tensor,
    mask: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<SegTerms> {
    same_shape(translated, patch2)?;
    check_mask(mask, patch2)?;
    let keep = mask.affine(-1.0, 1.0)?;
    let masked_content = if weights.lambda_cont != 0.0 {
        let gated_fake = translated.broadcast_mul(&keep)?;
        let gated_real = patch2.broadcast_mul(&keep)?;
        Some(content_loss(&gated_fake, &gated_real, phi, weights.reduction)?)
    } else {
        None
    };
    Ok(SegTerms {
        masked_l1: weights.reduction.apply(&abs(&(patch2 - translated)?)?.broadcast_mul(&keep)?)?,
        masked_content,
        reg: reg_loss(mask)?,
    })
}

pub fn seg_loss(
    translated: &Tensor,
    patch2: &Tensor,
    mask: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Tensor> {
    seg_terms(translated, patch2, mask, phi, weights)?.total(weights)
}

/// Marks pixels with probability `>= threshold` as changed.
pub fn binarize(mask: &ChangeMask, threshold: f64) -> Result<BinaryMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CcdfError::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    BinaryMap::new(mask.values().mapv(|v| v as f64 >= threshold))
}

/// Converts a `(1, 1, H, W)` or `(H, W)` mask tensor into a [`ChangeMask`].
pub fn tensor_to_mask(mask: &Tensor) -> Result<ChangeMask> {
    let dims = mask.dims();
    let (h, w) = match *dims {
        [1, 1, h, w] | [h, w] => (h, w),
        _ => return Err(CcdfError::shape("(1, 1, H, W) or (H, W)", format!("{dims:?}"))),
    };
    let values: Vec<f32> = mask.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    ChangeMask::new(Array2::from_shape_vec((h, w), values).map_err(|e| CcdfError::InvalidArgument(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle_consistency::{reconstruction_loss, Reduction};
    use crate::nn::IdentityExtractor;
    use candle_core::Device;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn scalar(x: &Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn reg_loss_fixtures() {
        assert_eq!(scalar(&reg_loss(&t(&[0.0; 4], &[1, 1, 2, 2])).unwrap()), 0.0);
        assert_eq!(scalar(&reg_loss(&t(&[1.0; 4], &[1, 1, 2, 2])).unwrap()), 1.0);
        assert_eq!(scalar(&reg_loss(&t(&[1.0, 0.0, 0.0, 1.0], &[1, 1, 2, 2])).unwrap()), 0.5);
        assert!(reg_loss(&Tensor::zeros((0,), DType::F64, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn hand_fixture_with_one_masked_pixel() {
        let g_out = t(&[1.0, 1.0, 1.0, 1.0], &[1, 1, 2, 2]);
        let p2 = t(&[2.0, 1.0, 1.0, 1.0], &[1, 1, 2, 2]);
        let m = t(&[1.0, 0.0, 0.0, 0.0], &[1, 1, 2, 2]);
        let w = LossWeights {
            lambda_cont: 0.0,
            lambda_reg: 0.75,
            lambda_sem: 0.7,
            reduction: Reduction::Sum,
        };
        let v = scalar(&seg_loss(&g_out, &p2, &m, &IdentityExtractor, &w).unwrap());
        assert!((v - 0.1875).abs() < 1e-12);
    }

    #[test]
    fn full_mask_leaves_only_regularizer() {
        let g_out = t(&[0.3, -1.0, 2.0, 5.0, 1.0, 1.0, 0.0, 2.0], &[1, 2, 2, 2]);
        let p2 = t(&[1.0, 1.0, -1.0, 0.5, 0.0, 3.0, 3.0, 3.0], &[1, 2, 2, 2]);
        let ones = t(&[1.0; 4], &[1, 1, 2, 2]);
        let w = LossWeights::wh();
        assert_eq!(scalar(&seg_loss(&g_out, &p2, &ones, &IdentityExtractor, &w).unwrap()), 0.75);
        let zeros = t(&[0.0; 4], &[1, 1, 2, 2]);
        let seg = scalar(&seg_loss(&g_out, &p2, &zeros, &IdentityExtractor, &w).unwrap());
        let gen = scalar(&reconstruction_loss(&g_out, &p2, &IdentityExtractor, &w).unwrap());
        assert!((seg - gen).abs() < 1e-12);
    }

    #[test]
    fn saturated_mask_gradient_is_minus_residual() {
        let g_out = t(&[1.0, 3.0], &[1, 1, 1, 2]);
        let p2 = t(&[2.0, 1.0], &[1, 1, 1, 2]);
        let m = candle_core::Var::new(&[1.0f64, 1.0], &Device::Cpu).unwrap();
        let mask = m.as_tensor().reshape((1, 1, 1, 2)).unwrap();
        let w = LossWeights {
            lambda_cont: 0.0,
            lambda_reg: 0.0,
            lambda_sem: 0.0,
            reduction: Reduction::Sum,
        };
        let grads = seg_loss(&g_out, &p2, &mask, &IdentityExtractor, &w).unwrap().backward().unwrap();
        let g: Vec<f64> = grads.get(m.as_tensor()).unwrap().to_vec1().unwrap();
        assert_eq!(g, vec![-1.0, -2.0]);
    }

    #[test]
    fn mask_shape_checked() {
        let x = t(&[0.0; 8], &[1, 2, 2, 2]);
        let bad = t(&[0.0; 8], &[1, 2, 2, 2]);
        assert!(seg_loss(&x, &x, &bad, &IdentityExtractor, &LossWeights::wh()).is_err());
    }

    #[test]
    fn predict_mask_range_contract() {
        let x = t(&[0.5; 8], &[2, 1, 2, 2]);
        let good = |a: &Tensor, b: &Tensor| (a - b)?.abs()?.clamp(0.0, 1.0);
        assert_eq!(predict_mask(&good, &x, &x).unwrap().dims(), &[2, 1, 2, 2]);
        let too_big = |a: &Tensor, _b: &Tensor| a * 4.0;
        assert!(predict_mask(&too_big, &x, &x).is_err());
        let wrong_shape = |a: &Tensor, _b: &Tensor| a.narrow(2, 0, 1);
        assert!(predict_mask(&wrong_shape, &x, &x).is_err());
    }

    #[test]
    fn binarize_boundary_and_monotone() {
        let mask = ChangeMask::new(Array2::from_shape_vec((1, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap()).unwrap();
        let b = binarize(&mask, 0.5).unwrap();
        assert_eq!(b.changed().iter().copied().collect::<Vec<_>>(), vec![false, false, true, true, true]);
        let low = ChangeMask::new(Array2::from_elem((3, 3), 0.49)).unwrap();
        assert_eq!(binarize(&low, 0.5).unwrap().changed_count(), 0);
        let mut last = usize::MAX;
        for i in 1..100 {
            let n = binarize(&mask, i as f64 / 100.0).unwrap().changed_count();
            assert!(n <= last);
            last = n;
        }
        assert!(binarize(&mask, 0.0).is_err());
        assert!(binarize(&mask, 1.0).is_err());
    }
}
