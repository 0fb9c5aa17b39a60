//! Bidirectional style translation losses: per-direction generation loss,
//! cycle reconstruction loss and their four-term sum used in stage 1.

use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CcdfError, Result};
use crate::nn::FeatureExtractor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    pub fn apply(self, t: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Reduction::Sum => t.sum_all()?,
            Reduction::Mean => t.mean_all()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cont: f64,
    pub lambda_reg: f64,
    pub lambda_sem: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl LossWeights {
    /// Values tuned for the Wuhan (WH) scene.
    pub fn wh() -> Self {
        Self {
            lambda_cont: 0.2,
            lambda_reg: 0.75,
            lambda_sem: 0.7,
            reduction: Reduction::Sum,
        }
    }

    /// Values tuned for the Hanyang (HY) scene.
    pub fn hy() -> Self {
        Self {
            lambda_cont: 0.4,
            lambda_reg: 0.65,
            lambda_sem: 0.7,
            reduction: Reduction::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cont", self.lambda_cont),
            ("lambda_reg", self.lambda_reg),
            ("lambda_sem", self.lambda_sem),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CcdfError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(CcdfError::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

/// Runs a generator on an `(N, C, P, P)` batch and checks the shape contract.
pub fn translate<G: Module + ?Sized>(g: &G, patch: &Tensor) -> Result<Tensor> {
    let out = g.forward(patch)?;
    same_shape(patch, &out)?;
    Ok(out)
}

/// `|x|` whose gradient is `sign(x)`, so zero at exactly zero. Candle's own
/// `abs` uses +1 there, which biases terms that start at zero residual.
pub(crate) fn abs(x: &Tensor) -> Result<Tensor> {
    Ok(x.mul(&x.sign()?.detach())?)
}

/// `sum |b - a|` (or its mean).
pub fn l1_loss(a: &Tensor, b: &Tensor, reduction: Reduction) -> Result<Tensor> {
    same_shape(a, b)?;
    reduction.apply(&abs(&(b - a)?)?)
}

/// `sum (phi(b) - phi(a))^2` (or its mean) over a frozen feature map.
pub fn content_loss(a: &Tensor, b: &Tensor, phi: &dyn FeatureExtractor, reduction: Reduction) -> Result<Tensor> {
    same_shape(a, b)?;
    let fa = phi.extract(a)?;
    let fb = phi.extract(b)?;
    reduction.apply(&(fb - fa)?.sqr()?)
}

/// L1 plus weighted content loss between an already translated batch and its target.
pub fn reconstruction_loss(
    translated: &Tensor,
    target: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Tensor> {
    let l1 = l1_loss(translated, target, weights.reduction)?;
    if weights.lambda_cont == 0.0 {
        return Ok(l1);
    }
    let cont = content_loss(translated, target, phi, weights.reduction)?;
    Ok((l1 + (cont * weights.lambda_cont)?)?)
}

/// `l1(g(src), dst) + lambda_cont * content(g(src), dst)`.
pub fn generation_loss<G: Module + ?Sized>(
    g: &G,
    src: &Tensor,
    dst: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Tensor> {
    same_shape(src, dst)?;
    reconstruction_loss(&translate(g, src)?, dst, phi, weights)
}

/// `l1(g_ba(g_ab(src)), src)`.
pub fn cycle_loss<A: Module + ?Sized, B: Module + ?Sized>(
    g_ab: &A,
    g_ba: &B,
    src: &Tensor,
    reduction: Reduction,
) -> Result<Tensor> {
    let back = translate(g_ba, &translate(g_ab, src)?)?;
    l1_loss(&back, src, reduction)
}

/// The four stage-1 terms, each a scalar tensor.
pub struct Stage1Terms {
    /// Generation loss of the T1 -> T2 generator.
    pub gen_t2: Tensor,
    /// Cycle loss T1 -> T2 -> T1.
    pub cyc_t1: Tensor,
    pub gen_t1: Tensor,
    pub cyc_t2: Tensor,
}

impl Stage1Terms {
    pub fn total(&self) -> Result<Tensor> {
        Ok(((&self.gen_t2 + &self.cyc_t1)? + (&self.gen_t1 + &self.cyc_t2)?)?)
    }

    /// Generation terms only, i.e. two independent one-way translators.
    pub fn total_without_cycle(&self) -> Result<Tensor> {
        Ok((&self.gen_t2 + &self.gen_t1)?)
    }
}

/// Evaluates every stage-1 term, sharing each forward translation between the
/// generation and the cycle term that use it.
pub fn stage1_terms<A: Module + ?Sized, B: Module + ?Sized>(
    g12: &A,
    g21: &B,
    patch1: &Tensor,
    patch2: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Stage1Terms> {
    same_shape(patch1, patch2)?;
    let fake2 = translate(g12, patch1)?;
    let fake1 = translate(g21, patch2)?;
    Ok(Stage1Terms {
        gen_t2: reconstruction_loss(&fake2, patch2, phi, weights)?,
        cyc_t1: l1_loss(&translate(g21, &fake2)?, patch1, weights.reduction)?,
        gen_t1: reconstruction_loss(&fake1, patch1, phi, weights)?,
        cyc_t2: l1_loss(&translate(g12, &fake1)?, patch2, weights.reduction)?,
    })
}

pub fn stage1_loss<A: Module + ?Sized, B: Module + ?Sized>(
    g12: &A,
    g21: &B,
    patch1: &Tensor,
    patch2: &Tensor,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Tensor> {
    stage1_terms(g12, g21, patch1, patch2, phi, weights)?.total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::IdentityExtractor;
    use candle_core::{DType, Device, Var};

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn scalar(x: &Tensor) -> f64 {
        x.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    fn ident(x: &Tensor) -> candle_core::Result<Tensor> {
        Ok(x.clone())
    }

    #[test]
    fn l1_fixtures() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[2.0, 0.0], &[2]);
        assert_eq!(scalar(&l1_loss(&a, &b, Reduction::Sum).unwrap()), 3.0);
        assert_eq!(scalar(&l1_loss(&a, &b, Reduction::Mean).unwrap()), 1.5);
        assert_eq!(scalar(&l1_loss(&a, &a, Reduction::Sum).unwrap()), 0.0);
        assert!(l1_loss(&a, &t(&[1.0, 2.0, 3.0], &[3]), Reduction::Sum).is_err());
    }

    #[test]
    fn l1_gradient_is_zero_at_zero_residual() {
        let a = Var::new(&[1.0f64, 2.0, 3.0], &Device::Cpu).unwrap();
        let b = t(&[1.0, 0.0, 5.0], &[3]);
        let grads = l1_loss(a.as_tensor(), &b, Reduction::Sum).unwrap().backward().unwrap();
        let g: Vec<f64> = grads.get(a.as_tensor()).unwrap().to_vec1().unwrap();
        assert_eq!(g, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn content_identity_fixture() {
        let a = t(&[1.0, 2.0], &[1, 1, 1, 2]);
        let b = t(&[2.0, 4.0], &[1, 1, 1, 2]);
        assert_eq!(scalar(&content_loss(&a, &b, &IdentityExtractor, Reduction::Sum).unwrap()), 5.0);
        assert_eq!(scalar(&content_loss(&a, &b, &IdentityExtractor, Reduction::Mean).unwrap()), 2.5);
    }

    #[test]
    fn generation_loss_weight_zero_is_l1() {
        let src = t(&[0.5, -1.0, 2.0, 0.25], &[1, 1, 2, 2]);
        let dst = t(&[1.0, 1.0, -1.0, 0.0], &[1, 1, 2, 2]);
        let mut w = LossWeights::wh();
        w.lambda_cont = 0.0;
        let g = |x: &Tensor| x * 3.0;
        let gl = generation_loss(&g, &src, &dst, &IdentityExtractor, &w).unwrap();
        let l1 = l1_loss(&(&src * 3.0).unwrap(), &dst, Reduction::Sum).unwrap();
        assert_eq!(scalar(&gl), scalar(&l1));
    }

    #[test]
    fn cycle_stubs() {
        let src = t(&[1.0, 1.0], &[1, 1, 1, 2]);
        let plus = |x: &Tensor| x + 1.0;
        let minus = |x: &Tensor| x - 1.0;
        assert_eq!(scalar(&cycle_loss(&plus, &minus, &src, Reduction::Sum).unwrap()), 0.0);
        let double = |x: &Tensor| x * 2.0;
        assert_eq!(scalar(&cycle_loss(&double, &ident, &src, Reduction::Sum).unwrap()), 2.0);
    }

    #[test]
    fn translate_rejects_shape_change() {
        let shrink = |x: &Tensor| x.narrow(3, 0, 1);
        let x = t(&[1.0, 2.0], &[1, 1, 1, 2]);
        assert!(translate(&shrink, &x).is_err());
    }

    #[test]
    fn invalid_weights() {
        let mut w = LossWeights::hy();
        w.lambda_reg = -0.1;
        assert!(w.validate().is_err());
        w.lambda_reg = f64::NAN;
        assert!(w.validate().is_err());
    }
}
