//! Equivariance of the change mask under flips and transposition. The
//! augmented branch is a detached reference: no gradient flows through it.

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::change_segmentation::{predict_mask, seg_terms, SegTerms};
use crate::cycle_consistency::{l1_loss, LossWeights, Reduction};
use crate::error::{CcdfError, Result};
use crate::nn::{FeatureExtractor, Segmenter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Identity,
    /// Mirror left-right (reverse columns).
    HFlip,
    /// Mirror top-bottom (reverse rows).
    VFlip,
    /// Swap rows and columns; square inputs only.
    Transpose,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Identity,
        Augmentation::HFlip,
        Augmentation::VFlip,
        Augmentation::Transpose,
    ];

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }
}

/// Applies `a` to the last two (row, column) dimensions of `x`.
pub fn augment(x: &Tensor, a: Augmentation) -> Result<Tensor> {
    let rank = x.rank();
    if rank < 2 {
        return Err(CcdfError::shape("rank >= 2", format!("rank {rank}")));
    }
    let (rows, cols) = (rank - 2, rank - 1);
    Ok(match a {
        Augmentation::Identity => x.clone(),
        Augmentation::HFlip => x.flip(&[cols])?,
        Augmentation::VFlip => x.flip(&[rows])?,
        Augmentation::Transpose => {
            let (h, w) = (x.dim(rows)?, x.dim(cols)?);
            if h != w {
                return Err(CcdfError::InvalidArgument(format!("transpose needs a square extent, got {h}x{w}")));
            }
            x.transpose(rows, cols)?.contiguous()?
        }
    })
}

/// Undoes `augment(_, a)`. Every augmentation is an involution.
pub fn restore(m: &Tensor, a: Augmentation) -> Result<Tensor> {
    augment(m, a)
}

/// `restore(S(aug(p1), aug(p2)))`, detached from the autograd graph.
pub fn augmented_reference<S: Segmenter + ?Sized>(
    s: &S,
    patch1: &Tensor,
    patch2: &Tensor,
    a: Augmentation,
) -> Result<Tensor> {
    let m_aug = predict_mask(s, &augment(patch1, a)?, &augment(patch2, a)?)?;
    Ok(restore(&m_aug, a)?.detach())
}

/// L1 between a mask already predicted on the plain pair and the detached
/// augmented reference.
pub fn sem_loss_for_mask<S: Segmenter + ?Sized>(
    mask: &Tensor,
    s: &S,
    patch1: &Tensor,
    patch2: &Tensor,
    a: Augmentation,
    reduction: Reduction,
) -> Result<Tensor> {
    let reference = augmented_reference(s, patch1, patch2, a)?;
    l1_loss(&reference, mask, reduction)
}

pub fn sem_loss<S: Segmenter + ?Sized>(
    s: &S,
    patch1: &Tensor,
    patch2: &Tensor,
    a: Augmentation,
    reduction: Reduction,
) -> Result<Tensor> {
    let mask = predict_mask(s, patch1, patch2)?;
    sem_loss_for_mask(&mask, s, patch1, patch2, a, reduction)
}

pub struct Stage2Terms {
    pub mask: Tensor,
    pub seg: SegTerms,
    pub sem: Tensor,
}

impl Stage2Terms {
    pub fn total(&self, weights: &LossWeights) -> Result<Tensor> {
        Ok((self.seg.total(weights)? + (&self.sem * weights.lambda_sem)?)?)
    }
}

/// Segmentation and equivariance terms sharing one plain-pair mask prediction.
pub fn stage2_terms<S: Segmenter + ?Sized>(
    s: &S,
    translated: &Tensor,
    patch1: &Tensor,
    patch2: &Tensor,
    a: Augmentation,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Stage2Terms> {
    let mask = predict_mask(s, patch1, patch2)?;
    let seg = seg_terms(translated, patch2, &mask, phi, weights)?;
    let sem = sem_loss_for_mask(&mask, s, patch1, patch2, a, weights.reduction)?;
    Ok(Stage2Terms { mask, seg, sem })
}

/// `seg_loss + lambda_sem * sem_loss`.
pub fn stage2_loss<S: Segmenter + ?Sized>(
    s: &S,
    translated: &Tensor,
    patch1: &Tensor,
    patch2: &Tensor,
    a: Augmentation,
    phi: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Tensor> {
    stage2_terms(s, translated, patch1, patch2, a, phi, weights)?.total(weights)
}
