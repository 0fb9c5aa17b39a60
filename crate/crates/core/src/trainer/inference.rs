use super::config::TrainConfig;
use super::stages::check_same_size;
use crate::change_segmentation::{binarize, predict_mask, BinaryMap, ChangeMask};
use crate::dataio::ImageTensor;
use crate::error::Result;
use crate::nn::{patches_to_tensor, tensor_to_patches, Segmenter};
use crate::preprocess::{stitch_mask, tile, PatchGrid};

/// Tiles both (already standardized) images, predicts a mask per patch pair,
/// averages overlaps and thresholds the result.
pub fn infer_full_image<S: Segmenter + ?Sized>(
    i1: &ImageTensor,
    i2: &ImageTensor,
    s: &S,
    cfg: &TrainConfig,
) -> Result<(ChangeMask, BinaryMap)> {
    check_same_size(i1, i2)?;
    let (patch_size, overlap, dtype) = (cfg.patch_size, cfg.overlap, cfg.dtype());
    let g1 = tile(i1, patch_size, overlap)?;
    let g2 = tile(i2, patch_size, overlap)?;
    let mut masks = Vec::with_capacity(g1.len());
    let idx: Vec<usize> = (0..g1.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let p1 = patches_to_tensor(chunk.iter().map(|&i| &g1.patches()[i]), dtype)?;
        let p2 = patches_to_tensor(chunk.iter().map(|&i| &g2.patches()[i]), dtype)?;
        masks.extend(tensor_to_patches(&predict_mask(s, &p1, &p2)?)?);
    }
    let grid = PatchGrid::from_parts(
        masks,
        g1.offsets().to_vec(),
        g1.source_size(),
        patch_size,
        overlap,
    )?;
    let mask = stitch_mask(&grid)?;
    let binary = binarize(&mask, cfg.threshold)?;
    Ok((mask, binary))
}
