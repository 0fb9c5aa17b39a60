//! Per-image standardization and overlapped patch grids.

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{ChangeMask, ImageTensor};
use crate::error::{CcdfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizeOptions {
    /// Statistics per band instead of jointly over all bands.
    #[serde(default)]
    pub per_band: bool,
    /// Floor for the standard deviation; `None` rejects constant input.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        Self {
            per_band: false,
            epsilon: None,
        }
    }
}

impl StandardizeOptions {
    pub const EPSILON: f64 = 1e-8;

    pub fn with_epsilon() -> Self {
        Self {
            epsilon: Some(Self::EPSILON),
            ..Self::default()
        }
    }
}

/// `(x - mean) / std` with joint population statistics.
pub fn standardize(image: &ImageTensor) -> Result<ImageTensor> {
    standardize_with(image, StandardizeOptions::default())
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f32> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0f64);
    for &v in values.clone() {
        n += 1;
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let var = values.map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn standardize_with(image: &ImageTensor, opts: StandardizeOptions) -> Result<ImageTensor> {
    let data = image.data();
    let stats: Vec<(f64, f64)> = if opts.per_band {
        (0..image.channels())
            .map(|b| mean_std(data.index_axis(Axis(2), b).into_iter()))
            .collect()
    } else {
        vec![mean_std(data.iter()); image.channels()]
    };
    let stats = stats
        .into_iter()
        .enumerate()
        .map(|(band, (mean, std))| {
            let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
            match (degenerate, opts.epsilon) {
                (false, _) => Ok((mean, std)),
                (true, Some(eps)) => Ok((mean, std.max(eps))),
                (true, None) => Err(CcdfError::DegenerateInput(format!(
                    "standard deviation is zero (band {band}, mean {mean})"
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Array3::from_shape_fn(data.dim(), |(y, x, b)| {
        let (mean, std) = stats[b];
        ((data[[y, x, b]] as f64 - mean) / std) as f32
    });
    ImageTensor::new(out)
}

/// Patch start positions along one axis: stride `patch - overlap` from 0, the
/// last start clamped to `dim - patch`, duplicates removed.
pub fn axis_starts(dim: usize, patch: usize, overlap: usize) -> Result<Vec<usize>> {
    if patch == 0 || patch > dim {
        return Err(CcdfError::InvalidArgument(format!(
            "patch size {patch} must be in 1..={dim}"
        )));
    }
    if overlap >= patch {
        return Err(CcdfError::InvalidArgument(format!(
            "overlap {overlap} must be smaller than patch size {patch}"
        )));
    }
    let stride = patch - overlap;
    let last = dim - patch;
    let mut starts = Vec::new();
    let mut pos = 0;
    loop {
        let start = pos.min(last);
        if starts.last() != Some(&start) {
            starts.push(start);
        }
        if pos + patch >= dim {
            break;
        }
        pos += stride;
    }
    Ok(starts)
}

/// Overlapped square patches of one image, in row-major order of their
/// top-left `(x, y)` offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patches: Vec<Array3<f32>>,
    offsets: Vec<(usize, usize)>,
    source_size: (usize, usize),
    patch_size: usize,
    overlap: usize,
}

impl PatchGrid {
    /// Assembles a grid from externally produced patches (e.g. predicted masks).
    pub fn from_parts(
        patches: Vec<Array3<f32>>,
        offsets: Vec<(usize, usize)>,
        source_size: (usize, usize),
        patch_size: usize,
        overlap: usize,
    ) -> Result<Self> {
        let grid = Self {
            patches,
            offsets,
            source_size,
            patch_size,
            overlap,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CcdfError::InvalidArgument(format!("inconsistent patch grid: {m}")));
        let (w, h) = self.source_size;
        let p = self.patch_size;
        if self.patches.is_empty() {
            return bad("no patches".into());
        }
        if self.patches.len() != self.offsets.len() {
            return bad(format!("{} patches but {} offsets", self.patches.len(), self.offsets.len()));
        }
        if p == 0 || p > w || p > h || self.overlap >= p {
            return bad(format!("patch size {p}, overlap {} for {w}x{h}", self.overlap));
        }
        let channels = self.patches[0].dim().2;
        for (i, (patch, &(x, y))) in self.patches.iter().zip(&self.offsets).enumerate() {
            let (ph, pw, pc) = patch.dim();
            if (ph, pw, pc) != (p, p, channels) {
                return bad(format!("patch {i} is {pw}x{ph}x{pc}, expected {p}x{p}x{channels}"));
            }
            if x + p > w || y + p > h {
                return bad(format!("patch {i} at ({x},{y}) exceeds {w}x{h}"));
            }
        }
        Ok(())
    }

    pub fn patches(&self) -> &[Array3<f32>] {
        &self.patches
    }

    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    pub fn source_size(&self) -> (usize, usize) {
        self.source_size
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn channels(&self) -> usize {
        self.patches[0].dim().2
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

pub fn tile(image: &ImageTensor, patch_size: usize, overlap: usize) -> Result<PatchGrid> {
    let xs = axis_starts(image.width(), patch_size, overlap)?;
    let ys = axis_starts(image.height(), patch_size, overlap)?;
    let mut patches = Vec::with_capacity(xs.len() * ys.len());
    let mut offsets = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            patches.push(
                image
                    .data()
                    .slice(s![y..y + patch_size, x..x + patch_size, ..])
                    .to_owned(),
            );
            offsets.push((x, y));
        }
    }
    Ok(PatchGrid {
        patches,
        offsets,
        source_size: (image.width(), image.height()),
        patch_size,
        overlap,
    })
}

/// Number of patches covering each pixel, indexed `(row, col)`.
pub fn coverage(offsets: &[(usize, usize)], source_size: (usize, usize), patch_size: usize) -> Array2<u32> {
    let (w, h) = source_size;
    let mut count = Array2::zeros((h, w));
    for &(x, y) in offsets {
        count
            .slice_mut(s![y..(y + patch_size).min(h), x..(x + patch_size).min(w)])
            .mapv_inplace(|c| c + 1);
    }
    count
}

/// Reassembles a full raster, averaging every value that covers a pixel.
pub fn stitch(grid: &PatchGrid) -> Result<Array3<f32>> {
    grid.validate()?;
    let (w, h) = grid.source_size;
    let p = grid.patch_size;
    let mut sum = Array3::<f64>::zeros((h, w, grid.channels()));
    for (patch, &(x, y)) in grid.patches.iter().zip(&grid.offsets) {
        let mut view = sum.slice_mut(s![y..y + p, x..x + p, ..]);
        view.zip_mut_with(patch, |acc, &v| *acc += v as f64);
    }
    let count = coverage(&grid.offsets, grid.source_size, p);
    if let Some(((row, col), _)) = count.indexed_iter().find(|(_, &c)| c == 0) {
        return Err(CcdfError::InvalidArgument(format!(
            "inconsistent patch grid: pixel ({col},{row}) is not covered"
        )));
    }
    Ok(Array3::from_shape_fn(sum.dim(), |(y, x, b)| {
        (sum[[y, x, b]] / count[[y, x]] as f64) as f32
    }))
}

/// Stitches single-channel mask patches into a full change mask.
pub fn stitch_mask(grid: &PatchGrid) -> Result<ChangeMask> {
    if grid.channels() != 1 {
        return Err(CcdfError::shape("single-channel mask patches", format!("{} channels", grid.channels())));
    }
    let full = stitch(grid)?;
    ChangeMask::new(full.index_axis_move(Axis(2), 0).mapv(|v| v.clamp(0.0, 1.0)))
}
