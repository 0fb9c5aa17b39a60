//! Raster, reference-map and change-map I/O plus synthetic bi-temporal pairs.

mod maps;
mod raster;
mod synthetic;

pub use maps::{
    load_binary_map, load_change_map, load_reference_map, save_binary_map, save_change_map,
    save_reference_map, BinaryMap, ChangeMask, RefEncoding, RefLabel, ReferenceMap,
};
pub use raster::{load_raster, save_raster, RasterFormat, RAW_MAGIC};
#[doc(hidden)]
pub use raster::write_tiff_pages;
pub use synthetic::{make_synthetic_pair, ChangeRegion, ReplacementContent, StyleShift, SyntheticSpec};

use ndarray::Array3;

use crate::error::{CcdfError, Result};

/// A multi-band raster stored row-major as `(height, width, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(CcdfError::InvalidArgument(format!(
                "image dimensions must be positive, got {w}x{h}x{c}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CcdfError::InvalidArgument(format!(
                "image contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { data })
    }

    /// Builds an image from pixel-interleaved samples (`[y][x][band]`).
    pub fn from_interleaved(width: usize, height: usize, channels: usize, samples: Vec<f32>) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(CcdfError::shape(
                format!("{} samples for {width}x{height}x{channels}", width * height * channels),
                format!("{} samples", samples.len()),
            ));
        }
        let data = Array3::from_shape_vec((height, width, channels), samples)
            .map_err(|e| CcdfError::InvalidArgument(e.to_string()))?;
        Self::new(data)
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }
}
