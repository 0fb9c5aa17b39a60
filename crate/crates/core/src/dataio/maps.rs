use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::raster::{load_raster, save_raster};
use super::ImageTensor;
use crate::error::{CcdfError, Result};

/// Ground-truth state of one reference pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefLabel {
    Unchanged,
    Changed,
    Undefined,
}

/// How a reference map is stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefEncoding {
    /// Pure red = changed, pure green = unchanged, any other color = undefined.
    Color,
    /// Gray level 1 = changed, 0 = unchanged, everything else (canonically 255) = undefined.
    Integer,
}

impl RefEncoding {
    const RED: [u8; 3] = [255, 0, 0];
    const GREEN: [u8; 3] = [0, 255, 0];
    const GRAY: [u8; 3] = [128, 128, 128];
}

/// Tri-state ground truth, indexed `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceMap {
    labels: Array2<RefLabel>,
}

impl ReferenceMap {
    pub fn new(labels: Array2<RefLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(CcdfError::InvalidArgument("reference map is empty".into()));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &Array2<RefLabel> {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn count(&self, label: RefLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn defined_count(&self) -> usize {
        self.labels.len() - self.count(RefLabel::Undefined)
    }
}

/// Per-pixel change probabilities in `[0, 1]`, indexed `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMask {
    values: Array2<f32>,
}

impl ChangeMask {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(CcdfError::InvalidArgument("change mask is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CcdfError::InvalidArgument(format!(
                "change mask value {v} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// Binarized change map: `true` marks a changed pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    changed: Array2<bool>,
}

impl BinaryMap {
    pub fn new(changed: Array2<bool>) -> Result<Self> {
        if changed.is_empty() {
            return Err(CcdfError::InvalidArgument("binary map is empty".into()));
        }
        Ok(Self { changed })
    }

    pub fn changed(&self) -> &Array2<bool> {
        &self.changed
    }

    pub fn changed_count(&self) -> usize {
        self.changed.iter().filter(|&&c| c).count()
    }

    pub fn width(&self) -> usize {
        self.changed.ncols()
    }

    pub fn height(&self) -> usize {
        self.changed.nrows()
    }

    pub fn to_mask(&self) -> ChangeMask {
        ChangeMask {
            values: self.changed.mapv(|c| if c { 1.0 } else { 0.0 }),
        }
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(CcdfError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| CcdfError::format(path, e))
}

pub fn load_reference_map(path: impl AsRef<Path>, encoding: RefEncoding) -> Result<ReferenceMap> {
    let path = path.as_ref();
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match encoding {
        RefEncoding::Color => {
            let rgb = img.to_rgb8();
            Array2::from_shape_fn((h, w), |(y, x)| match rgb.get_pixel(x as u32, y as u32).0 {
                RefEncoding::RED => RefLabel::Changed,
                RefEncoding::GREEN => RefLabel::Unchanged,
                _ => RefLabel::Undefined,
            })
        }
        RefEncoding::Integer => {
            let gray = img.to_luma8();
            Array2::from_shape_fn((h, w), |(y, x)| match gray.get_pixel(x as u32, y as u32).0[0] {
                1 => RefLabel::Changed,
                0 => RefLabel::Unchanged,
                _ => RefLabel::Undefined,
            })
        }
    };
    ReferenceMap::new(labels).map_err(|e| CcdfError::format(path, e))
}

/// Writes a reference map as PNG. Undefined pixels are gray (color) or 255 (integer).
pub fn save_reference_map(map: &ReferenceMap, path: impl AsRef<Path>, encoding: RefEncoding) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (map.width() as u32, map.height() as u32);
    let saved = match encoding {
        RefEncoding::Color => {
            let img = RgbImage::from_fn(w, h, |x, y| {
                image::Rgb(match map.labels[[y as usize, x as usize]] {
                    RefLabel::Changed => RefEncoding::RED,
                    RefLabel::Unchanged => RefEncoding::GREEN,
                    RefLabel::Undefined => RefEncoding::GRAY,
                })
            });
            img.save_with_format(path, ImageFormat::Png)
        }
        RefEncoding::Integer => {
            let img = GrayImage::from_fn(w, h, |x, y| {
                image::Luma([match map.labels[[y as usize, x as usize]] {
                    RefLabel::Changed => 1,
                    RefLabel::Unchanged => 0,
                    RefLabel::Undefined => 255,
                }])
            });
            img.save_with_format(path, ImageFormat::Png)
        }
    };
    saved.map_err(|e| image_write_error(path, e))
}

fn image_write_error(path: &Path, e: image::ImageError) -> CcdfError {
    match e {
        image::ImageError::IoError(io) => CcdfError::io(path, io),
        other => CcdfError::format(path, other),
    }
}

/// Saves a change map. `.png` stores 8-bit levels (quantum 1/255, binary maps
/// exact); `.tif`/`.tiff` and every other extension store exact `f32`.
pub fn save_change_map(mask: &ChangeMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.values.dim();
    if is_png(path) {
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(mask.values[[y as usize, x as usize]] * 255.0).round() as u8])
        });
        img.save_with_format(path, ImageFormat::Png)
            .map_err(|e| image_write_error(path, e))
    } else {
        let data = mask.values.clone().insert_axis(Axis(2));
        save_raster(&ImageTensor::new(data)?, path)
    }
}

pub fn load_change_map(path: impl AsRef<Path>) -> Result<ChangeMask> {
    let path = path.as_ref();
    let values = if is_png(path) {
        let gray = open_image(path)?.to_luma8();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        Array2::from_shape_fn((h, w), |(y, x)| gray.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0)
    } else {
        let raster = load_raster(path)?;
        if raster.channels() != 1 {
            return Err(CcdfError::format(
                path,
                format!("change map must have one band, found {}", raster.channels()),
            ));
        }
        let data: Array3<f32> = raster.into_data();
        data.index_axis_move(Axis(2), 0)
    };
    ChangeMask::new(values).map_err(|e| CcdfError::format(path, e))
}

pub fn save_binary_map(map: &BinaryMap, path: impl AsRef<Path>) -> Result<()> {
    save_change_map(&map.to_mask(), path)
}

/// Loads a change map and marks pixels `>= 0.5` as changed.
pub fn load_binary_map(path: impl AsRef<Path>) -> Result<BinaryMap> {
    let mask = load_change_map(path)?;
    BinaryMap::new(mask.values.mapv(|v| v >= 0.5))
}
