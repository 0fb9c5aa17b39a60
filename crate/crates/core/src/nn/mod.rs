//! Small convolutional networks and their parameter storage.

mod features;
mod generator;
mod params;
mod segmenter;

pub use features::{ConvFeatures, FeatureConfig, FeatureExtractor, IdentityExtractor, VGG16_LAYOUT};
pub use generator::{Generator, GeneratorConfig};
pub use params::{ParamStore, CHECKPOINT_FORMAT_VERSION};
pub use segmenter::{SegmentationNet, Segmenter, SegmenterConfig};

use candle_core::{DType, Tensor};
use ndarray::Array3;

use crate::error::{CcdfError, Result};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn leaky_relu(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)
}

/// Stacks `(P, P, C)` patches into an `(N, C, P, P)` tensor.
pub fn patches_to_tensor<'a>(patches: impl IntoIterator<Item = &'a Array3<f32>>, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for patch in patches {
        let (h, w, c) = patch.dim();
        match dims {
            None => dims = Some((h, w, c)),
            Some(d) if d != (h, w, c) => {
                return Err(CcdfError::shape(format!("{d:?}"), format!("{:?}", (h, w, c))))
            }
            _ => {}
        }
        let chw = patch.view().permuted_axes([2, 0, 1]);
        data.extend(chw.iter().copied());
        n += 1;
    }
    let (h, w, c) = dims.ok_or_else(|| CcdfError::InvalidArgument("no patches to batch".into()))?;
    let t = Tensor::from_vec(data, (n, c, h, w), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Splits an `(N, C, P, P)` tensor back into `(P, P, C)` arrays.
pub fn tensor_to_patches(t: &Tensor) -> Result<Vec<Array3<f32>>> {
    let (n, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok((0..n)
        .map(|i| {
            let chunk = &flat[i * c * h * w..(i + 1) * c * h * w];
            Array3::from_shape_fn((h, w, c), |(y, x, b)| chunk[(b * h + y) * w + x])
        })
        .collect())
}
