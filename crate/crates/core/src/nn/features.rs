use std::path::PathBuf;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcdfError, Result};

/// Fixed feature map used by the content loss. Implementations hold plain
/// tensors, never `Var`s, so no optimizer can reach them.
pub trait FeatureExtractor {
    fn extract(&self, x: &Tensor) -> Result<Tensor>;
}

/// `phi(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

/// torchvision `vgg16().features` layout: `Some(width)` is a 3x3 conv
/// followed (at the next index) by ReLU, `None` is a 2x2 max-pool.
pub const VGG16_LAYOUT: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool,
}

/// A frozen convolutional feature stack (random or pretrained VGG16).
pub struct ConvFeatures {
    layers: Vec<Layer>,
    bands: Option<Vec<usize>>,
    in_channels: usize,
    weights: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureConfig {
    Identity {},
    /// Randomly initialized, frozen 3x3 conv + ReLU layers.
    RandomConv {
        widths: Vec<usize>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        bands: Option<Vec<usize>>,
    },
    /// Pretrained VGG16 from a safetensors file with torchvision names
    /// (`features.{i}.weight`), truncated to `features[..depth]`. The default
    /// 29 keeps everything up to and including conv5_3.
    Vgg16 {
        weights: PathBuf,
        #[serde(default = "default_vgg_depth")]
        depth: usize,
        #[serde(default = "default_rgb")]
        bands: Option<Vec<usize>>,
    },
}

fn default_vgg_depth() -> usize {
    29
}

fn default_rgb() -> Option<Vec<usize>> {
    Some(vec![0, 1, 2])
}

impl FeatureConfig {
    pub fn build(&self, channels: usize, dtype: DType) -> Result<Box<dyn FeatureExtractor>> {
        Ok(match self {
            FeatureConfig::Identity {} => Box::new(IdentityExtractor),
            FeatureConfig::RandomConv { widths, seed, bands } => {
                Box::new(ConvFeatures::random(channels, widths, bands.clone(), *seed, dtype)?)
            }
            FeatureConfig::Vgg16 { weights, depth, bands } => {
                Box::new(ConvFeatures::vgg16(weights, *depth, bands.clone(), dtype)?)
            }
        })
    }
}

fn conv3x3(w: Tensor, b: Tensor) -> Conv2d {
    Conv2d::new(
        w,
        Some(b),
        Conv2dConfig {
            padding: 1,
            ..Default::default()
        },
    )
}

impl ConvFeatures {
    pub fn random(
        channels: usize,
        widths: &[usize],
        bands: Option<Vec<usize>>,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        let in_channels = bands.as_ref().map_or(channels, Vec::len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut weights = Vec::new();
        let mut cin = in_channels;
        for &cout in widths {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            let w = Tensor::from_vec(draw(cout * cin * 9), (cout, cin, 3, 3), &Device::Cpu)?.to_dtype(dtype)?;
            let b = Tensor::zeros(cout, dtype, &Device::Cpu)?;
            weights.extend([w.clone(), b.clone()]);
            layers.push(Layer::Conv(conv3x3(w, b)));
            layers.push(Layer::Relu);
            cin = cout;
        }
        Ok(Self {
            layers,
            bands,
            in_channels,
            weights,
        })
    }

    pub fn vgg16(path: &std::path::Path, depth: usize, bands: Option<Vec<usize>>, dtype: DType) -> Result<Self> {
        if !path.exists() {
            return Err(CcdfError::MissingCheckpoint(path.to_path_buf()));
        }
        let stored = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut layers = Vec::new();
        let mut weights = Vec::new();
        let mut index = 0;
        let mut cin = 3;
        'outer: for entry in VGG16_LAYOUT {
            match entry {
                Some(cout) => {
                    if index >= depth {
                        break;
                    }
                    let fetch = |suffix: &str| -> Result<Tensor> {
                        let key = format!("features.{index}.{suffix}");
                        let t = stored
                            .get(&key)
                            .ok_or_else(|| CcdfError::Checkpoint(format!("{}: missing {key}", path.display())))?;
                        Ok(t.to_dtype(dtype)?)
                    };
                    let (w, b) = (fetch("weight")?, fetch("bias")?);
                    if w.dims() != [cout, cin, 3, 3] {
                        return Err(CcdfError::Checkpoint(format!(
                            "features.{index}.weight has shape {:?}",
                            w.dims()
                        )));
                    }
                    weights.extend([w.clone(), b.clone()]);
                    layers.push(Layer::Conv(conv3x3(w, b)));
                    index += 1;
                    if index >= depth {
                        break 'outer;
                    }
                    layers.push(Layer::Relu);
                    index += 1;
                    cin = cout;
                }
                None => {
                    if index >= depth {
                        break;
                    }
                    layers.push(Layer::MaxPool);
                    index += 1;
                }
            }
        }
        Ok(Self {
            layers,
            bands,
            in_channels: 3,
            weights,
        })
    }

    /// Copies of every fixed tensor, for verifying nothing mutates them.
    pub fn parameter_snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.weights
            .iter()
            .map(|t| Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?))
            .collect()
    }

    pub fn parameter_tensors(&self) -> &[Tensor] {
        &self.weights
    }
}

impl FeatureExtractor for ConvFeatures {
    fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        let mut h = match &self.bands {
            Some(bands) => {
                if let Some(&b) = bands.iter().find(|&&b| b >= c) {
                    return Err(CcdfError::shape(format!("band {b} available"), format!("{c} channels")));
                }
                let idx = Tensor::from_vec(bands.iter().map(|&b| b as u32).collect::<Vec<_>>(), bands.len(), x.device())?;
                x.index_select(&idx, 1)?
            }
            None => x.clone(),
        };
        if h.dim(1)? != self.in_channels {
            return Err(CcdfError::shape(
                format!("{} feature-extractor channels", self.in_channels),
                format!("{} channels", h.dim(1)?),
            ));
        }
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(conv) => conv.forward(&h)?,
                Layer::Relu => h.relu()?,
                Layer::MaxPool => h.max_pool2d(2)?,
            };
        }
        Ok(h)
    }
}
