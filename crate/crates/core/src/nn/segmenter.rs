use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Module, Tensor};
use candle_nn::{Conv2d, ConvTranspose2d};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{leaky_relu, ParamStore};
use crate::error::{CcdfError, Result};

/// Anything that maps a co-registered patch pair `(N, C, P, P)` x2 to a
/// change-probability mask `(N, 1, P, P)`.
pub trait Segmenter {
    fn segment(&self, t1: &Tensor, t2: &Tensor) -> candle_core::Result<Tensor>;
}

impl<F> Segmenter for F
where
    F: Fn(&Tensor, &Tensor) -> candle_core::Result<Tensor>,
{
    fn segment(&self, t1: &Tensor, t2: &Tensor) -> candle_core::Result<Tensor> {
        self(t1, t2)
    }
}

/// Two-stream encoder (one stream per date, unshared weights) with a decoder
/// that fuses both streams at every scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterConfig {
    pub channels: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl SegmenterConfig {
    pub fn tiny(channels: usize) -> Self {
        Self {
            channels,
            base_width: 8,
            depth: 2,
        }
    }
}

struct Encoder {
    stem: Conv2d,
    down: Vec<Conv2d>,
}

impl Encoder {
    fn new(params: &mut ParamStore, prefix: &str, cfg: &SegmenterConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = cfg.base_width;
        let stem = params.conv2d(&format!("{prefix}.stem"), cfg.channels, w, 3, 1, 1, rng)?;
        let down = (0..cfg.depth)
            .map(|i| params.conv2d(&format!("{prefix}.down{i}"), w << i, w << (i + 1), 3, 2, 1, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stem, down })
    }

    /// Feature maps from full resolution down to the bottleneck.
    fn features(&self, x: &Tensor) -> candle_core::Result<Vec<Tensor>> {
        let mut feats = vec![leaky_relu(&self.stem.forward(x)?)?];
        for conv in &self.down {
            let next = leaky_relu(&conv.forward(feats.last().unwrap())?)?;
            feats.push(next);
        }
        Ok(feats)
    }
}

struct DecoderStage {
    up: ConvTranspose2d,
    fuse: Conv2d,
}

pub struct SegmentationNet {
    config: SegmenterConfig,
    params: ParamStore,
    enc1: Encoder,
    enc2: Encoder,
    bottom: Conv2d,
    stages: Vec<DecoderStage>,
    head: Conv2d,
}

impl SegmentationNet {
    pub fn new(config: SegmenterConfig, dtype: DType, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.base_width == 0 {
            return Err(CcdfError::InvalidConfig("segmenter channels and width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let enc1 = Encoder::new(&mut params, "enc1", &config, &mut rng)?;
        let enc2 = Encoder::new(&mut params, "enc2", &config, &mut rng)?;
        let w = config.base_width;
        let d = config.depth;
        let bottom = params.conv2d("bottom", 2 * (w << d), w << d, 1, 1, 0, &mut rng)?;
        let stages = (0..d)
            .rev()
            .map(|i| {
                Ok(DecoderStage {
                    up: params.up2(&format!("up{i}"), w << (i + 1), w << i, &mut rng)?,
                    fuse: params.conv2d(&format!("fuse{i}"), 3 * (w << i), w << i, 3, 1, 1, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = params.conv2d("head", w, 1, 1, 1, 0, &mut rng)?;
        Ok(Self {
            config,
            params,
            enc1,
            enc2,
            bottom,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Independent copy with identical parameter values.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = Self::new(self.config.clone(), self.params.dtype(), 0)?;
        copy.params.copy_from(&self.params)?;
        Ok(copy)
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: HashMap<String, String>) -> Result<()> {
        let mut meta = extra;
        meta.insert("kind".into(), "segmenter".into());
        meta.insert("architecture".into(), serde_json::to_string(&self.config)?);
        self.params.save(path, meta)
    }

    pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<Self> {
        let path = path.as_ref();
        let meta = ParamStore::read_metadata(path)?;
        if meta.get("kind").map(String::as_str) != Some("segmenter") {
            return Err(CcdfError::Checkpoint(format!("{} is not a segmenter checkpoint", path.display())));
        }
        let arch = meta
            .get("architecture")
            .ok_or_else(|| CcdfError::Checkpoint("missing architecture".into()))?;
        let s = Self::new(serde_json::from_str(arch)?, dtype, 0)?;
        s.params.load_values(path)?;
        Ok(s)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let unit = 1usize << self.config.depth;
        if c != self.config.channels || h % unit != 0 || w % unit != 0 {
            return Err(CcdfError::shape(
                format!("(N, {}, k*{unit}, k*{unit})", self.config.channels),
                format!("{:?}", x.dims()),
            ));
        }
        Ok(())
    }

    /// Checked forward pass.
    pub fn predict(&self, t1: &Tensor, t2: &Tensor) -> Result<Tensor> {
        if t1.dims() != t2.dims() {
            return Err(CcdfError::shape(format!("{:?}", t1.dims()), format!("{:?}", t2.dims())));
        }
        self.check_input(t1)?;
        let dtype = self.params.dtype();
        Ok(self.segment(&t1.to_dtype(dtype)?, &t2.to_dtype(dtype)?)?)
    }
}

impl Segmenter for SegmentationNet {
    fn segment(&self, t1: &Tensor, t2: &Tensor) -> candle_core::Result<Tensor> {
        let f1 = self.enc1.features(t1)?;
        let f2 = self.enc2.features(t2)?;
        let d = self.config.depth;
        let mut h = leaky_relu(&self.bottom.forward(&Tensor::cat(&[&f1[d], &f2[d]], 1)?)?)?;
        for (stage, level) in self.stages.iter().zip((0..d).rev()) {
            let u = leaky_relu(&stage.up.forward(&h)?)?;
            h = leaky_relu(&stage.fuse.forward(&Tensor::cat(&[&u, &f1[level], &f2[level]], 1)?)?)?;
        }
        candle_nn::ops::sigmoid(&self.head.forward(&h)?)
    }
}
