use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Module, Tensor};
use candle_nn::{Conv2d, ConvTranspose2d};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{leaky_relu, ParamStore};
use crate::error::{CcdfError, Result};

/// Encoder-decoder with skip connections and residual bottleneck blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub base_width: usize,
    /// Number of stride-2 downsamplings; patch sides must divide by `2^depth`.
    pub depth: usize,
    pub res_blocks: usize,
    /// Add the input to the output so the network learns a residual.
    #[serde(default = "default_true")]
    pub global_skip: bool,
}

fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    pub fn tiny(channels: usize) -> Self {
        Self {
            channels,
            base_width: 8,
            depth: 2,
            res_blocks: 1,
            global_skip: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_width == 0 {
            return Err(CcdfError::InvalidConfig("generator channels and width must be positive".into()));
        }
        Ok(())
    }
}

struct UpStage {
    up: ConvTranspose2d,
    fuse: Conv2d,
}

struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = leaky_relu(&self.a.forward(x)?)?;
        x + self.b.forward(&h)?
    }
}

/// Image-to-image translator between the two acquisition styles.
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    stem: Conv2d,
    down: Vec<Conv2d>,
    res: Vec<ResBlock>,
    up: Vec<UpStage>,
    head: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let w = config.base_width;
        let stem = params.conv2d("stem", config.channels, w, 3, 1, 1, &mut rng)?;
        let mut down = Vec::new();
        for i in 0..config.depth {
            let cin = w << i;
            down.push(params.conv2d(&format!("down{i}"), cin, cin * 2, 3, 2, 1, &mut rng)?);
        }
        let bottom = w << config.depth;
        let mut res = Vec::new();
        for i in 0..config.res_blocks {
            res.push(ResBlock {
                a: params.conv2d(&format!("res{i}.a"), bottom, bottom, 3, 1, 1, &mut rng)?,
                b: params.conv2d(&format!("res{i}.b"), bottom, bottom, 3, 1, 1, &mut rng)?,
            });
        }
        let mut up = Vec::new();
        for i in (0..config.depth).rev() {
            let cout = w << i;
            up.push(UpStage {
                up: params.up2(&format!("up{i}"), cout * 2, cout, &mut rng)?,
                fuse: params.conv2d(&format!("fuse{i}"), cout * 2, cout, 3, 1, 1, &mut rng)?,
            });
        }
        let head = params.conv2d("head", w, config.channels, 1, 1, 0, &mut rng)?;
        Ok(Self {
            config,
            params,
            stem,
            down,
            res,
            up,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Translates a batch `(N, C, P, P)`; output has the input's shape.
    pub fn translate(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let x = x.to_dtype(self.params.dtype())?;
        let y = self.forward(&x)?;
        if y.dims() != x.dims() {
            return Err(CcdfError::shape(format!("{:?}", x.dims()), format!("{:?}", y.dims())));
        }
        Ok(y)
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: HashMap<String, String>) -> Result<()> {
        let mut meta = extra;
        meta.insert("kind".into(), "generator".into());
        meta.insert("architecture".into(), serde_json::to_string(&self.config)?);
        self.params.save(path, meta)
    }

    pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<Self> {
        let path = path.as_ref();
        let meta = ParamStore::read_metadata(path)?;
        if meta.get("kind").map(String::as_str) != Some("generator") {
            return Err(CcdfError::Checkpoint(format!("{} is not a generator checkpoint", path.display())));
        }
        let arch = meta
            .get("architecture")
            .ok_or_else(|| CcdfError::Checkpoint("missing architecture".into()))?;
        let g = Self::new(serde_json::from_str(arch)?, dtype, 0)?;
        g.params.load_values(path)?;
        Ok(g)
    }
}

impl Module for Generator {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = leaky_relu(&self.stem.forward(x)?)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for conv in &self.down {
            skips.push(h.clone());
            h = leaky_relu(&conv.forward(&h)?)?;
        }
        for block in &self.res {
            h = block.forward(&h)?;
        }
        for (stage, skip) in self.up.iter().zip(skips.iter().rev()) {
            let u = leaky_relu(&stage.up.forward(&h)?)?;
            h = leaky_relu(&stage.fuse.forward(&Tensor::cat(&[&u, skip], 1)?)?)?;
        }
        let out = self.head.forward(&h)?;
        if self.config.global_skip {
            out + x
        } else {
            Ok(out)
        }
    }
}
