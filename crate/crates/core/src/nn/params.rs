use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CcdfError, Result};

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

/// Named trainable tensors with seeded initialization and a
/// safetensors-backed checkpoint format.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Uniform `(-bound, bound)` with `bound = 1 / sqrt(fan_in)`.
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        if self.vars.insert(name.to_string(), var).is_some() {
            return Err(CcdfError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        Ok(out)
    }

    pub(crate) fn conv2d(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Conv2d> {
        let fan_in = in_ch * kernel * kernel;
        let w = self.uniform(&format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], fan_in, rng)?;
        let b = self.uniform(&format!("{name}.bias"), &[out_ch], fan_in, rng)?;
        let cfg = Conv2dConfig {
            padding,
            stride,
            ..Default::default()
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    /// 2x upsampling transposed convolution (kernel 2, stride 2).
    pub(crate) fn up2(&mut self, name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Result<ConvTranspose2d> {
        let fan_in = out_ch * 4;
        let w = self.uniform(&format!("{name}.weight"), &[in_ch, out_ch, 2, 2], fan_in, rng)?;
        let b = self.uniform(&format!("{name}.bias"), &[out_ch], fan_in, rng)?;
        let cfg = ConvTranspose2dConfig {
            stride: 2,
            ..Default::default()
        };
        Ok(ConvTranspose2d::new(w, Some(b), cfg))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter with the matching one in `other`.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if self.vars.len() != other.vars.len() {
            return Err(CcdfError::InvalidArgument("parameter sets differ".into()));
        }
        for (name, var) in &self.vars {
            let src = other
                .vars
                .get(name)
                .ok_or_else(|| CcdfError::InvalidArgument(format!("missing parameter {name}")))?;
            var.set(&src.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Values of every parameter as `f64`, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)))
            .collect()
    }

    /// SHA-256 over names and raw parameter bytes.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            let bytes: Vec<u8> = match self.dtype {
                DType::F64 => var
                    .flatten_all()?
                    .to_vec1::<f64>()?
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect(),
                _ => var
                    .flatten_all()?
                    .to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect(),
            };
            hasher.update(&bytes);
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: HashMap<String, String>) -> Result<()> {
        let path = path.as_ref();
        let tensors: Vec<(String, Tensor)> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        let mut meta = metadata;
        meta.insert("format_version".into(), CHECKPOINT_FORMAT_VERSION.into());
        safetensors::serialize_to_file(tensors, Some(meta), path)
            .map_err(|e| CcdfError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Reads the metadata block of a checkpoint without loading tensors.
    pub fn read_metadata(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(CcdfError::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| CcdfError::io(path, e))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| CcdfError::Checkpoint(format!("{}: {e}", path.display())))?;
        let meta = meta.metadata().clone().unwrap_or_default();
        match meta.get("format_version").map(String::as_str) {
            Some(CHECKPOINT_FORMAT_VERSION) => Ok(meta),
            other => Err(CcdfError::Checkpoint(format!(
                "{}: unsupported format version {other:?}",
                path.display()
            ))),
        }
    }

    /// Overwrites every parameter with the value stored in `path`.
    pub fn load_values(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        Self::read_metadata(path)?;
        let stored = candle_core::safetensors::load(path, &Device::Cpu)?;
        if stored.len() != self.vars.len() {
            return Err(CcdfError::Checkpoint(format!(
                "{}: {} tensors stored, model has {}",
                path.display(),
                stored.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = stored
                .get(name)
                .ok_or_else(|| CcdfError::Checkpoint(format!("{}: missing tensor {name}", path.display())))?;
            if t.dims() != var.dims() {
                return Err(CcdfError::Checkpoint(format!(
                    "{}: tensor {name} has shape {:?}, model expects {:?}",
                    path.display(),
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}
