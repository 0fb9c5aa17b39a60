use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, RefLabel, ReferenceMap};
use crate::error::{CcdfError, Result};

/// Per-channel affine radiometric transform `gain * x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleShift {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl StyleShift {
    pub fn identity(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    #[inline]
    pub fn apply(&self, band: usize, value: f32) -> f32 {
        self.gain[band] * value + self.bias[band]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementContent {
    /// Fresh procedural texture drawn from the spec's generator.
    Texture,
    /// One value per channel.
    Constant(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_content")]
    pub content: ReplacementContent,
}

fn default_content() -> ReplacementContent {
    ReplacementContent::Texture
}

impl ChangeRegion {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    fn overlaps(&self, other: &ChangeRegion) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

/// Recipe for a synthetic bi-temporal pair with known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub style_shift: StyleShift,
    #[serde(default)]
    pub noise_sigma: f32,
    #[serde(default)]
    pub change_regions: Vec<ChangeRegion>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SyntheticSpec {
    /// 256x256x4 scene with a four-band affine style shift, sigma = 0.02 noise
    /// and one 48x48 changed block.
    pub fn toy(seed: u64) -> Self {
        Self {
            width: 256,
            height: 256,
            channels: 4,
            style_shift: StyleShift {
                gain: vec![1.3, 0.8, 1.15, 0.7],
                bias: vec![0.1, -0.05, 0.2, 0.05],
            },
            noise_sigma: 0.02,
            change_regions: vec![ChangeRegion {
                x: 100,
                y: 84,
                width: 48,
                height: 48,
                content: ReplacementContent::Texture,
            }],
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CcdfError::InvalidArgument(m));
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return invalid("synthetic size must be positive".into());
        }
        if self.style_shift.gain.len() != self.channels || self.style_shift.bias.len() != self.channels {
            return invalid(format!(
                "style shift needs {} gains and biases, got {} and {}",
                self.channels,
                self.style_shift.gain.len(),
                self.style_shift.bias.len()
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        for (i, r) in self.change_regions.iter().enumerate() {
            if r.width == 0 || r.height == 0 {
                return invalid(format!("change region {i} is empty"));
            }
            if r.x + r.width > self.width || r.y + r.height > self.height {
                return invalid(format!(
                    "change region {i} ({},{} {}x{}) exceeds the {}x{} image",
                    r.x, r.y, r.width, r.height, self.width, self.height
                ));
            }
            if let ReplacementContent::Constant(v) = &r.content {
                if v.len() != self.channels {
                    return invalid(format!("change region {i} constant needs {} values", self.channels));
                }
            }
            for (j, other) in self.change_regions.iter().enumerate().take(i) {
                if r.overlaps(other) {
                    return invalid(format!("change regions {j} and {i} overlap"));
                }
            }
        }
        Ok(())
    }
}

/// Smooth low-frequency field plus rectangular parcels of uniform cover.
fn procedural_scene(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Array3<f32> {
    struct Wave {
        fx: f32,
        fy: f32,
        phase: f32,
        weights: Vec<f32>,
    }
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            fx: rng.random_range(0.5..4.0),
            fy: rng.random_range(0.5..4.0),
            phase: rng.random_range(0.0..std::f32::consts::TAU),
            weights: (0..c).map(|_| rng.random_range(0.02..0.08)).collect(),
        })
        .collect();
    let mut scene = Array3::from_shape_fn((h, w, c), |(y, x, b)| {
        let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
        0.3 + waves
            .iter()
            .map(|wv| wv.weights[b] * (std::f32::consts::TAU * (wv.fx * u + wv.fy * v) + wv.phase).sin())
            .sum::<f32>()
    });
    let parcels = (w * h / 400).max(1);
    for _ in 0..parcels {
        let pw = rng.random_range(4..=w.clamp(4, 28)).min(w);
        let ph = rng.random_range(4..=h.clamp(4, 28)).min(h);
        let px = rng.random_range(0..=w - pw);
        let py = rng.random_range(0..=h - ph);
        let level: Vec<f32> = (0..c).map(|_| rng.random_range(0.05..0.6)).collect();
        for y in py..py + ph {
            for x in px..px + pw {
                for b in 0..c {
                    scene[[y, x, b]] = 0.5 * scene[[y, x, b]] + level[b];
                }
            }
        }
    }
    scene
}

fn texture_patch(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Array3<f32> {
    let level: Vec<f32> = (0..c).map(|_| rng.random_range(0.6..1.2)).collect();
    let period = rng.random_range(3..6usize);
    Array3::from_shape_fn((h, w, c), |(y, x, b)| {
        let stripe = ((x / period + y / period) % 2) as f32;
        level[b] + 0.2 * stripe
    })
}

/// Generates `(t1, t2, reference)`. `t2` is the style-shifted `t1` plus noise
/// except inside change regions, whose content is replaced before the shift.
pub fn make_synthetic_pair(spec: &SyntheticSpec) -> Result<(ImageTensor, ImageTensor, ReferenceMap)> {
    spec.validate()?;
    let (w, h, c) = (spec.width, spec.height, spec.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let t1 = procedural_scene(w, h, c, &mut rng);

    let mut content = t1.clone();
    for region in &spec.change_regions {
        let patch = match &region.content {
            ReplacementContent::Texture => texture_patch(region.width, region.height, c, &mut rng),
            ReplacementContent::Constant(v) => {
                Array3::from_shape_fn((region.height, region.width, c), |(_, _, b)| v[b])
            }
        };
        for y in 0..region.height {
            for x in 0..region.width {
                for b in 0..c {
                    content[[region.y + y, region.x + x, b]] = patch[[y, x, b]];
                }
            }
        }
    }

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0f32, spec.noise_sigma).map_err(|e| CcdfError::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut t2 = content;
    for ((_, _, b), v) in t2.indexed_iter_mut() {
        *v = spec.style_shift.apply(b, *v);
        if let Some(n) = &noise {
            *v += n.sample(&mut rng);
        }
    }

    let labels = Array2::from_shape_fn((h, w), |(y, x)| {
        if spec.change_regions.iter().any(|r| r.contains(x, y)) {
            RefLabel::Changed
        } else {
            RefLabel::Unchanged
        }
    });
    Ok((ImageTensor::new(t1)?, ImageTensor::new(t2)?, ReferenceMap::new(labels)?))
}
