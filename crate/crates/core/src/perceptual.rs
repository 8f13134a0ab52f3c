//! Frozen convolutional feature extractor used by the semantic loss, FID and
//! the patch probe.
//!
//! Layout follows the 16-layer classification backbone: five stages of 3x3
//! convolutions (2, 2, 3, 3, 3 layers; widths k, 2k, 4k, 8k, 8k) with 2x2 max
//! pooling between stages. Taps are named `reluS_L`.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::Checkpoint;
use crate::config::PerceptualConfig;
use crate::error::{Error, Result};

const STAGE_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];
const STAGE_MULTIPLIERS: [usize; 5] = [1, 2, 4, 8, 8];

/// Input statistics the backbone expects, per RGB channel, on [0, 1] inputs.
pub const INPUT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// `(stage, layer)` pairs in execution order, 1-based as in the tap names.
fn layer_ids() -> impl Iterator<Item = (usize, usize)> {
    STAGE_DEPTHS
        .iter()
        .enumerate()
        .flat_map(|(s, &d)| (1..=d).map(move |l| (s + 1, l)))
}

/// Position of a tap in execution order, or `None` for unknown names.
pub fn tap_index(name: &str) -> Option<usize> {
    layer_ids().position(|(s, l)| format!("relu{s}_{l}") == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backing {
    PretrainedFile(String),
    SeededRandom(u64),
}

impl std::fmt::Display for Backing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backing::PretrainedFile(p) => write!(f, "pretrained:{p}"),
            Backing::SeededRandom(s) => write!(f, "seeded-random:{s}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    stage: usize,
    layer: usize,
    weight: Tensor,
    bias: Tensor,
}

impl Layer {
    fn name(&self) -> String {
        format!("conv{}_{}", self.stage, self.layer)
    }
}

/// 2x2 max pooling with exact gradients; odd trailing rows/columns are dropped.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    if h2 == 0 || w2 == 0 {
        return Err(Error::shape("max-pool input", "spatial dims >= 2", (h, w)));
    }
    let x = if h % 2 == 1 || w % 2 == 1 {
        x.narrow(2, 0, 2 * h2)?.narrow(3, 0, 2 * w2)?
    } else {
        x.clone()
    };
    Ok(x.reshape((b, c, h2, 2, w2, 2))?.max(5)?.max(3)?)
}

#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    layers: Vec<Layer>,
    taps: Vec<usize>,
    tap_names: Vec<String>,
    backing: Backing,
    mean: Tensor,
    std: Tensor,
}

impl PerceptualExtractor {
    pub fn from_config(config: &PerceptualConfig, dtype: DType, device: &Device) -> Result<Self> {
        if config.weights.is_empty() {
            Self::seeded(config, dtype, device)
        } else {
            Self::from_file(config, Path::new(&config.weights), dtype, device)
        }
    }

    fn tap_positions(config: &PerceptualConfig) -> Result<Vec<usize>> {
        let mut taps = Vec::with_capacity(config.taps.len());
        for name in &config.taps {
            let i = tap_index(name)
                .ok_or_else(|| Error::Config(format!("unknown perceptual tap `{name}`")))?;
            if taps.last().is_some_and(|&last| i <= last) {
                return Err(Error::Config(format!("perceptual tap `{name}` out of order")));
            }
            taps.push(i);
        }
        if taps.is_empty() {
            return Err(Error::Config("no perceptual taps".into()));
        }
        Ok(taps)
    }

    fn layer_shapes(base: usize) -> Vec<((usize, usize), [usize; 4])> {
        let mut c_in = 3;
        layer_ids()
            .map(|(s, l)| {
                let c_out = base * STAGE_MULTIPLIERS[s - 1];
                let shape = [c_out, c_in, 3, 3];
                c_in = c_out;
                ((s, l), shape)
            })
            .collect()
    }

    /// He-normal weights from a seeded stream, zero biases.
    pub fn seeded(config: &PerceptualConfig, dtype: DType, device: &Device) -> Result<Self> {
        let taps = Self::tap_positions(config)?;
        let depth = taps[taps.len() - 1] + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(depth);
        for ((stage, layer), shape) in Self::layer_shapes(config.base_width).into_iter().take(depth) {
            let fan_in = shape[1] * 9;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::invalid("perceptual init", e.to_string()))?;
            let n: usize = shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            layers.push(Layer {
                stage,
                layer,
                weight: Tensor::from_vec(w, &shape, device)?.to_dtype(dtype)?,
                bias: Tensor::zeros(shape[0], dtype, device)?,
            });
        }
        Self::assemble(config, layers, taps, Backing::SeededRandom(config.seed), dtype, device)
    }

    /// Loads `convS_L.weight` / `convS_L.bias` records from a checkpoint-layout file.
    pub fn from_file(
        config: &PerceptualConfig,
        path: &Path,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let ckpt = Checkpoint::read(path, device)?;
        let tensors: HashMap<String, Tensor> = ckpt.tensors.into_iter().collect();
        Self::from_tensors(config, &tensors, Backing::PretrainedFile(path.display().to_string()), dtype, device)
    }

    pub fn from_tensors(
        config: &PerceptualConfig,
        tensors: &HashMap<String, Tensor>,
        backing: Backing,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let taps = Self::tap_positions(config)?;
        let depth = taps[taps.len() - 1] + 1;
        let mut layers = Vec::with_capacity(depth);
        for ((stage, layer), shape) in Self::layer_shapes(config.base_width).into_iter().take(depth) {
            let name = format!("conv{stage}_{layer}");
            let get = |suffix: &str, expected: &[usize]| -> Result<Tensor> {
                let key = format!("{name}.{suffix}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing perceptual record {key}")))?;
                if t.dims() != expected {
                    return Err(Error::shape(key, expected, t.dims()));
                }
                Ok(t.to_dtype(dtype)?.to_device(device)?)
            };
            layers.push(Layer {
                stage,
                layer,
                weight: get("weight", &shape)?,
                bias: get("bias", &[shape[0]])?,
            });
        }
        Self::assemble(config, layers, taps, backing, dtype, device)
    }

    fn assemble(
        config: &PerceptualConfig,
        layers: Vec<Layer>,
        taps: Vec<usize>,
        backing: Backing,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let stat = |v: [f64; 3]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v.to_vec(), (1, 3, 1, 1), device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            layers,
            taps,
            tap_names: config.taps.clone(),
            backing,
            mean: stat(INPUT_MEAN)?,
            std: stat(INPUT_STD)?,
        })
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn tap_names(&self) -> &[String] {
        &self.tap_names
    }

    /// Weight records in checkpoint naming, for export and frozenness checks.
    pub fn named_weights(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.name()), l.weight.clone()),
                    (format!("{}.bias", l.name()), l.bias.clone()),
                ]
            })
            .collect()
    }

    /// Channel counts of each tap.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps.iter().map(|&i| self.layers[i].weight.dim(0).unwrap_or(0)).collect()
    }

    /// Per-sample element count M_i of each tap for an `h x w` input.
    pub fn element_counts(&self, h: usize, w: usize) -> Vec<usize> {
        self.taps
            .iter()
            .map(|&i| {
                let l = &self.layers[i];
                let pools = l.stage - 1;
                let (mut hh, mut ww) = (h, w);
                for _ in 0..pools {
                    hh /= 2;
                    ww /= 2;
                }
                l.weight.dims()[0] * hh * ww
            })
            .collect()
    }

    /// Minimum spatial size that keeps every tap non-empty.
    pub fn min_input_side(&self) -> usize {
        let stage = self.layers.last().map_or(1, |l| l.stage);
        1 << (stage - 1)
    }

    /// Features at every tap for images in [-1, 1], shape `(B, 3, H, W)`.
    /// Gradients flow to the input only.
    pub fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape("perceptual input channels", 3, c));
        }
        let min = self.min_input_side();
        if h < min || w < min {
            return Err(Error::shape(
                "perceptual input",
                format!("spatial dims >= {min}"),
                (h, w),
            ));
        }
        let unit = ((images + 1.0)? * 0.5)?;
        let mut x = unit.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(self.taps.len());
        let mut next_tap = 0;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 && l.layer == 1 {
                x = max_pool2x2(&x)?;
            }
            x = x
                .conv2d(&l.weight, 1, 1, 1, 1)?
                .broadcast_add(&l.bias.reshape((1, (), 1, 1))?)?
                .relu()?;
            if next_tap < self.taps.len() && self.taps[next_tap] == i {
                out.push(x.clone());
                next_tap += 1;
            }
        }
        Ok(out)
    }

    /// Spatially averaged tap activations concatenated into one vector per image.
    pub fn pooled_features(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let feats = self.features(images)?;
        let pooled = feats
            .iter()
            .map(|f| f.mean((2, 3)))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let cat = Tensor::cat(&pooled, 1)?.to_dtype(DType::F64)?;
        Ok(cat.to_vec2()?)
    }
}
