//! Generator and patch discriminators.
//!
//! Generator stack (k = base width): `c7s1-k, d2k, d4k, d8k, d16k,
//! R16k x n, u8k, u4k, u2k, uk, c7s1-3` with reflection padding, instance
//! normalization and a tanh output. Discriminators: `Ck` stages of 4x4
//! stride-2 convolutions with leaky ReLU (slope 0.2), instance norm on all
//! but the first, then a 4x4 stride-1 projection to one channel.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{TrainConfig, DOWNSAMPLE_STAGES};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Named trainable parameters in registration order.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            dtype,
            device: device.clone(),
            params: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn add(&mut self, name: String, shape: &[usize]) -> Result<Var> {
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::invalid("parameter", format!("duplicate name {name}")));
        }
        let var = Var::zeros(shape, self.dtype, &self.device)?;
        self.params.push((name, var.clone()));
        Ok(var)
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a (String, Var)> {
        self.params.iter().filter(move |(n, _)| n.starts_with(prefix))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Draws every `*.weight` i.i.d. from N(mean, std^2) in registration order
    /// from one seeded stream; zeroes every bias.
    pub fn init_normal(&self, seed: u64, mean: f64, std: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(mean, std).map_err(|e| Error::invalid("init", e.to_string()))?;
        for (name, var) in &self.params {
            let n = var.elem_count();
            let values: Vec<f64> = if name.ends_with(".weight") {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; n]
            };
            let t = Tensor::from_vec(values, var.shape(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Overwrites parameters by name; every parameter must be present with its exact shape.
    pub fn assign(&self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.params {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::shape(name.clone(), var.dims(), t.dims()));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

/// Reflection padding on both spatial dims via index gathers, so it is differentiable.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return Err(Error::shape(
            "reflection padding input",
            format!("spatial dims > {pad}"),
            (h, w),
        ));
    }
    let idx = |n: usize| -> Result<Tensor> {
        let v: Vec<u32> = (0..n + 2 * pad)
            .map(|i| {
                let i = i as i64 - pad as i64;
                let n = n as i64;
                let r = if i < 0 {
                    -i
                } else if i >= n {
                    2 * (n - 1) - i
                } else {
                    i
                };
                r as u32
            })
            .collect();
        Ok(Tensor::from_vec(v, n + 2 * pad, x.device())?)
    };
    Ok(x.index_select(&idx(h)?, 2)?.index_select(&idx(w)?, 3)?)
}

/// Per-sample, per-channel normalization over the spatial dims, no affine.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

/// Whether a forward pass should produce parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    Params,
    Frozen,
}

fn param(v: &Var, track: Track) -> Tensor {
    match track {
        Track::Params => v.as_tensor().clone(),
        Track::Frozen => v.as_tensor().detach(),
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: Padding,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), &[c_out, c_in, kernel, kernel])?,
            bias: store.add(format!("{name}.bias"), &[c_out])?,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor, track: Track) -> Result<Tensor> {
        let (x, pad) = match self.padding {
            Padding::Zero(p) => (x.clone(), p),
            Padding::Reflect(p) => (reflect_pad(x, p)?, 0),
        };
        let y = x.conv2d(&param(&self.weight, track), pad, self.stride, 1, 1)?;
        let b = param(&self.bias, track).reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// 3x3 fractionally-strided convolution doubling the spatial dims.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), &[c_in, c_out, 3, 3])?,
            bias: store.add(format!("{name}.bias"), &[c_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor, track: Track) -> Result<Tensor> {
        let y = x.conv_transpose2d(&param(&self.weight, track), 1, 1, 2, 1)?;
        let b = param(&self.bias, track).reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub label_channels: usize,
    pub base_width: usize,
    pub residual_blocks: usize,
}

impl GeneratorSpec {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            label_channels: config.image.label_channels,
            base_width: config.generator.base_width,
            residual_blocks: config.generator.residual_blocks,
        }
    }

    /// `[x, I, F(I)]` concatenated on channels.
    pub fn input_channels(&self) -> usize {
        2 * self.label_channels + 3
    }

    /// Widths after the head and each downsampling stage.
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..=DOWNSAMPLE_STAGES)
            .map(|i| self.base_width << i)
            .collect()
    }

    pub fn bottleneck_width(&self) -> usize {
        self.base_width << DOWNSAMPLE_STAGES
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    head: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<(Conv2d, Conv2d)>,
    up: Vec<ConvTranspose2d>,
    tail: Conv2d,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let widths = spec.encoder_widths();
        let head = Conv2d::new(
            store,
            &format!("{prefix}.head"),
            spec.input_channels(),
            widths[0],
            7,
            1,
            Padding::Reflect(3),
        )?;
        let down = (0..DOWNSAMPLE_STAGES)
            .map(|i| {
                Conv2d::new(
                    store,
                    &format!("{prefix}.down{i}"),
                    widths[i],
                    widths[i + 1],
                    3,
                    2,
                    Padding::Reflect(1),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let wb = spec.bottleneck_width();
        let blocks = (0..spec.residual_blocks)
            .map(|i| {
                Ok((
                    Conv2d::new(store, &format!("{prefix}.res{i}.conv1"), wb, wb, 3, 1, Padding::Reflect(1))?,
                    Conv2d::new(store, &format!("{prefix}.res{i}.conv2"), wb, wb, 3, 1, Padding::Reflect(1))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let up = (0..DOWNSAMPLE_STAGES)
            .map(|i| {
                let c_in = widths[DOWNSAMPLE_STAGES - i];
                ConvTranspose2d::new(store, &format!("{prefix}.up{i}"), c_in, c_in / 2)
            })
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::new(
            store,
            &format!("{prefix}.tail"),
            widths[0],
            3,
            7,
            1,
            Padding::Reflect(3),
        )?;
        Ok(Self {
            spec,
            head,
            down,
            blocks,
            up,
            tail,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn check_inputs(&self, x: &Tensor, exemplar: &Tensor, exemplar_labels: &Tensor) -> Result<()> {
        let (b, _, h, w) = x.dims4()?;
        for (name, t, c) in [
            ("label map x", x, self.spec.label_channels),
            ("exemplar I", exemplar, 3),
            ("exemplar labels F(I)", exemplar_labels, self.spec.label_channels),
        ] {
            let dims = t.dims4()?;
            if dims != (b, c, h, w) {
                return Err(Error::shape(name, (b, c, h, w), dims));
            }
        }
        let m = 1 << DOWNSAMPLE_STAGES;
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "generator input",
                format!("spatial dims divisible by {m}"),
                (h, w),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, exemplar: &Tensor, exemplar_labels: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x, exemplar, exemplar_labels, Track::Params)?.0)
    }

    /// Returns `(output, bottleneck feature map)`.
    pub fn forward_traced(
        &self,
        x: &Tensor,
        exemplar: &Tensor,
        exemplar_labels: &Tensor,
        track: Track,
    ) -> Result<(Tensor, Tensor)> {
        self.check_inputs(x, exemplar, exemplar_labels)?;
        let input = Tensor::cat(&[x, exemplar, exemplar_labels], 1)?;
        let mut h = instance_norm(&self.head.forward(&input, track)?)?.relu()?;
        for conv in &self.down {
            h = instance_norm(&conv.forward(&h, track)?)?.relu()?;
        }
        for (c1, c2) in &self.blocks {
            let r = instance_norm(&c1.forward(&h, track)?)?.relu()?;
            let r = instance_norm(&c2.forward(&r, track)?)?;
            h = (h + r)?;
        }
        let bottleneck = h.clone();
        for conv in &self.up {
            h = instance_norm(&conv.forward(&h, track)?)?.relu()?;
        }
        Ok((self.tail.forward(&h, track)?.tanh()?, bottleneck))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_width: usize,
    pub stages: usize,
    pub instance_norm: bool,
}

pub const DISC_KERNEL: usize = 4;
pub const DISC_PADDING: usize = 2;

impl DiscriminatorSpec {
    /// D_R sees `[x, image]`.
    pub fn real_from_config(config: &TrainConfig) -> Self {
        Self {
            in_channels: config.image.label_channels + 3,
            base_width: config.discriminator.base_width,
            stages: config.discriminator.stages,
            instance_norm: true,
        }
    }

    /// D_SC sees `[exemplar, candidate]`.
    pub fn style_from_config(config: &TrainConfig) -> Self {
        Self {
            in_channels: 6,
            ..Self::real_from_config(config)
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.stages)
            .map(|i| self.base_width << i.min(3))
            .collect()
    }

    /// `(kernel, stride, padding)` of every convolution, input to output.
    pub fn geometry(&self) -> Vec<(usize, usize, usize)> {
        let mut g = vec![(DISC_KERNEL, 2, DISC_PADDING); self.stages];
        g.push((DISC_KERNEL, 1, DISC_PADDING));
        g
    }

    /// Score-map side for an input side `n`.
    pub fn score_map_size(&self, n: usize) -> usize {
        self.geometry()
            .iter()
            .fold(n, |n, &(k, s, p)| (n + 2 * p - k) / s + 1)
    }

    /// Side of the input patch seen by one score.
    pub fn receptive_field(&self) -> usize {
        self.geometry()
            .iter()
            .rev()
            .fold(1, |rf, &(k, s, _)| (rf - 1) * s + k)
    }
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    spec: DiscriminatorSpec,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(spec: DiscriminatorSpec, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let widths = spec.widths();
        let mut c_in = spec.in_channels;
        let mut stages = Vec::with_capacity(spec.stages);
        for (i, &w) in widths.iter().enumerate() {
            stages.push(Conv2d::new(
                store,
                &format!("{prefix}.c{i}"),
                c_in,
                w,
                DISC_KERNEL,
                2,
                Padding::Zero(DISC_PADDING),
            )?);
            c_in = w;
        }
        let head = Conv2d::new(
            store,
            &format!("{prefix}.head"),
            c_in,
            1,
            DISC_KERNEL,
            1,
            Padding::Zero(DISC_PADDING),
        )?;
        Ok(Self {
            spec,
            stages,
            head,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_features(input, Track::Params)?.0)
    }

    /// Score map `(B, 1, h, w)` plus the activation after every `Ck` stage.
    pub fn forward_features(&self, input: &Tensor, track: Track) -> Result<(Tensor, Vec<Tensor>)> {
        let c = input.dim(1)?;
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "discriminator input channels",
                self.spec.in_channels,
                c,
            ));
        }
        let mut h = input.clone();
        let mut feats = Vec::with_capacity(self.stages.len());
        for (i, conv) in self.stages.iter().enumerate() {
            h = conv.forward(&h, track)?;
            if i > 0 && self.spec.instance_norm {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h)?;
            feats.push(h.clone());
        }
        Ok((self.head.forward(&h, track)?, feats))
    }
}

/// Channel-concatenates two NCHW tensors.
pub fn pair_input(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[a, b], D::Minus(3))?)
}

/// G, D_R and D_SC over one parameter store (prefixes `g.`, `dr.`, `dsc.`).
#[derive(Debug)]
pub struct Networks {
    pub store: ParamStore,
    pub generator: Generator,
    pub d_real: PatchDiscriminator,
    pub d_style: PatchDiscriminator,
}

impl Networks {
    pub fn build(config: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        Self::from_specs(
            GeneratorSpec::from_config(config),
            DiscriminatorSpec::real_from_config(config),
            DiscriminatorSpec::style_from_config(config),
            dtype,
            device,
        )
    }

    pub fn from_specs(
        g: GeneratorSpec,
        dr: DiscriminatorSpec,
        dsc: DiscriminatorSpec,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let mut store = ParamStore::new(dtype, device);
        let generator = Generator::new(g, &mut store, "g")?;
        let d_real = PatchDiscriminator::new(dr, &mut store, "dr")?;
        let d_style = PatchDiscriminator::new(dsc, &mut store, "dsc")?;
        Ok(Self {
            store,
            generator,
            d_real,
            d_style,
        })
    }

    pub fn init_weights(&self, seed: u64) -> Result<()> {
        self.store.init_normal(seed, 0.0, INIT_STD)
    }
}
