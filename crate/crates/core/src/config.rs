//! Run configuration: schema, defaults, validation and the flat `dotted.key = value`
//! text format used for config files, `--set` overrides and resolved snapshots.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::LabelKind;

/// Generator encoder halvings; spatial dims must be divisible by `2^DOWNSAMPLE_STAGES`.
pub const DOWNSAMPLE_STAGES: usize = 4;
const SIZE_MULTIPLE: usize = 1 << DOWNSAMPLE_STAGES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub height: usize,
    pub width: usize,
    pub label_kind: LabelKind,
    /// Channel count of a label map (C_l). Carried explicitly so the generator
    /// input width is fixed before any data is read.
    pub label_channels: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            label_kind: LabelKind::Sketch,
            label_channels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Width of the first `c7s1` stage; encoder stages double it four times.
    pub base_width: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            residual_blocks: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    /// Number of stride-2 `Ck` stages.
    pub stages: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            stages: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    /// Width of the first backbone stage (64 for the standard 16-layer backbone).
    pub base_width: usize,
    /// Ordered tap points, e.g. `relu3_1`.
    pub taps: Vec<String>,
    /// Pretrained weight file in checkpoint layout; empty selects seeded-random frozen weights.
    pub weights: String,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            taps: ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"]
                .into_iter()
                .map(String::from)
                .collect(),
            weights: String::new(),
            seed: 0x5eed,
        }
    }
}

/// Weights of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Style-consistency adversarial term.
    pub lambda1: f64,
    /// Adaptive semantic consistency term.
    pub lambda2: f64,
    /// Optional discriminator feature-matching term (baseline, off by default).
    pub lambda_fm: f64,
    pub scadv_enabled: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            lambda_fm: 0.0,
            scadv_enabled: true,
        }
    }
}

/// Three-phase schedule: constant lr without the style adversarial term, constant
/// lr with it, then linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSchedule {
    pub n_warmup: u64,
    pub n_scadv: u64,
    pub n_decay: u64,
    pub base_lr: f64,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            n_warmup: 250_000,
            n_scadv: 250_000,
            n_decay: 500_000,
            base_lr: 2e-4,
        }
    }
}

impl PhaseSchedule {
    pub fn total(&self) -> u64 {
        self.n_warmup + self.n_scadv + self.n_decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Image-grid cadence in iterations; 0 disables grids.
    pub grid_every: u64,
    pub probe_samples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 1,
            beta1: 0.5,
            beta2: 0.999,
            checkpoint_every: 10_000,
            grid_every: 10_000,
            probe_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Temporal window T: same-video frames at most this far apart are style-consistent.
    pub window: u32,
    /// Exemplars kept per label map and pool.
    pub guidance_per_label: usize,
    pub consistent_pairs: usize,
    pub inconsistent_pairs: usize,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: 10,
            guidance_per_label: 30,
            consistent_pairs: 20_000,
            inconsistent_pairs: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        })
    }
}

/// Synthetic "shapes with palettes" corpus. Image size comes from [`ImageConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusSpec {
    pub n_styles: usize,
    pub n_images_per_style: usize,
    pub shapes: Vec<Shape>,
    /// Per-channel uniform noise amplitude in 8-bit levels.
    pub noise: u8,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            n_styles: 4,
            n_images_per_style: 200,
            shapes: vec![Shape::Circle, Shape::Square, Shape::Triangle],
            noise: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Frames at or beyond this index in every video are held out from training.
    /// `u32::MAX` keeps everything for training.
    pub holdout_from_frame: u32,
    pub triples: usize,
    /// Patch box `[x, y, w, h]` for the feature-distance probe; empty means the whole image.
    pub patch_box: Vec<usize>,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            holdout_from_frame: u32::MAX,
            triples: 100,
            patch_box: Vec::new(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image: ImageConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualConfig,
    pub loss: LossWeights,
    pub schedule: PhaseSchedule,
    pub train: TrainOptions,
    pub sampler: SamplerConfig,
    pub toy: ToyCorpusSpec,
    pub eval: EvalConfig,
}

/// A broken config rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl TrainConfig {
    /// Desk-scale preset for the synthetic corpus: 64x64 toy masks and
    /// narrowed networks so a full three-phase run fits on one CPU core.
    pub fn toy() -> Self {
        let mut config = TrainConfig {
            image: ImageConfig {
                height: 64,
                width: 64,
                label_kind: LabelKind::ToyMask,
                label_channels: 1,
            },
            // Width 8 underfits exemplar colors within the 8K-step budget.
            generator: GeneratorConfig {
                base_width: 16,
                residual_blocks: 3,
            },
            discriminator: DiscriminatorConfig {
                base_width: 8,
                stages: 3,
            },
            schedule: PhaseSchedule {
                n_warmup: 2_000,
                n_scadv: 2_000,
                n_decay: 4_000,
                base_lr: 2e-4,
            },
            ..TrainConfig::default()
        };
        config.perceptual.base_width = 8;
        config.train.checkpoint_every = 2_000;
        config.train.grid_every = 2_000;
        config.sampler.guidance_per_label = 30;
        config.sampler.consistent_pairs = 8_000;
        config.sampler.inconsistent_pairs = 8_000;
        config.eval.holdout_from_frame = 175;
        config
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_config(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical flat text: one `dotted.key = value` line per leaf, keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.flatten() {
            out.push_str(&key);
            out.push_str(" = ");
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Applies `key=value` overrides with dotted keys. Values are parsed as TOML
    /// scalars/arrays; anything that does not parse is taken as a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut flat = self.flatten();
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            if !flat.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            flat.insert(key.to_string(), parse_value(raw.trim()));
        }
        let text: String = flat
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Self::from_text(&text)
    }

    fn flatten(&self) -> BTreeMap<String, toml::Value> {
        let value = toml::Value::try_from(self).expect("config is always representable");
        let mut flat = BTreeMap::new();
        flatten_into("", &value, &mut flat);
        flat
    }
}

/// TOML integers are signed 64-bit; seeds are stored bit-cast so every `u64` round-trips.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*seed as i64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        i64::deserialize(d).map(|v| v as u64)
    }
}

fn flatten_into(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Holder {
        v: toml::Value,
    }
    match toml::from_str::<Holder>(&format!("v = {raw}")) {
        Ok(h) => h.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn validate_config(config: &TrainConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &str, rule: String| {
        if !ok {
            out.push(Violation {
                field: field.to_string(),
                rule,
            });
        }
    };

    let img = &config.image;
    for (field, v) in [("image.height", img.height), ("image.width", img.width)] {
        check(v > 0, field, "must be positive".into());
        check(
            v % SIZE_MULTIPLE == 0,
            field,
            format!("{v} not divisible by {SIZE_MULTIPLE}"),
        );
        // Reflection padding at the bottleneck needs at least 2 cells.
        check(
            v >= 2 * SIZE_MULTIPLE,
            field,
            format!("must be at least {}", 2 * SIZE_MULTIPLE),
        );
    }
    check(
        img.label_channels >= 1,
        "image.label_channels",
        "must be at least 1".into(),
    );
    if img.label_kind == LabelKind::ToyMask {
        check(
            img.label_channels == 1,
            "image.label_channels",
            "toy-mask labels have exactly 1 channel".into(),
        );
    }
    if img.label_kind == LabelKind::Parsing {
        check(
            img.label_channels >= 2,
            "image.label_channels",
            "parsing labels need at least 2 classes".into(),
        );
    }

    check(
        config.generator.base_width >= 1,
        "generator.base_width",
        "must be at least 1".into(),
    );
    check(
        config.generator.residual_blocks >= 1,
        "generator.residual_blocks",
        "must be at least 1".into(),
    );
    check(
        config.discriminator.base_width >= 1,
        "discriminator.base_width",
        "must be at least 1".into(),
    );
    check(
        (1..=DOWNSAMPLE_STAGES + 2).contains(&config.discriminator.stages),
        "discriminator.stages",
        format!("must be in 1..={}", DOWNSAMPLE_STAGES + 2),
    );

    let p = &config.perceptual;
    check(
        p.base_width >= 1,
        "perceptual.base_width",
        "must be at least 1".into(),
    );
    check(!p.taps.is_empty(), "perceptual.taps", "must not be empty".into());
    let mut last = None;
    for tap in &p.taps {
        match crate::perceptual::tap_index(tap) {
            Some(i) => {
                check(
                    last.is_none_or(|l| i > l),
                    "perceptual.taps",
                    format!("`{tap}` out of order or repeated"),
                );
                last = Some(i);
            }
            None => check(false, "perceptual.taps", format!("unknown tap `{tap}`")),
        }
    }

    let w = &config.loss;
    for (field, v) in [
        ("loss.lambda1", w.lambda1),
        ("loss.lambda2", w.lambda2),
        ("loss.lambda_fm", w.lambda_fm),
    ] {
        check(
            v.is_finite() && v >= 0.0,
            field,
            "must be finite and >= 0".into(),
        );
    }

    let s = &config.schedule;
    check(
        s.base_lr.is_finite() && s.base_lr > 0.0,
        "schedule.base_lr",
        "base_lr must be positive".into(),
    );
    check(s.n_decay > 0, "schedule.n_decay", "must be positive".into());

    let t = &config.train;
    check(
        t.batch_size >= 1,
        "train.batch_size",
        "must be at least 1".into(),
    );
    for (field, v) in [("train.beta1", t.beta1), ("train.beta2", t.beta2)] {
        check((0.0..1.0).contains(&v), field, "must be in [0, 1)".into());
    }
    for (field, v) in [
        ("train.checkpoint_every", t.checkpoint_every),
        ("train.grid_every", t.grid_every),
    ] {
        check(v >= 1, field, "must be at least 1".into());
    }

    let sm = &config.sampler;
    check(sm.window >= 1, "sampler.window", "must be at least 1".into());
    check(
        sm.guidance_per_label >= 1,
        "sampler.guidance_per_label",
        "must be at least 1".into(),
    );

    let toy = &config.toy;
    check(
        toy.n_styles >= 2,
        "toy.n_styles",
        "need at least 2 styles".into(),
    );
    check(
        toy.n_images_per_style >= 1,
        "toy.n_images_per_style",
        "must be at least 1".into(),
    );
    check(!toy.shapes.is_empty(), "toy.shapes", "must not be empty".into());

    let b = &config.eval.patch_box;
    if !b.is_empty() {
        check(
            b.len() == 4
                && b[2] > 0
                && b[3] > 0
                && b[0] + b[2] <= img.width
                && b[1] + b[3] <= img.height,
            "eval.patch_box",
            "must be [x, y, w, h] inside the image".into(),
        );
    }
    out
}
