//! Images and label maps as immutable HWC value objects, with PNG I/O and
//! conversion to and from NCHW tensors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::DOWNSAMPLE_STAGES;
use crate::error::{Error, Result};

const SIZE_MULTIPLE: usize = 1 << DOWNSAMPLE_STAGES;

/// Maps an 8-bit level onto [-1, 1].
pub fn level_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_level(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// RGB image, pixels in [-1, 1], stored row-major HWC.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.height, self.width)
    }
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(SIZE_MULTIPLE) || !width.is_multiple_of(SIZE_MULTIPLE)
        {
            return Err(Error::invalid(
                "image",
                format!("{height}x{width} is not a positive multiple of {SIZE_MULTIPLE}"),
            ));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape("image data", height * width * 3, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && v.abs() <= 1.0)) {
            return Err(Error::invalid(
                "image",
                format!("pixel value {bad} outside [-1, 1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| level_to_unit(b)).collect())
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_level(v)).collect()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ::image::open(path)
            .map_err(|e| Error::Codec {
                path: path.into(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_rgb8(path, self.width, self.height, self.to_rgb8())
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        hwc_to_tensor(&self.data, self.height, self.width, 3, dtype, device)
    }

    /// Inverse of [`Image::to_tensor`] for a `(1, 3, H, W)` or `(3, H, W)` tensor;
    /// values are clamped into [-1, 1].
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::shape("image tensor channels", 3, c));
        }
        let data: Vec<f32> = t
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        Self::new(h, w, data)
    }
}

fn hwc_to_tensor(
    data: &[f32],
    h: usize,
    w: usize,
    c: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, (h, w, c), device)?
        .permute((2, 0, 1))?
        .unsqueeze(0)?
        .to_dtype(dtype)?
        .contiguous()?)
}

pub(crate) fn save_rgb8(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let buf = ::image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::shape("rgb buffer", width * height * 3, "short"))?;
    buf.save(path).map_err(|e| Error::Codec {
        path: path.into(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Sketch,
    Pose,
    Parsing,
    ToyMask,
}

impl LabelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelKind::Sketch => "sketch",
            LabelKind::Pose => "pose",
            LabelKind::Parsing => "parsing",
            LabelKind::ToyMask => "toy-mask",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketch" => Ok(LabelKind::Sketch),
            "pose" => Ok(LabelKind::Pose),
            "parsing" => Ok(LabelKind::Parsing),
            "toy-mask" => Ok(LabelKind::ToyMask),
            other => Err(Error::invalid("label kind", other.to_string())),
        }
    }
}

/// Semantic label map, `channels` values per pixel, row-major HWC.
///
/// `parsing` maps are one-hot per pixel; `toy-mask` maps hold 0/1 in one channel.
#[derive(Clone, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    channels: usize,
    kind: LabelKind,
    data: Vec<f32>,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LabelMap({}, {}x{}x{})",
            self.kind, self.height, self.width, self.channels
        )
    }
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        kind: LabelKind,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("label map", "empty dimensions"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "label data",
                height * width * channels,
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("label map", "non-finite value"));
        }
        match kind {
            LabelKind::ToyMask => {
                if channels != 1 || data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::invalid(
                        "label map",
                        "toy-mask must be one channel of 0/1",
                    ));
                }
            }
            LabelKind::Parsing => {
                for px in data.chunks(channels) {
                    let ones = px.iter().filter(|&&v| v == 1.0).count();
                    let zeros = px.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || zeros != channels - 1 {
                        return Err(Error::invalid("label map", "parsing pixel is not one-hot"));
                    }
                }
            }
            LabelKind::Sketch | LabelKind::Pose => {}
        }
        Ok(Self {
            height,
            width,
            channels,
            kind,
            data,
        })
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Self::new(height, width, 1, LabelKind::ToyMask, data)
    }

    pub fn from_classes(
        height: usize,
        width: usize,
        n_classes: usize,
        classes: &[u32],
    ) -> Result<Self> {
        if let Some(&c) = classes.iter().find(|&&c| c as usize >= n_classes) {
            return Err(Error::invalid(
                "label map",
                format!("class {c} outside [0, {n_classes})"),
            ));
        }
        let mut data = vec![0.0; height * width * n_classes];
        for (i, &c) in classes.iter().enumerate() {
            data[i * n_classes + c as usize] = 1.0;
        }
        Self::new(height, width, n_classes, LabelKind::Parsing, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Foreground mask: any channel above 0.5 (for parsing maps, any class but 0).
    pub fn mask(&self) -> Vec<bool> {
        match self.kind {
            LabelKind::Parsing => self.classes().into_iter().map(|c| c != 0).collect(),
            _ => self
                .data
                .chunks(self.channels)
                .map(|px| px.iter().any(|&v| v > 0.5))
                .collect(),
        }
    }

    /// Per-pixel argmax class.
    pub fn classes(&self) -> Vec<u32> {
        self.data
            .chunks(self.channels)
            .map(|px| {
                px.iter()
                    .enumerate()
                    .fold((0usize, f32::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0 as u32
            })
            .collect()
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        hwc_to_tensor(
            &self.data,
            self.height,
            self.width,
            self.channels,
            dtype,
            device,
        )
    }

    /// Reads a label PNG. Parsing maps store the class id as the gray level;
    /// other kinds store each channel as an 8-bit level scaled to [0, 1]
    /// (gray for one channel, RGB for three); toy masks are thresholded at 128.
    pub fn load_png(path: &Path, kind: LabelKind, channels: usize) -> Result<Self> {
        let dynimg = ::image::open(path).map_err(|e| Error::Codec {
            path: path.into(),
            message: e.to_string(),
        })?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        match kind {
            LabelKind::Parsing => {
                let gray = dynimg.to_luma8();
                let classes: Vec<u32> = gray.as_raw().iter().map(|&v| v as u32).collect();
                Self::from_classes(h, w, channels, &classes)
            }
            LabelKind::ToyMask => {
                let gray = dynimg.to_luma8();
                let mask: Vec<bool> = gray.as_raw().iter().map(|&v| v >= 128).collect();
                Self::from_mask(h, w, &mask)
            }
            LabelKind::Sketch | LabelKind::Pose => {
                let raw = match channels {
                    1 => dynimg.to_luma8().into_raw(),
                    3 => dynimg.to_rgb8().into_raw(),
                    n => {
                        return Err(Error::invalid(
                            "label png",
                            format!("{n}-channel {kind} labels cannot be stored as PNG"),
                        ))
                    }
                };
                let data = raw.iter().map(|&v| v as f32 / 255.0).collect();
                Self::new(h, w, channels, kind, data)
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let codec = |e: ::image::ImageError| Error::Codec {
            path: path.into(),
            message: e.to_string(),
        };
        match (self.kind, self.channels) {
            (LabelKind::Parsing, n) if n <= 256 => {
                let raw: Vec<u8> = self.classes().into_iter().map(|c| c as u8).collect();
                ::image::GrayImage::from_raw(w, h, raw)
                    .expect("sized buffer")
                    .save(path)
                    .map_err(codec)
            }
            (_, 1) => {
                let raw: Vec<u8> = self
                    .data
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                ::image::GrayImage::from_raw(w, h, raw)
                    .expect("sized buffer")
                    .save(path)
                    .map_err(codec)
            }
            (_, 3) => {
                let raw: Vec<u8> = self
                    .data
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                save_rgb8(path, self.width, self.height, raw)
            }
            (kind, n) => Err(Error::invalid(
                "label png",
                format!("{n}-channel {kind} labels cannot be stored as PNG"),
            )),
        }
    }

    /// RGB rendering for image grids, values in [-1, 1].
    pub fn visualize(&self) -> Vec<f32> {
        match (self.kind, self.channels) {
            (LabelKind::Parsing, _) => self
                .classes()
                .into_iter()
                .flat_map(class_color)
                .collect(),
            (_, 1) => self
                .data
                .iter()
                .flat_map(|&v| [v * 2.0 - 1.0; 3])
                .collect(),
            (_, c) => self
                .data
                .chunks(c)
                .flat_map(|px| {
                    let mut rgb = [-1.0f32; 3];
                    for (o, &v) in rgb.iter_mut().zip(px) {
                        *o = v.clamp(0.0, 1.0) * 2.0 - 1.0;
                    }
                    rgb
                })
                .collect(),
        }
    }
}

fn class_color(c: u32) -> [f32; 3] {
    // Golden-ratio hue walk, fixed saturation/value.
    let h = (c as f32 * 0.618_034).fract();
    let [r, g, b] = crate::corpus::hsv_to_rgb(h, 0.7, 0.9);
    [
        level_to_unit(r),
        level_to_unit(g),
        level_to_unit(b),
    ]
}
