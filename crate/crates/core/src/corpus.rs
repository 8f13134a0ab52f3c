//! Image corpora: the labeling function F(·), the deterministic toy
//! "shapes with palettes" corpus, real-frame ingestion, and the on-disk layout.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Shape, ToyCorpusSpec};
use crate::error::{Error, Result};
use crate::image::{level_to_unit, Image, LabelKind, LabelMap};

/// Foreground cutoff for [`toy_label`], Euclidean distance in [-1, 1] RGB units.
pub const TOY_LABEL_THRESHOLD: f32 = 0.5;

/// Identity of one corpus image: style group, video (or image) id, frame index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageRef {
    pub group: u32,
    pub video: String,
    pub frame: u32,
}

impl ImageRef {
    pub fn new(group: u32, video: impl Into<String>, frame: u32) -> Self {
        Self {
            group,
            video: video.into(),
            frame,
        }
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.group, self.video, self.frame)
    }
}

impl FromStr for ImageRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::parse(s, "expected <group>/<video>/<frame>");
        let mut parts = s.split('/');
        let (Some(g), Some(v), Some(f), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        if v.is_empty() {
            return Err(bad());
        }
        Ok(Self {
            group: g.parse().map_err(|_| bad())?,
            video: v.to_string(),
            frame: f.parse().map_err(|_| bad())?,
        })
    }
}

/// How style consistency is read off a corpus: temporal windows within a
/// video, or shared attribute groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusLayout {
    Video,
    Grouped,
}

impl CorpusLayout {
    fn as_str(&self) -> &'static str {
        match self {
            CorpusLayout::Video => "video",
            CorpusLayout::Grouped => "grouped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub reference: ImageRef,
    pub image: Arc<Image>,
    pub labels: Arc<LabelMap>,
}

/// An input that was not admitted, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub item: String,
    pub reason: String,
}

impl Reject {
    pub fn new(item: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            item: item.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.item, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub layout: CorpusLayout,
    pub label_kind: LabelKind,
    pub label_channels: usize,
    entries: Vec<CorpusEntry>,
    index: HashMap<ImageRef, usize>,
    pub rejects: Vec<Reject>,
}

impl Corpus {
    /// Entries are kept sorted by reference so that every downstream sampler sees
    /// a canonical order.
    pub fn new(
        layout: CorpusLayout,
        label_kind: LabelKind,
        label_channels: usize,
        mut entries: Vec<CorpusEntry>,
        rejects: Vec<Reject>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| a.reference.cmp(&b.reference));
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let (img, lab) = (&e.image, &e.labels);
            if img.height() != lab.height() || img.width() != lab.width() {
                return Err(Error::shape(
                    format!("labels of {}", e.reference),
                    (img.height(), img.width()),
                    (lab.height(), lab.width()),
                ));
            }
            if lab.channels() != label_channels || lab.kind() != label_kind {
                return Err(Error::shape(
                    format!("labels of {}", e.reference),
                    (label_kind, label_channels),
                    (lab.kind(), lab.channels()),
                ));
            }
            if index.insert(e.reference.clone(), i).is_some() {
                return Err(Error::invalid(
                    "corpus",
                    format!("duplicate reference {}", e.reference),
                ));
            }
        }
        Ok(Self {
            layout,
            label_kind,
            label_channels,
            entries,
            index,
            rejects,
        })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, r: &ImageRef) -> Option<&CorpusEntry> {
        self.index.get(r).map(|&i| &self.entries[i])
    }

    pub fn videos(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .entries
            .iter()
            .map(|e| e.reference.video.as_str())
            .collect();
        v.dedup();
        v
    }

    pub fn groups(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self.entries.iter().map(|e| e.reference.group).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Splits by frame index: frames below `from_frame` stay, the rest are held out.
    pub fn split_at_frame(&self, from_frame: u32) -> Result<(Corpus, Corpus)> {
        let (train, test): (Vec<_>, Vec<_>) = self
            .entries
            .iter()
            .cloned()
            .partition(|e| e.reference.frame < from_frame);
        Ok((
            Corpus::new(
                self.layout,
                self.label_kind,
                self.label_channels,
                train,
                Vec::new(),
            )?,
            Corpus::new(
                self.layout,
                self.label_kind,
                self.label_channels,
                test,
                Vec::new(),
            )?,
        ))
    }

    fn relative_image_path(r: &ImageRef) -> PathBuf {
        PathBuf::from(format!("images/{}/{}/{:06}.png", r.group, r.video, r.frame))
    }

    fn relative_label_path(r: &ImageRef) -> PathBuf {
        PathBuf::from(format!("labels/{}/{}/{:06}.png", r.group, r.video, r.frame))
    }

    /// Writes `images/<group>/<video>/<frame>.png`, the mirrored `labels/` tree
    /// and `manifest.tsv` (path, video id, frame index, group id per line).
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut manifest = format!(
            "# layout={} label_kind={} label_channels={}\n",
            self.layout.as_str(),
            self.label_kind,
            self.label_channels
        );
        for e in &self.entries {
            let r = &e.reference;
            let img_rel = Self::relative_image_path(r);
            e.image.save_png(&dir.join(&img_rel))?;
            e.labels.save_png(&dir.join(Self::relative_label_path(r)))?;
            manifest.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                img_rel.display(),
                r.video,
                r.frame,
                r.group
            ));
        }
        if !self.rejects.is_empty() {
            let text: String = self.rejects.iter().map(|r| format!("{r}\n")).collect();
            let p = dir.join("rejects.tsv");
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
        }
        let p = dir.join("manifest.tsv");
        std::fs::write(&p, manifest).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.tsv");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(p.display().to_string(), "empty manifest"))?;
        let meta: HashMap<&str, &str> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let field = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::parse(p.display().to_string(), format!("header lacks {k}")))
        };
        let layout = match field("layout")? {
            "video" => CorpusLayout::Video,
            "grouped" => CorpusLayout::Grouped,
            other => return Err(Error::parse(p.display().to_string(), other.to_string())),
        };
        let kind: LabelKind = field("label_kind")?.parse()?;
        let channels: usize = field("label_channels")?
            .parse()
            .map_err(|_| Error::parse(p.display().to_string(), "label_channels"))?;
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("{}:{}", p.display(), n + 2);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(loc, "expected 4 tab-separated fields"));
            }
            let reference = ImageRef {
                video: cols[1].to_string(),
                frame: cols[2].parse().map_err(|_| Error::parse(&loc, "frame"))?,
                group: cols[3].parse().map_err(|_| Error::parse(&loc, "group"))?,
            };
            let image = Image::load_png(&dir.join(cols[0]))?;
            let labels =
                LabelMap::load_png(&dir.join(Self::relative_label_path(&reference)), kind, channels)?;
            entries.push(CorpusEntry {
                reference,
                image: Arc::new(image),
                labels: Arc::new(labels),
            });
        }
        Corpus::new(layout, kind, channels, entries, Vec::new())
    }
}

/// The labeling function F(·).
#[derive(Debug, Clone, PartialEq)]
pub enum Labeler {
    /// Thresholded distance to the estimated background color.
    ToyMask { threshold: f32 },
    /// Labels are read from precomputed files; no live inference.
    ExternalPrecomputed { kind: LabelKind, channels: usize },
}

impl Labeler {
    pub fn for_kind(kind: LabelKind, channels: usize) -> Self {
        match kind {
            LabelKind::ToyMask => Labeler::ToyMask {
                threshold: TOY_LABEL_THRESHOLD,
            },
            kind => Labeler::ExternalPrecomputed { kind, channels },
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Labeler::ToyMask { .. } => 1,
            Labeler::ExternalPrecomputed { channels, .. } => *channels,
        }
    }

    pub fn label(&self, image: &Image) -> Result<LabelMap> {
        match self {
            Labeler::ToyMask { threshold } => Ok(toy_label_with(image, *threshold)),
            Labeler::ExternalPrecomputed { kind, .. } => Err(Error::invalid(
                "labeler",
                format!("{kind} labels are precomputed; supply a label file"),
            )),
        }
    }
}

/// Foreground/background colors of one toy style, 8-bit RGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyPalette {
    pub foreground: [u8; 3],
    pub background: [u8; 3],
}

impl ToyPalette {
    pub fn foreground_unit(&self) -> [f32; 3] {
        self.foreground.map(level_to_unit)
    }

    pub fn background_unit(&self) -> [f32; 3] {
        self.background.map(level_to_unit)
    }
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// Style `s` of `n`: evenly spaced bright foreground hues over dark backgrounds
/// of the opposite hue.
pub fn toy_palette(style: usize, n_styles: usize) -> ToyPalette {
    let h = style as f32 / n_styles as f32;
    ToyPalette {
        foreground: hsv_to_rgb(h, 0.85, 0.95),
        background: hsv_to_rgb(h + 0.5, 0.6, 0.3),
    }
}

/// One shape placement. Geometry is evaluated at pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeInstance {
    pub shape: Shape,
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
}

impl ShapeInstance {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dx = x as f32 + 0.5 - self.cx;
        let dy = y as f32 + 0.5 - self.cy;
        let r = self.radius;
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            // Apex up, base at cy + r.
            Shape::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) * 0.5,
        }
    }

    /// Random placement with at least 2 pixels of pure background at the border.
    pub fn random(rng: &mut impl Rng, shapes: &[Shape], height: usize, width: usize) -> Self {
        let shape = shapes[rng.random_range(0..shapes.len())];
        let side = height.min(width) as f32;
        let radius = rng.random_range(side * 0.15..side * 0.3);
        let margin = radius + 2.0;
        let cx = rng.random_range(margin..width as f32 - margin);
        let cy = rng.random_range(margin..height as f32 - margin);
        Self {
            shape,
            cx,
            cy,
            radius,
        }
    }

    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| self.contains(y, x))
            .collect()
    }
}

/// Renders a shape in the palette's foreground over its background, adding
/// uniform integer noise in `[-noise, noise]` per channel.
pub fn render_toy(
    instance: &ShapeInstance,
    palette: &ToyPalette,
    noise: u8,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> Result<(Image, Vec<bool>)> {
    let mask = instance.mask(height, width);
    let mut bytes = Vec::with_capacity(height * width * 3);
    for &m in &mask {
        let base = if m {
            palette.foreground
        } else {
            palette.background
        };
        for c in base {
            let n = if noise == 0 {
                0
            } else {
                rng.random_range(-(noise as i32)..=noise as i32)
            };
            bytes.push((c as i32 + n).clamp(0, 255) as u8);
        }
    }
    Ok((Image::from_rgb8(height, width, &bytes)?, mask))
}

/// A generated toy corpus plus its ground truth.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub corpus: Corpus,
    pub palettes: Vec<ToyPalette>,
    pub shapes: BTreeMap<ImageRef, ShapeInstance>,
}

/// Video id used for toy style `s`.
pub fn toy_video_id(style: usize) -> String {
    format!("style{style:02}")
}

pub fn generate_toy_corpus(spec: &ToyCorpusSpec, height: usize, width: usize) -> Result<ToyCorpus> {
    if spec.n_styles < 2 {
        return Err(Error::invalid(
            "toy corpus spec",
            "n_styles must be at least 2 so inconsistent pairs exist",
        ));
    }
    if spec.shapes.is_empty() || spec.n_images_per_style == 0 {
        return Err(Error::invalid(
            "toy corpus spec",
            "needs shapes and images per style",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let palettes: Vec<ToyPalette> = (0..spec.n_styles)
        .map(|s| toy_palette(s, spec.n_styles))
        .collect();
    let mut entries = Vec::with_capacity(spec.n_styles * spec.n_images_per_style);
    let mut shapes = BTreeMap::new();
    for (style, palette) in palettes.iter().enumerate() {
        for frame in 0..spec.n_images_per_style {
            let inst = ShapeInstance::random(&mut rng, &spec.shapes, height, width);
            let (image, mask) = render_toy(&inst, palette, spec.noise, height, width, &mut rng)?;
            let reference = ImageRef::new(style as u32, toy_video_id(style), frame as u32);
            shapes.insert(reference.clone(), inst);
            entries.push(CorpusEntry {
                reference,
                image: Arc::new(image),
                labels: Arc::new(LabelMap::from_mask(height, width, &mask)?),
            });
        }
    }
    let corpus = Corpus::new(
        CorpusLayout::Video,
        LabelKind::ToyMask,
        1,
        entries,
        Vec::new(),
    )?;
    Ok(ToyCorpus {
        corpus,
        palettes,
        shapes,
    })
}

fn color_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

/// Per-channel median of the one-pixel border.
pub fn estimate_background(image: &Image) -> [f32; 3] {
    let (h, w) = (image.height(), image.width());
    let mut border: Vec<[f32; 3]> = Vec::with_capacity(2 * (h + w));
    for x in 0..w {
        border.push(image.pixel(0, x));
        border.push(image.pixel(h - 1, x));
    }
    for y in 1..h - 1 {
        border.push(image.pixel(y, 0));
        border.push(image.pixel(y, w - 1));
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut v: Vec<f32> = border.iter().map(|p| p[c]).collect();
        v.sort_by(f32::total_cmp);
        *o = v[v.len() / 2];
    }
    out
}

/// Toy F(·): binary mask of pixels farther than [`TOY_LABEL_THRESHOLD`] from the
/// estimated background color.
pub fn toy_label(image: &Image) -> LabelMap {
    toy_label_with(image, TOY_LABEL_THRESHOLD)
}

pub fn toy_label_with(image: &Image, threshold: f32) -> LabelMap {
    let bg = estimate_background(image);
    let mask: Vec<bool> = image
        .data()
        .chunks(3)
        .map(|px| color_distance([px[0], px[1], px[2]], bg) > threshold)
        .collect();
    LabelMap::from_mask(image.height(), image.width(), &mask).expect("mask matches image")
}

/// Mean color of the toy foreground, or of the background when there is none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteEstimate {
    pub color: [f32; 3],
    pub background_fallback: bool,
}

pub fn estimate_palette(image: &Image) -> PaletteEstimate {
    let mask = toy_label(image).mask();
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for (px, _) in image.data().chunks(3).zip(&mask).filter(|(_, &m)| m) {
        for c in 0..3 {
            sum[c] += px[c] as f64;
        }
        n += 1;
    }
    if n == 0 {
        return PaletteEstimate {
            color: estimate_background(image),
            background_fallback: true,
        };
    }
    PaletteEstimate {
        color: sum.map(|s| (s / n as f64) as f32),
        background_fallback: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleDistance {
    pub distance: f32,
    /// Set when either image had no foreground and its background color was used.
    pub background_fallback: bool,
}

/// Euclidean distance between the two images' foreground-palette estimates.
pub fn toy_style_distance(a: &Image, b: &Image) -> StyleDistance {
    let (pa, pb) = (estimate_palette(a), estimate_palette(b));
    StyleDistance {
        distance: color_distance(pa.color, pb.color),
        background_fallback: pa.background_fallback || pb.background_fallback,
    }
}

/// Weather / time-of-day style groups for street-view data, ids 1..=13.
pub const STYLE_GROUPS: [(u32, &str, &str); 13] = [
    (1, "-", "night"),
    (2, "foggy", "dawn or dusk"),
    (3, "overcast", "daytime"),
    (4, "rainy", "dawn or dusk"),
    (5, "snowy", "dawn or dusk"),
    (6, "clear", "dawn or dusk"),
    (7, "foggy", "daytime"),
    (8, "partly cloudy", "dawn or dusk"),
    (9, "rainy", "daytime"),
    (10, "snowy", "daytime"),
    (11, "clear", "daytime"),
    (12, "overcast", "dawn or dusk"),
    (13, "partly cloudy", "daytime"),
];

fn normalize_attr(s: &str) -> String {
    let s = s.trim().to_lowercase().replace(['_', '-'], " ");
    match s.as_str() {
        "dawn/dusk" | "dawn dusk" => "dawn or dusk".into(),
        _ => s,
    }
}

/// Group id for a (weather, time of day) attribute pair. Night maps to group 1
/// whatever the weather.
pub fn style_group(weather: &str, timeofday: &str) -> Option<u32> {
    let (w, t) = (normalize_attr(weather), normalize_attr(timeofday));
    if t == "night" {
        return Some(1);
    }
    STYLE_GROUPS
        .iter()
        .find(|(_, gw, gt)| *gw == w && *gt == t)
        .map(|(id, _, _)| *id)
}

/// Parses a group table: `id <TAB> weather <TAB> timeofday` per line, `#` comments.
pub fn read_group_table(path: &Path) -> Result<(BTreeMap<String, u32>, Vec<Reject>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = BTreeMap::new();
    let mut rejects = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                format!("{}:{}", path.display(), n + 1),
                "expected id, weather, timeofday",
            ));
        }
        match style_group(cols[1], cols[2]) {
            Some(g) => {
                table.insert(cols[0].trim().to_string(), g);
            }
            None => rejects.push(Reject::new(
                cols[0].trim(),
                format!("no style group for ({}, {})", cols[1], cols[2]),
            )),
        }
    }
    Ok((table, rejects))
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub label_kind: LabelKind,
    pub label_channels: usize,
    /// Attribute table mapping video/image ids to style groups.
    pub group_table: Option<PathBuf>,
    /// Defaults to `Grouped` when a group table is given, `Video` otherwise.
    pub layout: Option<CorpusLayout>,
}

/// Reads `root/frames/<video>/<frame>.png` with labels at
/// `root/labels/<video>/<frame>.png`. Frames without a label file, unparsable
/// names, undecodable images and videos without a group row become rejects.
pub fn ingest_frames(root: &Path, opts: &IngestOptions) -> Result<Corpus> {
    let frames_dir = root.join("frames");
    let labels_dir = root.join("labels");
    let (table, mut rejects) = match &opts.group_table {
        Some(p) => {
            let (t, r) = read_group_table(p)?;
            (Some(t), r)
        }
        None => (None, Vec::new()),
    };
    let layout = opts.layout.unwrap_or(if table.is_some() {
        CorpusLayout::Grouped
    } else {
        CorpusLayout::Video
    });

    let mut videos: Vec<(String, PathBuf)> = read_dir_sorted(&frames_dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            Some((name, p))
        })
        .collect();
    videos.sort();

    let mut entries = Vec::new();
    for (ordinal, (video, vdir)) in videos.iter().enumerate() {
        if video.contains(['\t', '/']) || video.is_empty() {
            rejects.push(Reject::new(video, "unsupported video id"));
            continue;
        }
        let group = match &table {
            Some(t) => match t.get(video) {
                Some(&g) => g,
                None => {
                    rejects.push(Reject::new(video, "no row in group table"));
                    continue;
                }
            },
            None => ordinal as u32,
        };
        for fpath in read_dir_sorted(vdir)? {
            let item = fpath.display().to_string();
            if fpath.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(frame) = fpath
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u32>().ok())
            else {
                rejects.push(Reject::new(item, "frame name is not an integer"));
                continue;
            };
            let lpath = labels_dir.join(video).join(fpath.file_name().expect("file"));
            if !lpath.is_file() {
                rejects.push(Reject::new(item, "missing label file"));
                continue;
            }
            let loaded = Image::load_png(&fpath).and_then(|img| {
                LabelMap::load_png(&lpath, opts.label_kind, opts.label_channels)
                    .map(|lab| (img, lab))
            });
            match loaded {
                Ok((image, labels))
                    if image.height() == labels.height() && image.width() == labels.width() =>
                {
                    entries.push(CorpusEntry {
                        reference: ImageRef::new(group, video.clone(), frame),
                        image: Arc::new(image),
                        labels: Arc::new(labels),
                    })
                }
                Ok(_) => rejects.push(Reject::new(item, "label size differs from frame")),
                Err(e) => rejects.push(Reject::new(item, e.to_string())),
            }
        }
    }
    Corpus::new(
        layout,
        opts.label_kind,
        opts.label_channels,
        entries,
        rejects,
    )
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}
