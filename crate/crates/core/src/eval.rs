//! Evaluation metrics and the held-out evaluation harness.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{toy_style_distance, Corpus, CorpusEntry, Labeler};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::perceptual::PerceptualExtractor;

/// Eigenvalues below this are treated as zero inside matrix square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

fn mean_and_covariance(set: &[Vec<f64>], what: &'static str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = set.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::invalid(what, "empty feature vectors"));
    }
    if set.len() < d + 1 {
        return Err(Error::TooFewSamples {
            what,
            needed: d + 1,
            got: set.len(),
        });
    }
    if let Some(v) = set.iter().find(|v| v.len() != d) {
        return Err(Error::shape(what, d, v.len()));
    }
    let n = set.len() as f64;
    let mut mean = DVector::zeros(d);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| if l > EIGEN_FLOOR { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussians fitted to two feature sets. The cross
/// term uses `Tr((S_a^1/2 S_b S_a^1/2)^1/2)`, which equals `Tr((S_a S_b)^1/2)`
/// and keeps every root symmetric.
pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = mean_and_covariance(features_a, "first feature set")?;
    let (mu_b, cov_b) = mean_and_covariance(features_b, "second feature set")?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::shape("feature dimension", mu_a.len(), mu_b.len()));
    }
    let root_a = sym_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| if l > EIGEN_FLOOR { l.sqrt() } else { 0.0 })
        .sum();
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Mean Euclidean point distance divided by the image diagonal.
pub fn label_endpoint_error(pred: &[[f64; 2]], gt: &[[f64; 2]], height: usize, width: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("label points", gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::invalid("label points", "no points"));
    }
    let diag = ((height * height + width * width) as f64).sqrt();
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum();
    Ok(total / pred.len() as f64 / diag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub pixel_accuracy: f64,
    /// Mean over classes present in the ground truth.
    pub mean_class_accuracy: f64,
    /// Mean over classes present in either map.
    pub mean_iou: f64,
    /// Classes absent from the ground truth (skipped by the accuracy mean).
    pub skipped_accuracy: Vec<u32>,
    /// Classes absent from both maps (skipped by the IoU mean).
    pub skipped_iou: Vec<u32>,
}

pub fn segmentation_scores(pred: &[u32], gt: &[u32], n_classes: usize) -> Result<SegmentationScores> {
    if pred.len() != gt.len() {
        return Err(Error::shape("class maps", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::invalid("class maps", "empty"));
    }
    if let Some(c) = pred.iter().chain(gt).find(|&&c| c as usize >= n_classes) {
        return Err(Error::invalid("class maps", format!("class {c} >= {n_classes}")));
    }
    let mut inter = vec![0u64; n_classes];
    let mut gt_count = vec![0u64; n_classes];
    let mut pred_count = vec![0u64; n_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        gt_count[g as usize] += 1;
        pred_count[p as usize] += 1;
        if p == g {
            inter[g as usize] += 1;
        }
    }
    let correct: u64 = inter.iter().sum();
    let mut acc = Vec::new();
    let mut iou = Vec::new();
    let mut skipped_accuracy = Vec::new();
    let mut skipped_iou = Vec::new();
    for c in 0..n_classes {
        if gt_count[c] > 0 {
            acc.push(inter[c] as f64 / gt_count[c] as f64);
        } else {
            skipped_accuracy.push(c as u32);
        }
        let union = gt_count[c] + pred_count[c] - inter[c];
        if union > 0 {
            iou.push(inter[c] as f64 / union as f64);
        } else {
            skipped_iou.push(c as u32);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SegmentationScores {
        pixel_accuracy: correct as f64 / gt.len() as f64,
        mean_class_accuracy: mean(&acc),
        mean_iou: mean(&iou),
        skipped_accuracy,
        skipped_iou,
    })
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("masks", a.len(), b.len()));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pixel-center centroid `[x, y]` of a mask; the image center when empty.
pub fn mask_centroid(mask: &[bool], height: usize, width: usize) -> [f64; 2] {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        sx += (i % width) as f64 + 0.5;
        sy += (i / width) as f64 + 0.5;
        n += 1;
    }
    if n == 0 {
        [width as f64 / 2.0, height as f64 / 2.0]
    } else {
        [sx / n as f64, sy / n as f64]
    }
}

/// Axis-aligned crop `[x, y, w, h]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PatchBox {
    pub fn whole(image: &Image) -> Self {
        Self {
            x: 0,
            y: 0,
            w: image.width(),
            h: image.height(),
        }
    }

    pub fn from_slice(v: &[usize]) -> Result<Self> {
        match v {
            [x, y, w, h] => Ok(Self { x: *x, y: *y, w: *w, h: *h }),
            _ => Err(Error::invalid("patch box", format!("expected [x, y, w, h], got {v:?}"))),
        }
    }

    fn crop(&self, image: &Image, device: &Device) -> Result<Tensor> {
        if self.w == 0 || self.h == 0 || self.x + self.w > image.width() || self.y + self.h > image.height() {
            return Err(Error::invalid(
                "patch box",
                format!("{self:?} outside {}x{} image", image.width(), image.height()),
            ));
        }
        Ok(image
            .to_tensor(DType::F32, device)?
            .narrow(2, self.y, self.h)?
            .narrow(3, self.x, self.w)?)
    }
}

/// L1 distance between the extractor's concatenated tap features of two
/// equally sized crops, divided by the total feature count.
pub fn patch_style_distance(
    extractor: &PerceptualExtractor,
    img_a: &Image,
    img_b: &Image,
    box_a: PatchBox,
    box_b: PatchBox,
) -> Result<f64> {
    if (box_a.w, box_a.h) != (box_b.w, box_b.h) {
        return Err(Error::shape("patch boxes", (box_a.w, box_a.h), (box_b.w, box_b.h)));
    }
    let device = Device::Cpu;
    let fa = extractor.features(&box_a.crop(img_a, &device)?)?;
    let fb = extractor.features(&box_b.crop(img_b, &device)?)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in fa.iter().zip(&fb) {
        sum += (a - b)?.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        count += a.elem_count();
    }
    Ok(sum / count as f64)
}

/// Spatially pooled activations of the deepest tap, one vector per image.
pub fn fid_features(extractor: &PerceptualExtractor, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let device = Device::Cpu;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        let batch = Tensor::cat(
            &chunk
                .iter()
                .map(|i| i.to_tensor(DType::F32, &device))
                .collect::<Result<Vec<_>>>()?,
            0,
        )?;
        let feats = extractor.features(&batch)?;
        let deepest = feats.last().expect("at least one tap");
        let pooled: Vec<Vec<f32>> = deepest.mean((2, 3))?.to_vec2()?;
        out.extend(pooled.into_iter().map(|v| v.into_iter().map(f64::from).collect()));
    }
    Ok(out)
}

/// A held-out evaluation case: target `z`, exemplar `I` of another style, and a
/// distractor exemplar whose style differs from `I`'s.
#[derive(Debug, Clone)]
pub struct Triple<'a> {
    pub target: &'a CorpusEntry,
    pub exemplar: &'a CorpusEntry,
    pub distractor: &'a CorpusEntry,
}

/// Draws `n` triples where styles are corpus groups.
pub fn sample_triples(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<Triple<'_>>> {
    let entries = corpus.entries();
    if corpus.groups().len() < 2 {
        return Err(Error::EmptyDomain("evaluation needs at least two style groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick_other = |rng: &mut ChaCha8Rng, group: u32| -> &CorpusEntry {
        let others: Vec<&CorpusEntry> = entries.iter().filter(|e| e.reference.group != group).collect();
        others[rng.random_range(0..others.len())]
    };
    Ok((0..n)
        .map(|_| {
            let target = &entries[rng.random_range(0..entries.len())];
            let exemplar = pick_other(&mut rng, target.reference.group);
            let distractor = pick_other(&mut rng, exemplar.reference.group);
            Triple {
                target,
                exemplar,
                distractor,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fid: f64,
    pub lepe: f64,
    pub seg: SegmentationScores,
    pub patch_dist: f64,
    /// Share of triples whose output is closer in style to its exemplar than to the distractor.
    pub style_win_rate: f64,
    /// Mean IoU between the input mask and the relabeled output's mask.
    pub mask_iou: f64,
    pub n_samples: usize,
    pub config_hash: String,
    pub backbone: String,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "backbone = {}", self.backbone);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "fid = {:.6}", self.fid);
        let _ = writeln!(s, "lepe = {:.6}", self.lepe);
        let _ = writeln!(s, "seg.per_pixel_acc = {:.6}", self.seg.pixel_accuracy);
        let _ = writeln!(s, "seg.per_class_acc = {:.6}", self.seg.mean_class_accuracy);
        let _ = writeln!(s, "seg.class_iou = {:.6}", self.seg.mean_iou);
        let _ = writeln!(s, "seg.skipped_acc = {:?}", self.seg.skipped_accuracy);
        let _ = writeln!(s, "seg.skipped_iou = {:?}", self.seg.skipped_iou);
        let _ = writeln!(s, "patch_dist = {:.6}", self.patch_dist);
        let _ = writeln!(s, "style_win_rate = {:.6}", self.style_win_rate);
        let _ = writeln!(s, "mask_iou = {:.6}", self.mask_iou);
        s
    }

    /// One tab-separated record for a results ledger.
    pub fn ledger_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.config_hash,
            self.backbone,
            self.n_samples,
            self.fid,
            self.lepe,
            self.seg.pixel_accuracy,
            self.seg.mean_class_accuracy,
            self.seg.mean_iou,
            self.patch_dist,
            self.style_win_rate,
            self.mask_iou
        )
    }

    pub fn append_to_ledger(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", self.ledger_line()).map_err(|e| Error::io(path, e))
    }
}

fn label_classes(l: &LabelMap) -> (Vec<u32>, usize) {
    match l.kind() {
        crate::image::LabelKind::Parsing => (l.classes(), l.channels()),
        _ => (l.mask().into_iter().map(u32::from).collect(), 2),
    }
}

/// Synthesizes every triple with `synth(x, I, F(I))`, relabels outputs with
/// `labeler` and computes the full report.
pub fn evaluate<F>(
    triples: &[Triple<'_>],
    synth: F,
    labeler: &Labeler,
    extractor: &PerceptualExtractor,
    patch: Option<PatchBox>,
    config_hash: &str,
) -> Result<MetricReport>
where
    F: Fn(&LabelMap, &Image, &LabelMap) -> Result<Image>,
{
    if triples.is_empty() {
        return Err(Error::invalid("evaluation", "no triples"));
    }
    let mut outputs = Vec::with_capacity(triples.len());
    let mut wins = 0usize;
    let mut iou_sum = 0.0;
    let mut lepe_sum = 0.0;
    let mut patch_sum = 0.0;
    let mut pred_classes = Vec::new();
    let mut gt_classes = Vec::new();
    let mut n_classes = 2;
    for t in triples {
        let x = &t.target.labels;
        let y = synth(x, &t.exemplar.image, &t.exemplar.labels)?;
        let relabeled = labeler.label(&y)?;
        let d_exemplar = toy_style_distance(&y, &t.exemplar.image).distance;
        let d_distractor = toy_style_distance(&y, &t.distractor.image).distance;
        if d_exemplar < d_distractor {
            wins += 1;
        }
        let (h, w) = (y.height(), y.width());
        let (xm, ym) = (x.mask(), relabeled.mask());
        iou_sum += mask_iou(&xm, &ym)?;
        lepe_sum += label_endpoint_error(&[mask_centroid(&ym, h, w)], &[mask_centroid(&xm, h, w)], h, w)?;
        let (p, _) = label_classes(&relabeled);
        let (g, n) = label_classes(x);
        n_classes = n;
        pred_classes.extend(p);
        gt_classes.extend(g);
        let b = patch.unwrap_or_else(|| PatchBox::whole(&y));
        patch_sum += patch_style_distance(extractor, &y, &t.exemplar.image, b, b)?;
        outputs.push(y);
    }
    let n = triples.len();
    let real: Vec<&Image> = triples.iter().map(|t| t.target.image.as_ref()).collect();
    let fake: Vec<&Image> = outputs.iter().collect();
    let fid_value = fid(&fid_features(extractor, &real)?, &fid_features(extractor, &fake)?)?;
    Ok(MetricReport {
        fid: fid_value,
        lepe: lepe_sum / n as f64,
        seg: segmentation_scores(&pred_classes, &gt_classes, n_classes)?,
        patch_dist: patch_sum / n as f64,
        style_win_rate: wins as f64 / n as f64,
        mask_iou: iou_sum / n as f64,
        n_samples: n,
        config_hash: config_hash.to_string(),
        backbone: extractor.backing().to_string(),
    })
}
