//! Style-consistent / style-inconsistent pair sampling and training-sample
//! assembly.
//!
//! Consistent pairs come from frames of one video at most `window` frames
//! apart (video corpora) or from one attribute group (grouped corpora).
//! Inconsistent pairs cross videos or groups and count as unverified until a
//! human-label file says otherwise. Sampling is uniform over the valid
//! unordered pairs and fully determined by the seed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SamplerConfig;
use crate::corpus::{Corpus, CorpusLayout, ImageRef, Reject};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    SameVideoWindow,
    SameGroup,
    CrossGroup,
    HumanLabeled,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::SameVideoWindow => "same-video-window",
            Provenance::SameGroup => "same-group",
            Provenance::CrossGroup => "cross-group",
            Provenance::HumanLabeled => "human-labeled",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same-video-window" => Ok(Provenance::SameVideoWindow),
            "same-group" => Ok(Provenance::SameGroup),
            "cross-group" => Ok(Provenance::CrossGroup),
            "human-labeled" => Ok(Provenance::HumanLabeled),
            other => Err(Error::parse(other, "unknown provenance")),
        }
    }
}

/// An unordered image pair; member order carries no meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub ref_a: ImageRef,
    pub ref_b: ImageRef,
    pub consistent: bool,
    pub provenance: Provenance,
}

impl PairRecord {
    fn key(&self) -> (ImageRef, ImageRef) {
        pair_key(&self.ref_a, &self.ref_b)
    }

    /// Checks the record against its provenance rule with window `window`.
    pub fn satisfies_invariant(&self, window: u32) -> bool {
        match (self.consistent, self.provenance) {
            (true, Provenance::SameVideoWindow) => {
                self.ref_a.video == self.ref_b.video
                    && self.ref_a.frame != self.ref_b.frame
                    && self.ref_a.frame.abs_diff(self.ref_b.frame) <= window
            }
            (true, Provenance::SameGroup) => {
                self.ref_a.group == self.ref_b.group && self.ref_a != self.ref_b
            }
            (false, Provenance::CrossGroup) => {
                self.ref_a.group != self.ref_b.group || self.ref_a.video != self.ref_b.video
            }
            (_, Provenance::HumanLabeled) => self.ref_a != self.ref_b,
            _ => false,
        }
    }
}

fn pair_key(a: &ImageRef, b: &ImageRef) -> (ImageRef, ImageRef) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Candidate partners for consistent pairing: `anchors[i]` may pair with
/// `partners(i)`, each unordered pair counted once.
struct ConsistentDomain<'a> {
    refs: Vec<&'a ImageRef>,
    /// For each anchor: range of partner indices in `refs` (always after the anchor).
    spans: Vec<(usize, usize)>,
    provenance: Provenance,
}

impl<'a> ConsistentDomain<'a> {
    fn build(corpus: &'a Corpus, window: u32) -> Self {
        // Entries are sorted by (group, video, frame).
        let refs: Vec<&ImageRef> = corpus.entries().iter().map(|e| &e.reference).collect();
        let mut spans = Vec::with_capacity(refs.len());
        match corpus.layout {
            CorpusLayout::Video => {
                for (i, r) in refs.iter().enumerate() {
                    let mut end = i + 1;
                    while end < refs.len()
                        && refs[end].video == r.video
                        && refs[end].group == r.group
                        && refs[end].frame - r.frame <= window
                    {
                        end += 1;
                    }
                    spans.push((i + 1, end));
                }
            }
            CorpusLayout::Grouped => {
                for (i, r) in refs.iter().enumerate() {
                    let mut end = i + 1;
                    while end < refs.len() && refs[end].group == r.group {
                        end += 1;
                    }
                    spans.push((i + 1, end));
                }
            }
        }
        let provenance = match corpus.layout {
            CorpusLayout::Video => Provenance::SameVideoWindow,
            CorpusLayout::Grouped => Provenance::SameGroup,
        };
        Self {
            refs,
            spans,
            provenance,
        }
    }
}

/// Randomizes member order so stored pairs carry no orientation.
fn oriented(rng: &mut impl Rng, a: &ImageRef, b: &ImageRef) -> (ImageRef, ImageRef) {
    if rng.random::<bool>() {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

pub fn sample_consistent_pairs(
    corpus: &Corpus,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<PairRecord>> {
    let domain = ConsistentDomain::build(corpus, config.window);
    let weights: Vec<usize> = domain.spans.iter().map(|(s, e)| e - s).collect();
    if weights.iter().all(|&w| w == 0) {
        let constraint = match corpus.layout {
            CorpusLayout::Video => format!(
                "no video has two distinct frames within {} frames",
                config.window
            ),
            CorpusLayout::Grouped => "no group holds two images".to_string(),
        };
        return Err(Error::EmptyDomain(constraint));
    }
    let anchors = WeightedIndex::new(&weights).expect("nonzero total weight");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..count)
        .map(|_| {
            let i = anchors.sample(&mut rng);
            let (s, e) = domain.spans[i];
            let j = rng.random_range(s..e);
            let (ref_a, ref_b) = oriented(&mut rng, domain.refs[i], domain.refs[j]);
            PairRecord {
                ref_a,
                ref_b,
                consistent: true,
                provenance: domain.provenance,
            }
        })
        .collect())
}

pub fn sample_inconsistent_pairs(
    corpus: &Corpus,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<PairRecord>> {
    let refs: Vec<&ImageRef> = corpus.entries().iter().map(|e| &e.reference).collect();
    // Partition key: video for video corpora, group for grouped corpora.
    let key = |r: &ImageRef| -> String {
        match corpus.layout {
            CorpusLayout::Video => format!("{}/{}", r.group, r.video),
            CorpusLayout::Grouped => r.group.to_string(),
        }
    };
    let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in refs.iter().enumerate() {
        classes.entry(key(r)).or_default().push(i);
    }
    if classes.len() < 2 {
        let what = match corpus.layout {
            CorpusLayout::Video => "at least two videos",
            CorpusLayout::Grouped => "at least two groups",
        };
        return Err(Error::EmptyDomain(format!(
            "inconsistent pairs need {what}"
        )));
    }
    let n = refs.len();
    let class_of: Vec<String> = refs.iter().map(|r| key(r)).collect();
    // Ordered pair (i, j) with different classes is uniform when i is drawn with
    // weight (n - |class(i)|) and j uniformly outside class(i).
    let weights: Vec<usize> = class_of.iter().map(|c| n - classes[c].len()).collect();
    let anchors = WeightedIndex::new(&weights).expect("two classes exist");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = anchors.sample(&mut rng);
        let own = &classes[&class_of[i]];
        // Own class occupies a contiguous index range since entries are sorted.
        let mut j = rng.random_range(0..n - own.len());
        if j >= own[0] {
            j += own.len();
        }
        out.push(PairRecord {
            ref_a: refs[i].clone(),
            ref_b: refs[j].clone(),
            consistent: false,
            provenance: Provenance::CrossGroup,
        });
    }
    Ok(out)
}

/// Human verdicts keyed by unordered pair. Lines: `ref_a <TAB> ref_b <TAB> verdict`,
/// verdict `consistent` or `inconsistent`.
pub fn read_human_labels(path: &Path) -> Result<Vec<(ImageRef, ImageRef, bool)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_human_labels(&text, &path.display().to_string())
}

pub fn parse_human_labels(text: &str, source: &str) -> Result<Vec<(ImageRef, ImageRef, bool)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{source}:{}", n + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(loc, "expected ref_a, ref_b, verdict"));
        }
        let verdict = match cols[2].trim() {
            "consistent" => true,
            "inconsistent" => false,
            other => return Err(Error::parse(loc, format!("unknown verdict `{other}`"))),
        };
        out.push((cols[0].parse()?, cols[1].parse()?, verdict));
    }
    Ok(out)
}

/// Applies human verdicts to cross-group pairs. Labels matching no cross-group
/// pair are returned as rejects.
pub fn apply_human_labels(
    pairs: &[PairRecord],
    labels: &[(ImageRef, ImageRef, bool)],
) -> (Vec<PairRecord>, Vec<Reject>) {
    let mut verdicts: HashMap<(ImageRef, ImageRef), bool> = HashMap::new();
    for (a, b, v) in labels {
        verdicts.insert(pair_key(a, b), *v);
    }
    let mut used: HashMap<(ImageRef, ImageRef), bool> =
        verdicts.keys().map(|k| (k.clone(), false)).collect();
    let out = pairs
        .iter()
        .map(|p| {
            let key = p.key();
            match verdicts.get(&key) {
                Some(&v) if p.provenance == Provenance::CrossGroup => {
                    used.insert(key, true);
                    PairRecord {
                        consistent: v,
                        provenance: Provenance::HumanLabeled,
                        ..p.clone()
                    }
                }
                _ => p.clone(),
            }
        })
        .collect();
    let mut rejects: Vec<Reject> = used
        .into_iter()
        .filter(|(_, u)| !u)
        .map(|((a, b), _)| Reject::new(format!("{a}\t{b}"), "label references unknown pair"))
        .collect();
    rejects.sort_by(|a, b| a.item.cmp(&b.item));
    (out, rejects)
}

/// Manifest text: `ref_a <TAB> ref_b <TAB> consistent <TAB> provenance <TAB> seed` per line.
pub fn manifest_to_string(pairs: &[PairRecord], seed: u64) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{}\t{}\t{}\t{}\t{}\n",
                p.ref_a, p.ref_b, p.consistent, p.provenance, seed
            )
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("pair manifest line {}", n + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(loc, "expected 5 tab-separated fields"));
        }
        out.push(PairRecord {
            ref_a: cols[0].parse()?,
            ref_b: cols[1].parse()?,
            consistent: cols[2]
                .parse()
                .map_err(|_| Error::parse(&loc, "consistent flag"))?,
            provenance: cols[3].parse()?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, pairs: &[PairRecord], seed: u64) -> Result<()> {
    std::fs::write(path, manifest_to_string(pairs, seed)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// One generator input: label map `x` of target `z`, exemplar `I` with `F(I)`.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub x: Arc<LabelMap>,
    pub z: Arc<Image>,
    pub exemplar: Arc<Image>,
    pub exemplar_labels: Arc<LabelMap>,
    pub style_consistent: bool,
    pub z_ref: ImageRef,
    pub exemplar_ref: ImageRef,
}

impl TrainingSample {
    /// Exchanges the roles of target and exemplar.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.exemplar_labels.clone(),
            z: self.exemplar.clone(),
            exemplar: self.z.clone(),
            exemplar_labels: self.x.clone(),
            style_consistent: self.style_consistent,
            z_ref: self.exemplar_ref.clone(),
            exemplar_ref: self.z_ref.clone(),
        }
    }
}

/// Builds samples with `z`, `x = F(z)` from `ref_a` and the exemplar from
/// `ref_b`. Each label map keeps at most `guidance_per_label` exemplars per
/// pool (consistent / inconsistent), in manifest order. Self-pairs and refs
/// missing from the corpus are rejected.
pub fn build_training_samples(
    corpus: &Corpus,
    pairs: &[PairRecord],
    config: &SamplerConfig,
) -> Result<(Vec<TrainingSample>, Vec<Reject>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "no pairs to build samples from"));
    }
    let mut per_label: HashMap<(ImageRef, bool), usize> = HashMap::new();
    let mut samples = Vec::new();
    let mut rejects = Vec::new();
    for p in pairs {
        if p.ref_a == p.ref_b {
            rejects.push(Reject::new(p.ref_a.to_string(), "pair of an image with itself"));
            continue;
        }
        let (Some(a), Some(b)) = (corpus.get(&p.ref_a), corpus.get(&p.ref_b)) else {
            let missing = if corpus.get(&p.ref_a).is_none() {
                &p.ref_a
            } else {
                &p.ref_b
            };
            rejects.push(Reject::new(missing.to_string(), "reference not in corpus"));
            continue;
        };
        let n = per_label.entry((p.ref_a.clone(), p.consistent)).or_default();
        if *n >= config.guidance_per_label {
            continue;
        }
        *n += 1;
        samples.push(TrainingSample {
            x: a.labels.clone(),
            z: a.image.clone(),
            exemplar: b.image.clone(),
            exemplar_labels: b.labels.clone(),
            style_consistent: p.consistent,
            z_ref: p.ref_a.clone(),
            exemplar_ref: p.ref_b.clone(),
        });
    }
    Ok((samples, rejects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusEntry;
    use crate::image::LabelKind;

    /// Corpus of blank 32x32 frames: `videos[i]` frames in video `v{i}`, group i.
    fn video_corpus(videos: &[u32]) -> Corpus {
        let img = Arc::new(Image::filled(32, 32, [0.0; 3]).unwrap());
        let lab = Arc::new(LabelMap::from_mask(32, 32, &[false; 32 * 32]).unwrap());
        let mut entries = Vec::new();
        for (v, &n) in videos.iter().enumerate() {
            for f in 0..n {
                entries.push(CorpusEntry {
                    reference: ImageRef::new(v as u32, format!("v{v}"), f),
                    image: img.clone(),
                    labels: lab.clone(),
                });
            }
        }
        Corpus::new(CorpusLayout::Video, LabelKind::ToyMask, 1, entries, vec![]).unwrap()
    }

    fn grouped_corpus(groups: &[u32]) -> Corpus {
        let img = Arc::new(Image::filled(32, 32, [0.0; 3]).unwrap());
        let lab = Arc::new(LabelMap::from_mask(32, 32, &[false; 32 * 32]).unwrap());
        let mut entries = Vec::new();
        for (g, &n) in groups.iter().enumerate() {
            for i in 0..n {
                entries.push(CorpusEntry {
                    reference: ImageRef::new(g as u32 + 1, format!("img{g}_{i}"), 0),
                    image: img.clone(),
                    labels: lab.clone(),
                });
            }
        }
        Corpus::new(CorpusLayout::Grouped, LabelKind::ToyMask, 1, entries, vec![]).unwrap()
    }

    fn cfg(window: u32, seed: u64) -> SamplerConfig {
        SamplerConfig {
            window,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn consistent_pairs_respect_window() {
        let c = video_corpus(&[30]);
        let pairs = sample_consistent_pairs(&c, &cfg(10, 1), 100).unwrap();
        assert_eq!(pairs.len(), 100);
        for p in &pairs {
            assert!(p.consistent);
            assert_eq!(p.provenance, Provenance::SameVideoWindow);
            assert!(p.satisfies_invariant(10));
        }
    }

    #[test]
    fn single_frame_video_has_no_pairs() {
        let c = video_corpus(&[1]);
        let err = sample_consistent_pairs(&c, &cfg(10, 1), 5).unwrap_err();
        assert!(matches!(err, Error::EmptyDomain(_)));
    }

    #[test]
    fn consistent_pairs_cover_enumerated_domain() {
        // Brute-force oracle: unordered pairs (i, j), i < j, j - i <= 2, over 5 frames.
        let oracle: Vec<(u32, u32)> = (0..5u32)
            .flat_map(|i| (0..5u32).map(move |j| (i, j)))
            .filter(|(i, j)| i < j && j - i <= 2)
            .collect();
        assert_eq!(oracle.len(), 7);
        let c = video_corpus(&[5]);
        let pairs = sample_consistent_pairs(&c, &cfg(2, 3), 7_000).unwrap();
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for p in &pairs {
            let (a, b) = (p.ref_a.frame.min(p.ref_b.frame), p.ref_a.frame.max(p.ref_b.frame));
            assert!(oracle.contains(&(a, b)), "{a},{b}");
            *counts.entry((a, b)).or_default() += 1;
        }
        assert_eq!(counts.len(), 7);
        // Uniform: each ~1000; 5 sigma ~ 150.
        for (&k, &n) in &counts {
            assert!((850..1150).contains(&n), "{k:?} {n}");
        }
    }

    #[test]
    fn grouped_consistent_pairs_stay_in_group() {
        let c = grouped_corpus(&[4, 1, 6]);
        let pairs = sample_consistent_pairs(&c, &cfg(10, 2), 500).unwrap();
        for p in &pairs {
            assert_eq!(p.provenance, Provenance::SameGroup);
            assert_eq!(p.ref_a.group, p.ref_b.group);
            assert_ne!(p.ref_a, p.ref_b);
        }
        assert!(sample_consistent_pairs(&grouped_corpus(&[1, 1]), &cfg(10, 2), 1).is_err());
    }

    #[test]
    fn inconsistent_pairs_cross_groups() {
        let c = grouped_corpus(&[3, 3]);
        for p in sample_inconsistent_pairs(&c, &cfg(10, 5), 200).unwrap() {
            assert!(!p.consistent);
            assert_eq!(p.provenance, Provenance::CrossGroup);
            assert_ne!(p.ref_a.group, p.ref_b.group);
        }
        let street = grouped_corpus(&[5; 13]);
        for p in sample_inconsistent_pairs(&street, &cfg(10, 5), 2_000).unwrap() {
            assert_ne!(p.ref_a.group, p.ref_b.group);
        }
        assert!(matches!(
            sample_inconsistent_pairs(&video_corpus(&[10]), &cfg(10, 1), 1),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn inconsistent_video_pairings_match_product_weights() {
        // Unordered video pairing (a, b) has probability n_a n_b / sum over pairings.
        let sizes = [4u32, 6, 10];
        let c = video_corpus(&sizes);
        let pairs = sample_inconsistent_pairs(&c, &cfg(10, 9), 10_000).unwrap();
        let mut counts: HashMap<(String, String), f64> = HashMap::new();
        for p in &pairs {
            assert_ne!(p.ref_a.video, p.ref_b.video);
            let (a, b) = if p.ref_a.video < p.ref_b.video {
                (p.ref_a.video.clone(), p.ref_b.video.clone())
            } else {
                (p.ref_b.video.clone(), p.ref_a.video.clone())
            };
            *counts.entry((a, b)).or_default() += 1.0;
        }
        assert_eq!(counts.len(), 3);
        let total_w = (4 * 6 + 4 * 10 + 6 * 10) as f64;
        let mut chi2 = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let expected = 10_000.0 * (sizes[i] * sizes[j]) as f64 / total_w;
            let observed = counts[&(format!("v{i}"), format!("v{j}"))];
            chi2 += (observed - expected).powi(2) / expected;
        }
        // 2 dof, p = 0.001 critical value 13.8.
        assert!(chi2 < 13.8, "chi2 {chi2}");
    }

    #[test]
    fn manifests_are_reproducible() {
        let c = video_corpus(&[12, 12, 12]);
        let run = || {
            let mut p = sample_consistent_pairs(&c, &cfg(10, 42), 300).unwrap();
            p.extend(sample_inconsistent_pairs(&c, &cfg(10, 42), 300).unwrap());
            manifest_to_string(&p, 42)
        };
        let text = run();
        assert_eq!(text, run());
        assert_eq!(parse_manifest(&text).unwrap().len(), 600);
        assert_eq!(manifest_to_string(&parse_manifest(&text).unwrap(), 42), text);
    }

    #[test]
    fn human_labels_upgrade_pairs() {
        let c = video_corpus(&[3, 3]);
        let pairs = sample_inconsistent_pairs(&c, &cfg(10, 4), 20).unwrap();
        let target = pairs[0].clone();

        let (same, rejects) = apply_human_labels(&pairs, &[]);
        assert_eq!(same, pairs);
        assert!(rejects.is_empty());

        let labels = vec![
            (target.ref_b.clone(), target.ref_a.clone(), true),
            (ImageRef::new(9, "nowhere", 0), ImageRef::new(8, "v0", 1), true),
        ];
        let (out, rejects) = apply_human_labels(&pairs, &labels);
        assert_eq!(rejects.len(), 1);
        for (o, p) in out.iter().zip(&pairs) {
            if p.key() == target.key() {
                assert!(o.consistent);
                assert_eq!(o.provenance, Provenance::HumanLabeled);
            } else {
                assert_eq!(o, p);
            }
        }
    }

    #[test]
    fn human_label_file_parsing() {
        let text = "# a\tb\tverdict\n0/v0/1\t1/v1/2\tconsistent\n0/v0/2\t1/v1/0\tinconsistent\n";
        let labels = parse_human_labels(text, "mem").unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels[0].2 && !labels[1].2);
        assert!(parse_human_labels("0/v0/1\t1/v1/2\tmaybe\n", "mem").is_err());
    }

    #[test]
    fn training_samples_orient_and_cap() {
        let c = video_corpus(&[10, 10]);
        let mut pairs = sample_consistent_pairs(&c, &cfg(10, 1), 400).unwrap();
        pairs.extend(sample_inconsistent_pairs(&c, &cfg(10, 1), 400).unwrap());
        let config = SamplerConfig {
            guidance_per_label: 3,
            ..cfg(10, 1)
        };
        let (samples, rejects) = build_training_samples(&c, &pairs, &config).unwrap();
        assert!(rejects.is_empty());
        let mut per: HashMap<(ImageRef, bool), usize> = HashMap::new();
        for s in &samples {
            assert_ne!(s.z_ref, s.exemplar_ref);
            assert_eq!(s.style_consistent, s.z_ref.video == s.exemplar_ref.video);
            *per.entry((s.z_ref.clone(), s.style_consistent)).or_default() += 1;
        }
        assert_eq!(per.len(), 40);
        assert!(per.values().all(|&n| n == 3));
    }

    #[test]
    fn training_sample_rejects() {
        let c = video_corpus(&[10]);
        let pairs = vec![
            PairRecord {
                ref_a: ImageRef::new(0, "v0", 3),
                ref_b: ImageRef::new(0, "v0", 9),
                consistent: true,
                provenance: Provenance::SameVideoWindow,
            },
            PairRecord {
                ref_a: ImageRef::new(0, "v0", 3),
                ref_b: ImageRef::new(0, "v0", 3),
                consistent: true,
                provenance: Provenance::SameVideoWindow,
            },
            PairRecord {
                ref_a: ImageRef::new(0, "v0", 3),
                ref_b: ImageRef::new(0, "ghost", 1),
                consistent: true,
                provenance: Provenance::SameVideoWindow,
            },
        ];
        let (samples, rejects) =
            build_training_samples(&c, &pairs, &SamplerConfig::default()).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(samples[0].style_consistent);
        assert_eq!(samples[0].exemplar_ref.frame, 9);
        assert_eq!(rejects.len(), 2);
        assert!(build_training_samples(&c, &[], &SamplerConfig::default()).is_err());
    }
}
