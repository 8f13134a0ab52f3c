//! Three-phase training loop, checkpointing and inference.
//!
//! Per-step randomness comes from a ChaCha stream selected by the iteration
//! index, so a run resumed from a checkpoint replays the exact sample order
//! without storing sampler state.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{PhaseSchedule, TrainConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::losses::{
    adaptive_semantic_loss, feature_matching_loss, lsgan_d_loss, lsgan_g_loss, style_adv_losses,
    total_generator_loss, total_generator_loss_tensor, value, GeneratorLossParts,
};
use crate::networks::{pair_input, Generator, Networks, Track};
use crate::optim::Adam;
use crate::perceptual::PerceptualExtractor;
use crate::sampler::{build_training_samples, PairRecord, TrainingSample};

pub const DTYPE: DType = DType::F32;

/// Learning rate after `iteration` completed steps: constant through the first
/// two phases, then linear to zero at `total()`.
pub fn lr_at(schedule: &PhaseSchedule, iteration: u64) -> Result<f64> {
    let total = schedule.total();
    if iteration > total {
        return Err(Error::OutOfSchedule { iteration, total });
    }
    let decay_start = schedule.n_warmup + schedule.n_scadv;
    if iteration <= decay_start {
        return Ok(schedule.base_lr);
    }
    let remaining = (total - iteration) as f64;
    Ok(schedule.base_lr * (remaining / schedule.n_decay as f64))
}

pub fn scadv_enabled_at(schedule: &PhaseSchedule, iteration: u64) -> bool {
    iteration >= schedule.n_warmup
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    StyleAdversarial,
    Decay,
}

pub fn phase_at(schedule: &PhaseSchedule, iteration: u64) -> Phase {
    if iteration < schedule.n_warmup {
        Phase::Warmup
    } else if iteration < schedule.n_warmup + schedule.n_scadv {
        Phase::StyleAdversarial
    } else {
        Phase::Decay
    }
}

/// Losses of one step; inactive components are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub d_real: f64,
    pub d_style: f64,
    pub g_standard: f64,
    pub g_style: f64,
    pub g_semantic: f64,
    pub g_feature_matching: f64,
    pub g_total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iter,lr,d_r,d_sc,g_std,g_style,g_semantic,g_fm,g_total";

    pub fn parts(&self) -> GeneratorLossParts<f64> {
        GeneratorLossParts {
            standard: self.g_standard,
            style: self.g_style,
            semantic: self.g_semantic,
            feature_matching: self.g_feature_matching,
        }
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.iteration,
            self.lr,
            self.d_real,
            self.d_style,
            self.g_standard,
            self.g_style,
            self.g_semantic,
            self.g_feature_matching,
            self.g_total
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 9 {
            return Err(Error::parse("loss record", format!("expected 9 fields in `{line}`")));
        }
        let iteration = fields[0]
            .parse()
            .map_err(|_| Error::parse("loss record", format!("bad iteration `{}`", fields[0])))?;
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse("loss record", format!("bad number `{}`", fields[i])))
        };
        Ok(Self {
            iteration,
            lr: f(1)?,
            d_real: f(2)?,
            d_style: f(3)?,
            g_standard: f(4)?,
            g_style: f(5)?,
            g_semantic: f(6)?,
            g_feature_matching: f(7)?,
            g_total: f(8)?,
        })
    }
}

/// Samples split by style consistency.
#[derive(Debug, Clone, Default)]
pub struct SamplePools {
    pub consistent: Vec<TrainingSample>,
    pub inconsistent: Vec<TrainingSample>,
}

impl SamplePools {
    pub fn from_samples(samples: Vec<TrainingSample>) -> Self {
        let (consistent, inconsistent) = samples.into_iter().partition(|s| s.style_consistent);
        Self {
            consistent,
            inconsistent,
        }
    }

    pub fn len(&self) -> usize {
        self.consistent.len() + self.inconsistent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Batch {
    x: Tensor,
    z: Tensor,
    exemplar: Tensor,
    exemplar_labels: Tensor,
    consistent: Vec<bool>,
}

fn stack<T>(items: &[T], f: impl Fn(&T) -> Result<Tensor>) -> Result<Tensor> {
    let ts = items.iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

fn build_batch(samples: &[TrainingSample], device: &Device) -> Result<Batch> {
    Ok(Batch {
        x: stack(samples, |s| s.x.to_tensor(DTYPE, device))?,
        z: stack(samples, |s| s.z.to_tensor(DTYPE, device))?,
        exemplar: stack(samples, |s| s.exemplar.to_tensor(DTYPE, device))?,
        exemplar_labels: stack(samples, |s| s.exemplar_labels.to_tensor(DTYPE, device))?,
        consistent: samples.iter().map(|s| s.style_consistent).collect(),
    })
}

/// Runs the generator once on a single input without tracking gradients.
pub fn synthesize(
    generator: &Generator,
    x: &LabelMap,
    exemplar: &Image,
    exemplar_labels: &LabelMap,
    device: &Device,
) -> Result<Image> {
    let (y, _) = generator.forward_traced(
        &x.to_tensor(DTYPE, device)?,
        &exemplar.to_tensor(DTYPE, device)?,
        &exemplar_labels.to_tensor(DTYPE, device)?,
        Track::Frozen,
    )?;
    Image::from_tensor(&y.detach())
}

/// Networks restored from a checkpoint for inference. The checkpoint must
/// carry the hash of `config`.
pub fn load_networks(config: &TrainConfig, checkpoint: &Path, device: &Device) -> Result<Networks> {
    let ckpt = Checkpoint::read(checkpoint, device)?;
    let expected = config.hash();
    if ckpt.config_hash != expected {
        return Err(Error::Config(format!(
            "checkpoint config hash {} does not match config hash {expected}",
            ckpt.config_hash
        )));
    }
    let nets = Networks::build(config, DTYPE, device)?;
    let tensors: HashMap<String, Tensor> = ckpt.tensors.into_iter().collect();
    nets.store.assign(&tensors)?;
    Ok(nets)
}

pub struct Trainer {
    config: TrainConfig,
    config_hash: String,
    device: Device,
    nets: Networks,
    extractor: PerceptualExtractor,
    opt_g: Adam,
    opt_dr: Adam,
    opt_dsc: Adam,
    iteration: u64,
    pools: SamplePools,
}

impl Trainer {
    pub fn new(config: TrainConfig, pools: SamplePools, device: &Device) -> Result<Self> {
        let violations = config.validate();
        if !violations.is_empty() {
            let report: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::Config(report.join("; ")));
        }
        if pools.consistent.is_empty() && pools.inconsistent.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        if pools.inconsistent.is_empty()
            && config.loss.scadv_enabled
            && config.schedule.total() > config.schedule.n_warmup
        {
            return Err(Error::Config(
                "no style-inconsistent pairs: the pair discriminator cannot train after warmup".into(),
            ));
        }
        if pools.consistent.is_empty()
            && config.loss.scadv_enabled
            && config.schedule.total() > config.schedule.n_warmup
        {
            return Err(Error::Config(
                "no style-consistent pairs: the pair discriminator cannot train after warmup".into(),
            ));
        }
        let nets = Networks::build(&config, DTYPE, device)?;
        nets.init_weights(config.train.seed)?;
        let extractor = PerceptualExtractor::from_config(&config.perceptual, DTYPE, device)?;
        let (b1, b2) = (config.train.beta1, config.train.beta2);
        let opt_g = Adam::new("adam.g", nets.store.with_prefix("g."), b1, b2)?;
        let opt_dr = Adam::new("adam.dr", nets.store.with_prefix("dr."), b1, b2)?;
        let opt_dsc = Adam::new("adam.dsc", nets.store.with_prefix("dsc."), b1, b2)?;
        Ok(Self {
            config_hash: config.hash(),
            config,
            device: device.clone(),
            nets,
            extractor,
            opt_g,
            opt_dr,
            opt_dsc,
            iteration: 0,
            pools,
        })
    }

    pub fn from_corpus(config: TrainConfig, corpus: &Corpus, pairs: &[PairRecord], device: &Device) -> Result<Self> {
        let (samples, rejects) = build_training_samples(corpus, pairs, &config.sampler)?;
        for r in &rejects {
            log::warn!("skipped pair: {r}");
        }
        Self::new(config, SamplePools::from_samples(samples), device)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn extractor(&self) -> &PerceptualExtractor {
        &self.extractor
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn pools(&self) -> &SamplePools {
        &self.pools
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed);
        rng.set_stream(self.iteration);
        rng
    }

    fn draw(pool: &[TrainingSample], rng: &mut ChaCha8Rng) -> TrainingSample {
        let s = &pool[rng.random_range(0..pool.len())];
        if rng.random_bool(0.5) {
            s.swapped()
        } else {
            s.clone()
        }
    }

    /// Generator batch: samples alternate between the consistent and
    /// inconsistent pools across the run.
    fn generator_samples(&self, rng: &mut ChaCha8Rng) -> Vec<TrainingSample> {
        let b = self.config.train.batch_size as u64;
        (0..b)
            .map(|i| {
                let want_consistent = (self.iteration * b + i).is_multiple_of(2);
                let pool = match (want_consistent, self.pools.consistent.is_empty(), self.pools.inconsistent.is_empty()) {
                    (true, false, _) | (false, false, true) => &self.pools.consistent,
                    _ => &self.pools.inconsistent,
                };
                Self::draw(pool, rng)
            })
            .collect()
    }

    /// One D_R update, one D_SC update when the style term is active, one G update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let schedule = self.config.schedule;
        let lr = lr_at(&schedule, self.iteration)?;
        if self.iteration >= schedule.total() {
            return Err(Error::OutOfSchedule {
                iteration: self.iteration,
                total: schedule.total(),
            });
        }
        let scadv = self.config.loss.scadv_enabled && scadv_enabled_at(&schedule, self.iteration);
        let mut rng = self.step_rng();
        let samples = self.generator_samples(&mut rng);
        let batch = build_batch(&samples, &self.device)?;
        let b = samples.len();
        let style_pairs = if scadv {
            let c: Vec<_> = (0..b).map(|_| Self::draw(&self.pools.consistent, &mut rng)).collect();
            let n: Vec<_> = (0..b).map(|_| Self::draw(&self.pools.inconsistent, &mut rng)).collect();
            Some((
                (stack(&c, |s| s.z.to_tensor(DTYPE, &self.device))?, stack(&c, |s| s.exemplar.to_tensor(DTYPE, &self.device))?),
                (stack(&n, |s| s.z.to_tensor(DTYPE, &self.device))?, stack(&n, |s| s.exemplar.to_tensor(DTYPE, &self.device))?),
            ))
        } else {
            None
        };

        let fake = self
            .nets
            .generator
            .forward(&batch.x, &batch.exemplar, &batch.exemplar_labels)?;

        // D_R: (x, z) real, (x, fake) fake.
        let real_in = pair_input(&batch.x, &batch.z)?;
        let fake_in = pair_input(&batch.x, &fake)?;
        let (real_scores, real_feats) = self.nets.d_real.forward_features(&real_in, Track::Params)?;
        let (fake_scores, _) = self.nets.d_real.forward_features(&fake_in.detach(), Track::Params)?;
        let d_r = lsgan_d_loss(&real_scores, &fake_scores)?;
        let d_real = value(&d_r, "D_R loss")?;
        let grads = d_r.backward()?;
        self.opt_dr.step(&grads, lr)?;
        drop(real_feats);

        // D_SC, and the generator's pair term computed against the updated D_SC.
        let mut d_style = 0.0;
        let mut g_style_t = None;
        if let Some(((c1, c2), (n1, n2))) = &style_pairs {
            let (d_sc, g_sc) = style_adv_losses(
                &self.nets.d_style,
                Some((c1, c2)),
                Some((n1, n2)),
                &batch.exemplar,
                &fake,
            )?;
            d_style = value(&d_sc, "D_SC loss")?;
            let grads = d_sc.backward()?;
            self.opt_dsc.step(&grads, lr)?;
            drop(g_sc);
            let scores = self
                .nets
                .d_style
                .forward_features(&pair_input(&batch.exemplar, &fake)?, Track::Frozen)?
                .0;
            g_style_t = Some(lsgan_g_loss(&scores)?);
        }

        // G.
        let (fake_scores, fake_feats) = self.nets.d_real.forward_features(&fake_in, Track::Frozen)?;
        let g_std_t = lsgan_g_loss(&fake_scores)?;
        let mut semantic_terms = Vec::with_capacity(b);
        for i in 0..b {
            semantic_terms.push(adaptive_semantic_loss(
                &self.extractor,
                &batch.z.narrow(0, i, 1)?,
                &fake.narrow(0, i, 1)?,
                batch.consistent[i],
            )?);
        }
        let g_sem_t = (Tensor::stack(&semantic_terms, 0)?.sum_all()? / b as f64)?;
        let g_fm_t = if self.config.loss.lambda_fm > 0.0 {
            let (_, real_feats) = self.nets.d_real.forward_features(&real_in, Track::Frozen)?;
            Some(feature_matching_loss(&real_feats, &fake_feats)?)
        } else {
            None
        };
        let mut weights = self.config.loss;
        weights.scadv_enabled = scadv;
        let parts_t = GeneratorLossParts {
            standard: Some(g_std_t),
            style: g_style_t,
            semantic: Some(g_sem_t),
            feature_matching: g_fm_t,
        };
        let read = |t: &Option<Tensor>, what: &str| -> Result<f64> {
            t.as_ref().map_or(Ok(0.0), |t| value(t, what))
        };
        let parts = GeneratorLossParts {
            standard: read(&parts_t.standard, "G standard loss")?,
            style: read(&parts_t.style, "G style loss")?,
            semantic: read(&parts_t.semantic, "G semantic loss")?,
            feature_matching: read(&parts_t.feature_matching, "G feature-matching loss")?,
        };
        let g_total_t = total_generator_loss_tensor(&parts_t, &weights)?;
        value(&g_total_t, "G total loss")?;
        let grads = g_total_t.backward()?;
        self.opt_g.step(&grads, lr)?;

        let record = LossRecord {
            iteration: self.iteration,
            lr,
            d_real,
            d_style,
            g_standard: parts.standard,
            g_style: parts.style,
            g_semantic: parts.semantic,
            g_feature_matching: parts.feature_matching,
            g_total: total_generator_loss(&parts, &weights),
        };
        self.iteration += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: Vec<(String, Tensor)> = self
            .nets
            .store
            .named()
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        let mut counters = Vec::new();
        for opt in [&self.opt_g, &self.opt_dr, &self.opt_dsc] {
            tensors.extend(opt.state_tensors());
            counters.push((opt.counter_name(), opt.steps()));
        }
        Ok(Checkpoint {
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            seed: self.config.train.seed,
            counters,
            tensors,
        })
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.config_hash != self.config_hash {
            return Err(Error::Config(format!(
                "checkpoint config hash {} does not match config hash {}",
                ckpt.config_hash, self.config_hash
            )));
        }
        if ckpt.seed != self.config.train.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                ckpt.seed, self.config.train.seed
            )));
        }
        let tensors: HashMap<String, Tensor> = ckpt.tensors.iter().cloned().collect();
        self.nets.store.assign(&tensors)?;
        for opt in [&mut self.opt_g, &mut self.opt_dr, &mut self.opt_dsc] {
            let name = opt.counter_name();
            let steps = ckpt
                .counter(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing counter {name}")))?;
            opt.load_state(steps, &tensors)?;
        }
        self.iteration = ckpt.iteration;
        Ok(())
    }

    /// Fixed probe samples: the first inconsistent samples, topped up with consistent ones.
    pub fn probes(&self) -> Vec<&TrainingSample> {
        self.pools
            .inconsistent
            .iter()
            .chain(&self.pools.consistent)
            .take(self.config.train.probe_samples)
            .collect()
    }

    /// Rows of `(x, I, G(x, I, F(I)), z)` for the probe set.
    pub fn render_grid(&self) -> Result<Image> {
        let probes = self.probes();
        let (h, w) = (self.config.image.height, self.config.image.width);
        let cols = 4;
        let mut data = vec![0f32; probes.len() * h * cols * w * 3];
        for (row, s) in probes.iter().enumerate() {
            let out = synthesize(&self.nets.generator, &s.x, &s.exemplar, &s.exemplar_labels, &self.device)?;
            let tiles = [s.x.visualize(), s.exemplar.data().to_vec(), out.data().to_vec(), s.z.data().to_vec()];
            for (col, tile) in tiles.iter().enumerate() {
                for y in 0..h {
                    let dst = ((row * h + y) * cols * w + col * w) * 3;
                    data[dst..dst + w * 3].copy_from_slice(&tile[y * w * 3..(y + 1) * w * 3]);
                }
            }
        }
        Image::new(probes.len() * h, cols * w, data)
    }
}

/// Options for [`train`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) once this many iterations are complete.
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iteration: u64,
    pub checkpoint: PathBuf,
    pub records: Vec<LossRecord>,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("iter_{iteration:06}.ckpt"))
}

fn rewrite_log(path: &Path, keep_below: u64) -> Result<()> {
    let mut lines = vec![LossRecord::CSV_HEADER.to_string()];
    if let Ok(text) = std::fs::read_to_string(path) {
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            if LossRecord::from_csv(line)?.iteration < keep_below {
                lines.push(line.to_string());
            }
        }
    }
    std::fs::write(path, lines.join("\n") + "\n").map_err(|e| Error::io(path, e))
}

/// Trains from scratch or from `options.resume`, writing into `out_dir`:
/// `config.toml`, `losses.csv`, `iter_NNNNNN.ckpt`, `final.ckpt` and `grids/`.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    pairs: &[PairRecord],
    out_dir: &Path,
    options: &RunOptions,
) -> Result<TrainOutcome> {
    let device = Device::Cpu;
    std::fs::create_dir_all(out_dir.join("grids")).map_err(|e| Error::io(out_dir, e))?;
    config.save(&out_dir.join("config.toml"))?;
    let mut trainer = Trainer::from_corpus(config.clone(), corpus, pairs, &device)?;
    if let Some(path) = &options.resume {
        trainer.restore(&Checkpoint::read(path, &device)?)?;
        log::info!("resumed at iteration {}", trainer.iteration());
    }
    let log_path = out_dir.join("losses.csv");
    rewrite_log(&log_path, trainer.iteration())?;
    let mut log_file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let total = config.schedule.total();
    let stop = options.stop_at.unwrap_or(total).min(total);
    let mut records = Vec::new();
    let started = std::time::Instant::now();
    while trainer.iteration() < stop {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => {
                let snap = out_dir.join("diverged.ckpt");
                trainer.checkpoint()?.write(&snap)?;
                return Err(Error::Diverged {
                    iteration: trainer.iteration(),
                    detail: format!("{what}; snapshot at {}", snap.display()),
                });
            }
            Err(e) => return Err(e),
        };
        writeln!(log_file, "{}", record.to_csv()).map_err(|e| Error::io(&log_path, e))?;
        records.push(record);
        let n = trainer.iteration();
        if n % config.train.checkpoint_every == 0 {
            trainer.checkpoint()?.write(&checkpoint_path(out_dir, n))?;
        }
        if n % config.train.grid_every == 0 {
            trainer
                .render_grid()?
                .save_png(&out_dir.join("grids").join(format!("iter_{n:06}.png")))?;
        }
        if n % 100 == 0 {
            log::info!(
                "iter {n}/{total} lr {:.3e} d_r {:.4} d_sc {:.4} g {:.4} ({:.1}s)",
                record.lr,
                record.d_real,
                record.d_style,
                record.g_total,
                started.elapsed().as_secs_f64()
            );
        }
    }
    let n = trainer.iteration();
    let path = if n == total {
        out_dir.join("final.ckpt")
    } else {
        checkpoint_path(out_dir, n)
    };
    trainer.checkpoint()?.write(&path)?;
    Ok(TrainOutcome {
        iteration: n,
        checkpoint: path,
        records,
    })
}
