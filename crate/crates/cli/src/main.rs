use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use scgan_core::corpus::{generate_toy_corpus, ingest_frames, Corpus, IngestOptions, Labeler};
use scgan_core::eval::{evaluate, sample_triples, PatchBox};
use scgan_core::image::{Image, LabelMap};
use scgan_core::perceptual::PerceptualExtractor;
use scgan_core::sampler::{
    apply_human_labels, read_human_labels, read_manifest, sample_consistent_pairs,
    sample_inconsistent_pairs, write_manifest,
};
use scgan_core::trainer::{load_networks, synthesize, train, RunOptions, DTYPE};
use scgan_core::{Device, Error, TrainConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "scgan", version, about = "Example-guided style-consistent image synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Toy,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file; unset keys keep the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base values used when no config file is given.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Dotted override, e.g. `loss.lambda1=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic shape corpus.
    GenToy {
        #[command(flatten)]
        common: Common,
        /// Overrides `toy.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Import pre-extracted frames and labels.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Root holding `frames/<video>/<n>.png` and `labels/<video>/<n>.png`.
        #[arg(long)]
        input: PathBuf,
        /// Attribute table `id<TAB>weather<TAB>timeofday` assigning style groups.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Draw consistent and inconsistent pair manifests from the training split.
    SamplePairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Overrides `sampler.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Human verdicts that relabel cross-group pairs.
        #[arg(long)]
        human_labels: Option<PathBuf>,
    },
    /// Train G, D_R and D_SC.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed iterations.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize one image from a label map and an exemplar.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label map x (PNG).
        #[arg(long)]
        labels: PathBuf,
        /// Exemplar image I (PNG).
        #[arg(long)]
        exemplar: PathBuf,
        /// Labels F(I) of the exemplar; computed with the toy labeler when omitted.
        #[arg(long)]
        exemplar_labels: Option<PathBuf>,
    },
    /// Score a checkpoint on the held-out split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Overrides `eval.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Results ledger receiving one record line.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config_related = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::Config(_))
            )
        });
        Failure {
            code: if config_related { EXIT_CONFIG } else { EXIT_FAILURE },
            kind: if config_related { "config" } else { "runtime" },
            message: format!("{e:#}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn resolve_config(common: &Common, extra: &[String]) -> Result<TrainConfig, Failure> {
    let base = match &common.config {
        Some(path) => TrainConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => match common.preset {
            Preset::Default => TrainConfig::default(),
            Preset::Toy => TrainConfig::toy(),
        },
    };
    let overrides: Vec<&str> = common
        .overrides
        .iter()
        .chain(extra)
        .map(String::as_str)
        .collect();
    let config = base
        .with_overrides(&overrides)
        ?;
    let violations = config.validate();
    if !violations.is_empty() {
        let report: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Failure {
            code: EXIT_CONFIG,
            kind: "config",
            message: format!("invalid config: {}", report.join("; ")),
        });
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    config
        .save(&common.out.join("config.toml"))
        ?;
    Ok(config)
}

fn seed_override(key: &str, seed: Option<u64>) -> Vec<String> {
    seed.map(|s| vec![format!("{key}={}", s as i64)]).unwrap_or_default()
}

fn holdout_split(config: &TrainConfig, corpus: &Corpus) -> anyhow::Result<(Corpus, Corpus)> {
    Ok(corpus.split_at_frame(config.eval.holdout_from_frame)?)
}

fn load_or_label(path: Option<&Path>, image: &Image, config: &TrainConfig) -> anyhow::Result<LabelMap> {
    match path {
        Some(p) => Ok(LabelMap::load_png(p, config.image.label_kind, config.image.label_channels)?),
        None => Ok(Labeler::for_kind(config.image.label_kind, config.image.label_channels)
            .label(image)
            .context("exemplar labels are required for this label kind (--exemplar-labels)")?),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenToy { common, seed } => {
            let config = resolve_config(&common, &seed_override("toy.seed", seed))?;
            let toy = generate_toy_corpus(&config.toy, config.image.height, config.image.width)
                ?;
            toy.corpus.save(&common.out)?;
            log::info!("wrote {} toy images to {}", toy.corpus.len(), common.out.display());
        }
        Command::Ingest { common, input, groups } => {
            let config = resolve_config(&common, &[])?;
            let corpus = ingest_frames(
                &input,
                &IngestOptions {
                    label_kind: config.image.label_kind,
                    label_channels: config.image.label_channels,
                    group_table: groups,
                    layout: None,
                },
            )
            ?;
            corpus.save(&common.out)?;
            log::info!("ingested {} frames, {} rejects", corpus.len(), corpus.rejects.len());
        }
        Command::SamplePairs { common, corpus, seed, human_labels } => {
            let config = resolve_config(&common, &seed_override("sampler.seed", seed))?;
            let corpus = Corpus::load(&corpus)?;
            let (train_split, _) = holdout_split(&config, &corpus)?;
            let s = &config.sampler;
            let consistent = sample_consistent_pairs(&train_split, s, s.consistent_pairs)
                ?;
            let mut inconsistent = sample_inconsistent_pairs(&train_split, s, s.inconsistent_pairs)
                ?;
            if let Some(path) = human_labels {
                let labels = read_human_labels(&path)?;
                let (relabeled, rejects) = apply_human_labels(&inconsistent, &labels);
                for r in &rejects {
                    log::warn!("unmatched human label: {r}");
                }
                inconsistent = relabeled;
            }
            let all: Vec<_> = consistent.into_iter().chain(inconsistent).collect();
            write_manifest(&common.out.join("pairs.tsv"), &all, s.seed)?;
            log::info!("wrote {} pairs", all.len());
        }
        Command::Train { common, corpus, pairs, resume, stop_at, seed } => {
            let config = resolve_config(&common, &seed_override("train.seed", seed))?;
            let corpus = Corpus::load(&corpus)?;
            let (train_split, _) = holdout_split(&config, &corpus)?;
            let pairs = read_manifest(&pairs)?;
            let outcome = train(
                &config,
                &train_split,
                &pairs,
                &common.out,
                &RunOptions { resume, stop_at },
            )
            ?;
            log::info!(
                "stopped at iteration {}, checkpoint {}",
                outcome.iteration,
                outcome.checkpoint.display()
            );
        }
        Command::Infer { common, checkpoint, labels, exemplar, exemplar_labels } => {
            let config = resolve_config(&common, &[])?;
            let device = Device::Cpu;
            let nets = load_networks(&config, &checkpoint, &device)?;
            let x = LabelMap::load_png(&labels, config.image.label_kind, config.image.label_channels)
                ?;
            let exemplar = Image::load_png(&exemplar)?;
            let fi = load_or_label(exemplar_labels.as_deref(), &exemplar, &config)?;
            let y = synthesize(&nets.generator, &x, &exemplar, &fi, &device)
                ?;
            y.save_png(&common.out.join("output.png"))?;
        }
        Command::Evaluate { common, checkpoint, corpus, seed, ledger } => {
            let config = resolve_config(&common, &seed_override("eval.seed", seed))?;
            let device = Device::Cpu;
            let nets = load_networks(&config, &checkpoint, &device)?;
            let corpus = Corpus::load(&corpus)?;
            let (train_split, test_split) = holdout_split(&config, &corpus)?;
            let held_out = if test_split.is_empty() { train_split } else { test_split };
            let triples = sample_triples(&held_out, config.eval.triples, config.eval.seed)
                ?;
            let extractor = PerceptualExtractor::from_config(&config.perceptual, DTYPE, &device)
                ?;
            let labeler = Labeler::for_kind(config.image.label_kind, config.image.label_channels);
            let patch = if config.eval.patch_box.is_empty() {
                None
            } else {
                Some(PatchBox::from_slice(&config.eval.patch_box)?)
            };
            let report = evaluate(
                &triples,
                |x, i, fi| synthesize(&nets.generator, x, i, fi, &device),
                &labeler,
                &extractor,
                patch,
                &config.hash(),
            )
            ?;
            let path = common.out.join("report.txt");
            std::fs::write(&path, report.to_text())
                .with_context(|| format!("writing {}", path.display()))?;
            if let Some(l) = ledger {
                report.append_to_ledger(&l)?;
            }
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{message}", f.kind);
            ExitCode::from(f.code)
        }
    }
}
