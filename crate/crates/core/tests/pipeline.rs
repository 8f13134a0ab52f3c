use candle_core::{Device, Tensor};

use scgan_core::config::PhaseSchedule;
use scgan_core::corpus::{generate_toy_corpus, Corpus};
use scgan_core::losses::total_generator_loss;
use scgan_core::sampler::{sample_consistent_pairs, sample_inconsistent_pairs, PairRecord};
use scgan_core::trainer::{train, RunOptions, Trainer};
use scgan_core::{Error, TrainConfig};

fn small_config(schedule: PhaseSchedule) -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.image.height = 32;
    c.image.width = 32;
    c.toy.n_images_per_style = 12;
    c.eval.holdout_from_frame = 10;
    c.sampler.consistent_pairs = 60;
    c.sampler.inconsistent_pairs = 60;
    c.schedule = schedule;
    c.train.checkpoint_every = 2;
    c.train.grid_every = 2;
    c
}

fn fixture(config: &TrainConfig) -> (Corpus, Vec<PairRecord>) {
    let toy = generate_toy_corpus(&config.toy, config.image.height, config.image.width).unwrap();
    let (train_split, _) = toy.corpus.split_at_frame(config.eval.holdout_from_frame).unwrap();
    let s = &config.sampler;
    let pairs = sample_consistent_pairs(&train_split, s, s.consistent_pairs)
        .unwrap()
        .into_iter()
        .chain(sample_inconsistent_pairs(&train_split, s, s.inconsistent_pairs).unwrap())
        .collect();
    (train_split, pairs)
}

fn snapshot(t: &Trainer, prefix: &str) -> Vec<Tensor> {
    t.networks()
        .store
        .named()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(_, v)| v.as_tensor().copy().unwrap())
        .collect()
}

fn max_diff(a: &[Tensor], b: &[Tensor]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
        })
        .fold(0.0, f32::max)
}

fn schedule(n_warmup: u64, n_scadv: u64, n_decay: u64) -> PhaseSchedule {
    PhaseSchedule { n_warmup, n_scadv, n_decay, base_lr: 2e-4 }
}

#[test]
fn warmup_leaves_pair_discriminator_untouched() {
    let config = small_config(schedule(2, 1, 1));
    let (corpus, pairs) = fixture(&config);
    let mut t = Trainer::from_corpus(config, &corpus, &pairs, &Device::Cpu).unwrap();
    let (g0, dr0, dsc0) = (snapshot(&t, "g."), snapshot(&t, "dr."), snapshot(&t, "dsc."));
    for _ in 0..2 {
        let r = t.step().unwrap();
        assert_eq!(r.d_style, 0.0);
        assert_eq!(r.g_style, 0.0);
    }
    assert_eq!(max_diff(&dsc0, &snapshot(&t, "dsc.")), 0.0);
    assert!(max_diff(&dr0, &snapshot(&t, "dr.")) > 0.0);
    assert!(max_diff(&g0, &snapshot(&t, "g.")) > 0.0);

    let r = t.step().unwrap();
    assert!(r.d_style > 0.0);
    assert!(max_diff(&dsc0, &snapshot(&t, "dsc.")) > 0.0);
}

#[test]
fn steps_follow_the_schedule_and_stop_at_its_end() {
    let config = small_config(schedule(1, 1, 2));
    let (corpus, pairs) = fixture(&config);
    let mut t = Trainer::from_corpus(config, &corpus, &pairs, &Device::Cpu).unwrap();
    let lrs: Vec<f64> = (0..4).map(|_| t.step().unwrap().lr).collect();
    assert_eq!(lrs, [2e-4, 2e-4, 2e-4, 1e-4]);
    let before = snapshot(&t, "");
    assert!(matches!(t.step(), Err(Error::OutOfSchedule { .. })));
    assert_eq!(t.iteration(), 4);
    assert_eq!(max_diff(&before, &snapshot(&t, "")), 0.0);
}

#[test]
fn logged_total_recombines_from_parts() {
    let mut config = small_config(schedule(1, 2, 1));
    config.loss.lambda_fm = 0.5;
    let (corpus, pairs) = fixture(&config);
    let weights = config.loss;
    let mut t = Trainer::from_corpus(config, &corpus, &pairs, &Device::Cpu).unwrap();
    for _ in 0..4 {
        let r = t.step().unwrap();
        let recombined = total_generator_loss(&r.parts(), &weights);
        assert!((recombined - r.g_total).abs() <= 1e-9 * r.g_total.abs().max(1.0));
        assert!(r.g_feature_matching > 0.0);
    }
}

#[test]
fn missing_inconsistent_pairs_is_a_config_error() {
    let config = small_config(schedule(1, 1, 1));
    let (corpus, pairs) = fixture(&config);
    let consistent_only: Vec<_> = pairs.into_iter().filter(|p| p.consistent).collect();
    let result = Trainer::from_corpus(config.clone(), &corpus, &consistent_only, &Device::Cpu);
    assert!(matches!(result, Err(Error::Config(_))));

    // Without the style term there is nothing for the pair discriminator to do.
    let mut no_style = config;
    no_style.loss.scadv_enabled = false;
    assert!(Trainer::from_corpus(no_style, &corpus, &consistent_only, &Device::Cpu).is_ok());
}

#[test]
fn perceptual_extractor_stays_frozen() {
    let config = small_config(schedule(1, 1, 1));
    let (corpus, pairs) = fixture(&config);
    let mut t = Trainer::from_corpus(config, &corpus, &pairs, &Device::Cpu).unwrap();
    let before: Vec<Tensor> = t.extractor().named_weights().into_iter().map(|(_, w)| w.copy().unwrap()).collect();
    for _ in 0..3 {
        t.step().unwrap();
    }
    let after: Vec<Tensor> = t.extractor().named_weights().into_iter().map(|(_, w)| w).collect();
    assert_eq!(max_diff(&before, &after), 0.0);
}

#[test]
fn train_writes_run_artifacts() {
    let config = small_config(schedule(1, 2, 2));
    let (corpus, pairs) = fixture(&config);
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&config, &corpus, &pairs, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(outcome.iteration, 5);
    assert_eq!(outcome.records.len(), 5);
    assert_eq!(outcome.checkpoint, dir.path().join("final.ckpt"));
    for f in ["config.toml", "losses.csv", "final.ckpt", "iter_000002.ckpt", "iter_000004.ckpt", "grids/iter_000002.png"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let saved = TrainConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved.hash(), config.hash());
}
