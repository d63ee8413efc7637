use std::collections::HashMap;

use mgrl::episodes::{
    synth_dataset, DatasetManifest, Episode, Split, StageSource, Stroke, SynthConfig,
};
use mgrl::model::{param_group, ModelParams, ParamGroup};
use mgrl::training::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn dataset(dir: &TempDir) -> DatasetManifest {
    let cfg = SynthConfig {
        n_gallery: 12,
        n_episodes: 12,
        q_min: 3,
        q_max: 6,
        ..SynthConfig::default()
    };
    synth_dataset(dir.path(), &cfg).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        canvas: 32,
        batch_size: 6,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn run(m: &DatasetManifest, cfg: &TrainConfig) -> (TrainOutcome<f64>, Vec<EpochLog>) {
    let mut logs = Vec::new();
    let out = train::<f64>(m, cfg, &mut |l| logs.push(*l)).unwrap();
    (out, logs)
}

fn same_group(
    a: &ModelParams<f64>,
    b: &ModelParams<f64>,
    pick: impl Fn(Option<ParamGroup>) -> bool,
) -> bool {
    a.tensors()
        .iter()
        .filter(|(name, _)| pick(param_group(name)))
        .all(|(name, t)| b.get(name) == Some(t))
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);
    let cfg = quick(0);
    let (out, logs) = run(&m, &cfg);
    assert!(logs.is_empty());
    assert_eq!(out.checkpoint.epoch, 0);
    assert_eq!(
        out.checkpoint.params,
        ModelParams::init(&cfg.model_config(), cfg.seed)
    );
}

#[test]
fn zero_learning_rates_change_nothing() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);
    let cfg = TrainConfig {
        lr_backbone: 0.0,
        lr_new: 0.0,
        frozen_epochs: 1,
        ..quick(2)
    };
    let (out, logs) = run(&m, &cfg);
    assert_eq!(logs.len(), 2);
    assert_eq!(
        out.checkpoint.params,
        ModelParams::init(&cfg.model_config(), cfg.seed)
    );
}

#[test]
fn backbone_moves_only_in_the_second_phase() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);

    let cfg = TrainConfig {
        frozen_epochs: 5,
        ..quick(2)
    };
    let init = ModelParams::init(&cfg.model_config(), cfg.seed);
    let (frozen, logs) = run(&m, &cfg);
    assert!(logs.iter().all(|l| l.backbone_frozen));
    let p = &frozen.checkpoint.params;
    assert!(same_group(p, &init, |g| matches!(
        g,
        Some(ParamGroup::Backbone(_))
    )));
    assert!(!same_group(p, &init, |g| g == Some(ParamGroup::Projection)));
    assert!(!same_group(p, &init, |g| g == Some(ParamGroup::Adaptive)));

    let cfg = TrainConfig {
        frozen_epochs: 1,
        ..quick(2)
    };
    let (thawed, logs) = run(&m, &cfg);
    assert_eq!(
        logs.iter().map(|l| l.backbone_frozen).collect::<Vec<_>>(),
        vec![true, false]
    );
    let p = &thawed.checkpoint.params;
    let last = cfg.widths.len() - 1;
    assert!(same_group(
        p,
        &init,
        |g| matches!(g, Some(ParamGroup::Backbone(i)) if i < last)
    ));
    assert!(!same_group(p, &init, |g| g == Some(ParamGroup::Backbone(last))));
}

#[test]
fn training_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);
    let cfg = TrainConfig {
        frozen_epochs: 1,
        ..quick(2)
    };
    let (a, la) = run(&m, &cfg);
    let (b, lb) = run(&m, &cfg);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(la, lb);
    for l in &la {
        assert!(l.loss.is_finite() && l.loss >= 0.0);
        let v = l.val_mb.unwrap();
        assert!((0.0..=100.0).contains(&v));
    }
    let (c, _) = run(&m, &TrainConfig { seed: 12, ..cfg });
    assert_ne!(a.checkpoint.digest(), c.checkpoint.digest());
}

#[test]
fn episode_sum_mode_trains() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);
    let cfg = TrainConfig {
        loss: LossMode::EpisodeSum,
        ..quick(1)
    };
    let (out, logs) = run(&m, &cfg);
    assert!(logs[0].loss.is_finite());
    assert_eq!(out.checkpoint.train.loss, LossMode::EpisodeSum);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = TempDir::new().unwrap();
    let m = dataset(&dir);
    for cfg in [
        TrainConfig {
            margin: -1.0,
            ..quick(1)
        },
        TrainConfig {
            batch_size: 0,
            ..quick(1)
        },
        TrainConfig {
            canvas: 16,
            ..quick(1)
        },
        TrainConfig {
            weights: mgrl::granularity::DistanceWeights::new(1.0, -1.0, 0.0),
            ..quick(1)
        },
    ] {
        assert!(train::<f64>(&m, &cfg, &mut |_| {}).is_err());
    }
}

fn toy_episodes(qs: &[usize]) -> (Vec<Episode>, Vec<String>) {
    let stroke = Stroke::new(vec![(0.2, 0.2), (0.8, 0.8)], 2.0).unwrap();
    let gallery: Vec<String> = (0..qs.len() + 2).map(|i| format!("p{i}")).collect();
    let eps = qs
        .iter()
        .enumerate()
        .map(|(i, &q)| Episode {
            id: format!("e{i}"),
            photo_id: gallery[i].clone(),
            split: Split::Train,
            source: StageSource::Strokes(vec![stroke.clone(); q]),
        })
        .collect();
    (eps, gallery)
}

#[test]
fn sampling_is_uniform_within_three_sigma() {
    let qs = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
    let (eps, gallery) = toy_episodes(&qs);
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let batch = sample_triplets(&eps, &gallery, draws, &mut rng).unwrap();
    let mut per_episode = vec![0usize; eps.len()];
    let mut per_stage: HashMap<(usize, usize), usize> = HashMap::new();
    let mut per_negative: HashMap<String, usize> = HashMap::new();
    for t in &batch.triplets {
        per_episode[t.episode] += 1;
        *per_stage.entry((t.episode, t.stage)).or_default() += 1;
        *per_negative.entry(t.negative.clone()).or_default() += 1;
        assert_ne!(t.positive, t.negative);
        assert_eq!(t.positive, eps[t.episode].photo_id);
    }
    let within = |count: usize, n: usize, p: f64| {
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - mean).abs() <= 3.0 * sigma
    };
    for (e, &c) in per_episode.iter().enumerate() {
        assert!(within(c, draws, 0.1), "episode {e}: {c}");
        for s in 1..=qs[e] {
            let k = per_stage.get(&(e, s)).copied().unwrap_or(0);
            assert!(
                within(k, c, 1.0 / qs[e] as f64),
                "episode {e} stage {s}: {k} of {c}"
            );
        }
    }
    // Each photo is a negative for every episode but its own.
    let n = gallery.len() as f64;
    for (i, id) in gallery.iter().enumerate() {
        let owners = if i < eps.len() { 1.0 } else { 0.0 };
        let p = (eps.len() as f64 - owners) / eps.len() as f64 / (n - 1.0);
        let c = per_negative.get(id).copied().unwrap_or(0);
        assert!(within(c, draws, p), "negative {id}: {c}");
    }
}

proptest! {
    #[test]
    fn hinge_is_bounded_by_margin_and_gap(pos in 0.0f64..10.0, neg in 0.0f64..10.0, margin in 0.01f64..2.0) {
        let h = triplet_hinge(pos, neg, margin);
        prop_assert!(h >= 0.0);
        prop_assert!(h >= pos - neg + margin - 1e-12);
        prop_assert!(h <= (pos - neg + margin).max(0.0) + 1e-12);
        if neg >= pos + margin {
            prop_assert_eq!(h, 0.0);
        }
    }

    #[test]
    fn triplet_loss_is_zero_once_the_negative_is_far(seed in any::<u64>(), shift in 0.0f64..4.0) {
        use mgrl::granularity::{ActiveMask, DistanceWeights, MGEmbedding, REGION_COUNT};
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 3;
        let mut v = || (0..REGION_COUNT * dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let sketch = MGEmbedding::new(dim, v(), ActiveMask::full());
        let positive = MGEmbedding::new(dim, v(), ActiveMask::full());
        let w = DistanceWeights::default();
        // Move the negative away along one axis of every region.
        let far: Vec<f64> = sketch.values().iter().enumerate().map(|(i, x)| if i % dim == 0 { x + 10.0 + shift } else { *x }).collect();
        let negative = MGEmbedding::new(dim, far, ActiveMask::full());
        prop_assert_eq!(triplet_loss(&sketch, &positive, &negative, &w, 0.3).unwrap(), 0.0);
        // Swapping roles makes the loss at least the margin.
        let swapped = triplet_loss(&sketch, &negative, &positive, &w, 0.3).unwrap();
        prop_assert!(swapped >= 0.3);
    }
}
