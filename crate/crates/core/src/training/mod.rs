//! Triplet training of the embedding network.
//!
//! Every sample pairs one stage of a drawing episode with its photo and a
//! random other photo. Training runs in two phases: first the backbone is
//! frozen and only the new modules learn, then the last backbone stage
//! joins at its own learning rate.

mod checkpoint;
mod loss;
mod trainer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{Episode, EpisodeError};
use crate::granularity::{DistanceWeights, GranularityError, DEFAULT_TAU};
use crate::model::{AttentionKind, ModelConfig, ModelError};
use crate::numerics::NumericsError;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    episode_loss_node, mg_distance_node, triplet_hinge, triplet_loss, triplet_loss_node,
};
pub use trainer::{train, EpochLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {split} gallery has {photos} photo(s); triplets need at least 2")]
    GalleryTooSmall { split: String, photos: usize },
    #[error("no training episodes")]
    NoEpisodes,
    #[error("episode `{episode}` references photo `{photo}` outside the gallery")]
    UnknownPhoto { episode: String, photo: String },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Granularity(#[from] GranularityError),
}

/// How stage losses of one episode combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Hinge per sampled stage, averaged over the batch.
    #[default]
    PerStage,
    /// One hinge over the sum of all stage margins of an episode.
    EpisodeSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_backbone: f64,
    pub lr_new: f64,
    pub dim: usize,
    pub weights: DistanceWeights,
    pub tau: f64,
    /// Leading epochs with the whole backbone frozen.
    pub frozen_epochs: usize,
    pub seed: u64,
    /// Side length images are resampled to before embedding.
    pub canvas: usize,
    pub widths: Vec<usize>,
    pub attention: AttentionKind,
    pub loss: LossMode,
    /// Optimizer steps per epoch; by default enough batches to cover
    /// every training episode once.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            margin: 0.3,
            batch_size: 32,
            epochs: 20,
            lr_backbone: 5e-4,
            lr_new: 5e-3,
            dim: model.dim,
            weights: DistanceWeights::default(),
            tau: DEFAULT_TAU,
            frozen_epochs: 5,
            seed: 0,
            canvas: model.canvas,
            widths: model.widths,
            attention: model.attention,
            loss: LossMode::PerStage,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            widths: self.widths.clone(),
            dim: self.dim,
            canvas: self.canvas,
            attention: self.attention,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        // Zero rates are accepted so a run can be made a no-op.
        if !(self.lr_backbone >= 0.0
            && self.lr_new >= 0.0
            && self.lr_backbone.is_finite()
            && self.lr_new.is_finite())
        {
            return bad("learning rates must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps per epoch must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        self.weights.validate()?;
        self.model_config().validate()?;
        Ok(())
    }
}

/// One sampled training example. `episode` indexes the episode slice the
/// batch was drawn from; `stage` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub episode: usize,
    pub episode_id: String,
    pub stage: usize,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

/// Draws `batch_size` triplets: an episode uniformly, one of its stages
/// uniformly, and a negative uniformly among the other gallery photos.
pub fn sample_triplets(
    episodes: &[Episode],
    gallery: &[String],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TripletBatch, TrainError> {
    if gallery.len() < 2 {
        return Err(TrainError::GalleryTooSmall {
            split: "training".into(),
            photos: gallery.len(),
        });
    }
    if episodes.is_empty() {
        return Err(TrainError::NoEpisodes);
    }
    let positions: Vec<usize> = episodes
        .iter()
        .map(|e| {
            gallery
                .iter()
                .position(|p| *p == e.photo_id)
                .ok_or_else(|| TrainError::UnknownPhoto {
                    episode: e.id.clone(),
                    photo: e.photo_id.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    let mut triplets = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let e = rng.random_range(0..episodes.len());
        let stage = rng.random_range(1..=episodes[e].q());
        let pos = positions[e];
        let mut neg = rng.random_range(0..gallery.len() - 1);
        if neg >= pos {
            neg += 1;
        }
        triplets.push(Triplet {
            episode: e,
            episode_id: episodes[e].id.clone(),
            stage,
            positive: gallery[pos].clone(),
            negative: gallery[neg].clone(),
        });
    }
    Ok(TripletBatch { triplets })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::episodes::{Split, StageSource, Stroke};

    fn episodes(n: usize, photos: usize) -> Vec<Episode> {
        let stroke = Stroke::new(vec![(0.1, 0.1), (0.9, 0.9)], 2.0).unwrap();
        (0..n)
            .map(|i| Episode {
                id: format!("e{i}"),
                photo_id: format!("p{}", i % photos),
                split: Split::Train,
                source: StageSource::Strokes(vec![stroke.clone(); 1 + i % 4]),
            })
            .collect()
    }

    fn gallery(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn two_photo_gallery_forces_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_triplets(&episodes(6, 2), &gallery(2), 50, &mut rng).unwrap();
        for t in &batch.triplets {
            assert_ne!(t.positive, t.negative);
            assert!(t.stage >= 1 && t.stage <= 1 + t.episode % 4);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let eps = episodes(10, 5);
        let a = sample_triplets(&eps, &gallery(5), 32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_triplets(&eps, &gallery(5), 32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_gallery_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_triplets(&episodes(2, 1), &gallery(1), 4, &mut rng),
            Err(TrainError::GalleryTooSmall { photos: 1, .. })
        ));
        assert!(matches!(
            sample_triplets(&episodes(3, 3), &gallery(2), 4, &mut rng),
            Err(TrainError::UnknownPhoto { .. })
        ));
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let cfg = TrainConfig {
            margin: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            dim: 12,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
    }
}
