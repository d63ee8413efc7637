use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{episode_loss_node, triplet_loss_node};
use super::{sample_triplets, Checkpoint, LossMode, TrainConfig, TrainError, Triplet};
use crate::episodes::{load_photo, DatasetManifest, Episode, Split, CANVAS};
use crate::granularity::{active_mask, mg_distance, ActiveMask, MGEmbedding};
use crate::index::target_rank;
use crate::metrics::{episode_metrics, EpisodeRanks};
use crate::model::{
    embed_from_features, param_group, region_features, Builder, ModelConfig, ModelParams,
    ParamGroup,
};
use crate::numerics::{AdamState, Evaluation, Gradients, Graph, Tensor};
use crate::raster::{photo_tensor, sketch_tensor};
use crate::scalar::Scalar;

/// Summary of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the epoch's samples.
    pub loss: f64,
    /// Mean reciprocal rank on the test split, in percent.
    pub val_mb: Option<f64>,
    pub backbone_frozen: bool,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6} val_mb ", self.epoch, self.loss)?;
        match self.val_mb {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("nan"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<EpochLog>,
}

/// Region activations after the frozen backbone prefix.
struct Features<T> {
    mask: ActiveMask,
    regions: Vec<Option<Tensor<T>>>,
}

struct SplitData<T> {
    episodes: Vec<Episode>,
    photo_ids: Vec<String>,
    photo_inputs: Vec<Tensor<T>>,
    /// Gallery position of each episode's photo.
    positive: Vec<usize>,
}

impl<T: Scalar> SplitData<T> {
    fn load(manifest: &DatasetManifest, split: Split, canvas: usize) -> Result<Self, TrainError> {
        let episodes = manifest.load_episodes(split)?;
        let records = manifest.photos_in(split);
        let photo_ids: Vec<String> = records.iter().map(|p| p.id.clone()).collect();
        let photo_inputs = records
            .par_iter()
            .map(|p| Ok(photo_tensor(&load_photo(manifest, p)?, canvas)))
            .collect::<Result<Vec<_>, TrainError>>()?;
        let position: HashMap<&str, usize> = photo_ids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let positive = episodes
            .iter()
            .map(|e| position[e.photo_id.as_str()])
            .collect();
        Ok(SplitData {
            episodes,
            photo_ids,
            photo_inputs,
            positive,
        })
    }
}

/// Activation cache valid while backbone stages `..depth` stay frozen.
struct FeatureStore<T> {
    depth: usize,
    photos: Vec<Arc<Features<T>>>,
    sketches: HashMap<(usize, usize), Arc<Features<T>>>,
}

impl<T: Scalar> FeatureStore<T> {
    fn new(
        data: &SplitData<T>,
        params: &ModelParams<T>,
        model: &ModelConfig,
        depth: usize,
    ) -> Result<Self, TrainError> {
        let mask = ActiveMask::full();
        let photos = data
            .photo_inputs
            .par_iter()
            .map(|x| {
                Ok(Arc::new(Features {
                    mask,
                    regions: region_features(x, &mask, params, model, depth)?,
                }))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(FeatureStore {
            depth,
            photos,
            sketches: HashMap::new(),
        })
    }

    /// Computes features for the `(episode, stage)` keys not cached yet.
    fn ensure(
        &mut self,
        data: &SplitData<T>,
        keys: impl IntoIterator<Item = (usize, usize)>,
        params: &ModelParams<T>,
        model: &ModelConfig,
        tau: f64,
    ) -> Result<(), TrainError> {
        let mut missing: Vec<(usize, usize)> = keys
            .into_iter()
            .filter(|k| !self.sketches.contains_key(k))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let depth = self.depth;
        let computed = missing
            .par_iter()
            .map(|&(e, stage)| {
                let raster = data.episodes[e].stage_raster(stage, CANVAS)?;
                let mask = active_mask(&raster, tau);
                let x = sketch_tensor(&raster, model.canvas);
                let regions = region_features(&x, &mask, params, model, depth)?;
                Ok(((e, stage), Arc::new(Features { mask, regions })))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        self.sketches.extend(computed);
        Ok(())
    }
}

struct Step<'a, T> {
    model: &'a ModelConfig,
    params: &'a ModelParams<T>,
    cfg: &'a TrainConfig,
    store: &'a FeatureStore<T>,
    data: &'a SplitData<T>,
    photo_index: &'a HashMap<String, usize>,
}

impl<T: Scalar> Step<'_, T> {
    /// Loss and parameter gradients of one sample.
    fn run(
        &self,
        t: &Triplet,
        trainable: &(dyn Fn(&str) -> bool + Sync),
    ) -> Result<(f64, Gradients<T>), TrainError> {
        let builder = Builder::new(self.model);
        let depth = self.store.depth;
        let mut g = Graph::new();
        let regions =
            |g: &mut Graph<T>, f: &Features<T>| builder.regions_from(g, f.regions.clone(), depth);
        let pos = regions(&mut g, &self.store.photos[self.photo_index[&t.positive]]);
        let neg = regions(&mut g, &self.store.photos[self.photo_index[&t.negative]]);
        let out = match self.cfg.loss {
            LossMode::PerStage => {
                let sketch = regions(&mut g, &self.store.sketches[&(t.episode, t.stage)]);
                triplet_loss_node(
                    &mut g,
                    &sketch,
                    &pos,
                    &neg,
                    &self.cfg.weights,
                    self.cfg.margin,
                )
            }
            LossMode::EpisodeSum => {
                let q = self.data.episodes[t.episode].q();
                let stages: Vec<_> = (1..=q)
                    .map(|s| regions(&mut g, &self.store.sketches[&(t.episode, s)]))
                    .collect();
                episode_loss_node(
                    &mut g,
                    &stages,
                    &pos,
                    &neg,
                    &self.cfg.weights,
                    self.cfg.margin,
                )
            }
        };
        g.set_output(out);
        let eval = Evaluation::run(&g, &self.params.bindings())?;
        let back = eval.backward(trainable)?;
        Ok((back.value.as_f64(), back.grads))
    }
}

fn rng_digest(rng: &ChaCha8Rng) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&rng.get_seed());
    h.write(&rng.get_stream().to_le_bytes());
    h.write(&rng.get_word_pos().to_le_bytes());
    h.finish()
}

/// Mean reciprocal rank (percent) of every stage of every test episode.
fn validate<T: Scalar>(
    data: &SplitData<T>,
    store: &mut FeatureStore<T>,
    params: &ModelParams<T>,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let keys: Vec<(usize, usize)> = data
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (1..=ep.q()).map(move |s| (e, s)))
        .collect();
    store.ensure(data, keys, params, model, cfg.tau)?;
    let depth = store.depth;
    let embed =
        |f: &Features<T>| embed_from_features(f.regions.clone(), depth, &f.mask, params, model);
    let photos = store
        .photos
        .par_iter()
        .map(|f| embed(f))
        .collect::<Result<Vec<MGEmbedding<T>>, _>>()?;
    let store = &*store;
    let mbs = data
        .episodes
        .par_iter()
        .enumerate()
        .map(|(e, ep)| {
            let mut ranks = Vec::with_capacity(ep.q());
            for s in 1..=ep.q() {
                let sketch = embed(&store.sketches[&(e, s)])?;
                let dists = photos
                    .iter()
                    .map(|p| mg_distance(&sketch, p, &cfg.weights))
                    .collect::<Result<Vec<f64>, _>>()?;
                ranks.push(target_rank(&data.photo_ids, &dists, data.positive[e]));
            }
            let er = EpisodeRanks::new(ep.id.clone(), ranks, data.photo_ids.len())
                .expect("ranks within gallery");
            Ok(episode_metrics(&er).m_b)
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(100.0 * mbs.iter().sum::<f64>() / mbs.len() as f64)
}

/// Trains on the manifest's train split. `on_epoch` sees every epoch log as
/// it completes. Results are identical for any thread count: samples are
/// independent and gradients are summed in batch order.
pub fn train<T: Scalar>(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    let model = cfg.model_config();
    let train_data = SplitData::<T>::load(manifest, Split::Train, model.canvas)?;
    if train_data.episodes.is_empty() {
        return Err(TrainError::NoEpisodes);
    }
    if train_data.photo_ids.len() < 2 {
        return Err(TrainError::GalleryTooSmall {
            split: "training".into(),
            photos: train_data.photo_ids.len(),
        });
    }
    let val_data = SplitData::<T>::load(manifest, Split::Test, model.canvas)?;
    let photo_index: HashMap<String, usize> = train_data
        .photo_ids
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();

    let mut params = ModelParams::<T>::init(&model, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::<T>::new();
    let stages = model.widths.len();
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| train_data.episodes.len().div_ceil(cfg.batch_size));

    let mut stores: Option<(FeatureStore<T>, Option<FeatureStore<T>>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let frozen = epoch <= cfg.frozen_epochs;
        let depth = if frozen { stages } else { stages - 1 };
        if stores.as_ref().is_none_or(|(s, _)| s.depth != depth) {
            let val = if val_data.episodes.is_empty() || val_data.photo_ids.is_empty() {
                None
            } else {
                Some(FeatureStore::new(&val_data, &params, &model, depth)?)
            };
            stores = Some((FeatureStore::new(&train_data, &params, &model, depth)?, val));
        }
        let (store, val_store) = stores.as_mut().expect("stores built above");

        let last = stages - 1;
        let trainable = move |name: &str| match param_group(name) {
            Some(ParamGroup::Backbone(i)) => !frozen && i == last,
            _ => true,
        };
        let lr_for = |name: &str| match param_group(name) {
            Some(ParamGroup::Backbone(i)) => (!frozen && i == last).then_some(cfg.lr_backbone),
            _ => Some(cfg.lr_new),
        };

        let mut loss_sum = 0.0;
        let mut samples = 0usize;
        for _ in 0..steps {
            let batch = sample_triplets(
                &train_data.episodes,
                &train_data.photo_ids,
                cfg.batch_size,
                &mut rng,
            )?;
            let keys: Vec<(usize, usize)> = match cfg.loss {
                LossMode::PerStage => batch
                    .triplets
                    .iter()
                    .map(|t| (t.episode, t.stage))
                    .collect(),
                LossMode::EpisodeSum => batch
                    .triplets
                    .iter()
                    .flat_map(|t| {
                        (1..=train_data.episodes[t.episode].q()).map(move |s| (t.episode, s))
                    })
                    .collect(),
            };
            store.ensure(&train_data, keys, &params, &model, cfg.tau)?;

            let step = Step {
                model: &model,
                params: &params,
                cfg,
                store,
                data: &train_data,
                photo_index: &photo_index,
            };
            let results = batch
                .triplets
                .par_iter()
                .map(|t| step.run(t, &trainable))
                .collect::<Result<Vec<_>, TrainError>>()?;

            let mut total: Gradients<T> = BTreeMap::new();
            for (loss, grads) in results {
                loss_sum += loss;
                samples += 1;
                for (name, g) in grads {
                    match total.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            total.insert(name, g);
                        }
                    }
                }
            }
            let inv = T::lit(1.0 / batch.triplets.len() as f64);
            for g in total.values_mut() {
                g.scale_assign(inv);
            }
            adam.step(params.tensors_mut(), &total, &lr_for)?;
        }

        let val_mb = match val_store {
            Some(vs) => Some(validate(&val_data, vs, &params, &model, cfg)?),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / samples.max(1) as f64,
            val_mb,
            backbone_frozen: frozen,
        };
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            params,
            train: cfg.clone(),
            epoch: cfg.epochs,
            rng_digest: rng_digest(&rng),
        },
        log,
    })
}
