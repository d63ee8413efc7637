use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EpisodeRanks, MetricsError, MetricsReport, ReportConfig, Summary};
use crate::episodes::{Episode, EpisodeError, CANVAS};
use crate::granularity::{mg_distance, DistanceWeights, MGEmbedding};
use crate::index::{target_rank, Embedder, GalleryIndex, IndexError};
use crate::scalar::Scalar;

/// Sketch embeddings of every stage of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEmbeddings {
    pub episode_id: String,
    pub photo_id: String,
    pub stages: Vec<MGEmbedding<f32>>,
}

/// Embeds all stages of all episodes. Weights do not enter the embedding,
/// so one pass serves any number of distance settings.
pub fn stage_embeddings<T: Scalar>(
    embedder: &Embedder<T>,
    episodes: &[Episode],
) -> Result<Vec<EpisodeEmbeddings>, MetricsError> {
    let work: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (1..=ep.q()).map(move |s| (e, s)))
        .collect();
    let embedded = work
        .par_iter()
        .map(|&(e, s)| {
            let raster = episodes[e].stage_raster(s, CANVAS)?;
            let emb = embedder.embed_sketch(&raster).map_err(IndexError::from)?;
            Ok(emb.cast::<f32>())
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let mut it = embedded.into_iter();
    Ok(episodes
        .iter()
        .map(|ep| EpisodeEmbeddings {
            episode_id: ep.id.clone(),
            photo_id: ep.photo_id.clone(),
            stages: it.by_ref().take(ep.q()).collect(),
        })
        .collect())
}

/// Rank of each episode's photo at every stage.
pub fn rank_episodes(
    index: &GalleryIndex,
    episodes: &[EpisodeEmbeddings],
    weights: &DistanceWeights,
) -> Result<Vec<EpisodeRanks>, MetricsError> {
    episodes
        .par_iter()
        .map(|ep| {
            let target = index
                .position(&ep.photo_id)
                .ok_or_else(|| EpisodeError::UnknownPhoto(ep.photo_id.clone()))?;
            let mut ranks = Vec::with_capacity(ep.stages.len());
            for sketch in &ep.stages {
                let dists = index
                    .embeddings()
                    .iter()
                    .map(|p| mg_distance(sketch, p, weights))
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(IndexError::from)?;
                ranks.push(target_rank(index.ids(), &dists, target));
            }
            EpisodeRanks::new(ep.episode_id.clone(), ranks, index.len())
        })
        .collect()
}

pub fn evaluate(
    index: &GalleryIndex,
    episodes: &[EpisodeEmbeddings],
    config: ReportConfig,
    bins: usize,
) -> Result<MetricsReport, MetricsError> {
    let ranks = rank_episodes(index, episodes, &config.weights)?;
    MetricsReport::from_ranks(&ranks, bins, config)
}

/// Weight settings for a sweep. `axes` names the swept weights (`beta`,
/// `gamma` or both, comma separated); alpha and unswept weights stay at 1.
pub fn sweep_grid(axes: &str, values: &[f64]) -> Result<Vec<DistanceWeights>, MetricsError> {
    let bad = |m: String| MetricsError::InvalidSweep(m);
    if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad("grid values must lie in [0, 1]".into()));
    }
    let names: Vec<&str> = axes.split(',').map(str::trim).collect();
    let (sweep_beta, sweep_gamma) = match names.as_slice() {
        ["beta"] => (true, false),
        ["gamma"] => (false, true),
        ["beta", "gamma"] | ["gamma", "beta"] => (true, true),
        _ => {
            return Err(bad(format!(
                "unknown axes `{axes}`; expected beta, gamma or beta,gamma"
            )))
        }
    };
    let betas = if sweep_beta {
        values.to_vec()
    } else {
        vec![1.0]
    };
    let gammas = if sweep_gamma {
        values.to_vec()
    } else {
        vec![1.0]
    };
    Ok(betas
        .iter()
        .flat_map(|&b| gammas.iter().map(move |&g| DistanceWeights::new(1.0, b, g)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weights: DistanceWeights,
    pub summary: Summary,
}

/// Re-ranks the same embeddings under every weight setting.
pub fn weight_sweep(
    index: &GalleryIndex,
    episodes: &[EpisodeEmbeddings],
    grid: &[DistanceWeights],
) -> Result<Vec<SweepRow>, MetricsError> {
    grid.iter()
        .map(|w| {
            let ranks = rank_episodes(index, episodes, w)?;
            let per: Vec<_> = ranks.iter().map(super::episode_metrics).collect();
            Ok(SweepRow {
                weights: *w,
                summary: super::aggregate(&per)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,beta,gamma,m_a,m_b,wm_a,wm_b,a5\n");
    for r in rows {
        let (w, s) = (&r.weights, &r.summary);
        writeln!(
            out,
            "{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            w.alpha, w.beta, w.gamma, s.m_a, s.m_b, s.wm_a, s.wm_b, s.a5
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality() {
        assert_eq!(sweep_grid("beta,gamma", &[0.0, 0.5, 1.0]).unwrap().len(), 9);
        let g = sweep_grid("gamma", &[0.0, 1.0]).unwrap();
        assert_eq!(
            g,
            vec![
                DistanceWeights::new(1.0, 1.0, 0.0),
                DistanceWeights::new(1.0, 1.0, 1.0)
            ]
        );
        assert!(sweep_grid("alpha", &[0.0]).is_err());
        assert!(sweep_grid("beta", &[1.5]).is_err());
    }
}
