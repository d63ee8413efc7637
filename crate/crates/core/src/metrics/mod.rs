//! Early-retrieval evaluation over drawing episodes.
//!
//! Each episode contributes the rank of its true photo after every stroke.
//! m@A and m@B average the ranking percentile and the reciprocal rank over
//! stages; the weighted variants emphasize early stages; A@5 looks at the
//! finished sketch only.

mod runner;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::granularity::DistanceWeights;

pub use runner::{
    evaluate, rank_episodes, stage_embeddings, sweep_csv, sweep_grid, weight_sweep,
    EpisodeEmbeddings, SweepRow,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("rank {rank} outside 1..={n}")]
    RankOutOfRange { rank: usize, n: usize },
    #[error("no episodes to aggregate")]
    Empty,
    #[error("episode `{0}` has no stages")]
    EmptyEpisode(String),
    #[error("percentage curve needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Episode(#[from] crate::episodes::EpisodeError),
}

/// `(n - rank) / (n - 1)`, and 1 for a single-photo gallery.
pub fn ranking_percentile(rank: usize, n: usize) -> Result<f64, MetricsError> {
    if rank == 0 || rank > n {
        return Err(MetricsError::RankOutOfRange { rank, n });
    }
    if n == 1 {
        return Ok(1.0);
    }
    Ok((n - rank) as f64 / (n - 1) as f64)
}

/// Rank of the paired photo after each stroke of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRanks {
    pub episode_id: String,
    pub ranks: Vec<usize>,
    pub gallery_size: usize,
}

impl EpisodeRanks {
    pub fn new(
        episode_id: impl Into<String>,
        ranks: Vec<usize>,
        gallery_size: usize,
    ) -> Result<Self, MetricsError> {
        let episode_id = episode_id.into();
        if ranks.is_empty() {
            return Err(MetricsError::EmptyEpisode(episode_id));
        }
        if let Some(&rank) = ranks.iter().find(|&&r| r == 0 || r > gallery_size) {
            return Err(MetricsError::RankOutOfRange {
                rank,
                n: gallery_size,
            });
        }
        Ok(EpisodeRanks {
            episode_id,
            ranks,
            gallery_size,
        })
    }

    pub fn q(&self) -> usize {
        self.ranks.len()
    }

    fn percentile(&self, stage: usize) -> f64 {
        ranking_percentile(self.ranks[stage], self.gallery_size).expect("validated rank")
    }
}

/// How stages are weighted in w@mA and w@mB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageWeighting {
    /// `w_i = 2(q - i + 1) / (q(q + 1))`: decays linearly, sums to 1.
    #[default]
    LinearDecay,
    Uniform,
}

impl StageWeighting {
    pub fn weights(self, q: usize) -> Vec<f64> {
        let qf = q as f64;
        match self {
            StageWeighting::LinearDecay => (1..=q)
                .map(|i| 2.0 * (qf - i as f64 + 1.0) / (qf * (qf + 1.0)))
                .collect(),
            StageWeighting::Uniform => vec![1.0 / qf; q],
        }
    }
}

/// Per-episode values on the unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub m_a: f64,
    pub m_b: f64,
    pub wm_a: f64,
    pub wm_b: f64,
    pub hit5: bool,
}

pub fn episode_metrics(er: &EpisodeRanks) -> EpisodeMetrics {
    episode_metrics_with(er, StageWeighting::LinearDecay)
}

pub fn episode_metrics_with(er: &EpisodeRanks, weighting: StageWeighting) -> EpisodeMetrics {
    let q = er.q();
    let w = weighting.weights(q);
    let (mut m_a, mut m_b, mut wm_a, mut wm_b) = (0.0, 0.0, 0.0, 0.0);
    for (i, (&wi, &rank)) in w.iter().zip(&er.ranks).enumerate() {
        let pct = er.percentile(i);
        let inv = 1.0 / rank as f64;
        m_a += pct;
        m_b += inv;
        wm_a += wi * pct;
        wm_b += wi * inv;
    }
    EpisodeMetrics {
        m_a: m_a / q as f64,
        m_b: m_b / q as f64,
        wm_a,
        wm_b,
        hit5: er.ranks[q - 1] <= 5,
    }
}

/// Test-set means, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub m_a: f64,
    pub m_b: f64,
    pub wm_a: f64,
    pub wm_b: f64,
    pub a5: f64,
    pub episodes: usize,
}

pub fn aggregate(per_episode: &[EpisodeMetrics]) -> Result<Summary, MetricsError> {
    if per_episode.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = per_episode.len() as f64;
    let mean = |f: fn(&EpisodeMetrics) -> f64| 100.0 * per_episode.iter().map(f).sum::<f64>() / n;
    Ok(Summary {
        m_a: mean(|m| m.m_a),
        m_b: mean(|m| m.m_b),
        wm_a: mean(|m| m.wm_a),
        wm_b: mean(|m| m.wm_b),
        a5: mean(|m| if m.hit5 { 1.0 } else { 0.0 }),
        episodes: per_episode.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin_low_pct: f64,
    pub mean_percentile: f64,
    pub mean_inv_rank: f64,
    pub count: usize,
}

/// Stage `i` of a `q`-stage episode falls in bin `floor((i - 1) / q * bins)`.
/// Empty bins are reported with zero means and count 0.
pub fn percent_curve(
    episodes: &[EpisodeRanks],
    bins: usize,
) -> Result<Vec<CurvePoint>, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::TooFewBins(bins));
    }
    let mut pct = vec![0.0; bins];
    let mut inv = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for er in episodes {
        let q = er.q();
        for i in 0..q {
            // Integer form of floor(i / q * bins), exact for any q.
            let bin = i * bins / q;
            pct[bin] += er.percentile(i);
            inv[bin] += 1.0 / er.ranks[i] as f64;
            count[bin] += 1;
        }
    }
    Ok((0..bins)
        .map(|b| {
            let c = count[b].max(1) as f64;
            CurvePoint {
                bin_low_pct: 100.0 * b as f64 / bins as f64,
                mean_percentile: pct[b] / c,
                mean_inv_rank: inv[b] / c,
                count: count[b],
            }
        })
        .collect())
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("bin_low_pct,mean_percentile,mean_inv_rank,count\n");
    for p in points {
        writeln!(
            out,
            "{:.4},{:.4},{:.4},{}",
            p.bin_low_pct, p.mean_percentile, p.mean_inv_rank, p.count
        )
        .expect("string write");
    }
    out
}

/// Settings echoed into a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub weights: DistanceWeights,
    pub topk: usize,
    pub tau: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: Summary,
    pub curve: Vec<CurvePoint>,
    pub config: ReportConfig,
}

impl MetricsReport {
    pub fn from_ranks(
        episodes: &[EpisodeRanks],
        bins: usize,
        config: ReportConfig,
    ) -> Result<Self, MetricsError> {
        let per: Vec<EpisodeMetrics> = episodes.iter().map(episode_metrics).collect();
        Ok(MetricsReport {
            summary: aggregate(&per)?,
            curve: percent_curve(episodes, bins)?,
            config,
        })
    }

    /// One aligned line per metric.
    pub fn to_text(&self) -> String {
        let s = &self.summary;
        let w = &self.config.weights;
        let mut out = String::new();
        writeln!(out, "episodes {:>8}", s.episodes).expect("string write");
        for (name, v) in [
            ("m@A", s.m_a),
            ("m@B", s.m_b),
            ("w@mA", s.wm_a),
            ("w@mB", s.wm_b),
            ("A@5", s.a5),
        ] {
            writeln!(out, "{name:<8} {v:>8.2}").expect("string write");
        }
        writeln!(
            out,
            "weights  alpha={} beta={} gamma={} tau={} d={}",
            w.alpha, w.beta, w.gamma, self.config.tau, self.config.dim
        )
        .expect("string write");
        out
    }

    pub fn summary_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "m_a,m_b,wm_a,wm_b,a5,episodes\n{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
            s.m_a, s.m_b, s.wm_a, s.wm_b, s.a5, s.episodes
        )
    }
}
