use crate::granularity::{
    level_offset, mg_distance, DistanceWeights, GranularityError, MGEmbedding, LEVELS, REGION_COUNT,
};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::scalar::Scalar;

/// `max(d_pos - d_neg + margin, 0)`.
pub fn triplet_hinge(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos - d_neg + margin).max(0.0)
}

/// Hinge loss of one triplet under the multi-granularity distance.
pub fn triplet_loss<T: Scalar>(
    sketch: &MGEmbedding<T>,
    positive: &MGEmbedding<T>,
    negative: &MGEmbedding<T>,
    weights: &DistanceWeights,
    margin: f64,
) -> Result<f64, GranularityError> {
    let d_pos = mg_distance(sketch, positive, weights)?;
    let d_neg = mg_distance(sketch, negative, weights)?;
    Ok(triplet_hinge(d_pos, d_neg, margin))
}

/// Graph form of the multi-granularity distance. The active set is the set
/// of present sketch regions; every one of them needs its photo
/// counterpart. Levels with zero weight or no active region are omitted,
/// which is exact since they contribute 0.
pub fn mg_distance_node<T: Scalar>(
    g: &mut Graph<T>,
    sketch: &[Option<NodeId>; REGION_COUNT],
    photo: &[Option<NodeId>; REGION_COUNT],
    weights: &DistanceWeights,
) -> NodeId {
    let mut level_terms = Vec::new();
    for level in LEVELS {
        let w = weights.for_level(level);
        if w == 0.0 {
            continue;
        }
        let start = level_offset(level);
        let dists: Vec<NodeId> = (start..start + level * level)
            .filter_map(|i| {
                let s = sketch[i]?;
                let p = photo[i].expect("photo region missing for an active sketch region");
                Some(g.euclidean(s, p))
            })
            .collect();
        if let Some(sum) = g.add_all(&dists) {
            level_terms.push(g.scale(sum, w / dists.len() as f64));
        }
    }
    match g.add_all(&level_terms) {
        Some(d) => d,
        None => g.constant(Tensor::scalar(T::zero())),
    }
}

/// `hinge(D(sketch, positive) - D(sketch, negative) + margin)`.
pub fn triplet_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    sketch: &[Option<NodeId>; REGION_COUNT],
    positive: &[Option<NodeId>; REGION_COUNT],
    negative: &[Option<NodeId>; REGION_COUNT],
    weights: &DistanceWeights,
    margin: f64,
) -> NodeId {
    let gap = distance_gap(g, sketch, positive, negative, weights);
    let m = g.constant(Tensor::scalar(T::lit(margin)));
    let x = g.add(gap, m);
    g.hinge(x)
}

fn distance_gap<T: Scalar>(
    g: &mut Graph<T>,
    sketch: &[Option<NodeId>; REGION_COUNT],
    positive: &[Option<NodeId>; REGION_COUNT],
    negative: &[Option<NodeId>; REGION_COUNT],
    weights: &DistanceWeights,
) -> NodeId {
    let d_pos = mg_distance_node(g, sketch, positive, weights);
    let d_neg = mg_distance_node(g, sketch, negative, weights);
    let neg = g.scale(d_neg, -1.0);
    g.add(d_pos, neg)
}

/// One hinge over a whole episode: `hinge(sum_i (D_pos,i - D_neg,i) + q * margin)`.
pub fn episode_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    stages: &[[Option<NodeId>; REGION_COUNT]],
    positive: &[Option<NodeId>; REGION_COUNT],
    negative: &[Option<NodeId>; REGION_COUNT],
    weights: &DistanceWeights,
    margin: f64,
) -> NodeId {
    let gaps: Vec<NodeId> = stages
        .iter()
        .map(|s| distance_gap(g, s, positive, negative, weights))
        .collect();
    let total = g.add_all(&gaps).expect("episode has at least one stage");
    let m = g.constant(Tensor::scalar(T::lit(margin * stages.len() as f64)));
    let x = g.add(total, m);
    g.hinge(x)
}
