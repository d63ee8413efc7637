use mgrl::granularity::{
    mg_distance, mg_distance_levels, ActiveMask, DistanceWeights, MGEmbedding, REGION_COUNT,
};
use mgrl::index::{query_embedding, target_rank, GalleryIndex};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid level of each flat region slot.
const LEVEL_OF: [usize; REGION_COUNT] = [1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3];

/// Per-level mean Euclidean distance over the sketch's active cells,
/// weighted and summed; a level with no active cell adds nothing.
fn oracle_distance(sketch: &[f64], mask: &[bool], photo: &[f64], dim: usize, w: [f64; 3]) -> f64 {
    let mut total = 0.0;
    for level in 1..=3 {
        let cells: Vec<usize> = (0..REGION_COUNT)
            .filter(|&r| LEVEL_OF[r] == level && mask[r])
            .collect();
        if cells.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &r in &cells {
            let sq: f64 = (0..dim)
                .map(|j| (sketch[r * dim + j] - photo[r * dim + j]).powi(2))
                .sum();
            sum += sq.sqrt();
        }
        total += w[level - 1] * sum / cells.len() as f64;
    }
    total
}

fn random_mask(rng: &mut ChaCha8Rng) -> [bool; REGION_COUNT] {
    let mut flags = [false; REGION_COUNT];
    flags[0] = true;
    // Sometimes clear whole levels to exercise the empty-level rule.
    let keep = [true, rng.random_bool(0.8), rng.random_bool(0.8)];
    for (r, f) in flags.iter_mut().enumerate().skip(1) {
        *f = keep[LEVEL_OF[r] - 1] && rng.random_bool(0.6);
    }
    flags
}

fn random_vectors(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..REGION_COUNT * dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect()
}

#[test]
fn distance_matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut empty_levels = 0;
    for case in 0..100 {
        let dim = rng.random_range(1..=12);
        let flags = random_mask(&mut rng);
        let sketch_v = random_vectors(&mut rng, dim);
        let photo_v = random_vectors(&mut rng, dim);
        let w = match case % 4 {
            0 => [1.0, 0.0, 0.0],
            1 => [1.0, 1.0, 1.0],
            _ => [
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
            ],
        };
        if !flags[1..5].iter().any(|&f| f) || !flags[5..].iter().any(|&f| f) {
            empty_levels += 1;
        }
        let mask = ActiveMask::from_flags(flags);
        let sketch = MGEmbedding::new(dim, sketch_v.clone(), mask);
        let photo = MGEmbedding::new(dim, photo_v.clone(), ActiveMask::full());
        let weights = DistanceWeights::new(w[0], w[1], w[2]);
        let got = mg_distance(&sketch, &photo, &weights).unwrap();
        let want = oracle_distance(&sketch_v, &flags, &photo_v, dim, w);
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1e-12),
            "case {case}: {got} vs {want}"
        );

        if case % 4 == 0 {
            let global: f64 = (0..dim)
                .map(|j| (sketch_v[j] - photo_v[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((got - global).abs() <= 1e-12 * global.max(1.0));
        }
    }
    assert!(empty_levels > 0, "fixture never dropped a level");
}

#[test]
fn global_only_mask_ignores_other_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 4;
    let sketch = MGEmbedding::new(
        dim,
        random_vectors(&mut rng, dim),
        ActiveMask::global_only(),
    );
    let photo = MGEmbedding::new(dim, random_vectors(&mut rng, dim), ActiveMask::full());
    let full = mg_distance_levels(&sketch, &photo, &DistanceWeights::default()).unwrap();
    assert_eq!(full.levels[1], 0.0);
    assert_eq!(full.levels[2], 0.0);
    let global = mg_distance(&sketch, &photo, &DistanceWeights::global_only()).unwrap();
    assert_eq!(full.total, global);
}

proptest! {
    #[test]
    fn distance_is_linear_in_weights(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 3;
        let flags = random_mask(&mut rng);
        let s = MGEmbedding::new(dim, random_vectors(&mut rng, dim), ActiveMask::from_flags(flags));
        let p = MGEmbedding::new(dim, random_vectors(&mut rng, dim), ActiveMask::full());
        let unit = mg_distance_levels(&s, &p, &DistanceWeights::default()).unwrap();
        let d = mg_distance(&s, &p, &DistanceWeights::new(a, b, c)).unwrap();
        let expect = a * unit.levels[0] + b * unit.levels[1] + c * unit.levels[2];
        prop_assert!((d - expect).abs() <= 1e-9 * expect.max(1.0));
        prop_assert!(d >= 0.0);
    }

    #[test]
    fn identical_embeddings_are_at_distance_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_vectors(&mut rng, 5);
        let s = MGEmbedding::new(5, v.clone(), ActiveMask::from_flags(random_mask(&mut rng)));
        let p = MGEmbedding::new(5, v, ActiveMask::full());
        prop_assert_eq!(mg_distance(&s, &p, &DistanceWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn inactive_cells_do_not_influence_distance(seed in any::<u64>(), noise in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 2;
        let flags = random_mask(&mut rng);
        let sv = random_vectors(&mut rng, dim);
        let mut pv = random_vectors(&mut rng, dim);
        let s = MGEmbedding::new(dim, sv, ActiveMask::from_flags(flags));
        let before = mg_distance(&s, &MGEmbedding::new(dim, pv.clone(), ActiveMask::full()), &DistanceWeights::default()).unwrap();
        for r in 0..REGION_COUNT {
            if !flags[r] {
                pv[r * dim] += noise;
            }
        }
        let after = mg_distance(&s, &MGEmbedding::new(dim, pv, ActiveMask::full()), &DistanceWeights::default()).unwrap();
        prop_assert_eq!(before, after);
    }
}

struct Instance {
    index: GalleryIndex,
    sketch: MGEmbedding<f32>,
    weights: DistanceWeights,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.random_range(1..=6);
    let n = rng.random_range(1..=40);
    let mut ids: Vec<String> = (0..n).map(|i| format!("id{:03}", (i * 37) % 101)).collect();
    ids.shuffle(rng);
    let mut embeddings: Vec<MGEmbedding<f32>> = Vec::new();
    for i in 0..n {
        // Roughly a third of the photos duplicate an earlier one, forcing ties.
        if i > 0 && rng.random_bool(0.35) {
            let j = rng.random_range(0..i);
            embeddings.push(embeddings[j].clone());
        } else {
            let v = (0..REGION_COUNT * dim)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            embeddings.push(MGEmbedding::new(dim, v, ActiveMask::full()));
        }
    }
    let v = (0..REGION_COUNT * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let sketch = MGEmbedding::new(dim, v, ActiveMask::from_flags(random_mask(rng)));
    let weights = DistanceWeights::new(1.0, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    Instance {
        index: GalleryIndex::new(dim, ids, embeddings, 1).unwrap(),
        sketch,
        weights,
    }
}

/// Full ordering by (distance, id), computed with the oracle distance.
fn brute_order(inst: &Instance) -> Vec<String> {
    let dim = inst.index.dim();
    let sketch: Vec<f64> = inst.sketch.values().iter().map(|&v| v as f64).collect();
    let mask = inst.sketch.mask().flags();
    let w = [inst.weights.alpha, inst.weights.beta, inst.weights.gamma];
    let mut scored: Vec<(f64, String)> = inst
        .index
        .embeddings()
        .iter()
        .zip(inst.index.ids())
        .map(|(p, id)| {
            let pv: Vec<f64> = p.values().iter().map(|&v| v as f64).collect();
            (oracle_distance(&sketch, mask, &pv, dim, w), id.clone())
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

#[test]
fn query_order_matches_brute_force_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut tied = 0;
    for case in 0..100 {
        let inst = random_instance(&mut rng);
        let n = inst.index.len();
        let want = brute_order(&inst);
        let full = query_embedding(&inst.index, &inst.sketch, &inst.weights, n, None).unwrap();
        let got: Vec<String> = full.hits.iter().map(|h| h.photo_id.clone()).collect();
        assert_eq!(got, want, "case {case}");
        tied += full
            .hits
            .windows(2)
            .filter(|w| w[0].distance == w[1].distance)
            .count();

        let k = rng.random_range(1..=n + 3);
        let top = query_embedding(
            &inst.index,
            &inst.sketch,
            &inst.weights,
            k,
            Some(&want[n - 1]),
        )
        .unwrap();
        assert_eq!(top.hits.len(), k.min(n));
        assert_eq!(top.hits[..], full.hits[..k.min(n)]);
        assert_eq!(top.target_rank, Some(n));

        let dists: Vec<f64> = inst
            .index
            .embeddings()
            .iter()
            .map(|p| mg_distance(&inst.sketch, p, &inst.weights).unwrap())
            .collect();
        for (t, id) in inst.index.ids().iter().enumerate() {
            let rank = target_rank(inst.index.ids(), &dists, t);
            assert_eq!(want[rank - 1], *id);
        }
    }
    assert!(tied > 20, "too few ties exercised: {tied}");
}

#[test]
fn query_rejects_zero_k_and_wrong_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inst = random_instance(&mut rng);
    assert!(query_embedding(&inst.index, &inst.sketch, &inst.weights, 0, None).is_err());
    let other = MGEmbedding::new(
        inst.index.dim() + 1,
        vec![0.0; REGION_COUNT * (inst.index.dim() + 1)],
        ActiveMask::full(),
    );
    assert!(query_embedding(&inst.index, &other, &inst.weights, 3, None).is_err());
}
