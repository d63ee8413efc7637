use mgrl::granularity::{ActiveMask, MGEmbedding, REGION_COUNT};
use mgrl::index::{GalleryIndex, IndexError, INDEX_MAGIC};
use mgrl::model::{ModelConfig, ModelParams};
use mgrl::training::{Checkpoint, CheckpointError, TrainConfig, CHECKPOINT_MAGIC};
use mgrl::{Checkpoint32, Checkpoint64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn checkpoint<T: mgrl::scalar::Scalar>(seed: u64) -> Checkpoint<T> {
    let model = ModelConfig {
        dim: 8,
        canvas: 32,
        widths: vec![4, 6, 8],
        ..ModelConfig::default()
    };
    Checkpoint {
        params: ModelParams::init(&model, seed),
        model,
        train: TrainConfig::default(),
        epoch: 3,
        rng_digest: 0xdead_beef,
    }
}

fn index(seed: u64, n: usize, dim: usize) -> GalleryIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = (0..n)
        .map(|_| {
            let v = (0..REGION_COUNT * dim)
                .map(|_| rng.random_range(-3.0f32..3.0))
                .collect();
            MGEmbedding::new(dim, v, ActiveMask::full())
        })
        .collect();
    let ids = (0..n).map(|i| format!("photo-{i:04}")).collect();
    GalleryIndex::new(dim, ids, embeddings, rng.random()).unwrap()
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let ck: Checkpoint64 = checkpoint(1);
    let bytes = ck.to_bytes();
    let back = Checkpoint64::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let path = dir.path().join("m.ck");
    let ck32: Checkpoint32 = checkpoint(2);
    ck32.save(&path).unwrap();
    let loaded = Checkpoint32::load(&path).unwrap();
    assert_eq!(loaded, ck32);
    assert_eq!(loaded.digest(), ck32.digest());
    assert_eq!(std::fs::read(&path).unwrap(), ck32.to_bytes());
    assert_ne!(ck32.digest(), checkpoint::<f32>(3).digest());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = checkpoint::<f32>(1).to_bytes();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(
        Checkpoint32::from_bytes(&bad),
        Err(CheckpointError::BadMagic)
    ));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        Checkpoint32::from_bytes(&bad),
        Err(CheckpointError::VersionMismatch { found: 9 })
    ));
    for pos in [7, 20, bytes.len() / 2, bytes.len() - 12, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(
            matches!(
                Checkpoint32::from_bytes(&bad),
                Err(CheckpointError::DigestMismatch)
            ),
            "byte {pos}"
        );
    }
    assert!(Checkpoint32::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint32::from_bytes(&[]).is_err());
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
}

#[test]
fn checkpoints_cast_between_precisions() {
    let ck64: Checkpoint64 = checkpoint(4);
    let as32 = Checkpoint32::from_bytes(&ck64.to_bytes()).unwrap();
    for (name, t) in ck64.params.tensors() {
        let narrow = as32.params.get(name).unwrap();
        for (a, b) in t.data().iter().zip(narrow.data()) {
            assert_eq!(*a as f32, *b);
        }
    }
}

#[test]
fn indexes_round_trip_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let idx = index(5, 30, 8);
    let path = dir.path().join("g.idx");
    idx.save(&path).unwrap();
    let loaded = GalleryIndex::load(&path).unwrap();
    assert_eq!(loaded.ids(), idx.ids());
    assert_eq!(loaded.embeddings(), idx.embeddings());
    assert_eq!(loaded.checkpoint_digest(), idx.checkpoint_digest());
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn damaged_indexes_are_rejected() {
    let bytes = index(6, 5, 4).to_bytes();
    assert_eq!(&bytes[..4], INDEX_MAGIC);
    for pos in [0, 5, 9, bytes.len() / 2, bytes.len() - 9, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x01;
        assert!(GalleryIndex::from_bytes(&bad).is_err(), "byte {pos}");
    }
    assert!(GalleryIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let dir = TempDir::new().unwrap();
    assert!(matches!(
        GalleryIndex::load(&dir.path().join("absent")),
        Err(IndexError::Io { .. })
    ));
}

#[test]
fn index_construction_checks() {
    let e = |dim| MGEmbedding::new(dim, vec![0.0f32; REGION_COUNT * dim], ActiveMask::full());
    assert!(matches!(
        GalleryIndex::new(2, vec![], vec![], 0),
        Err(IndexError::EmptyGallery)
    ));
    assert!(matches!(
        GalleryIndex::new(2, vec!["a".into(), "a".into()], vec![e(2), e(2)], 0),
        Err(IndexError::DuplicateId(_))
    ));
    assert!(GalleryIndex::new(2, vec!["a".into()], vec![e(3)], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_index_survives_serialization(seed in any::<u64>(), n in 1usize..20, dim in 1usize..10) {
        let idx = index(seed, n, dim);
        let back = GalleryIndex::from_bytes(&idx.to_bytes()).unwrap();
        prop_assert_eq!(back.ids(), idx.ids());
        prop_assert_eq!(back.embeddings(), idx.embeddings());
        prop_assert_eq!(back.to_bytes(), idx.to_bytes());
    }

    #[test]
    fn any_single_bit_flip_breaks_a_checkpoint(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = checkpoint::<f32>(9).to_bytes();
        let mut bad = bytes.clone();
        bad[pos.index(bytes.len())] ^= 1 << bit;
        prop_assert!(Checkpoint32::from_bytes(&bad).is_err());
    }
}
