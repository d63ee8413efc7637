//! Exact-search gallery index.
//!
//! File layout: magic `MGRX`, `u16` version, `u16` embedding dim, `u32`
//! photo count, then per photo a `u16`-length UTF-8 id and `14 * dim`
//! little-endian `f32` values, then the digest of the checkpoint the index
//! was built with and an FNV-1a digest of all preceding bytes.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{verify_trailer, ByteReader, ByteWriter};
use crate::episodes::{load_photo, DatasetManifest, EpisodeError, Split};
use crate::granularity::{
    active_mask, mg_distance_levels, ActiveMask, DistanceWeights, GranularityError, LevelDistances,
    MGEmbedding, REGION_COUNT,
};
use crate::model::{embed_image_mg, ModelConfig, ModelError, ModelParams};
use crate::raster::{photo_tensor, sketch_tensor, Raster};
use crate::scalar::Scalar;
use crate::training::Checkpoint;

pub const INDEX_MAGIC: &[u8; 4] = b"MGRX";
pub const INDEX_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("index was built with checkpoint {index:016x}, query model is {checkpoint:016x}")]
    DigestMismatch { index: u64, checkpoint: u64 },
    #[error("embedding dimension {query} does not match index dimension {index}")]
    DimensionMismatch { index: usize, query: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("duplicate photo id `{0}`")]
    DuplicateId(String),
    #[error("top-k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Granularity(#[from] GranularityError),
}

/// Turns photos and sketch rasters into multi-granularity embeddings with
/// one trained parameter set.
#[derive(Debug, Clone)]
pub struct Embedder<T> {
    pub model: ModelConfig,
    pub params: ModelParams<T>,
    /// Ink threshold for sketch region elimination.
    pub tau: f64,
    /// Digest of the checkpoint the parameters came from.
    pub digest: u64,
}

impl<T: Scalar> Embedder<T> {
    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Self {
        Embedder {
            model: ck.model.clone(),
            params: ck.params.clone(),
            tau: ck.train.tau,
            digest: ck.digest(),
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    /// Photos are always fully active.
    pub fn embed_photo(&self, photo: &RgbImage) -> Result<MGEmbedding<T>, ModelError> {
        let x = photo_tensor(photo, self.model.canvas);
        embed_image_mg(&x, &ActiveMask::full(), &self.params, &self.model)
    }

    /// Region elimination runs on the raster at its own resolution.
    pub fn embed_sketch(&self, sketch: &Raster) -> Result<MGEmbedding<T>, ModelError> {
        let mask = active_mask(sketch, self.tau);
        let x = sketch_tensor(sketch, self.model.canvas);
        embed_image_mg(&x, &mask, &self.params, &self.model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    dim: usize,
    ids: Vec<String>,
    embeddings: Vec<MGEmbedding<f32>>,
    checkpoint_digest: u64,
}

impl GalleryIndex {
    pub fn new(
        dim: usize,
        ids: Vec<String>,
        embeddings: Vec<MGEmbedding<f32>>,
        checkpoint_digest: u64,
    ) -> Result<Self, IndexError> {
        if ids.is_empty() {
            return Err(IndexError::EmptyGallery);
        }
        assert_eq!(ids.len(), embeddings.len(), "one embedding per id");
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(IndexError::DimensionMismatch {
                index: dim,
                query: e.dim(),
            });
        }
        Ok(GalleryIndex {
            dim,
            ids,
            embeddings,
            checkpoint_digest,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &[MGEmbedding<f32>] {
        &self.embeddings
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|p| p == id)
    }

    pub fn checkpoint_digest(&self) -> u64 {
        self.checkpoint_digest
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(INDEX_MAGIC);
        w.u16(INDEX_VERSION);
        w.u16(self.dim as u16);
        w.u32(self.ids.len() as u32);
        for (id, e) in self.ids.iter().zip(&self.embeddings) {
            w.short_str(id);
            for &v in e.values() {
                w.bytes(&v.to_le_bytes());
            }
        }
        w.u64(self.checkpoint_digest);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::Corrupt(m.to_string());
        let (body, _) = verify_trailer(bytes).ok_or_else(|| corrupt("digest mismatch"))?;
        let mut r = ByteReader::new(body);
        if r.take(4) != Some(INDEX_MAGIC.as_slice()) {
            return Err(corrupt("bad magic"));
        }
        match r.u16() {
            Some(INDEX_VERSION) => {}
            Some(v) => return Err(corrupt(&format!("unsupported version {v}"))),
            None => return Err(corrupt("short header")),
        }
        let dim = r.u16().ok_or_else(|| corrupt("short header"))? as usize;
        let n = r.u32().ok_or_else(|| corrupt("short header"))? as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 16));
        let mut embeddings = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            ids.push(
                r.short_str()
                    .ok_or_else(|| corrupt("bad photo id"))?
                    .to_string(),
            );
            let raw = r
                .take(REGION_COUNT * dim * 4)
                .ok_or_else(|| corrupt("short vector payload"))?;
            let values = raw.chunks_exact(4).map(f32::read_le).collect();
            embeddings.push(MGEmbedding::new(dim, values, ActiveMask::full()));
        }
        let digest = r
            .u64()
            .ok_or_else(|| corrupt("missing checkpoint digest"))?;
        if !r.is_done() {
            return Err(corrupt("trailing bytes"));
        }
        GalleryIndex::new(dim, ids, embeddings, digest)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Embeds `photos` in order.
pub fn build_index_from_photos<T: Scalar>(
    embedder: &Embedder<T>,
    photos: &[(String, RgbImage)],
) -> Result<GalleryIndex, IndexError> {
    let embeddings = photos
        .par_iter()
        .map(|(_, img)| Ok(embedder.embed_photo(img)?.cast::<f32>()))
        .collect::<Result<Vec<_>, IndexError>>()?;
    let ids = photos.iter().map(|(id, _)| id.clone()).collect();
    GalleryIndex::new(embedder.dim(), ids, embeddings, embedder.digest)
}

/// Index over the photos referenced by `split` episodes, in manifest order.
pub fn build_index<T: Scalar>(
    embedder: &Embedder<T>,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<GalleryIndex, IndexError> {
    let photos = manifest
        .photos_in(split)
        .into_iter()
        .map(|p| Ok((p.id.clone(), load_photo(manifest, p)?)))
        .collect::<Result<Vec<_>, IndexError>>()?;
    build_index_from_photos(embedder, &photos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub photo_id: String,
    pub distance: f64,
    /// Weighted global, 2x2 and 3x3 contributions.
    pub levels: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub stage: Option<usize>,
    pub hits: Vec<Hit>,
    /// 1-based rank of the requested target over the whole gallery.
    pub target_rank: Option<usize>,
}

fn order(ids: &[String], a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

/// Rank of gallery entry `target` when sorting by distance, ties broken by
/// ascending id.
pub fn target_rank(ids: &[String], distances: &[f64], target: usize) -> usize {
    let t = (target, distances[target]);
    1 + distances
        .iter()
        .enumerate()
        .filter(|&(j, &d)| j != target && order(ids, (j, d), t) == Ordering::Less)
        .count()
}

/// Every gallery entry with its distance, best first.
pub fn rank_all(
    index: &GalleryIndex,
    sketch: &MGEmbedding<f32>,
    weights: &DistanceWeights,
) -> Result<Vec<(usize, LevelDistances)>, IndexError> {
    if sketch.dim() != index.dim {
        return Err(IndexError::DimensionMismatch {
            index: index.dim,
            query: sketch.dim(),
        });
    }
    let mut scored = index
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((i, mg_distance_levels(sketch, p, weights)?)))
        .collect::<Result<Vec<_>, IndexError>>()?;
    scored.sort_by(|a, b| order(&index.ids, (a.0, a.1.total), (b.0, b.1.total)));
    Ok(scored)
}

/// Top `min(k, n)` photos for an already embedded sketch.
pub fn query_embedding(
    index: &GalleryIndex,
    sketch: &MGEmbedding<f32>,
    weights: &DistanceWeights,
    k: usize,
    target: Option<&str>,
) -> Result<RetrievalResult, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    let ranked = rank_all(index, sketch, weights)?;
    let target_rank = target.and_then(|id| {
        ranked
            .iter()
            .position(|(i, _)| index.ids[*i] == id)
            .map(|p| p + 1)
    });
    let hits = ranked
        .into_iter()
        .take(k)
        .map(|(i, d)| Hit {
            photo_id: index.ids[i].clone(),
            distance: d.total,
            levels: d.levels,
        })
        .collect();
    Ok(RetrievalResult {
        stage: None,
        hits,
        target_rank,
    })
}

/// Embeds `sketch` and ranks the gallery. The embedder must come from the
/// checkpoint the index was built with.
pub fn query<T: Scalar>(
    index: &GalleryIndex,
    embedder: &Embedder<T>,
    sketch: &Raster,
    weights: &DistanceWeights,
    k: usize,
) -> Result<RetrievalResult, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    if embedder.digest != index.checkpoint_digest {
        return Err(IndexError::DigestMismatch {
            index: index.checkpoint_digest,
            checkpoint: embedder.digest,
        });
    }
    if embedder.dim() != index.dim {
        return Err(IndexError::DimensionMismatch {
            index: index.dim,
            query: embedder.dim(),
        });
    }
    let emb = embedder.embed_sketch(sketch)?.cast::<f32>();
    query_embedding(index, &emb, weights, k, None)
}
