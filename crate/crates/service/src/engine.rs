use std::collections::HashMap;
use std::path::PathBuf;

use mgrl::episodes::{load_dataset, photo_png, rasterize, DatasetManifest, Stroke, CANVAS};
use mgrl::granularity::DistanceWeights;
use mgrl::index::{query, GalleryIndex, Hit};
use mgrl::training::Checkpoint;
use mgrl::Embedder32;
use thiserror::Error;

/// Everything needed to start serving.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    /// Dataset root for photo thumbnails. Without it the photo endpoint
    /// reports every id as unknown.
    pub data: Option<PathBuf>,
    pub topk: usize,
    pub canvas: usize,
    pub weights: DistanceWeights,
}

impl ServiceConfig {
    pub fn new(checkpoint: impl Into<PathBuf>, index: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            checkpoint: checkpoint.into(),
            index: index.into(),
            data: None,
            topk: 10,
            canvas: CANVAS,
            weights: DistanceWeights::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("top-k must be at least 1")]
    ZeroTopk,
    #[error(transparent)]
    Checkpoint(#[from] mgrl::training::CheckpointError),
    #[error(transparent)]
    Index(#[from] mgrl::index::IndexError),
    #[error(transparent)]
    Episode(#[from] mgrl::episodes::EpisodeError),
    #[error(transparent)]
    Granularity(#[from] mgrl::granularity::GranularityError),
    #[error("index was built from checkpoint {index:016x}, not {checkpoint:016x}")]
    DigestMismatch { index: u64, checkpoint: u64 },
}

/// Read-only retrieval state shared by all sessions.
pub struct Engine {
    index: GalleryIndex,
    embedder: Embedder32,
    manifest: Option<DatasetManifest>,
    photos: HashMap<String, usize>,
    topk: usize,
    canvas: usize,
    weights: DistanceWeights,
}

impl Engine {
    pub fn load(cfg: &ServiceConfig) -> Result<Self, EngineError> {
        let checkpoint = Checkpoint::<f32>::load(&cfg.checkpoint)?;
        let index = GalleryIndex::load(&cfg.index)?;
        let manifest = cfg.data.as_deref().map(load_dataset).transpose()?;
        Engine::new(
            Embedder32::from_checkpoint(&checkpoint),
            index,
            manifest,
            cfg,
        )
    }

    pub fn new(
        embedder: Embedder32,
        index: GalleryIndex,
        manifest: Option<DatasetManifest>,
        cfg: &ServiceConfig,
    ) -> Result<Self, EngineError> {
        if cfg.topk == 0 {
            return Err(EngineError::ZeroTopk);
        }
        cfg.weights.validate()?;
        if embedder.digest != index.checkpoint_digest() {
            return Err(EngineError::DigestMismatch {
                index: index.checkpoint_digest(),
                checkpoint: embedder.digest,
            });
        }
        // Thumbnails are limited to photos that are both indexed and on disk.
        let photos = match &manifest {
            Some(m) => m
                .photos
                .iter()
                .enumerate()
                .filter(|(_, p)| index.position(&p.id).is_some())
                .map(|(i, p)| (p.id.clone(), i))
                .collect(),
            None => HashMap::new(),
        };
        Ok(Engine {
            index,
            embedder,
            manifest,
            photos,
            topk: cfg.topk,
            canvas: cfg.canvas,
            weights: cfg.weights,
        })
    }

    pub fn topk(&self) -> usize {
        self.topk
    }

    pub fn canvas(&self) -> usize {
        self.canvas
    }

    pub fn gallery_size(&self) -> usize {
        self.index.len()
    }

    /// Top-k photos for the sketch made of `strokes`. An empty sketch
    /// retrieves nothing.
    pub fn retrieve(&self, strokes: &[Stroke]) -> Result<Vec<Hit>, EngineError> {
        if strokes.is_empty() {
            return Ok(Vec::new());
        }
        let raster = rasterize(strokes, self.canvas)?;
        Ok(query(
            &self.index,
            &self.embedder,
            &raster,
            &self.weights,
            self.topk,
        )?
        .hits)
    }

    /// PNG bytes of an indexed photo, or `None` for an unknown id.
    pub fn photo(&self, id: &str) -> Result<Option<Vec<u8>>, EngineError> {
        let (Some(manifest), Some(&i)) = (&self.manifest, self.photos.get(id)) else {
            return Ok(None);
        };
        Ok(Some(photo_png(manifest, &manifest.photos[i])?))
    }
}
