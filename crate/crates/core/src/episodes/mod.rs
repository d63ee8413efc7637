//! Sketch-drawing episodes: strokes, cumulative stage rasters, the dataset
//! manifest and the synthetic face generator.

mod manifest;
mod render;
mod synth;

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{
    load_dataset, load_photo, photo_png, DatasetManifest, EpisodeRecord, PhotoRecord, Split,
    MANIFEST_FILE,
};
pub use render::{draw_stroke, rasterize};
pub use synth::{
    episode_id, face_strokes, gallery_face, photo_id, render_face, sample_face, synth_dataset,
    Ellipse, FaceGeometry, SynthConfig,
};

use crate::raster::Raster;

/// Canvas side of dataset rasters and photos.
pub const CANVAS: usize = 256;
pub const DEFAULT_STROKE_WIDTH: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("stroke point ({x}, {y}) lies outside the unit square")]
    PointOutOfRange { x: f64, y: f64 },
    #[error("stroke needs at least two points and a positive width")]
    DegenerateStroke,
    #[error("canvas {0} is smaller than 32 pixels")]
    CanvasTooSmall(usize),
    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("episode `{episode}` references unknown photo `{photo}`")]
    DanglingPhotoId { episode: String, photo: String },
    #[error("record `{record}` points at missing asset {path}")]
    MissingAsset { record: String, path: PathBuf },
    #[error("malformed stroke file {path} line {line}: {reason}")]
    MalformedStrokes {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("stage {stage} out of range 1..={q}")]
    StageOutOfRange { stage: usize, q: usize },
    #[error("unknown photo `{0}`")]
    UnknownPhoto(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Polyline in normalized canvas coordinates, drawn with a square brush of
/// `width` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<(f64, f64)>,
    pub width: f64,
}

impl Stroke {
    pub fn new(points: Vec<(f64, f64)>, width: f64) -> Result<Self, EpisodeError> {
        let s = Stroke { points, width };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.points.len() < 2 || !(self.width > 0.0 && self.width.is_finite()) {
            return Err(EpisodeError::DegenerateStroke);
        }
        for &(x, y) in &self.points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(EpisodeError::PointOutOfRange { x, y });
            }
        }
        Ok(())
    }

    /// Bounding-box area in normalized units.
    pub fn bbox_area(&self) -> f64 {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x1 - x0) * (y1 - y0)
    }

    /// One stroke-file line: `width; x1,y1 x2,y2 ...` with 4-decimal
    /// coordinates.
    pub fn to_line(&self) -> String {
        let mut line = format!("{}; ", self.width);
        for (i, (x, y)) in self.points.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{x:.4},{y:.4}").expect("string write");
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let (width, pts) = line.split_once(';').ok_or("missing `;` after width")?;
        let width: f64 = width
            .trim()
            .parse()
            .map_err(|_| format!("bad width `{}`", width.trim()))?;
        let mut points = Vec::new();
        for tok in pts.split_whitespace() {
            let (x, y) = tok
                .split_once(',')
                .ok_or_else(|| format!("bad point `{tok}`"))?;
            let x: f64 = x.parse().map_err(|_| format!("bad coordinate `{x}`"))?;
            let y: f64 = y.parse().map_err(|_| format!("bad coordinate `{y}`"))?;
            points.push((x, y));
        }
        Stroke::new(points, width).map_err(|e| e.to_string())
    }

    /// Coordinates rounded to the stroke-file precision.
    pub fn quantized(&self) -> Stroke {
        let q = |v: f64| (v * 1e4).round() / 1e4;
        Stroke {
            points: self.points.iter().map(|&(x, y)| (q(x), q(y))).collect(),
            width: self.width,
        }
    }
}

pub fn format_strokes(strokes: &[Stroke]) -> String {
    let mut out = String::new();
    for s in strokes {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_strokes(text: &str) -> Result<Vec<Stroke>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| Stroke::parse_line(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageSource {
    Strokes(Vec<Stroke>),
    /// Pre-rendered grayscale stage images in drawing order.
    Pngs(Vec<PathBuf>),
}

/// A target photo and the cumulative sketches `s_1..s_q` drawn towards it.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub photo_id: String,
    pub split: Split,
    pub source: StageSource,
}

impl Episode {
    pub fn q(&self) -> usize {
        match &self.source {
            StageSource::Strokes(s) => s.len(),
            StageSource::Pngs(p) => p.len(),
        }
    }

    /// Raster of stage `stage` (1-based): strokes `1..=stage` drawn together.
    pub fn stage_raster(&self, stage: usize, canvas: usize) -> Result<Raster, EpisodeError> {
        let q = self.q();
        if stage == 0 || stage > q {
            return Err(EpisodeError::StageOutOfRange { stage, q });
        }
        match &self.source {
            StageSource::Strokes(strokes) => rasterize(&strokes[..stage], canvas),
            StageSource::Pngs(paths) => {
                let path = &paths[stage - 1];
                let img = image::open(path).map_err(|source| EpisodeError::Image {
                    path: path.clone(),
                    source,
                })?;
                Ok(Raster::from_gray(&img.to_luma8()))
            }
        }
    }

    /// All stage rasters in order.
    pub fn stages(&self, canvas: usize) -> Result<Vec<Raster>, EpisodeError> {
        match &self.source {
            StageSource::Strokes(strokes) => {
                let mut raster = rasterize(&[], canvas)?;
                let mut out = Vec::with_capacity(strokes.len());
                for s in strokes {
                    draw_stroke(&mut raster, s)?;
                    out.push(raster.clone());
                }
                Ok(out)
            }
            StageSource::Pngs(_) => (1..=self.q())
                .map(|i| self.stage_raster(i, canvas))
                .collect(),
        }
    }
}
