//! Grid partitioning at three granularities, ink-based region elimination
//! and the multi-granularity distance.
//!
//! Regions are addressed by a flat index: 0 is the global 1x1 region,
//! 1..=4 the 2x2 cells and 5..=13 the 3x3 cells, each level in row-major
//! order.

use thiserror::Error;

use crate::raster::Raster;
use crate::scalar::Scalar;

pub const LEVELS: [usize; 3] = [1, 2, 3];
pub const REGION_COUNT: usize = 14;
/// Default elimination threshold on ink fraction.
pub const DEFAULT_TAU: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GranularityError {
    #[error("{height}x{width} image cannot be split into a {level}x{level} grid")]
    ImageTooSmall {
        height: usize,
        width: usize,
        level: usize,
    },
    #[error("granularity level {0} is not one of 1, 2, 3")]
    InvalidLevel(usize),
    #[error("region has no pixels")]
    EmptyRegion,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("distance weights must be finite and non-negative")]
    InvalidWeights,
}

/// Pixel rectangle covering rows `[top, top + height)` and columns
/// `[left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }
}

/// First flat region index of `level`.
pub fn level_offset(level: usize) -> usize {
    match level {
        1 => 0,
        2 => 1,
        3 => 5,
        _ => panic!("invalid level {level}"),
    }
}

/// Level (1, 2 or 3) of a flat region index.
pub fn level_of(region: usize) -> usize {
    match region {
        0 => 1,
        1..=4 => 2,
        5..=13 => 3,
        _ => panic!("invalid region {region}"),
    }
}

/// `level x level` grid over an image; cell `(r, c)` spans rows
/// `[floor(r*H/g), floor((r+1)*H/g))` and likewise for columns.
pub fn partition(height: usize, width: usize, level: usize) -> Result<Vec<Rect>, GranularityError> {
    if !LEVELS.contains(&level) {
        return Err(GranularityError::InvalidLevel(level));
    }
    if height < level || width < level {
        return Err(GranularityError::ImageTooSmall {
            height,
            width,
            level,
        });
    }
    let bound = |i: usize, extent: usize| i * extent / level;
    let mut cells = Vec::with_capacity(level * level);
    for r in 0..level {
        for c in 0..level {
            let (top, bottom) = (bound(r, height), bound(r + 1, height));
            let (left, right) = (bound(c, width), bound(c + 1, width));
            cells.push(Rect {
                top,
                left,
                height: bottom - top,
                width: right - left,
            });
        }
    }
    Ok(cells)
}

/// All 14 regions in flat-index order.
pub fn all_regions(height: usize, width: usize) -> Result<Vec<Rect>, GranularityError> {
    let mut out = Vec::with_capacity(REGION_COUNT);
    for level in LEVELS {
        out.extend(partition(height, width, level)?);
    }
    Ok(out)
}

/// Fraction of pixels in `rect` with ink above half of full ink.
pub fn ink_fraction_in(raster: &Raster, rect: Rect) -> Result<f64, GranularityError> {
    if rect.area() == 0 {
        return Err(GranularityError::EmptyRegion);
    }
    let mut inked = 0usize;
    for row in rect.top..rect.top + rect.height {
        for col in rect.left..rect.left + rect.width {
            if raster.get(row, col) > 0.5 {
                inked += 1;
            }
        }
    }
    Ok(inked as f64 / rect.area() as f64)
}

pub fn ink_fraction(raster: &Raster) -> Result<f64, GranularityError> {
    let full = Rect {
        top: 0,
        left: 0,
        height: raster.height(),
        width: raster.width(),
    };
    ink_fraction_in(raster, full)
}

/// Which of the 14 regions carry enough stroke information to be matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActiveMask {
    flags: [bool; REGION_COUNT],
}

impl ActiveMask {
    pub fn full() -> Self {
        ActiveMask {
            flags: [true; REGION_COUNT],
        }
    }

    pub fn global_only() -> Self {
        let mut flags = [false; REGION_COUNT];
        flags[0] = true;
        ActiveMask { flags }
    }

    /// The global flag is forced on.
    pub fn from_flags(mut flags: [bool; REGION_COUNT]) -> Self {
        flags[0] = true;
        ActiveMask { flags }
    }

    pub fn flags(&self) -> &[bool; REGION_COUNT] {
        &self.flags
    }

    pub fn is_active(&self, region: usize) -> bool {
        self.flags[region]
    }

    /// Active region count `k_g` at `level`.
    pub fn count(&self, level: usize) -> usize {
        let start = level_offset(level);
        self.flags[start..start + level * level]
            .iter()
            .filter(|&&f| f)
            .count()
    }

    pub fn is_full(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    /// Packs the flags into the low 14 bits.
    pub fn bits(&self) -> u16 {
        self.flags
            .iter()
            .enumerate()
            .fold(0u16, |acc, (i, &f)| acc | ((f as u16) << i))
    }
}

/// Region elimination: level-2/3 cells are active iff their ink fraction
/// reaches `tau`; the global region is always active.
pub fn active_mask(sketch: &Raster, tau: f64) -> ActiveMask {
    let mut flags = [false; REGION_COUNT];
    flags[0] = true;
    // A raster smaller than 3x3 only keeps its global region.
    let Ok(regions) = all_regions(sketch.height(), sketch.width()) else {
        return ActiveMask { flags };
    };
    for (i, rect) in regions.iter().enumerate().skip(1) {
        flags[i] = ink_fraction_in(sketch, *rect)
            .map(|f| f >= tau)
            .unwrap_or(false);
    }
    ActiveMask { flags }
}

/// Weights of the global, 2x2 and 3x3 terms of the distance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        DistanceWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl DistanceWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        DistanceWeights { alpha, beta, gamma }
    }

    pub fn global_only() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), GranularityError> {
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(GranularityError::InvalidWeights)
        }
    }

    pub fn for_level(&self, level: usize) -> f64 {
        match level {
            1 => self.alpha,
            2 => self.beta,
            3 => self.gamma,
            _ => panic!("invalid level {level}"),
        }
    }
}

/// Fourteen `dim`-dimensional region vectors plus the mask saying which
/// ones are meaningful. Inactive slots hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MGEmbedding<T> {
    dim: usize,
    vectors: Vec<T>,
    mask: ActiveMask,
}

impl<T: Scalar> MGEmbedding<T> {
    /// `vectors` is region-major, `REGION_COUNT * dim` long.
    pub fn new(dim: usize, vectors: Vec<T>, mask: ActiveMask) -> Self {
        assert_eq!(
            vectors.len(),
            REGION_COUNT * dim,
            "expected 14 x {dim} values"
        );
        MGEmbedding { dim, vectors, mask }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> &ActiveMask {
        &self.mask
    }

    pub fn vector(&self, region: usize) -> &[T] {
        &self.vectors[region * self.dim..(region + 1) * self.dim]
    }

    pub fn values(&self) -> &[T] {
        &self.vectors
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> MGEmbedding<U> {
        MGEmbedding {
            dim: self.dim,
            vectors: self.vectors.iter().map(|v| U::lit(v.as_f64())).collect(),
            mask: self.mask,
        }
    }
}

/// Distance with its three weighted level contributions; `total` is their
/// sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDistances {
    pub total: f64,
    pub levels: [f64; 3],
}

fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Multi-granularity distance split per level. Region `i` of the sketch is
/// paired with region `i` of the photo; only the sketch's active regions
/// count, each level is averaged over its `k_g` active regions, and a level
/// with no active region contributes 0.
pub fn mg_distance_levels<T: Scalar>(
    sketch: &MGEmbedding<T>,
    photo: &MGEmbedding<T>,
    w: &DistanceWeights,
) -> Result<LevelDistances, GranularityError> {
    if sketch.dim != photo.dim {
        return Err(GranularityError::DimensionMismatch(sketch.dim, photo.dim));
    }
    let mut levels = [0.0; 3];
    for (slot, level) in LEVELS.into_iter().enumerate() {
        let start = level_offset(level);
        let mut sum = 0.0;
        let mut k = 0usize;
        for region in start..start + level * level {
            if sketch.mask.is_active(region) {
                sum += euclidean(sketch.vector(region), photo.vector(region));
                k += 1;
            }
        }
        if k > 0 {
            levels[slot] = w.for_level(level) * (sum / k as f64);
        }
    }
    Ok(LevelDistances {
        total: levels[0] + levels[1] + levels[2],
        levels,
    })
}

pub fn mg_distance<T: Scalar>(
    sketch: &MGEmbedding<T>,
    photo: &MGEmbedding<T>,
    w: &DistanceWeights,
) -> Result<f64, GranularityError> {
    Ok(mg_distance_levels(sketch, photo, w)?.total)
}
