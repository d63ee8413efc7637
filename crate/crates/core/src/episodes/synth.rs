//! Procedural face photos and matching stroke episodes.
//!
//! Each face is a parameterized geometry. The photo fills its shapes with
//! colors; the episode draws the same shapes' contours as strokes ordered
//! large-scale first: head outline, hair, facial features, then details.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, EpisodeRecord, PhotoRecord, Split};
use super::{draw_stroke, format_strokes, EpisodeError, Stroke, CANVAS, DEFAULT_STROKE_WIDTH};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_gallery: usize,
    pub n_episodes: usize,
    pub q_min: usize,
    pub q_max: usize,
    /// Share of photos (and their episodes) placed in the test split.
    pub test_fraction: f64,
    pub stroke_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_gallery: 64,
            n_episodes: 64,
            q_min: 8,
            q_max: 20,
            test_fraction: 0.25,
            stroke_width: DEFAULT_STROKE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        u * u + v * v <= 1.0
    }

    fn outline(&self, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let a = TAU * i as f64 / n as f64;
                (self.cx + self.rx * a.cos(), self.cy + self.ry * a.sin())
            })
            .collect()
    }
}

type Color = [u8; 3];
type Polyline = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceGeometry {
    pub head: Ellipse,
    /// Enlarged head ellipse whose part above `hairline_y` is hair.
    pub hair: Ellipse,
    pub hairline_y: f64,
    pub eyes: [Ellipse; 2],
    pub pupils: [Ellipse; 2],
    pub brows: [Polyline; 2],
    pub nose: Polyline,
    pub mouth: Ellipse,
    pub ears: [Ellipse; 2],
    pub neck: [Polyline; 2],
    pub strands: Vec<Polyline>,
    pub background: Color,
    pub skin: Color,
    pub hair_color: Color,
    pub lip_color: Color,
}

fn color(rng: &mut ChaCha8Rng, lo: [u8; 3], hi: [u8; 3]) -> Color {
    [0, 1, 2].map(|i| rng.random_range(lo[i]..=hi[i]))
}

/// Samples one face; `max_strands` extra hair strands are generated so
/// episodes can be padded up to their stroke budget.
pub fn sample_face(rng: &mut ChaCha8Rng, max_strands: usize) -> FaceGeometry {
    let head = Ellipse {
        cx: rng.random_range(0.42..0.58),
        cy: rng.random_range(0.48..0.58),
        rx: rng.random_range(0.22..0.33),
        ry: rng.random_range(0.28..0.37),
    };
    let volume = rng.random_range(1.04..1.15);
    let hair = Ellipse {
        rx: head.rx * volume,
        ry: head.ry * volume,
        ..head
    };
    let hairline_y = head.cy - head.ry * rng.random_range(0.25..0.6);

    let eye_y = head.cy - head.ry * rng.random_range(0.0..0.2);
    let eye_dx = head.rx * rng.random_range(0.35..0.55);
    let eye_rx = head.rx * rng.random_range(0.14..0.24);
    let eye_ry = eye_rx * rng.random_range(0.4..0.7);
    let look = rng.random_range(-0.4..0.4) * eye_rx;
    let eyes = [-1.0, 1.0].map(|s| Ellipse {
        cx: head.cx + s * eye_dx,
        cy: eye_y,
        rx: eye_rx,
        ry: eye_ry,
    });
    let pupil_r = eye_ry * rng.random_range(0.5..0.8);
    let pupils = eyes.map(|e| Ellipse {
        cx: e.cx + look,
        cy: e.cy,
        rx: pupil_r,
        ry: pupil_r,
    });
    let brow_gap = eye_ry + head.ry * rng.random_range(0.06..0.14);
    let tilt = rng.random_range(-0.03..0.03);
    let brows = [-1.0, 1.0].map(|s: f64| {
        let cx = head.cx + s * eye_dx;
        let y = eye_y - brow_gap;
        vec![
            (cx - eye_rx * 1.1, y + s * tilt),
            (cx, y - 0.01),
            (cx + eye_rx * 1.1, y - s * tilt),
        ]
    });

    let nose_top = eye_y + eye_ry;
    let nose_y = head.cy + head.ry * rng.random_range(0.12..0.3);
    let nose_w = head.rx * rng.random_range(0.1..0.22);
    let nose_dx = rng.random_range(-0.02..0.02);
    let nose = vec![
        (head.cx + nose_dx, nose_top),
        (head.cx + nose_dx + nose_w * 0.5, nose_y),
        (head.cx + nose_dx - nose_w, nose_y + 0.01),
    ];
    let mouth = Ellipse {
        cx: head.cx + rng.random_range(-0.02..0.02),
        cy: head.cy + head.ry * rng.random_range(0.45..0.65),
        rx: head.rx * rng.random_range(0.22..0.45),
        ry: head.ry * rng.random_range(0.04..0.1),
    };
    let ear_ry = head.ry * rng.random_range(0.15..0.25);
    let ears = [-1.0, 1.0].map(|s| Ellipse {
        cx: head.cx + s * head.rx,
        cy: eye_y + ear_ry * 0.5,
        rx: head.rx * rng.random_range(0.08..0.14),
        ry: ear_ry,
    });
    let neck_w = head.rx * rng.random_range(0.35..0.55);
    let neck = [-1.0, 1.0].map(|s| {
        let x = head.cx + s * neck_w;
        let dy = (x - head.cx) / head.rx;
        let top = head.cy + head.ry * (1.0 - dy * dy).max(0.0).sqrt();
        vec![(x, top), (x, (top + 0.2).min(1.0))]
    });
    let strands = (0..max_strands)
        .map(|_| {
            let x = head.cx + hair.rx * rng.random_range(-0.7..0.7);
            let bend = rng.random_range(-0.04..0.04);
            let top = hair.cy - hair.ry * rng.random_range(0.75..0.95);
            let bottom = hairline_y - 0.01;
            vec![
                (x, bottom),
                (x + bend, (top + bottom) / 2.0),
                (x + bend * 0.5, top),
            ]
        })
        .collect();

    FaceGeometry {
        head,
        hair,
        hairline_y,
        eyes,
        pupils,
        brows,
        nose,
        mouth,
        ears,
        neck,
        strands,
        background: color(rng, [150, 150, 150], [235, 235, 235]),
        skin: color(rng, [170, 120, 90], [250, 210, 180]),
        hair_color: color(rng, [20, 15, 10], [110, 80, 60]),
        lip_color: color(rng, [150, 50, 50], [210, 100, 100]),
    }
}

fn paint(img: &mut RgbImage, c: Color, inside: impl Fn(f64, f64) -> bool) {
    let (w, h) = (img.width(), img.height());
    for py in 0..h {
        let y = (py as f64 + 0.5) / h as f64;
        for px in 0..w {
            let x = (px as f64 + 0.5) / w as f64;
            if inside(x, y) {
                img.put_pixel(px, py, Rgb(c));
            }
        }
    }
}

fn paint_line(img: &mut RgbImage, c: Color, line: &[(f64, f64)], width: f64) {
    let mut mask = Raster::blank(img.width() as usize, img.height() as usize);
    let stroke = Stroke {
        points: clamp_points(line),
        width,
    };
    draw_stroke(&mut mask, &stroke).expect("clamped stroke");
    for (i, &v) in mask.data().iter().enumerate() {
        if v > 0.5 {
            let (x, y) = ((i % mask.width()) as u32, (i / mask.width()) as u32);
            img.put_pixel(x, y, Rgb(c));
        }
    }
}

fn shade(c: Color, f: f64) -> Color {
    c.map(|v| (v as f64 * f).clamp(0.0, 255.0) as u8)
}

/// Filled-color rendering of a face at `canvas x canvas`.
pub fn render_face(g: &FaceGeometry, canvas: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(canvas as u32, canvas as u32, Rgb(g.background));
    let line_w = canvas as f64 / 256.0 * 3.0;
    let neck_x = (g.neck[0][0].0, g.neck[1][0].0);
    paint(&mut img, shade(g.skin, 0.9), |x, y| {
        x >= neck_x.0 && x <= neck_x.1 && y >= g.head.cy
    });
    for ear in &g.ears {
        paint(&mut img, shade(g.skin, 0.95), |x, y| ear.contains(x, y));
    }
    paint(&mut img, g.skin, |x, y| g.head.contains(x, y));
    paint(&mut img, g.hair_color, |x, y| {
        g.hair.contains(x, y) && y < g.hairline_y
    });
    for strand in &g.strands {
        paint_line(&mut img, shade(g.hair_color, 1.6), strand, line_w);
    }
    for (eye, pupil) in g.eyes.iter().zip(&g.pupils) {
        paint(&mut img, [245, 245, 245], |x, y| eye.contains(x, y));
        paint(&mut img, [30, 30, 40], |x, y| {
            pupil.contains(x, y) && eye.contains(x, y)
        });
    }
    for brow in &g.brows {
        paint_line(&mut img, shade(g.hair_color, 0.8), brow, line_w * 1.5);
    }
    paint_line(&mut img, shade(g.skin, 0.6), &g.nose, line_w);
    paint(&mut img, g.lip_color, |x, y| g.mouth.contains(x, y));
    img
}

fn clamp_points(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Category {
    Outline,
    Hair,
    Feature,
    Detail,
}

/// Contour strokes of a face in large-scale-first order, truncated or
/// padded with hair strands to exactly `q` strokes.
pub fn face_strokes(g: &FaceGeometry, q: usize, width: f64) -> Vec<Stroke> {
    let mut hair_outline: Polyline = g
        .hair
        .outline(48)
        .into_iter()
        .filter(|&(_, y)| y < g.hairline_y)
        .collect();
    // Close the hair shape along the hairline.
    hair_outline.sort_by(|a, b| {
        let ang = |p: &(f64, f64)| (p.1 - g.hair.cy).atan2(p.0 - g.hair.cx);
        ang(a).total_cmp(&ang(b))
    });
    if let (Some(&first), Some(&last)) = (hair_outline.first(), hair_outline.last()) {
        hair_outline.insert(0, (first.0, g.hairline_y));
        hair_outline.push((last.0, g.hairline_y));
    }

    let mut tagged: Vec<(Category, Polyline)> = vec![
        (Category::Outline, g.head.outline(48)),
        (Category::Hair, hair_outline),
        (Category::Feature, g.eyes[0].outline(20)),
        (Category::Feature, g.eyes[1].outline(20)),
        (Category::Feature, g.nose.clone()),
        (Category::Feature, g.mouth.outline(24)),
        (Category::Detail, g.brows[0].clone()),
        (Category::Detail, g.brows[1].clone()),
        (Category::Detail, g.pupils[0].outline(12)),
        (Category::Detail, g.pupils[1].outline(12)),
        (Category::Detail, g.ears[0].outline(16)),
        (Category::Detail, g.ears[1].outline(16)),
        (Category::Detail, g.neck[0].clone()),
        (Category::Detail, g.neck[1].clone()),
    ];
    let fixed = tagged.len();
    tagged.extend(
        g.strands
            .iter()
            .take(q.saturating_sub(fixed))
            .map(|s| (Category::Detail, s.clone())),
    );
    let mut strokes: Vec<(Category, Stroke)> = tagged
        .into_iter()
        .map(|(c, pts)| {
            (
                c,
                Stroke {
                    points: clamp_points(&pts),
                    width,
                },
            )
        })
        .collect();
    strokes.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.bbox_area().total_cmp(&a.1.bbox_area()))
    });
    strokes.truncate(q);
    strokes.into_iter().map(|(_, s)| s.quantized()).collect()
}

fn photo_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 32) + index as u64);
    rng
}

/// Geometry of gallery photo `index` for a given generator config.
pub fn gallery_face(cfg: &SynthConfig, index: usize) -> FaceGeometry {
    sample_face(
        &mut photo_rng(cfg.seed, index),
        cfg.q_max.saturating_sub(14),
    )
}

pub fn photo_id(index: usize) -> String {
    format!("p{index:04}")
}

pub fn episode_id(index: usize) -> String {
    format!("e{index:04}")
}

/// Writes a synthetic dataset under `root` and returns its manifest.
/// Episode `i` draws photo `i mod n_gallery`; the last
/// `round(n_gallery * test_fraction)` photos form the test split.
pub fn synth_dataset(root: &Path, cfg: &SynthConfig) -> Result<DatasetManifest, EpisodeError> {
    assert!(cfg.n_gallery >= 2, "gallery needs at least two photos");
    assert!(
        cfg.q_min >= 3 && cfg.q_min <= cfg.q_max,
        "invalid stroke range"
    );
    let io = |path: PathBuf| move |source| EpisodeError::Io { path, source };
    for dir in ["photos", "strokes"] {
        let p = root.join(dir);
        fs::create_dir_all(&p).map_err(io(p.clone()))?;
    }
    let n_test =
        ((cfg.n_gallery as f64 * cfg.test_fraction).round() as usize).min(cfg.n_gallery - 1);
    let split_of = |photo: usize| {
        if photo >= cfg.n_gallery - n_test {
            Split::Test
        } else {
            Split::Train
        }
    };

    let mut faces = Vec::with_capacity(cfg.n_gallery);
    let mut photos = Vec::with_capacity(cfg.n_gallery);
    for i in 0..cfg.n_gallery {
        let face = gallery_face(cfg, i);
        let rel = PathBuf::from(format!("photos/{}.png", photo_id(i)));
        let path = root.join(&rel);
        render_face(&face, CANVAS)
            .save(&path)
            .map_err(|source| EpisodeError::Image { path, source })?;
        photos.push(PhotoRecord {
            id: photo_id(i),
            path: rel,
        });
        faces.push(face);
    }

    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    for e in 0..cfg.n_episodes {
        let photo = e % cfg.n_gallery;
        let q = episode_rng(cfg.seed, e).random_range(cfg.q_min..=cfg.q_max);
        let strokes = face_strokes(&faces[photo], q, cfg.stroke_width);
        let rel = PathBuf::from(format!("strokes/{}.txt", episode_id(e)));
        let path = root.join(&rel);
        fs::write(&path, format_strokes(&strokes)).map_err(io(path.clone()))?;
        episodes.push(EpisodeRecord {
            id: episode_id(e),
            photo_id: photo_id(photo),
            strokes: rel,
            split: split_of(photo),
        });
    }

    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        photos,
        episodes,
    };
    manifest.write()?;
    Ok(manifest)
}
