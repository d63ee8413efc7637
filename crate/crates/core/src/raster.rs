//! Single-channel ink rasters and conversion of rasters and photos into
//! model input tensors.

use image::{GrayImage, RgbImage};

use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Grayscale sketch raster: 0 is background, 1 is full ink.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn blank(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height).then_some(Raster {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Max-composites `value` into one pixel.
    #[inline]
    pub fn ink(&mut self, row: usize, col: usize, value: f32) {
        let p = &mut self.data[row * self.width + col];
        if value > *p {
            *p = value;
        }
    }

    /// Pixels whose ink exceeds half of full ink.
    pub fn inked_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Raster {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        let bytes = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("raster dimensions")
    }
}

/// Box-filter resample of a `src_h x src_w` plane to `size x size`.
fn resample_plane(src: &[f32], src_h: usize, src_w: usize, size: usize, out: &mut Vec<f32>) {
    for i in 0..size {
        let (r0, r1) = span(i, size, src_h);
        for j in 0..size {
            let (c0, c1) = span(j, size, src_w);
            let mut acc = 0.0f32;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += src[r * src_w + c];
                }
            }
            out.push(acc / ((r1 - r0) * (c1 - c0)) as f32);
        }
    }
}

/// Source index range covered by output index `i` of `size` outputs.
fn span(i: usize, size: usize, src: usize) -> (usize, usize) {
    let lo = i * src / size;
    let hi = ((i + 1) * src / size).max(lo + 1).min(src);
    (lo.min(src - 1), hi)
}

/// Sketch raster as a 3-channel `[3, size, size]` tensor (ink replicated
/// into every channel so one backbone serves sketches and photos).
pub fn sketch_tensor<T: Scalar>(raster: &Raster, size: usize) -> Tensor<T> {
    let mut plane = Vec::with_capacity(size * size);
    resample_plane(&raster.data, raster.height, raster.width, size, &mut plane);
    let mut data = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        data.extend(plane.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(vec![3, size, size], data).expect("sketch tensor shape")
}

/// RGB photo as a `[3, size, size]` tensor with values in [0, 1].
pub fn photo_tensor<T: Scalar>(img: &RgbImage, size: usize) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(3 * size * size);
    let mut plane_out = Vec::with_capacity(size * size);
    for ch in 0..3 {
        let plane: Vec<f32> = img.pixels().map(|p| p.0[ch] as f32 / 255.0).collect();
        plane_out.clear();
        resample_plane(&plane, h, w, size, &mut plane_out);
        data.extend(plane_out.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(vec![3, size, size], data).expect("photo tensor shape")
}

/// Copies rows `[top, top+height)` and columns `[left, left+width)` of a
/// `[C,H,W]` tensor.
pub fn crop<T: Scalar>(
    t: &Tensor<T>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    assert!(top + height <= h && left + width <= w, "crop out of bounds");
    let mut data = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for r in top..top + height {
            let start = (ch * h + r) * w + left;
            data.extend_from_slice(&t.data()[start..start + width]);
        }
    }
    Tensor::new(vec![c, height, width], data).expect("crop shape")
}
