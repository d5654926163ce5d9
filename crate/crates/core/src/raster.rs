//! Single-channel floating point rasters and validity masks.
//!
//! Gray levels live on the 0..=255 scale of 8-bit images. Pixel `(x, y)` has
//! its center at integer coordinates, so bilinear sampling is defined on
//! `[0, width - 1] x [0, height - 1]`.

use std::path::Path;

use image::{GrayImage, Luma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster shape {width}x{height} does not match {len} samples")]
    Shape {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("empty raster")]
    Empty,
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty);
        }
        if data.len() != width * height {
            return Err(RasterError::Shape {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the
    /// pixel-center hull.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        self.sample_bilinear_masked(x, y, None)
    }

    /// Like [`Raster::sample_bilinear`], but every neighbour carrying a
    /// non-zero weight must also be valid in `mask`.
    pub fn sample_bilinear_masked(&self, x: f64, y: f64, mask: Option<&Mask>) -> Option<f64> {
        const EDGE: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -EDGE && y >= -EDGE && x <= max_x + EDGE && y <= max_y + EDGE) {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;

        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = 0.0;
        for (tx, ty, w) in taps {
            if w <= 0.0 {
                continue;
            }
            if let Some(m) = mask {
                if !m.get(tx, ty) {
                    return None;
                }
            }
            acc += w * self.get(tx, ty) as f64;
        }
        Some(acc)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize).round().clamp(0.0, 255.0);
            Luma([v as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32).0[0] as f32
        })
    }

    /// Reads any PNG, converting to 8-bit luma.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            source,
        })?;
        let raster = Self::from_gray8(&img.to_luma8());
        if raster.data.is_empty() {
            return Err(RasterError::Empty);
        }
        Ok(raster)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        self.to_gray8().save(path).map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            source,
        })
    }

    /// Separable Gaussian blur with independent horizontal and vertical
    /// standard deviations (pixels). Borders are handled by renormalizing
    /// the kernel over the in-image taps.
    pub fn gaussian_blur(&self, sigma_x: f64, sigma_y: f64) -> Raster {
        let horizontal = blur_axis(self, sigma_x, true);
        blur_axis(&horizontal, sigma_y, false)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect()
}

fn blur_axis(src: &Raster, sigma: f64, horizontal: bool) -> Raster {
    if sigma <= 1e-6 {
        return src.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (src.width as isize, src.height as isize);
    Raster::from_fn(src.width, src.height, |x, y| {
        let (mut acc, mut norm) = (0.0, 0.0);
        for (k, &kw) in kernel.iter().enumerate() {
            let off = k as isize - radius;
            let (sx, sy) = if horizontal {
                (x as isize + off, y as isize)
            } else {
                (x as isize, y as isize + off)
            };
            if sx < 0 || sy < 0 || sx >= w || sy >= h {
                continue;
            }
            acc += kw * src.get(sx as usize, sy as usize) as f64;
            norm += kw;
        }
        (acc / norm) as f32
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_on_pixel_centers_is_exact() {
        let r = Raster::from_fn(4, 3, |x, y| (x + 10 * y) as f32);
        assert_eq!(r.sample_bilinear(2.0, 1.0), Some(12.0));
        assert_eq!(r.sample_bilinear(3.0, 2.0), Some(23.0));
        assert_eq!(r.sample_bilinear(1.5, 0.5), Some(6.5));
    }

    #[test]
    fn bilinear_rejects_outside() {
        let r = Raster::filled(4, 4, 1.0);
        assert!(r.sample_bilinear(-0.1, 0.0).is_none());
        assert!(r.sample_bilinear(0.0, 3.2).is_none());
    }

    #[test]
    fn masked_sampling_requires_weighted_neighbours() {
        let r = Raster::filled(3, 3, 5.0);
        let mut m = Mask::filled(3, 3, true);
        m.set(2, 2, false);
        assert!(r.sample_bilinear_masked(1.5, 1.5, Some(&m)).is_none());
        // exactly on a valid center the invalid neighbour has zero weight
        assert_eq!(r.sample_bilinear_masked(1.0, 1.0, Some(&m)), Some(5.0));
    }

    #[test]
    fn blur_preserves_constant() {
        let r = Raster::filled(9, 7, 42.0);
        let b = r.gaussian_blur(1.5, 3.0);
        assert!(b.data().iter().all(|&v| (v - 42.0).abs() < 1e-4));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            Raster::from_vec(3, 3, vec![0.0; 8]),
            Err(RasterError::Shape { .. })
        ));
    }
}
