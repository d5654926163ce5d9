//! Hand-crafted texture descriptor for gray patches.
//!
//! Layout of the 35 values, in order:
//!
//! | range   | content                                               |
//! |---------|-------------------------------------------------------|
//! | 0..3    | mean, std, cube root of mean absolute third moment     |
//! | 3..19   | 16-bin intensity histogram (fractions)                 |
//! | 19..21  | gradient magnitude mean, std                           |
//! | 21..29  | 8-bin unsigned gradient orientation histogram          |
//! | 29..33  | Laplacian pyramid band energies, finest first          |
//! | 33..35  | mean row variance, mean column variance                |
//!
//! Intensities are scaled to `[0, 1]` before anything else.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

pub const SCHEMA_ID: &str = "texture-v1";
pub const FEATURE_DIM: usize = 35;
pub const HIST_BINS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;
pub const PYRAMID_LEVELS: usize = 4;
/// Smallest side that still leaves a 2×2 top pyramid level.
pub const MIN_PATCH_SIDE: usize = 16;

pub const IDX_MOMENTS: usize = 0;
pub const IDX_HIST: usize = 3;
pub const IDX_GRAD: usize = IDX_HIST + HIST_BINS;
pub const IDX_ORIENT: usize = IDX_GRAD + 2;
pub const IDX_PYRAMID: usize = IDX_ORIENT + ORIENTATION_BINS;
pub const IDX_PROFILES: usize = IDX_PYRAMID + PYRAMID_LEVELS;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("patch must be square with side ≥ {MIN_PATCH_SIDE}, got {width}x{height}")]
    BadPatchShape { width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_id: String,
    pub values: Vec<f64>,
}

/// Gray patch as a dense `f64` image in `[0, 1]`.
struct Img {
    n: usize,
    m: usize,
    px: Vec<f64>,
}

impl Img {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.px[y * self.n + x]
    }
}

fn moments(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).abs().powi(3)).sum::<f64>() / n;
    (mean, var.sqrt(), m3.cbrt())
}

/// Separable 5-tap binomial blur with mirrored borders.
fn binomial_blur(img: &Img) -> Img {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let reflect = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
        i.clamp(0, len - 1) as usize
    };
    let (n, m) = (img.n, img.m);
    let mut tmp = vec![0.0; n * m];
    for y in 0..m {
        for x in 0..n {
            tmp[y * n + x] = (0..5)
                .map(|k| K[k] * img.px[y * n + reflect(x as isize + k as isize - 2, n)])
                .sum();
        }
    }
    let mut out = vec![0.0; n * m];
    for y in 0..m {
        for x in 0..n {
            out[y * n + x] = (0..5)
                .map(|k| K[k] * tmp[reflect(y as isize + k as isize - 2, m) * n + x])
                .sum();
        }
    }
    Img { n, m, px: out }
}

fn downsample(img: &Img) -> Img {
    let (n, m) = (img.n / 2, img.m / 2);
    let px = (0..m)
        .flat_map(|y| (0..n).map(move |x| (x, y)))
        .map(|(x, y)| img.at(2 * x, 2 * y))
        .collect();
    Img { n, m, px }
}

pub fn extract_features(patch: &Raster) -> Result<FeatureVector, FeatureError> {
    let (w, h) = (patch.width(), patch.height());
    if w != h || w < MIN_PATCH_SIDE {
        return Err(FeatureError::BadPatchShape { width: w, height: h });
    }
    let img = Img {
        n: w,
        m: h,
        px: patch.data().iter().map(|&v| (v as f64 / 255.0).clamp(0.0, 1.0)).collect(),
    };
    let mut f = vec![0.0; FEATURE_DIM];

    let (mean, std, skew) = moments(&img.px);
    f[IDX_MOMENTS] = mean;
    f[IDX_MOMENTS + 1] = std;
    f[IDX_MOMENTS + 2] = skew;

    let total = img.px.len() as f64;
    for &v in &img.px {
        let b = ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        f[IDX_HIST + b] += 1.0 / total;
    }

    // central differences on the interior
    let mut mags = Vec::with_capacity((w - 2) * (h - 2));
    let mut orient = [0.0; ORIENTATION_BINS];
    let sector = std::f64::consts::PI / ORIENTATION_BINS as f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
            let gy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
            let mag = gx.hypot(gy);
            mags.push(mag);
            if mag > 0.0 {
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let bin = ((theta / sector).round() as usize) % ORIENTATION_BINS;
                orient[bin] += mag;
            }
        }
    }
    let (gmean, gstd, _) = moments(&mags);
    f[IDX_GRAD] = gmean;
    f[IDX_GRAD + 1] = gstd;
    let osum: f64 = orient.iter().sum();
    if osum > 0.0 {
        for (k, o) in orient.iter().enumerate() {
            f[IDX_ORIENT + k] = o / osum;
        }
    }

    let variance = |v: &[f64]| moments(v).1.powi(2);
    f[IDX_PROFILES] = (0..h).map(|y| variance(&img.px[y * w..(y + 1) * w])).sum::<f64>() / h as f64;
    f[IDX_PROFILES + 1] = (0..w)
        .map(|x| variance(&(0..h).map(|y| img.at(x, y)).collect::<Vec<_>>()))
        .sum::<f64>()
        / w as f64;

    let mut level = img;
    for k in 0..PYRAMID_LEVELS {
        let blurred = binomial_blur(&level);
        f[IDX_PYRAMID + k] = level
            .px
            .iter()
            .zip(&blurred.px)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / level.px.len() as f64;
        level = downsample(&blurred);
    }

    Ok(FeatureVector {
        schema_id: SCHEMA_ID.to_string(),
        values: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> Raster {
        let mut s = seed;
        Raster::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % 256) as f32
        })
    }

    #[test]
    fn constant_patch() {
        let fv = extract_features(&Raster::filled(64, 64, 100.0)).unwrap();
        let f = &fv.values;
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f[IDX_MOMENTS + 1] < 1e-12);
        assert!(f[IDX_MOMENTS + 2] < 1e-12);
        for k in IDX_GRAD..IDX_PROFILES + 2 {
            assert!(f[k].abs() < 1e-12, "feature {k}: {}", f[k]);
        }
        let hist = &f[IDX_HIST..IDX_HIST + HIST_BINS];
        assert_eq!(hist.iter().filter(|&&h| h > 0.0).count(), 1);
        assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_is_rotation_invariant() {
        let p = noise(48, 5);
        let rot = Raster::from_fn(48, 48, |x, y| p.get(y, 47 - x));
        let a = extract_features(&p).unwrap().values;
        let b = extract_features(&rot).unwrap().values;
        for k in IDX_HIST..IDX_HIST + HIST_BINS {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
        // rotation swaps the row and column profiles
        assert!((a[IDX_PROFILES] - b[IDX_PROFILES + 1]).abs() < 1e-12);
    }

    #[test]
    fn vertical_stripes_have_horizontal_gradients() {
        let p = Raster::from_fn(64, 64, |x, _| if (x / 4) % 2 == 0 { 40.0 } else { 210.0 });
        let f = extract_features(&p).unwrap().values;
        assert!((f[IDX_ORIENT] - 1.0).abs() < 1e-12, "{:?}", &f[IDX_ORIENT..IDX_ORIENT + 8]);
        // row variance is the stripe variance, column variance zero
        assert!(f[IDX_PROFILES] > 0.1 && f[IDX_PROFILES + 1] < 1e-12, "{:?}", &f[IDX_PROFILES..]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(extract_features(&Raster::filled(32, 16, 0.0)).is_err());
        assert!(extract_features(&Raster::filled(8, 8, 0.0)).is_err());
    }

    #[test]
    fn blur_lowers_fine_band_energy() {
        let p = noise(64, 2);
        let b = p.gaussian_blur(1.5, 1.5);
        let fp = extract_features(&p).unwrap().values;
        let fb = extract_features(&b).unwrap().values;
        assert!(fb[IDX_PYRAMID] < 0.2 * fp[IDX_PYRAMID]);
    }
}
