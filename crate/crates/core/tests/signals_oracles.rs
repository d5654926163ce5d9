//! Spectral and smoothing checks against brute-force references that share
//! no code with the library: a naive DFT periodogram and a direct
//! convolution.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use terrascout::signals::*;

/// Naive-DFT Welch estimate (Hann, mean removal), integrated over a band.
fn oracle_band_power(x: &[f64], rate: f64, seg: usize, overlap: f64, f_lo: f64, f_hi: f64) -> f64 {
    let step = seg - (overlap * seg as f64).round() as usize;
    let w: Vec<f64> = (0..seg)
        .map(|i| (PI * i as f64 / seg as f64).sin().powi(2))
        .collect();
    let wp: f64 = w.iter().map(|v| v * v).sum();
    let df = rate / seg as f64;
    let mut total = 0.0;
    let mut count = 0;
    let mut s = 0;
    while s + seg <= x.len() {
        let part = &x[s..s + seg];
        let mean = part.iter().sum::<f64>() / seg as f64;
        for k in 0..=seg / 2 {
            let f = k as f64 * df;
            if f < f_lo - 1e-9 || f > f_hi + 1e-9 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (n, (&v, &wn)) in part.iter().zip(&w).enumerate() {
                let ang = -2.0 * PI * (k * n) as f64 / seg as f64;
                re += (v - mean) * wn * ang.cos();
                im += (v - mean) * wn * ang.sin();
            }
            let mut p = (re * re + im * im) / (rate * wp);
            if k != 0 && !(seg % 2 == 0 && k == seg / 2) {
                p *= 2.0;
            }
            total += p * df;
        }
        count += 1;
        s += step;
    }
    total / count as f64
}

/// Full-length rectangular periodogram band power.
fn periodogram_band_power(x: &[f64], rate: f64, f_lo: f64, f_hi: f64) -> f64 {
    let n = x.len();
    let df = rate / n as f64;
    let mut total = 0.0;
    for k in 0..=n / 2 {
        let f = k as f64 * df;
        if f < f_lo || f > f_hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ang = -2.0 * PI * (k * i) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let scale = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        total += scale * (re * re + im * im) / (n as f64 * n as f64);
    }
    total
}

fn sine(rate: f64, n: usize, f: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * f * i as f64 / rate + phase).sin())
        .collect()
}

fn series(rate: f64, values: Vec<f64>) -> TimeSeries<f64> {
    let ts = (0..values.len()).map(|i| i as f64 / rate).collect();
    TimeSeries::new(ts, values, rate).unwrap()
}

#[test]
fn unit_sine_band_power_long_record() {
    let x = sine(100.0, 1024, 5.0, 1.0, 0.0);
    let psd = welch_psd(&x, 100.0, &WelchConfig::default()).unwrap();
    let b = psd.band_integral(1.0, 30.0);
    assert!((b - 0.5).abs() <= 0.03, "{b}");
    // independent references: naive Welch, then a full-length periodogram
    let naive = oracle_band_power(&x, 100.0, 128, 0.5, 1.0, 30.0);
    assert!((b - naive).abs() < 1e-9, "{b} vs {naive}");
    let full = periodogram_band_power(&x, 100.0, 1.0, 30.0);
    assert!((b - full).abs() <= 0.03, "{b} vs {full}");
}

#[test]
fn white_noise_parseval() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sigma = 1.7;
    let normal = Normal::new(0.0, sigma).unwrap();
    let x: Vec<f64> = (0..4096).map(|_| normal.sample(&mut rng)).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    let psd = welch_psd(&x, 100.0, &WelchConfig::default()).unwrap();
    let total = psd.band_integral(0.0, 50.0);
    assert!((total / var - 1.0).abs() <= 0.10, "{total} vs {var}");
}

#[test]
fn window_limited_sine() {
    let s = series(100.0, sine(100.0, 600, 5.0, 1.0, 0.3));
    let b = bandpower(3.0, &s, &WindowSpec::default(), &WelchConfig::default()).unwrap();
    assert!((b - 0.5).abs() <= 0.10, "{b}");
}

#[test]
fn out_of_band_rejection() {
    // long record
    let x = sine(100.0, 1024, 0.5, 1.0, 0.0);
    let psd = welch_psd(&x, 100.0, &WelchConfig::default()).unwrap();
    let b = psd.band_integral(1.0, 30.0);
    assert!(b < 0.05, "{b}");
    let full = periodogram_band_power(&x, 100.0, 1.0, 30.0);
    assert!(full < 0.05, "{full}");
    // one-second windows on the sample grid, any phase
    for k in 0..16 {
        let phase = k as f64 * PI / 8.0;
        let s = series(100.0, sine(100.0, 600, 0.5, 1.0, phase));
        let b = bandpower(3.0, &s, &WindowSpec::default(), &WelchConfig::default()).unwrap();
        assert!(b < 0.05, "phase {phase}: {b}");
    }
}

#[test]
fn amplitude_doubling_quadruples_bandpower() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 0.8).unwrap();
    let x: Vec<f64> = (0..600).map(|_| normal.sample(&mut rng)).collect();
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let params = MetricParams::default();
    let q = [3.0];
    let m1 = vibration_raw(&series(100.0, x.clone()), &params, &q).unwrap().values[0];
    let m2 = vibration_raw(&series(100.0, x2), &params, &q).unwrap().values[0];

    let idx: Vec<f64> = x[250..=350].to_vec();
    let b = oracle_band_power(&idx, 100.0, idx.len(), 0.5, 1.0, 30.0);
    assert!((m1 - b.ln_1p()).abs() < 1e-9);
    let expected = ((1.0 + 4.0 * b) / (1.0 + b)).ln();
    assert!((m2 - m1 - expected).abs() < 1e-9, "{} vs {expected}", m2 - m1);
}

fn direct_convolution(values: &[f64], dt: f64, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma / dt + 1e-9).floor() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64 * dt).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (o, w) in (-radius..=radius).zip(&weights) {
                let j = i + o;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

fn metric(values: Vec<f64>, dt: f64) -> MetricSeries {
    MetricSeries {
        timestamps: (0..values.len()).map(|i| i as f64 * dt).collect(),
        values,
        kind: MetricKind::Vibration,
    }
}

#[test]
fn impulse_response_matches_direct_convolution() {
    let dt = 0.05;
    let mut v = vec![0.0; 201];
    v[100] = 1.0;
    let out = smooth_metric(&metric(v.clone(), dt), 0.5);
    let oracle = direct_convolution(&v, dt, 0.5);
    for (a, b) in out.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
    // interior mass is preserved
    let mass: f64 = out.values.iter().sum::<f64>() * dt;
    assert!((mass - dt).abs() < 1e-6 * dt.max(1.0));
    // kernel shape: normalized Gaussian weights
    let peak = out.values[100];
    let ratio = out.values[110] / peak;
    assert!((ratio - (-(0.5f64).powi(2) / (2.0 * 0.25)).exp()).abs() < 1e-9);
}

proptest! {
    #[test]
    fn smoothing_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        x in prop::collection::vec(-10.0f64..10.0, 60),
        y in prop::collection::vec(-10.0f64..10.0, 60),
    ) {
        let dt = 0.1;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = smooth_metric(&metric(mix, dt), 0.5);
        let sx = smooth_metric(&metric(x, dt), 0.5);
        let sy = smooth_metric(&metric(y, dt), 0.5);
        for i in 0..lhs.values.len() {
            let rhs = a * sx.values[i] + b * sy.values[i];
            prop_assert!((lhs.values[i] - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_band_limited(
        amps in prop::collection::vec(0.1f64..2.0, 4),
        freqs in prop::collection::vec(2.0f64..40.0, 4),
        phases in prop::collection::vec(0.0f64..6.28, 4),
    ) {
        let rate = 100.0;
        let x: Vec<f64> = (0..2048)
            .map(|i| {
                let t = i as f64 / rate;
                (0..4).map(|k| amps[k] * (2.0 * PI * freqs[k] * t + phases[k]).sin()).sum()
            })
            .collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let ms = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let psd = welch_psd(&x, rate, &WelchConfig::default()).unwrap();
        let total = psd.band_integral(0.0, rate / 2.0);
        prop_assert!((total / ms - 1.0).abs() < 0.10, "{} vs {}", total, ms);
    }

    #[test]
    fn vibration_monotone_in_bandpower(b1 in 0.0f64..100.0, b2 in 0.0f64..100.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(vibration_from_bandpower(lo) <= vibration_from_bandpower(hi));
    }
}
