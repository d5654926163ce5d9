//! Proprioceptive label generation: Welch PSD, vibration bandpower,
//! angular-rate bumpiness and traversal energy, plus Gaussian smoothing.

use std::cell::RefCell;
use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("window [{lo:.3}, {hi:.3}] s is outside the series support [{start:.3}, {end:.3}] s")]
    WindowOutOfRange { lo: f64, hi: f64, start: f64, end: f64 },
    #[error("time {t:.3} s is outside the metric support")]
    OutOfSupport { t: f64 },
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Timestamp slack when deciding window membership, seconds.
const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    timestamps: Vec<f64>,
    values: Vec<T>,
    nominal_rate: f64,
}

impl<T> TimeSeries<T> {
    pub fn new(timestamps: Vec<f64>, values: Vec<T>, nominal_rate: f64) -> Result<Self, SignalError> {
        if timestamps.len() != values.len() {
            return Err(SignalError::InvalidSeries(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(SignalError::TooFewSamples {
                needed: 2,
                got: timestamps.len(),
            });
        }
        if !(nominal_rate > 0.0) {
            return Err(SignalError::InvalidSeries("nominal rate must be positive".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SignalError::InvalidSeries(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        let mut dts: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(f64::total_cmp);
        let median_rate = 1.0 / dts[dts.len() / 2];
        if (median_rate - nominal_rate).abs() / nominal_rate >= 0.05 {
            return Err(SignalError::InvalidSeries(format!(
                "median rate {median_rate:.3} Hz deviates from nominal {nominal_rate} Hz"
            )));
        }
        Ok(Self {
            timestamps,
            values,
            nominal_rate,
        })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamps[self.timestamps.len() - 1]
    }

    /// Index range of samples with `lo <= t <= hi`.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Range<usize> {
        let a = self.timestamps.partition_point(|&t| t < lo - TIME_EPS);
        let b = self.timestamps.partition_point(|&t| t <= hi + TIME_EPS);
        a..b.max(a)
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let i = self.timestamps.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i == self.timestamps.len() {
            i - 1
        } else if t - self.timestamps[i - 1] <= self.timestamps[i] - t {
            i - 1
        } else {
            i
        }
    }
}

/// Evaluation window: the time needed to drive one robot length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub robot_length: f64,
    pub speed: f64,
}

impl WindowSpec {
    pub fn new(robot_length: f64, speed: f64) -> Result<Self, SignalError> {
        if !(robot_length > 0.0 && speed > 0.0) {
            return Err(SignalError::InvalidConfig(
                "robot length and speed must be positive".into(),
            ));
        }
        Ok(Self {
            robot_length,
            speed,
        })
    }

    /// Half-window, seconds.
    pub fn alpha(&self) -> f64 {
        self.robot_length / (2.0 * self.speed)
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            robot_length: 1.5,
            speed: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFunction {
    Hann,
}

impl WindowFunction {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // periodic Hann
            WindowFunction::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchConfig {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window_function: WindowFunction,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_length: 128,
            overlap_fraction: 0.5,
            window_function: WindowFunction::Hann,
            f_min: 1.0,
            f_max: 30.0,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self, rate: f64) -> Result<(), SignalError> {
        if self.segment_length < 8 {
            return Err(SignalError::InvalidConfig(format!(
                "segment length {} < 8",
                self.segment_length
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(SignalError::InvalidConfig("overlap must lie in [0, 1)".into()));
        }
        if !(self.f_min < self.f_max && self.f_max <= rate / 2.0 + 1e-12) {
            return Err(SignalError::InvalidConfig(format!(
                "band [{}, {}] Hz invalid for rate {rate} Hz",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub density: Vec<f64>,
    pub resolution: f64,
}

impl Psd {
    /// Rectangle-rule integral over bins with `f_min <= f <= f_max`.
    pub fn band_integral(&self, f_min: f64, f_max: f64) -> f64 {
        let eps = 1e-9 * self.resolution;
        self.frequencies
            .iter()
            .zip(&self.density)
            .filter(|(&f, _)| f >= f_min - eps && f <= f_max + eps)
            .map(|(_, &p)| p * self.resolution)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Welch PSD: mean of Hann-windowed, mean-removed, overlapped periodograms,
/// density-scaled so the integral over `[0, rate/2]` equals the signal's
/// (mean-removed) mean square.
pub fn welch_psd(x: &[f64], rate: f64, cfg: &WelchConfig) -> Result<Psd, SignalError> {
    let n = cfg.segment_length;
    if n < 8 {
        return Err(SignalError::InvalidConfig(format!("segment length {n} < 8")));
    }
    if !(0.0..1.0).contains(&cfg.overlap_fraction) || !(rate > 0.0) {
        return Err(SignalError::InvalidConfig("bad overlap or rate".into()));
    }
    if x.len() < n {
        return Err(SignalError::TooFewSamples {
            needed: n,
            got: x.len(),
        });
    }
    let step = (n - (cfg.overlap_fraction * n as f64).round() as usize).max(1);
    let window = cfg.window_function.coefficients(n);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));

    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= x.len() {
        let seg = &x[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for (b, (&v, &w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (rate * window_power * segments as f64);
    let density: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let resolution = rate / n as f64;
    Ok(Psd {
        frequencies: (0..bins).map(|k| k as f64 * resolution).collect(),
        density,
        resolution,
    })
}

/// Band power of `series` over `[t - α, t + α]`. The Welch segment length is
/// clamped to the window length.
pub fn bandpower(
    t: f64,
    series: &TimeSeries<f64>,
    spec: &WindowSpec,
    cfg: &WelchConfig,
) -> Result<f64, SignalError> {
    let alpha = spec.alpha();
    let (lo, hi) = (t - alpha, t + alpha);
    check_window(lo, hi, series.start(), series.end())?;
    let rate = series.nominal_rate();
    cfg.validate(rate)?;
    let idx = series.window_indices(lo, hi);
    let samples = &series.values()[idx];
    if samples.len() < 8 {
        return Err(SignalError::TooFewSamples {
            needed: 8,
            got: samples.len(),
        });
    }
    let clamped = WelchConfig {
        segment_length: cfg.segment_length.min(samples.len()),
        ..*cfg
    };
    let psd = welch_psd(samples, rate, &clamped)?;
    Ok(psd.band_integral(cfg.f_min, cfg.f_max))
}

fn check_window(lo: f64, hi: f64, start: f64, end: f64) -> Result<(), SignalError> {
    if lo < start - TIME_EPS || hi > end + TIME_EPS {
        return Err(SignalError::WindowOutOfRange { lo, hi, start, end });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "m_z")]
    Vibration,
    #[serde(rename = "m_omega")]
    Bumpiness,
    #[serde(rename = "m_p")]
    Energy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Vibration, MetricKind::Bumpiness, MetricKind::Energy];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Vibration => "m_z",
            MetricKind::Bumpiness => "m_omega",
            MetricKind::Energy => "m_p",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m_z" | "vibration" => Ok(MetricKind::Vibration),
            "m_omega" | "bumpiness" => Ok(MetricKind::Bumpiness),
            "m_p" | "energy" => Ok(MetricKind::Energy),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: MetricKind,
}

/// Everything needed to turn raw streams into smoothed metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    pub window: WindowSpec,
    pub welch: WelchConfig,
    /// Gaussian smoothing standard deviation, seconds.
    pub smoothing_sigma: f64,
    /// Max timestamp gap when pairing current and voltage samples, seconds.
    pub pairing_tolerance: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            welch: WelchConfig::default(),
            smoothing_sigma: 0.5,
            pairing_tolerance: 0.06,
        }
    }
}

/// `ln(1 + B)`.
pub fn vibration_from_bandpower(b: f64) -> f64 {
    b.ln_1p()
}

pub fn vibration_raw(
    a_z: &TimeSeries<f64>,
    params: &MetricParams,
    query: &[f64],
) -> Result<MetricSeries, SignalError> {
    let values = query
        .iter()
        .map(|&t| bandpower(t, a_z, &params.window, &params.welch).map(vibration_from_bandpower))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricSeries {
        timestamps: query.to_vec(),
        values,
        kind: MetricKind::Vibration,
    })
}

/// Vibration metric, smoothed after the log transform.
pub fn vibration_metric(
    a_z: &TimeSeries<f64>,
    params: &MetricParams,
    query: &[f64],
) -> Result<MetricSeries, SignalError> {
    Ok(smooth_metric(&vibration_raw(a_z, params, query)?, params.smoothing_sigma))
}

pub fn bumpiness_raw(omega: &TimeSeries<[f64; 2]>, query: &[f64]) -> Result<MetricSeries, SignalError> {
    let slack = 1.0 / omega.nominal_rate();
    let values = query
        .iter()
        .map(|&t| {
            check_window(t, t, omega.start() - slack, omega.end() + slack)?;
            let [wx, wy] = omega.values()[omega.nearest_index(t)];
            Ok(wx.hypot(wy))
        })
        .collect::<Result<Vec<_>, SignalError>>()?;
    Ok(MetricSeries {
        timestamps: query.to_vec(),
        values,
        kind: MetricKind::Bumpiness,
    })
}

/// Norm of roll/pitch angular rates at the nearest sample, smoothed.
pub fn bumpiness_metric(
    omega: &TimeSeries<[f64; 2]>,
    params: &MetricParams,
    query: &[f64],
) -> Result<MetricSeries, SignalError> {
    Ok(smooth_metric(&bumpiness_raw(omega, query)?, params.smoothing_sigma))
}

/// Instantaneous electrical power from current and voltage streams paired by
/// nearest timestamp. Pairs further apart than `tolerance` are dropped.
pub fn pair_power(
    current: &TimeSeries<f64>,
    voltage: &TimeSeries<f64>,
    tolerance: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut ts = Vec::with_capacity(current.len());
    let mut ps = Vec::with_capacity(current.len());
    for (&t, &i) in current.timestamps().iter().zip(current.values()) {
        let j = voltage.nearest_index(t);
        if (voltage.timestamps()[j] - t).abs() <= tolerance + 1e-12 {
            ts.push(t);
            ps.push(i * voltage.values()[j]);
        }
    }
    (ts, ps)
}

/// `Σ I·V·Δt` over `[t - α, t + α]`, each paired sample held until the next
/// one and clipped to the window.
fn windowed_energy(ts: &[f64], power: &[f64], lo: f64, hi: f64) -> f64 {
    let n = ts.len();
    let first = ts.partition_point(|&s| s <= lo).saturating_sub(1);
    // accumulate deviations from the first held value so that a constant
    // power integrates to exactly P·(hi - lo)
    let reference = power[first];
    let mut energy = 0.0;
    for k in first..n {
        let start = ts[k];
        if start >= hi {
            break;
        }
        let end = if k + 1 < n { ts[k + 1] } else { ts[k] + (ts[k] - ts[k - 1]) };
        let overlap = end.min(hi) - start.max(lo);
        if overlap > 0.0 {
            energy += (power[k] - reference) * overlap;
        }
    }
    reference * (hi - lo) + energy
}

pub fn energy_raw(
    current: &TimeSeries<f64>,
    voltage: &TimeSeries<f64>,
    params: &MetricParams,
    query: &[f64],
) -> Result<MetricSeries, SignalError> {
    let (ts, ps) = pair_power(current, voltage, params.pairing_tolerance);
    if ts.len() < 2 {
        return Err(SignalError::TooFewSamples {
            needed: 2,
            got: ts.len(),
        });
    }
    let end = ts[ts.len() - 1] + (ts[ts.len() - 1] - ts[ts.len() - 2]);
    let alpha = params.window.alpha();
    let values = query
        .iter()
        .map(|&t| {
            check_window(t - alpha, t + alpha, ts[0], end)?;
            Ok(windowed_energy(&ts, &ps, t - alpha, t + alpha))
        })
        .collect::<Result<Vec<_>, SignalError>>()?;
    Ok(MetricSeries {
        timestamps: query.to_vec(),
        values,
        kind: MetricKind::Energy,
    })
}

/// Electrical energy spent over the evaluation window, smoothed.
pub fn energy_metric(
    current: &TimeSeries<f64>,
    voltage: &TimeSeries<f64>,
    params: &MetricParams,
    query: &[f64],
) -> Result<MetricSeries, SignalError> {
    Ok(smooth_metric(
        &energy_raw(current, voltage, params, query)?,
        params.smoothing_sigma,
    ))
}

/// Gaussian smoothing in time, kernel truncated at 3σ and renormalized over
/// the samples actually present.
pub fn smooth_metric(m: &MetricSeries, sigma: f64) -> MetricSeries {
    assert!(sigma > 0.0, "smoothing sigma must be positive");
    let ts = &m.timestamps;
    let reach = 3.0 * sigma;
    let inv = -0.5 / (sigma * sigma);
    let mut out = Vec::with_capacity(ts.len());
    let mut lo = 0;
    for (i, &t) in ts.iter().enumerate() {
        while ts[lo] < t - reach - 1e-12 {
            lo += 1;
        }
        let (mut acc, mut norm) = (0.0, 0.0);
        let mut j = lo;
        while j < ts.len() && ts[j] <= t + reach + 1e-12 {
            let d = ts[j] - t;
            let w = (d * d * inv).exp();
            acc += w * m.values[j];
            norm += w;
            j += 1;
        }
        debug_assert!(j > i);
        out.push(acc / norm);
    }
    MetricSeries {
        timestamps: ts.clone(),
        values: out,
        kind: m.kind,
    }
}

/// Linear interpolation of a metric at `t`.
pub fn label_at_pose(metric: &MetricSeries, t: f64) -> Result<f64, SignalError> {
    let ts = &metric.timestamps;
    if ts.is_empty() || t < ts[0] - 1e-9 || t > ts[ts.len() - 1] + 1e-9 {
        return Err(SignalError::OutOfSupport { t });
    }
    let i = ts.partition_point(|&s| s <= t);
    if i == 0 {
        return Ok(metric.values[0]);
    }
    if i == ts.len() {
        return Ok(metric.values[ts.len() - 1]);
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    let f = (t - t0) / (t1 - t0);
    Ok(metric.values[i - 1] + f * (metric.values[i] - metric.values[i - 1]))
}

/// Query grid at `rate` covering every time whose window fits inside
/// `[start, end]`.
pub fn query_grid(start: f64, end: f64, alpha: f64, rate: f64) -> Vec<f64> {
    let first = start + alpha;
    let last = end - alpha;
    if last < first {
        return Vec::new();
    }
    let n = ((last - first) * rate + 1e-9).floor() as usize + 1;
    (0..n).map(|k| first + k as f64 / rate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn uniform(rate: f64, n: usize, f: impl Fn(f64) -> f64) -> TimeSeries<f64> {
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let vs = ts.iter().map(|&t| f(t)).collect();
        TimeSeries::new(ts, vs, rate).unwrap()
    }

    #[test]
    fn series_validation() {
        assert!(TimeSeries::new(vec![0.0, 0.0], vec![1.0, 2.0], 10.0).is_err());
        assert!(TimeSeries::new(vec![0.0, 0.1, 0.2], vec![1.0, 2.0, 3.0], 20.0).is_err());
        assert!(TimeSeries::new(vec![0.0, 0.1, 0.2], vec![1.0, 2.0], 10.0).is_err());
        assert!(TimeSeries::new(vec![0.0, 0.1, 0.2], vec![1.0, 2.0, 3.0], 10.0).is_ok());
    }

    #[test]
    fn window_alpha() {
        let w = WindowSpec::default();
        assert!((w.alpha() - 0.5).abs() < 1e-12);
        assert!(WindowSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn welch_constant_signal_has_no_ac_power() {
        let x = vec![3.7; 1024];
        let psd = welch_psd(&x, 100.0, &WelchConfig::default()).unwrap();
        for (f, p) in psd.frequencies.iter().zip(&psd.density) {
            if *f >= 1.0 {
                assert!(p.abs() < 1e-20, "{f} Hz: {p}");
            }
        }
    }

    #[test]
    fn welch_too_few_samples() {
        assert!(matches!(
            welch_psd(&[0.0; 64], 100.0, &WelchConfig::default()),
            Err(SignalError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn bandpower_zero_signal() {
        let s = uniform(100.0, 400, |_| 0.0);
        let b = bandpower(2.0, &s, &WindowSpec::default(), &WelchConfig::default()).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn bandpower_out_of_range() {
        let s = uniform(100.0, 400, |_| 0.0);
        assert!(matches!(
            bandpower(0.2, &s, &WindowSpec::default(), &WelchConfig::default()),
            Err(SignalError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn full_band_equals_total_power() {
        let s = uniform(100.0, 400, |t| (2.0 * PI * 7.0 * t).sin() + 0.3 * (2.0 * PI * 41.0 * t).cos());
        let cfg = WelchConfig {
            f_min: 0.0,
            f_max: 50.0,
            ..WelchConfig::default()
        };
        let b = bandpower(2.0, &s, &WindowSpec::default(), &cfg).unwrap();
        let idx = s.window_indices(1.5, 2.5);
        let psd = welch_psd(
            &s.values()[idx.clone()],
            100.0,
            &WelchConfig {
                segment_length: idx.len(),
                ..cfg
            },
        )
        .unwrap();
        assert!((b - psd.total_power()).abs() < 1e-9);
    }

    #[test]
    fn vibration_log_identity() {
        assert_eq!(vibration_from_bandpower(0.0), 0.0);
        assert!((vibration_from_bandpower(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bumpiness_norm() {
        let ts = vec![0.0, 0.01, 0.02];
        let s = TimeSeries::new(ts, vec![[3.0, 4.0], [0.0, 0.0], [-3.0, -4.0]], 100.0).unwrap();
        let m = bumpiness_raw(&s, &[0.0, 0.01, 0.02]).unwrap();
        assert_eq!(m.values, vec![5.0, 0.0, 5.0]);
    }

    #[test]
    fn energy_constant_and_zero() {
        let c = uniform(10.0, 101, |_| 10.0);
        let v = uniform(10.0, 101, |_| 50.0);
        let p = MetricParams::default();
        let e = energy_raw(&c, &v, &p, &[5.0]).unwrap();
        assert!((e.values[0] - 500.0).abs() < 1e-9);
        let z = uniform(10.0, 101, |_| 0.0);
        assert_eq!(energy_raw(&z, &v, &p, &[5.0]).unwrap().values[0], 0.0);
    }

    #[test]
    fn energy_ramp_close_to_integral() {
        let c = uniform(10.0, 11, |t| t);
        let v = uniform(10.0, 11, |_| 1.0);
        let e = energy_raw(&c, &v, &MetricParams::default(), &[0.5]).unwrap();
        assert!((e.values[0] - 0.5).abs() <= 0.1, "{}", e.values[0]);
    }

    #[test]
    fn energy_drops_unpaired_samples() {
        let c = uniform(10.0, 20, |_| 1.0);
        let ts: Vec<f64> = (0..20).map(|i| i as f64 / 10.0 + 0.08).collect();
        let v = TimeSeries::new(ts, vec![1.0; 20], 10.0).unwrap();
        let (paired, _) = pair_power(&c, &v, 0.06);
        // every current sample is 20 ms from a voltage sample (the previous one shifted by 80 ms)
        assert_eq!(paired.len(), 19);
        let (none, _) = pair_power(&c, &v, 0.01);
        assert!(none.is_empty());
    }

    #[test]
    fn energy_window_out_of_range() {
        let c = uniform(10.0, 11, |_| 1.0);
        assert!(matches!(
            energy_raw(&c, &c, &MetricParams::default(), &[0.2]),
            Err(SignalError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn smoothing_constant_unchanged() {
        let m = MetricSeries {
            timestamps: (0..50).map(|i| i as f64 * 0.1).collect(),
            values: vec![2.5; 50],
            kind: MetricKind::Energy,
        };
        let s = smooth_metric(&m, 0.5);
        assert!(s.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert_eq!(s.timestamps, m.timestamps);
    }

    #[test]
    fn label_interpolation() {
        let m = MetricSeries {
            timestamps: vec![0.0, 1.0, 2.0],
            values: vec![2.0, 4.0, 1.0],
            kind: MetricKind::Vibration,
        };
        assert_eq!(label_at_pose(&m, 1.0).unwrap(), 4.0);
        assert_eq!(label_at_pose(&m, 0.5).unwrap(), 3.0);
        assert_eq!(label_at_pose(&m, 2.0).unwrap(), 1.0);
        assert!(matches!(label_at_pose(&m, -0.1), Err(SignalError::OutOfSupport { .. })));
    }

    #[test]
    fn query_grid_respects_windows() {
        let q = query_grid(0.0, 10.0, 0.5, 10.0);
        assert_eq!(q.len(), 91);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[90] - 9.5).abs() < 1e-9);
    }
}
