//! Synthetic scenes with known terrain properties, simulated traverses with
//! their sensor streams, aerial and onboard renderings, and the
//! distance/blur/occlusion ablations built on top of them.
//!
//! Textures are continuous value-noise fields in world coordinates, so any
//! view of the scene samples the same surface. Renderers band-limit the
//! texture to their sampling footprint.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Point2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    DatasetError, ExtractionConfig, FoldProtocol, LabelSeries, Labels, PatchRecord, Trajectory, TrajectorySample,
    ViewFilter, ViewSource, WheelOdometry,
};
use crate::geometry::{
    back_project_to_ground, camera_from_ground, forward_camera_mount, ground_pixel_footprint, project_ground_point,
    wrap_angle, AerialGeoref, AttitudeSample, Calibration, CameraModel, GeometryError, MarkerObservation,
    PixelFootprint, Pose2, DEFAULT_MARKER_PERIMETER,
};
use crate::io::{
    write_attitude, write_frames, write_imu, write_json, write_odometry, write_power, write_tags, write_trajectory,
    FrameEntry, ImuRow, ImuStreams, IoError, PowerRow, PowerStreams, TagTrack,
};
use crate::mapping::MappingError;
use crate::pipeline::{compute_labels, extract_records, Extraction, ExtractionInputs};
use crate::predictor::{compute_features, predict_heldout, rmse, train, PredictorError, TrainConfig};
use crate::raster::Raster;
use crate::signals::{MetricKind, MetricParams, SignalError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("path point ({x:.2}, {y:.2}) lies outside the scene")]
    PathOutOfScene { x: f64, y: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

const OCTAVES: usize = 4;
/// Sum of octave amplitudes `1 + 1/2 + 1/4 + 1/8`.
const OCTAVE_NORM: f64 = 1.875;
const GRAVITY: f64 = 9.81;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, a: u64) -> u64 {
    splitmix(seed ^ splitmix(a))
}

fn unit_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(mix(seed, ix as u64), iy as u64);
    2.0 * unit_hash(h) - 1.0
}

/// Smooth value noise in `[-1, 1]` with unit lattice spacing.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Standard normal draw keyed by a hash, for per-pixel sensor noise that
/// does not depend on evaluation order.
fn hashed_gaussian(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix(mix(seed, a), b);
    let u1 = unit_hash(h).max(1e-300);
    let u2 = unit_hash(splitmix(h));
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Weight of an octave sampled with `cycles_per_sample` periods between
/// neighboring samples: full below a quarter period, gone above three.
fn octave_weight(cycles_per_sample: f64) -> f64 {
    (1.5 - 2.0 * cycles_per_sample).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureParams {
    pub base_gray: f64,
    /// Peak deviation from the base gray.
    pub amplitude: f64,
    /// Coarsest octave, cycles per meter.
    pub frequency: f64,
}

impl TextureParams {
    /// Gray value at a world point. Octaves too fine for a sampling
    /// spacing of `filter` meters are faded out.
    pub fn sample(&self, seed: u64, x: f64, y: f64, filter: f64) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut f = self.frequency;
        for k in 0..OCTAVES {
            let w = octave_weight(filter * f);
            if w > 0.0 {
                let off = 17.31 * k as f64;
                sum += amp * w * value_noise(mix(seed, k as u64), x * f + off, y * f - off);
            }
            amp *= 0.5;
            f *= 2.0;
        }
        self.base_gray + self.amplitude * sum / OCTAVE_NORM
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err("texture frequency must be positive".into());
        }
        if !(self.amplitude >= 0.0 && self.base_gray.is_finite()) {
            return Err("texture amplitude must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainClassSpec {
    pub name: String,
    pub texture: TextureParams,
    /// Standard deviation of induced vertical acceleration, m/s².
    pub roughness: f64,
    /// Standard deviation of induced roll/pitch rates, rad/s.
    pub bumpiness: f64,
    /// Mean power above the driving baseline, W.
    pub power_draw: f64,
    /// Tall cover that hides the ground texture from the onboard camera.
    #[serde(default)]
    pub occluder: bool,
}

impl TerrainClassSpec {
    pub fn new(name: &str, texture: TextureParams, roughness: f64, bumpiness: f64, power_draw: f64) -> Self {
        Self {
            name: name.into(),
            texture,
            roughness,
            bumpiness,
            power_draw,
            occluder: false,
        }
    }

    pub fn occluding(mut self) -> Self {
        self.occluder = true;
        self
    }

    fn validate(&self) -> Result<(), String> {
        self.texture.validate().map_err(|e| format!("{}: {e}", self.name))?;
        if !(self.roughness >= 0.0 && self.bumpiness >= 0.0 && self.power_draw.is_finite()) {
            return Err(format!("{}: property standard deviations must be non-negative", self.name));
        }
        Ok(())
    }

    /// Long-run labels of this class well inside a region: unit band
    /// power scaled by roughness², Rayleigh mean of the angular rate norm,
    /// and constant power over the evaluation window.
    pub fn expected_labels(&self, traverse: &TraverseConfig, params: &MetricParams) -> Labels {
        Labels {
            m_z: (self.roughness * self.roughness).ln_1p(),
            m_omega: self.bumpiness * (PI / 2.0).sqrt(),
            m_p: (traverse.baseline_power + self.power_draw) * 2.0 * params.window.alpha(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectRegion {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Equal-width vertical bands, one per class, in class order. Two
    /// classes give a left/right half split.
    Bands,
    /// Square blocks of side `size` meters with random classes.
    Blocks { size: f64 },
    /// Nearest-site regions; site positions and classes are random.
    Voronoi { sites: usize },
    /// Background class with rectangles painted on top in order.
    Regions { background: usize, rects: Vec<RectRegion> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Extent in meters; the scene spans `[0, size[0]] × [0, size[1]]`.
    pub size: [f64; 2],
    /// Class map resolution, meters.
    pub cell_size: f64,
    pub seed: u64,
    /// Appearance of every occluder class's cover.
    pub occluder_texture: TextureParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: [40.0, 40.0],
            cell_size: 0.1,
            seed: 0,
            occluder_texture: TextureParams {
                base_gray: 96.0,
                amplitude: 40.0,
                frequency: 3.0,
            },
        }
    }
}

/// Everything needed to regenerate a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub classes: Vec<TerrainClassSpec>,
    pub layout: Layout,
    #[serde(default)]
    pub config: SceneConfig,
}

/// What a renderer is looking at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Nadir view; in occlusion studies the ground under cover is visible.
    Aerial { occlusion_study: bool },
    /// Onboard view; cover always hides the ground.
    Fpv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    spec: SceneSpec,
    width: usize,
    height: usize,
    class_map: Vec<u8>,
}

pub fn generate_scene(classes: Vec<TerrainClassSpec>, layout: Layout, config: SceneConfig) -> Result<Scene, SimError> {
    Scene::generate(SceneSpec {
        classes,
        layout,
        config,
    })
}

impl Scene {
    pub fn generate(spec: SceneSpec) -> Result<Self, SimError> {
        let bad = |m: String| SimError::InvalidScene(m);
        let n = spec.classes.len();
        if n == 0 || n > 255 {
            return Err(bad(format!("need 1..=255 classes, got {n}")));
        }
        for c in &spec.classes {
            c.validate().map_err(bad)?;
        }
        spec.config.occluder_texture.validate().map_err(bad)?;
        let cfg = &spec.config;
        if !(cfg.cell_size > 0.0 && cfg.size[0] > 0.0 && cfg.size[1] > 0.0) {
            return Err(bad("scene size and cell size must be positive".into()));
        }
        let width = (cfg.size[0] / cfg.cell_size).round() as usize;
        let height = (cfg.size[1] / cfg.cell_size).round() as usize;
        if width == 0 || height == 0 {
            return Err(bad("scene smaller than one cell".into()));
        }
        let center = |col: usize, row: usize| {
            [
                (col as f64 + 0.5) * cfg.cell_size,
                (row as f64 + 0.5) * cfg.cell_size,
            ]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x1A10));
        let class_of: Box<dyn Fn([f64; 2]) -> usize> = match &spec.layout {
            Layout::Bands => {
                let w = cfg.size[0] / n as f64;
                Box::new(move |p| ((p[0] / w) as usize).min(n - 1))
            }
            Layout::Blocks { size } => {
                if !(*size > 0.0) {
                    return Err(bad("block size must be positive".into()));
                }
                let bw = (cfg.size[0] / size).ceil() as usize;
                let bh = (cfg.size[1] / size).ceil() as usize;
                let ids: Vec<usize> = (0..bw * bh).map(|_| rng.random_range(0..n)).collect();
                let size = *size;
                Box::new(move |p| {
                    let c = ((p[0] / size) as usize).min(bw - 1);
                    let r = ((p[1] / size) as usize).min(bh - 1);
                    ids[r * bw + c]
                })
            }
            Layout::Voronoi { sites } => {
                if *sites == 0 {
                    return Err(bad("need at least one Voronoi site".into()));
                }
                // every class gets at least one site when possible
                let pts: Vec<([f64; 2], usize)> = (0..*sites)
                    .map(|i| {
                        let p = [
                            rng.random_range(0.0..cfg.size[0]),
                            rng.random_range(0.0..cfg.size[1]),
                        ];
                        let c = if i < n { i } else { rng.random_range(0..n) };
                        (p, c)
                    })
                    .collect();
                Box::new(move |p| {
                    pts.iter()
                        .min_by(|a, b| {
                            let da = (a.0[0] - p[0]).powi(2) + (a.0[1] - p[1]).powi(2);
                            let db = (b.0[0] - p[0]).powi(2) + (b.0[1] - p[1]).powi(2);
                            da.total_cmp(&db)
                        })
                        .map_or(0, |s| s.1)
                })
            }
            Layout::Regions { background, rects } => {
                if *background >= n || rects.iter().any(|r| r.class >= n) {
                    return Err(bad("region class out of range".into()));
                }
                let (bg, rects) = (*background, rects.clone());
                Box::new(move |p| {
                    rects
                        .iter()
                        .rev()
                        .find(|r| p[0] >= r.lo[0] && p[0] < r.hi[0] && p[1] >= r.lo[1] && p[1] < r.hi[1])
                        .map_or(bg, |r| r.class)
                })
            }
        };
        let class_map = (0..height)
            .flat_map(|row| (0..width).map(move |col| (col, row)))
            .map(|(c, r)| class_of(center(c, r)) as u8)
            .collect();
        Ok(Self {
            spec,
            width,
            height,
            class_map,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn classes(&self) -> &[TerrainClassSpec] {
        &self.spec.classes
    }

    pub fn size(&self) -> [f64; 2] {
        self.spec.config.size
    }

    pub fn cell_size(&self) -> f64 {
        self.spec.config.cell_size
    }

    /// Class map dimensions in cells.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Row-major class ids; row 0 is at `y = 0`.
    pub fn class_map(&self) -> &[u8] {
        &self.class_map
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let s = self.size();
        (0.0..=s[0]).contains(&x) && (0.0..=s[1]).contains(&y)
    }

    /// Class under a world point; points outside take the nearest edge cell.
    pub fn class_index(&self, x: f64, y: f64) -> usize {
        let c = (x / self.cell_size()).floor().clamp(0.0, (self.width - 1) as f64) as usize;
        let r = (y / self.cell_size()).floor().clamp(0.0, (self.height - 1) as f64) as usize;
        self.class_map[r * self.width + c] as usize
    }

    pub fn class_at(&self, x: f64, y: f64) -> &TerrainClassSpec {
        &self.spec.classes[self.class_index(x, y)]
    }

    fn texture_seed(&self, class: usize) -> u64 {
        mix(self.spec.config.seed, 0x7E57 + class as u64)
    }

    fn occluder_seed(&self) -> u64 {
        mix(self.spec.config.seed, 0x0CC1)
    }

    /// Gray value seen from `view` at a world point, band-limited to a
    /// sampling spacing of `filter` meters.
    pub fn texture_at(&self, x: f64, y: f64, view: View, filter: f64) -> f64 {
        let k = self.class_index(x, y);
        let class = &self.spec.classes[k];
        let covered = class.occluder && !matches!(view, View::Aerial { occlusion_study: true });
        if covered {
            self.spec.config.occluder_texture.sample(self.occluder_seed(), x, y, filter)
        } else {
            class.texture.sample(self.texture_seed(k), x, y, filter)
        }
    }

    /// Mean of a class-map-sized field over an axis-aligned box.
    pub fn class_fraction(&self, lo: [f64; 2], hi: [f64; 2], class: usize) -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        let cs = self.cell_size();
        for r in 0..self.height {
            for c in 0..self.width {
                let p = [(c as f64 + 0.5) * cs, (r as f64 + 0.5) * cs];
                if p[0] >= lo[0] && p[0] < hi[0] && p[1] >= lo[1] && p[1] < hi[1] {
                    total += 1;
                    hit += (self.class_map[r * self.width + c] as usize == class) as usize;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Unit-variance Gaussian noise with its spectrum restricted to
/// `[band.0, band.1]` Hz.
pub fn bandpassed_noise<R: Rng + ?Sized>(n: usize, rate: f64, band: (f64, f64), rng: &mut R) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut *rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        if f < band.0 || f > band.1 {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if std > 0.0 {
        x.iter().map(|v| (v - mean) / std).collect()
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UavConfig {
    pub gsd: f64,
    pub width: usize,
    pub height: usize,
    /// Standard deviation of the hover position around the robot, meters.
    pub hover_offset: f64,
    /// Standard deviation of the drone heading around its initial value.
    pub yaw_jitter: f64,
    /// Marker corner detection noise, pixels.
    pub corner_noise: f64,
}

impl Default for UavConfig {
    fn default() -> Self {
        Self {
            gsd: 0.02,
            width: 400,
            height: 400,
            hover_offset: 0.4,
            yaw_jitter: 0.05,
            corner_noise: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraverseConfig {
    /// Forward speed, m/s.
    pub speed: f64,
    /// In-place turn rate at path vertices, rad/s.
    pub turn_rate: f64,
    pub track_width: f64,
    /// Standstill before and after driving, seconds.
    pub lead_time: f64,
    pub imu_rate: f64,
    pub power_rate: f64,
    pub pose_rate: f64,
    /// Onboard camera frame rate; zero disables onboard frames.
    pub ugv_rate: f64,
    /// Aerial frame rate; zero disables aerial frames.
    pub uav_rate: f64,
    /// Pass band of the simulated vibration, Hz.
    pub band: (f64, f64),
    pub baseline_power: f64,
    pub voltage: f64,
    pub power_noise: f64,
    pub voltage_noise: f64,
    pub odom_noise: f64,
    /// Standard deviation of roll and pitch, rad.
    pub attitude_noise: f64,
    pub uav: UavConfig,
}

impl Default for TraverseConfig {
    fn default() -> Self {
        Self {
            speed: 1.5,
            turn_rate: 0.8,
            track_width: 0.5,
            lead_time: 1.5,
            imu_rate: 100.0,
            power_rate: 10.0,
            pose_rate: 10.0,
            ugv_rate: 2.0,
            uav_rate: 1.0,
            band: (1.0, 30.0),
            baseline_power: 150.0,
            voltage: 48.0,
            power_noise: 5.0,
            voltage_noise: 0.05,
            odom_noise: 0.01,
            attitude_noise: 0.01,
            uav: UavConfig::default(),
        }
    }
}

impl TraverseConfig {
    fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.speed,
            self.turn_rate,
            self.track_width,
            self.imu_rate,
            self.power_rate,
            self.pose_rate,
            self.voltage,
            self.uav.gsd,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.lead_time >= 0.0) {
            return Err(SimError::InvalidConfig("rates, speeds and sizes must be positive".into()));
        }
        if !(self.ugv_rate >= 0.0 && self.uav_rate >= 0.0) {
            return Err(SimError::InvalidConfig("frame rates must be non-negative".into()));
        }
        if !(self.band.0 >= 0.0 && self.band.1 > self.band.0) {
            return Err(SimError::InvalidConfig("vibration band must be increasing".into()));
        }
        Ok(())
    }
}

/// Camera rig of the simulated robot: a low-resolution forward camera
/// 0.8 m above ground, tilted 20° down.
pub fn default_calibration() -> Calibration {
    let camera = CameraModel::new(265.0, 265.0, 212.0, 120.0, 424, 240).expect("valid intrinsics");
    Calibration {
        camera,
        robot_from_camera: forward_camera_mount(Vector3::new(0.3, 0.0, 0.4), 20f64.to_radians()).to_config(),
        robot_height: 0.4,
        marker_perimeter: DEFAULT_MARKER_PERIMETER,
    }
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    Hold,
    Drive { dir: [f64; 2] },
    Turn { rate: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    start: Pose2,
    motion: Motion,
}

#[derive(Debug, Clone, Copy)]
struct MotionState {
    pose: Pose2,
    v_left: f64,
    v_right: f64,
    yaw_rate: f64,
}

fn plan_motion(path: &[[f64; 2]], cfg: &TraverseConfig) -> Vec<Segment> {
    let heading = |a: [f64; 2], b: [f64; 2]| (b[1] - a[1]).atan2(b[0] - a[0]);
    let mut segs = Vec::new();
    let mut t = 0.0;
    let mut pose = Pose2::new(path[0][0], path[0][1], heading(path[0], path[1]));
    let push = |segs: &mut Vec<Segment>, dur: f64, start: Pose2, motion: Motion, t: &mut f64| {
        if dur > 0.0 {
            segs.push(Segment {
                t0: *t,
                t1: *t + dur,
                start,
                motion,
            });
            *t += dur;
        }
    };
    push(&mut segs, cfg.lead_time, pose, Motion::Hold, &mut t);
    for w in path.windows(2) {
        let yaw = heading(w[0], w[1]);
        let dyaw = wrap_angle(yaw - pose.yaw);
        if dyaw.abs() > 1e-9 {
            push(
                &mut segs,
                dyaw.abs() / cfg.turn_rate,
                pose,
                Motion::Turn {
                    rate: cfg.turn_rate * dyaw.signum(),
                },
                &mut t,
            );
            pose.yaw = yaw;
        }
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let (s, c) = yaw.sin_cos();
        push(&mut segs, len / cfg.speed, pose, Motion::Drive { dir: [c, s] }, &mut t);
        pose = Pose2::new(w[1][0], w[1][1], yaw);
    }
    push(&mut segs, cfg.lead_time, pose, Motion::Hold, &mut t);
    segs
}

fn state_at(segs: &[Segment], cfg: &TraverseConfig, t: f64) -> MotionState {
    let i = segs.partition_point(|s| s.t1 < t).min(segs.len() - 1);
    let s = &segs[i];
    let dt = (t - s.t0).clamp(0.0, s.t1 - s.t0);
    match s.motion {
        Motion::Hold => MotionState {
            pose: s.start,
            v_left: 0.0,
            v_right: 0.0,
            yaw_rate: 0.0,
        },
        Motion::Drive { dir } => MotionState {
            pose: Pose2::new(
                s.start.x + dir[0] * cfg.speed * dt,
                s.start.y + dir[1] * cfg.speed * dt,
                s.start.yaw,
            ),
            v_left: cfg.speed,
            v_right: cfg.speed,
            yaw_rate: 0.0,
        },
        Motion::Turn { rate } => {
            let wheel = rate * cfg.track_width / 2.0;
            MotionState {
                pose: Pose2::new(s.start.x, s.start.y, wrap_angle(s.start.yaw + rate * dt)),
                v_left: -wheel,
                v_right: wheel,
                yaw_rate: rate,
            }
        }
    }
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    if !(rate > 0.0) {
        return Vec::new();
    }
    let n = (duration * rate + 1e-9).floor() as usize + 1;
    (0..n).map(|i| i as f64 / rate).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUgvFrame {
    pub frame_id: String,
    pub t: f64,
    pub pose: Pose2,
    pub attitude: AttitudeSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUavFrame {
    pub frame_id: String,
    pub t: f64,
    /// True image-to-world mapping of the frame.
    pub georef: AerialGeoref,
    pub marker: MarkerObservation,
}

/// Everything a simulated traverse records.
#[derive(Debug, Clone)]
pub struct SensorBundle {
    pub duration: f64,
    pub trajectory: Trajectory,
    pub odometry: WheelOdometry,
    pub imu: Vec<ImuRow>,
    pub power: Vec<PowerRow>,
    pub attitude: Vec<AttitudeSample>,
    pub tags: TagTrack,
    pub calibration: Calibration,
    pub ugv_frames: Vec<SimUgvFrame>,
    pub uav_frames: Vec<SimUavFrame>,
    pub uav: UavConfig,
}

/// Drives `path` through the scene and records every sensor stream.
pub fn simulate_traverse(
    scene: &Scene,
    path: &[[f64; 2]],
    cfg: &TraverseConfig,
    calibration: &Calibration,
    seed: u64,
) -> Result<SensorBundle, SimError> {
    cfg.validate()?;
    if path.len() < 2 {
        return Err(SimError::InvalidConfig("path needs at least two points".into()));
    }
    if let Some(p) = path.iter().find(|p| !scene.contains(p[0], p[1])) {
        return Err(SimError::PathOutOfScene { x: p[0], y: p[1] });
    }
    if path.windows(2).any(|w| w[0] == w[1]) {
        return Err(SimError::InvalidConfig("consecutive path points coincide".into()));
    }
    let segs = plan_motion(path, cfg);
    let duration = segs.last().map_or(0.0, |s| s.t1);
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let state = |t: f64| state_at(&segs, cfg, t);

    // IMU
    let imu_t = sample_times(duration, cfg.imu_rate);
    let n = imu_t.len();
    let mut r_imu = rng(1);
    let n_az = bandpassed_noise(n, cfg.imu_rate, cfg.band, &mut r_imu);
    let n_wx = bandpassed_noise(n, cfg.imu_rate, cfg.band, &mut r_imu);
    let n_wy = bandpassed_noise(n, cfg.imu_rate, cfg.band, &mut r_imu);
    let lateral = Normal::new(0.0, 0.05).expect("valid std");
    let imu: Vec<ImuRow> = imu_t
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let s = state(t);
            let class = scene.class_at(s.pose.x, s.pose.y);
            ImuRow {
                t,
                ax: lateral.sample(&mut r_imu),
                ay: lateral.sample(&mut r_imu),
                az: GRAVITY + class.roughness * n_az[i],
                wx: class.bumpiness * n_wx[i],
                wy: class.bumpiness * n_wy[i],
                wz: s.yaw_rate,
            }
        })
        .collect();

    // power
    let mut r_pow = rng(2);
    let p_noise = Normal::new(0.0, cfg.power_noise.max(0.0)).expect("valid std");
    let v_noise = Normal::new(0.0, cfg.voltage_noise.max(0.0)).expect("valid std");
    let power = sample_times(duration, cfg.power_rate)
        .into_iter()
        .map(|t| {
            let s = state(t);
            let p = cfg.baseline_power + scene.class_at(s.pose.x, s.pose.y).power_draw + p_noise.sample(&mut r_pow);
            let v = cfg.voltage + v_noise.sample(&mut r_pow);
            PowerRow {
                t,
                current: Some(p / v),
                voltage: Some(v),
            }
        })
        .collect();

    // pose, odometry, attitude, tags
    let pose_t = sample_times(duration, cfg.pose_rate);
    let mut r_odo = rng(3);
    let o_noise = Normal::new(0.0, cfg.odom_noise.max(0.0)).expect("valid std");
    let mut r_att = rng(4);
    let roll = bandpassed_noise(pose_t.len(), cfg.pose_rate, (0.0, 1.0), &mut r_att);
    let pitch = bandpassed_noise(pose_t.len(), cfg.pose_rate, (0.0, 1.0), &mut r_att);
    let mut samples = Vec::with_capacity(pose_t.len());
    let mut odometry = WheelOdometry::default();
    let mut attitude = Vec::with_capacity(pose_t.len());
    let mut tags = TagTrack::default();
    for (i, &t) in pose_t.iter().enumerate() {
        let s = state(t);
        samples.push(TrajectorySample {
            timestamp: t,
            position: [s.pose.x, s.pose.y, 0.0],
            yaw: s.pose.yaw,
        });
        odometry.timestamps.push(t);
        odometry.v_left.push(s.v_left + o_noise.sample(&mut r_odo));
        odometry.v_right.push(s.v_right + o_noise.sample(&mut r_odo));
        attitude.push(AttitudeSample::new(t, cfg.attitude_noise * roll[i], cfg.attitude_noise * pitch[i])?);
        tags.push(t, &scene.class_at(s.pose.x, s.pose.y).name);
    }
    let trajectory = Trajectory::new(samples)?;

    let ugv_frames = sample_times(duration, cfg.ugv_rate)
        .into_iter()
        .enumerate()
        .map(|(k, t)| SimUgvFrame {
            frame_id: format!("g{k:05}"),
            t,
            pose: state(t).pose,
            attitude: crate::io::attitude_at(&attitude, t),
        })
        .collect();

    let mut r_uav = rng(5);
    let uav = cfg.uav;
    let hover = Normal::new(0.0, uav.hover_offset.max(0.0)).expect("valid std");
    let jitter = Normal::new(0.0, uav.yaw_jitter.max(0.0)).expect("valid std");
    let corner = Normal::new(0.0, uav.corner_noise.max(0.0)).expect("valid std");
    let yaw0 = r_uav.random_range(-PI..PI);
    let half = calibration.marker_perimeter / 8.0;
    let uav_frames = sample_times(duration, cfg.uav_rate)
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let robot = state(t).pose;
            let drone = Pose2::new(
                robot.x + hover.sample(&mut r_uav),
                robot.y + hover.sample(&mut r_uav),
                wrap_angle(yaw0 + jitter.sample(&mut r_uav)),
            );
            let georef = AerialGeoref {
                center_px: [uav.width as f64 / 2.0, uav.height as f64 / 2.0],
                heading: 0.0,
                gsd: uav.gsd,
                anchor: drone,
            };
            let local = [[half, half], [half, -half], [-half, -half], [-half, half]];
            let corners = local.map(|c| {
                let w = robot.to_world(&Vector2::new(c[0], c[1]));
                let p = georef.world_to_pixel(&w);
                [p.x + corner.sample(&mut r_uav), p.y + corner.sample(&mut r_uav)]
            });
            SimUavFrame {
                frame_id: format!("a{k:05}"),
                t,
                georef,
                marker: MarkerObservation {
                    corners,
                    known_perimeter: calibration.marker_perimeter,
                },
            }
        })
        .collect();

    Ok(SensorBundle {
        duration,
        trajectory,
        odometry,
        imu,
        power,
        attitude,
        tags,
        calibration: *calibration,
        ugv_frames,
        uav_frames,
        uav,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Aerial frames show the ground under cover.
    pub occlusion_study: bool,
    /// Sensor noise standard deviations, gray levels.
    pub fpv_noise: f64,
    pub aerial_noise: f64,
    pub render_ugv: bool,
    pub render_uav: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            occlusion_study: false,
            fpv_noise: 1.5,
            aerial_noise: 1.0,
            render_ugv: true,
            render_uav: true,
            seed: 0,
        }
    }
}

/// Gray level of pixels that see no ground.
pub const SKY_GRAY: f32 = 215.0;
/// Ground spacing targeted by onboard supersampling, meters.
const FPV_SUBSAMPLE_SPACING: f64 = 0.02;
const FPV_MAX_SUBSAMPLES: usize = 8;
/// Beyond this range the onboard view shows only the base gray.
const FPV_FAR: f64 = 30.0;

/// Nadir rendering through `georef`, 2×2 supersampled.
pub fn render_aerial(
    scene: &Scene,
    georef: &AerialGeoref,
    width: usize,
    height: usize,
    occlusion_study: bool,
    noise: f64,
    noise_seed: u64,
) -> Raster {
    let view = View::Aerial { occlusion_study };
    let filter = georef.gsd / 2.0;
    let rows: Vec<Vec<f32>> = (0..height)
        .into_par_iter()
        .map(|v| {
            (0..width)
                .map(|u| {
                    let mut acc = 0.0;
                    for (du, dv) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                        let w = georef.pixel_to_world(&Point2::new(u as f64 + du, v as f64 + dv));
                        acc += scene.texture_at(w.x, w.y, view, filter);
                    }
                    let n = noise * hashed_gaussian(noise_seed, u as u64, v as u64);
                    (acc / 4.0 + n) as f32
                })
                .collect()
        })
        .collect();
    Raster::from_vec(width, height, rows.concat()).expect("shape")
}

/// North-up survey of an axis-aligned region: image columns run along +x,
/// rows run along -y.
pub fn render_survey(
    scene: &Scene,
    lo: [f64; 2],
    hi: [f64; 2],
    gsd: f64,
    occlusion_study: bool,
    noise_seed: u64,
) -> Result<(Raster, AerialGeoref), SimError> {
    if !(gsd > 0.0 && hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(SimError::InvalidConfig("survey needs a positive gsd and extent".into()));
    }
    let width = ((hi[0] - lo[0]) / gsd).round() as usize;
    let height = ((hi[1] - lo[1]) / gsd).round() as usize;
    let georef = AerialGeoref {
        center_px: [width as f64 / 2.0 - 0.5, height as f64 / 2.0 - 0.5],
        heading: 0.0,
        gsd,
        anchor: Pose2::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, 0.0),
    };
    let img = render_aerial(scene, &georef, width, height, occlusion_study, 0.0, noise_seed);
    Ok((img, georef))
}

/// Perspective rendering from the onboard camera. Each pixel averages the
/// texture over its ground footprint, so detail fades with distance the way
/// pixel density does.
pub fn render_fpv(
    scene: &Scene,
    pose: Pose2,
    attitude: &AttitudeSample,
    calibration: &Calibration,
    noise: f64,
    noise_seed: u64,
) -> Result<Raster, SimError> {
    let cam = calibration.camera;
    let cam_from_ground = camera_from_ground(&calibration.robot_from_camera()?, attitude, calibration.robot_height)?;
    let ground_from_cam = cam_from_ground.inverse();
    let origin = *ground_from_cam.translation();
    let hit = |u: f64, v: f64| -> Option<Vector2<f64>> {
        let dir = ground_from_cam.transform_vector(&cam.ray(&Point2::new(u, v)));
        if dir.z >= -1e-12 {
            return None;
        }
        let s = -origin.z / dir.z;
        Some((origin + dir * s).xy())
    };
    let rows: Vec<Vec<f32>> = (0..cam.height)
        .into_par_iter()
        .map(|v| {
            (0..cam.width)
                .map(|u| {
                    let n = noise * hashed_gaussian(noise_seed, u as u64, v as u64);
                    let (uf, vf) = (u as f64, v as f64);
                    let Some(center) = hit(uf, vf) else {
                        return SKY_GRAY + n as f32;
                    };
                    let fp = ground_pixel_footprint(&cam_from_ground, &cam, &Point2::new(uf, vf)).ok();
                    let far = (center - origin.xy()).norm() > FPV_FAR;
                    let value = match fp {
                        Some(fp) if !far => {
                            let nv = ((fp.along / FPV_SUBSAMPLE_SPACING).ceil() as usize).clamp(1, FPV_MAX_SUBSAMPLES);
                            let nu = ((fp.cross / FPV_SUBSAMPLE_SPACING).ceil() as usize).clamp(1, FPV_MAX_SUBSAMPLES);
                            let filter = (fp.along / nv as f64).max(fp.cross / nu as f64);
                            let mut acc = 0.0;
                            let mut cnt = 0usize;
                            for j in 0..nv {
                                for i in 0..nu {
                                    let su = uf + (i as f64 + 0.5) / nu as f64 - 0.5;
                                    let sv = vf + (j as f64 + 0.5) / nv as f64 - 0.5;
                                    if let Some(g) = hit(su, sv) {
                                        let w = pose.to_world(&g);
                                        acc += scene.texture_at(w.x, w.y, View::Fpv, filter);
                                        cnt += 1;
                                    }
                                }
                            }
                            acc / cnt.max(1) as f64
                        }
                        _ => {
                            let w = pose.to_world(&center);
                            scene.texture_at(w.x, w.y, View::Fpv, f64::INFINITY)
                        }
                    };
                    (value + n) as f32
                })
                .collect()
        })
        .collect();
    Ok(Raster::from_vec(cam.width, cam.height, rows.concat()).expect("shape"))
}

/// Rounds to 8 bits the way PNG storage does.
fn quantized(r: Raster) -> Raster {
    Raster::from_gray8(&r.to_gray8())
}

impl SensorBundle {
    pub fn imu_streams(&self) -> Result<ImuStreams, SimError> {
        Ok(ImuStreams::from_rows(Path::new("imu.csv"), &self.imu)?)
    }

    pub fn power_streams(&self) -> Result<PowerStreams, SimError> {
        Ok(PowerStreams::from_rows(Path::new("power.csv"), &self.power)?)
    }

    /// Frame index entries for the rendered sources.
    pub fn frame_entries(&self, render: &RenderConfig) -> Vec<FrameEntry> {
        let mut out = Vec::new();
        if render.render_ugv {
            out.extend(self.ugv_frames.iter().map(|f| FrameEntry {
                path: format!("frames/ugv_{}.png", f.frame_id),
                t: f.t,
                source: ViewSource::Ugv,
                frame_id: f.frame_id.clone(),
                marker: None,
            }));
        }
        if render.render_uav {
            out.extend(self.uav_frames.iter().map(|f| FrameEntry {
                path: format!("frames/uav_{}.png", f.frame_id),
                t: f.t,
                source: ViewSource::Uav,
                frame_id: f.frame_id.clone(),
                marker: Some(f.marker),
            }));
        }
        out
    }

    pub fn extraction_inputs(&self, render: &RenderConfig) -> ExtractionInputs {
        ExtractionInputs {
            trajectory: self.trajectory.clone(),
            odometry: self.odometry.clone(),
            attitude: self.attitude.clone(),
            tags: Some(self.tags.clone()),
            calibration: self.calibration,
            frames: self.frame_entries(render),
        }
    }

    /// Renders one frame, quantized to 8 bits.
    pub fn render_frame(&self, scene: &Scene, frame_id: &str, render: &RenderConfig) -> Result<Raster, SimError> {
        let key = |s: &str| mix(render.seed, s.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)));
        if let Some(f) = self.ugv_frames.iter().find(|f| f.frame_id == frame_id) {
            let img = render_fpv(scene, f.pose, &f.attitude, &self.calibration, render.fpv_noise, key(frame_id))?;
            return Ok(quantized(img));
        }
        if let Some(f) = self.uav_frames.iter().find(|f| f.frame_id == frame_id) {
            let img = render_aerial(
                scene,
                &f.georef,
                self.uav.width,
                self.uav.height,
                render.occlusion_study,
                render.aerial_noise,
                key(frame_id),
            );
            return Ok(quantized(img));
        }
        Err(SimError::InvalidConfig(format!("unknown frame {frame_id}")))
    }

    /// Writes the log directory: sensor CSVs, calibration, the frame index
    /// and every rendered frame.
    pub fn write(&self, dir: &Path, scene: &Scene, render: &RenderConfig) -> Result<(), SimError> {
        write_trajectory(&dir.join("trajectory.csv"), &self.trajectory)?;
        write_odometry(&dir.join("odom.csv"), &self.odometry)?;
        write_imu(&dir.join("imu.csv"), &self.imu)?;
        write_power(&dir.join("power.csv"), &self.power)?;
        write_attitude(&dir.join("attitude.csv"), &self.attitude)?;
        write_tags(&dir.join("terrain_tags.csv"), &self.tags)?;
        write_json(&dir.join("calibration.json"), &self.calibration)?;
        write_json(&dir.join("scene.json"), scene.spec())?;
        let frames = self.frame_entries(render);
        std::fs::create_dir_all(dir.join("frames")).map_err(|e| IoError::Io {
            path: dir.join("frames"),
            source: e,
        })?;
        frames.par_iter().try_for_each(|f| -> Result<(), SimError> {
            let img = self.render_frame(scene, &f.frame_id, render)?;
            let path = dir.join(&f.path);
            img.save_png(&path).map_err(|e| IoError::Invalid {
                path,
                msg: e.to_string(),
            })?;
            Ok(())
        })?;
        write_frames(&dir.join("frames.jsonl"), &frames)?;
        Ok(())
    }
}

/// Boustrophedon path with `legs` passes along x, `margin` meters from the
/// scene edges.
pub fn lawnmower(size: [f64; 2], legs: usize, margin: f64) -> Vec<[f64; 2]> {
    let legs = legs.max(1);
    let (x0, x1) = (margin, size[0] - margin);
    let span = size[1] - 2.0 * margin;
    let mut path = Vec::with_capacity(2 * legs);
    for i in 0..legs {
        let y = if legs == 1 {
            size[1] / 2.0
        } else {
            margin + span * i as f64 / (legs - 1) as f64
        };
        if i % 2 == 0 {
            path.push([x0, y]);
            path.push([x1, y]);
        } else {
            path.push([x1, y]);
            path.push([x0, y]);
        }
    }
    path
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub bundle: SensorBundle,
    pub labels: LabelSeries,
    pub extraction: Extraction,
}

/// Simulate → label → extract, entirely in memory. Frames are rendered on
/// demand and quantized exactly as they would be on disk.
pub fn simulate_dataset(
    scene: &Scene,
    path: &[[f64; 2]],
    traverse: &TraverseConfig,
    render: &RenderConfig,
    params: &MetricParams,
    extraction: &ExtractionConfig,
    seed: u64,
) -> Result<SimDataset, SimError> {
    let bundle = simulate_traverse(scene, path, traverse, &default_calibration(), seed)?;
    let labels = compute_labels(&bundle.imu_streams()?, &bundle.power_streams()?, params)?;
    let inputs = bundle.extraction_inputs(render);
    let extraction = extract_records(&inputs, &labels, extraction, |f| {
        bundle.render_frame(scene, &f.frame_id, render).map_err(|e| e.to_string())
    });
    Ok(SimDataset {
        bundle,
        labels,
        extraction,
    })
}

fn tex(base_gray: f64, amplitude: f64, frequency: f64) -> TextureParams {
    TextureParams {
        base_gray,
        amplitude,
        frequency,
    }
}

/// Two visually distinct classes split left/right.
pub fn two_class_scene(seed: u64, size: f64) -> Result<Scene, SimError> {
    generate_scene(
        vec![
            TerrainClassSpec::new("grass", tex(140.0, 14.0, 1.5), 0.8, 0.15, 20.0),
            TerrainClassSpec::new("gravel", tex(105.0, 48.0, 6.0), 3.5, 0.9, 120.0),
        ],
        Layout::Bands,
        SceneConfig {
            size: [size, size],
            seed,
            ..SceneConfig::default()
        },
    )
}

/// Classes sharing one base gray that differ in texture scale. Fine grain
/// is the first thing lost to distance or blur, which makes the rough
/// class drift toward the smooth one.
pub fn texture_scene(seed: u64, size: f64) -> Result<Scene, SimError> {
    generate_scene(
        vec![
            TerrainClassSpec::new("packed", tex(128.0, 6.0, 2.0), 0.5, 0.1, 10.0),
            TerrainClassSpec::new("cobble", tex(128.0, 45.0, 1.2), 1.8, 0.5, 50.0),
            TerrainClassSpec::new("gravel", tex(128.0, 45.0, 8.0), 3.0, 0.8, 90.0),
        ],
        Layout::Voronoi { sites: 24 },
        SceneConfig {
            size: [size, size],
            seed,
            ..SceneConfig::default()
        },
    )
}

/// Open ground plus two covered classes whose cover looks the same from
/// the ground but whose ground differs.
pub fn occlusion_scene(seed: u64, size: f64) -> Result<Scene, SimError> {
    generate_scene(
        vec![
            TerrainClassSpec::new("open", tex(150.0, 25.0, 2.0), 1.2, 0.3, 40.0),
            TerrainClassSpec::new("reed_firm", tex(175.0, 10.0, 1.5), 0.5, 0.15, 20.0).occluding(),
            TerrainClassSpec::new("reed_soft", tex(80.0, 40.0, 4.0), 3.5, 0.9, 110.0).occluding(),
        ],
        Layout::Voronoi { sites: 24 },
        SceneConfig {
            size: [size, size],
            seed,
            ..SceneConfig::default()
        },
    )
}

/// Geometry of [`strip_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripLayout {
    pub strip: RectRegion,
    pub gap: RectRegion,
}

/// Firm ground crossed by a costly strip with one firm gap, plus a patch of
/// even costlier rubble that sets the top of the label range.
pub fn strip_scene(seed: u64, size: f64) -> Result<(Scene, StripLayout), SimError> {
    let mid = size / 2.0;
    let strip = RectRegion {
        lo: [mid - 2.0, 0.0],
        hi: [mid + 2.0, size],
        class: 1,
    };
    let gap = RectRegion {
        lo: [mid - 2.0, mid],
        hi: [mid + 2.0, mid + 4.0],
        class: 0,
    };
    let rubble = RectRegion {
        lo: [2.0, size - 8.0],
        hi: [10.0, size - 2.0],
        class: 2,
    };
    let scene = generate_scene(
        vec![
            TerrainClassSpec::new("firm", tex(150.0, 12.0, 1.5), 0.6, 0.1, 10.0),
            TerrainClassSpec::new("logpile", tex(95.0, 45.0, 3.0), 2.8, 0.7, 90.0),
            TerrainClassSpec::new("rubble", tex(60.0, 55.0, 7.0), 4.5, 1.1, 160.0),
        ],
        Layout::Regions {
            background: 0,
            rects: vec![strip, gap, rubble],
        },
        SceneConfig {
            size: [size, size],
            seed,
            ..SceneConfig::default()
        },
    )?;
    Ok((scene, StripLayout { strip, gap }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Distance,
    Blur,
    Occlusion,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Distance => "distance",
            AblationKind::Blur => "blur",
            AblationKind::Occlusion => "occlusion",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "distance" => Ok(AblationKind::Distance),
            "blur" => Ok(AblationKind::Blur),
            "occlusion" => Ok(AblationKind::Occlusion),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seed: u64,
    pub metric: MetricKind,
    pub protocol: FoldProtocol,
    pub train: TrainConfig,
    pub scene_size: f64,
    pub legs: usize,
    /// Distance bins of one meter, starting at zero.
    pub bins: usize,
    /// Training seeds averaged per blur level.
    pub replicates: usize,
    /// Independent scenes pooled per blur level.
    pub scenes: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            metric: MetricKind::Vibration,
            protocol: FoldProtocol::KFold { k: 5 },
            train: TrainConfig {
                epochs: 80,
                ..TrainConfig::default()
            },
            scene_size: 40.0,
            legs: 9,
            bins: 10,
            replicates: 3,
            scenes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub x: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub metric: MetricKind,
    pub rows: Vec<AblationRow>,
    pub summary: BTreeMap<String, f64>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,x,rmse,n\n");
        for r in &self.rows {
            s += &format!("{},{},{},{}\n", r.label, r.x, r.rmse, r.n);
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{} ablation, metric {}\n", self.kind.as_str(), self.metric);
        s += &format!("{:<18} {:>8} {:>8}\n", "bin", "rmse", "n");
        for r in &self.rows {
            s += &format!("{:<18} {:>8.4} {:>8}\n", r.label, r.rmse, r.n);
        }
        for (k, v) in &self.summary {
            s += &format!("{k}: {v:.4}\n");
        }
        s
    }

    /// Bar chart of the RMSE column.
    pub fn chart(&self) -> RgbImage {
        let bar = 36u32;
        let gap = 12u32;
        let h = 220u32;
        let w = gap + self.rows.len() as u32 * (bar + gap);
        let mut img = RgbImage::from_pixel(w.max(1), h, Rgb([255, 255, 255]));
        let max = self.rows.iter().map(|r| r.rmse).filter(|v| v.is_finite()).fold(0.0, f64::max);
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.rmse.is_finite() && max > 0.0) {
                continue;
            }
            let bh = ((r.rmse / max) * (h - 20) as f64).round() as u32;
            let x0 = gap + i as u32 * (bar + gap);
            for x in x0..x0 + bar {
                for y in h - 10 - bh..h - 10 {
                    img.put_pixel(x, y, Rgb([60, 110, 170]));
                }
            }
        }
        for x in 0..w {
            img.put_pixel(x, h - 10, Rgb([0, 0, 0]));
        }
        img
    }
}

/// Rank correlation, ties sharing their mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = mean;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Ground extents of the onboard pixel that images a point `distance`
/// meters straight ahead of the camera on level ground.
pub fn equivalent_footprint(calibration: &Calibration, distance: f64) -> Result<PixelFootprint, SimError> {
    let level = AttitudeSample::new(0.0, 0.0, 0.0)?;
    let cam_from_ground = camera_from_ground(&calibration.robot_from_camera()?, &level, calibration.robot_height)?;
    let cam_pos = cam_from_ground.inverse().translation().xy();
    let target = Vector3::new(cam_pos.x + distance, cam_pos.y, 0.0);
    let px = project_ground_point(&target, &cam_from_ground, &calibration.camera)?;
    // sanity: the pixel really sees the target
    back_project_to_ground(&px, &cam_from_ground, &calibration.camera)?;
    Ok(ground_pixel_footprint(&cam_from_ground, &calibration.camera, &px)?)
}

/// Vertical and horizontal blur, in patch pixels, that mimic the onboard
/// pixel footprint at `distance`.
pub fn equivalent_blur(calibration: &Calibration, distance: f64, patch_pixel: f64) -> Result<(f64, f64), SimError> {
    let fp = equivalent_footprint(calibration, distance)?;
    Ok((fp.along / (2.0 * patch_pixel), fp.cross / (2.0 * patch_pixel)))
}

pub fn run_ablation(kind: AblationKind, cfg: &AblationConfig) -> Result<AblationReport, SimError> {
    match kind {
        AblationKind::Distance => distance_ablation(cfg),
        AblationKind::Blur => blur_ablation(cfg),
        AblationKind::Occlusion => occlusion_ablation(cfg),
    }
}

fn ablation_data(scene: &Scene, cfg: &AblationConfig, render: RenderConfig, seed: u64) -> Result<Vec<PatchRecord>, SimError> {
    let size = scene.size();
    let path = lawnmower(size, cfg.legs, 3.0);
    let mut traverse = TraverseConfig::default();
    if !render.render_ugv {
        traverse.ugv_rate = 0.0;
    }
    if !render.render_uav {
        traverse.uav_rate = 0.0;
    }
    let data = simulate_dataset(
        scene,
        &path,
        &traverse,
        &render,
        &MetricParams::default(),
        &ExtractionConfig::default(),
        seed,
    )?;
    log::info!(
        "ablation data: {} records, {} view failures",
        data.extraction.output.records.len(),
        data.extraction.output.failures.len()
    );
    Ok(data.extraction.output.records)
}

fn train_cfg(cfg: &AblationConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    }
}

/// Held-out `(view distance, prediction, normalized target)` for every
/// view the filter accepts.
fn heldout_views(
    models: &[crate::predictor::FoldModel],
    records: &[PatchRecord],
    features: &crate::predictor::FeatureTable,
    folds: &crate::dataset::FoldAssignment,
    metric: MetricKind,
) -> Vec<(Option<f64>, f64, f64)> {
    let by_fold: BTreeMap<usize, _> = models.iter().map(|m| (m.fold, &m.model)).collect();
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(model) = folds.fold_of(r.poi_id).and_then(|f| by_fold.get(&f)) else {
            continue;
        };
        let (lo, hi) = model.label_range.expect("trained model has a label range");
        let target = ((r.labels.get(metric) - lo) / (hi - lo)).clamp(0.0, 1.0);
        for (vi, v) in r.views.iter().enumerate() {
            if let Some(feat) = features[i][vi].as_ref() {
                out.push((v.camera_distance, model.predict_values(feat), target));
            }
        }
    }
    out
}

fn distance_ablation(cfg: &AblationConfig) -> Result<AblationReport, SimError> {
    let scene = texture_scene(cfg.seed, cfg.scene_size)?;
    let filter = ViewFilter::all(ViewSource::Ugv);
    let records: Vec<PatchRecord> = ablation_data(
        &scene,
        cfg,
        RenderConfig {
            render_uav: false,
            seed: cfg.seed,
            ..RenderConfig::default()
        },
        cfg.seed,
    )?
    .into_iter()
    .filter(|r| r.has_views(&filter))
    .collect();
    let features = compute_features(&records, &filter)?;
    let folds = cfg.protocol.assign(&records, cfg.seed)?;
    let models = train(&records, &features, &filter, cfg.metric, &folds, &train_cfg(cfg))?;

    let mut bins: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); cfg.bins];
    for (d, p, t) in heldout_views(&models, &records, &features, &folds, cfg.metric) {
        let Some(b) = d.map(|d| d.floor() as usize).filter(|&b| b < cfg.bins) else {
            continue;
        };
        bins[b].0.push(p);
        bins[b].1.push(t);
    }
    let rows: Vec<AblationRow> = bins
        .iter()
        .enumerate()
        .map(|(b, (p, t))| AblationRow {
            label: format!("{b}-{} m", b + 1),
            x: b as f64 + 0.5,
            rmse: rmse(p, t),
            n: p.len(),
        })
        .collect();
    let trend: Vec<&AblationRow> = rows.iter().filter(|r| r.x >= 2.0 && r.n > 0).collect();
    let mut summary = BTreeMap::new();
    if trend.len() >= 2 {
        let x: Vec<f64> = trend.iter().map(|r| r.x).collect();
        let y: Vec<f64> = trend.iter().map(|r| r.rmse).collect();
        summary.insert("spearman_from_2m".into(), spearman(&x, &y));
    }
    summary.insert("records".into(), records.len() as f64);
    Ok(AblationReport {
        kind: AblationKind::Distance,
        metric: cfg.metric,
        rows,
        summary,
    })
}

fn blur_ablation(cfg: &AblationConfig) -> Result<AblationReport, SimError> {
    let filter = ViewFilter::comparison(ViewSource::Uav);
    let mut datasets = Vec::new();
    for k in 0..cfg.scenes.max(1) {
        let seed = cfg.seed.wrapping_add(k as u64);
        let scene = texture_scene(seed, cfg.scene_size)?;
        let render = RenderConfig {
            render_ugv: false,
            seed,
            ..RenderConfig::default()
        };
        let records: Vec<PatchRecord> = ablation_data(&scene, cfg, render, seed)?
            .into_iter()
            .filter(|r| r.has_views(&filter))
            .collect();
        let folds = cfg.protocol.assign(&records, seed)?;
        datasets.push((records, folds));
    }
    let ex = ExtractionConfig::default();
    let patch_pixel = ex.patch_side / ex.patch_resolution as f64;
    let calibration = default_calibration();
    let tcfg = train_cfg(cfg);

    let mut rows = Vec::new();
    for d in 1..=cfg.bins {
        let (sv, sh) = equivalent_blur(&calibration, d as f64, patch_pixel)?;
        let mut scores = Vec::new();
        let mut n = 0;
        for (records, folds) in &datasets {
            let blurred: Vec<PatchRecord> = records
                .par_iter()
                .map(|r| {
                    let mut r = r.clone();
                    for v in &mut r.views {
                        if let Some(img) = &v.image {
                            v.image = Some(Raster::from_gray8(img).gaussian_blur(sh, sv).to_gray8());
                        }
                    }
                    r
                })
                .collect();
            let features = compute_features(&blurred, &filter)?;
            for rep in 0..cfg.replicates.max(1) {
                let tcfg = TrainConfig {
                    seed: tcfg.seed.wrapping_add(rep as u64),
                    ..tcfg.clone()
                };
                let models = train(&blurred, &features, &filter, cfg.metric, folds, &tcfg)?;
                let (p, t): (Vec<f64>, Vec<f64>) = heldout_views(&models, &blurred, &features, folds, cfg.metric)
                    .into_iter()
                    .map(|(_, p, t)| (p, t))
                    .unzip();
                scores.push(rmse(&p, &t));
                n += p.len();
            }
        }
        let score = scores.iter().sum::<f64>() / scores.len() as f64;
        log::info!("blur {d} m: sigma_v {sv:.2} px, sigma_h {sh:.2} px, rmse {score:.4}");
        rows.push(AblationRow {
            label: format!("{d} m (σv {sv:.2} px)"),
            x: d as f64,
            rmse: score,
            n,
        });
    }
    let mut summary = BTreeMap::new();
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.x).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
        summary.insert("spearman".into(), spearman(&x, &y));
        summary.insert(
            "inversions".into(),
            y.windows(2).filter(|w| w[1] < w[0]).count() as f64,
        );
    }
    summary.insert("records".into(), datasets.iter().map(|d| d.0.len()).sum::<usize>() as f64);
    Ok(AblationReport {
        kind: AblationKind::Blur,
        metric: cfg.metric,
        rows,
        summary,
    })
}

fn occlusion_ablation(cfg: &AblationConfig) -> Result<AblationReport, SimError> {
    let scene = occlusion_scene(cfg.seed, cfg.scene_size)?;
    let aerial = ViewFilter::comparison(ViewSource::Uav);
    let ground = ViewFilter::comparison(ViewSource::Ugv);
    let records: Vec<PatchRecord> = ablation_data(
        &scene,
        cfg,
        RenderConfig {
            occlusion_study: true,
            seed: cfg.seed,
            ..RenderConfig::default()
        },
        cfg.seed,
    )?
    .into_iter()
    .filter(|r| r.has_views(&aerial) && r.has_views(&ground))
    .collect();
    let folds = cfg.protocol.assign(&records, cfg.seed)?;
    let tcfg = train_cfg(cfg);
    let occluders: Vec<&str> = scene
        .classes()
        .iter()
        .filter(|c| c.occluder)
        .map(|c| c.name.as_str())
        .collect();

    let mut rows = Vec::new();
    let mut covered_rmse = BTreeMap::new();
    for (name, filter) in [("aerial", aerial), ("fpv", ground)] {
        let features = compute_features(&records, &filter)?;
        let models = train(&records, &features, &filter, cfg.metric, &folds, &tcfg)?;
        let preds = predict_heldout(&models, &records, &features, &filter, &folds);
        let split = |keep: &dyn Fn(&PatchRecord) -> bool| -> (Vec<f64>, Vec<f64>) {
            preds
                .iter()
                .filter(|p| keep(&records[p.record]))
                .map(|p| (p.predicted, p.target))
                .unzip()
        };
        let is_covered = |r: &PatchRecord| r.terrain_tag.as_deref().is_some_and(|t| occluders.contains(&t));
        let (pc, tc) = split(&is_covered);
        let (pa, ta) = split(&|_| true);
        covered_rmse.insert(name, rmse(&pc, &tc));
        rows.push(AblationRow {
            label: format!("{name} covered"),
            x: rows.len() as f64,
            rmse: rmse(&pc, &tc),
            n: pc.len(),
        });
        rows.push(AblationRow {
            label: format!("{name} all"),
            x: rows.len() as f64,
            rmse: rmse(&pa, &ta),
            n: pa.len(),
        });
    }
    let mut summary = BTreeMap::new();
    let (a, f) = (covered_rmse["aerial"], covered_rmse["fpv"]);
    summary.insert("improvement_covered".into(), (f - a) / f);
    summary.insert("records".into(), records.len() as f64);
    Ok(AblationReport {
        kind: AblationKind::Occlusion,
        metric: cfg.metric,
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{bandpower, TimeSeries, WelchConfig, WindowSpec};

    fn uniform_scene(class: TerrainClassSpec, size: f64) -> Scene {
        generate_scene(
            vec![class],
            Layout::Bands,
            SceneConfig {
                size: [size, size],
                ..SceneConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn halves_split_exactly() {
        let s = two_class_scene(3, 20.0).unwrap();
        let (w, h) = s.dims();
        for r in 0..h {
            for c in 0..w {
                assert_eq!(s.class_map()[r * w + c], (c >= w / 2) as u8);
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = texture_scene(5, 30.0).unwrap();
        let b = texture_scene(5, 30.0).unwrap();
        let c = texture_scene(6, 30.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.class_map(), c.class_map());
        assert_eq!(a.texture_at(3.3, 7.1, View::Fpv, 0.0), b.texture_at(3.3, 7.1, View::Fpv, 0.0));
    }

    #[test]
    fn texture_mean_matches_base_gray() {
        let s = two_class_scene(1, 40.0).unwrap();
        for (k, x0) in [(0usize, 0.0), (1, 20.0)] {
            let base = s.classes()[k].texture.base_gray;
            let mut sum = 0.0;
            let n = 400;
            for i in 0..n {
                for j in 0..n {
                    let x = x0 + 0.5 + 19.0 * i as f64 / n as f64;
                    let y = 0.5 + 39.0 * j as f64 / n as f64;
                    sum += s.texture_at(x, y, View::Fpv, 0.0);
                }
            }
            let mean = sum / (n * n) as f64;
            assert!((mean - base).abs() < 2.0, "class {k}: {mean} vs {base}");
        }
    }

    #[test]
    fn occlusion_flag_only_changes_covered_cells() {
        let s = occlusion_scene(2, 30.0).unwrap();
        let mut covered_changed = 0;
        for i in 0..3000 {
            let x = 0.01 * i as f64 % 30.0;
            let y = (0.37 * i as f64) % 30.0;
            let a = s.texture_at(x, y, View::Aerial { occlusion_study: false }, 0.0);
            let b = s.texture_at(x, y, View::Aerial { occlusion_study: true }, 0.0);
            if s.class_at(x, y).occluder {
                covered_changed += (a != b) as usize;
                assert_eq!(a, s.texture_at(x, y, View::Fpv, 0.0));
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(covered_changed > 100);
    }

    #[test]
    fn path_outside_scene_is_rejected() {
        let s = two_class_scene(0, 10.0).unwrap();
        let err = simulate_traverse(&s, &[[1.0, 1.0], [12.0, 1.0]], &TraverseConfig::default(), &default_calibration(), 0);
        assert!(matches!(err, Err(SimError::PathOutOfScene { .. })));
    }

    fn band_power_at(bundle: &SensorBundle, times: &[f64]) -> Vec<f64> {
        let imu = bundle.imu_streams().unwrap();
        times
            .iter()
            .map(|&t| bandpower(t, &imu.a_z, &WindowSpec::default(), &WelchConfig::default()).unwrap())
            .collect()
    }

    #[test]
    fn zero_roughness_gives_no_band_power() {
        let mut c = TerrainClassSpec::new("flat", tex(120.0, 10.0, 2.0), 0.0, 0.0, 0.0);
        c.bumpiness = 0.0;
        let s = uniform_scene(c, 30.0);
        let b = simulate_traverse(&s, &[[2.0, 5.0], [28.0, 5.0]], &TraverseConfig::default(), &default_calibration(), 1)
            .unwrap();
        let times: Vec<f64> = (0..30).map(|k| 2.0 + 0.5 * k as f64).collect();
        for p in band_power_at(&b, &times) {
            assert!(p < 1e-3, "{p}");
        }
    }

    #[test]
    fn band_power_scales_with_roughness_squared() {
        let run = |r: f64| {
            let s = uniform_scene(TerrainClassSpec::new("c", tex(120.0, 10.0, 2.0), r, 0.2, 0.0), 90.0);
            let b = simulate_traverse(&s, &[[2.0, 5.0], [88.0, 5.0]], &TraverseConfig::default(), &default_calibration(), 9)
                .unwrap();
            let times: Vec<f64> = (0..50).map(|k| 3.0 + k as f64).collect();
            band_power_at(&b, &times).iter().sum::<f64>() / 50.0
        };
        let (p1, p2) = (run(1.0), run(2.0));
        assert!(((p2 / p1) - 4.0).abs() / 4.0 < 0.15, "{p1} {p2}");
        assert!((p1 - 1.0).abs() < 0.2, "unit noise should carry ≈1 in band: {p1}");
    }

    #[test]
    fn extra_power_draw_adds_energy() {
        let params = MetricParams::default();
        let energy = |draw: f64| {
            let s = uniform_scene(TerrainClassSpec::new("c", tex(120.0, 10.0, 2.0), 1.0, 0.2, draw), 60.0);
            let b = simulate_traverse(&s, &[[2.0, 5.0], [58.0, 5.0]], &TraverseConfig::default(), &default_calibration(), 4)
                .unwrap();
            let labels = compute_labels(&b.imu_streams().unwrap(), &b.power_streams().unwrap(), &params).unwrap();
            let v = &labels.m_p.values;
            v.iter().sum::<f64>() / v.len() as f64
        };
        let diff = energy(50.0) - energy(0.0);
        assert!((diff - 50.0).abs() < 2.0, "{diff}");
    }

    #[test]
    fn rougher_class_has_higher_vibration_metric() {
        let s = two_class_scene(0, 30.0).unwrap();
        let b = simulate_traverse(&s, &[[2.0, 10.0], [28.0, 10.0]], &TraverseConfig::default(), &default_calibration(), 2)
            .unwrap();
        let labels = compute_labels(&b.imu_streams().unwrap(), &b.power_streams().unwrap(), &MetricParams::default())
            .unwrap();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (t, v) in labels.m_z.timestamps.iter().zip(&labels.m_z.values) {
            let Some(p) = b.trajectory.pose_at(*t) else { continue };
            if p.x < 13.0 && p.x > 3.0 {
                left.push(*v);
            } else if p.x > 17.0 && p.x < 27.0 {
                right.push(*v);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(left.len() >= 100 && right.len() >= 100);
        assert!(mean(&right) > mean(&left) + 1.0);
    }

    #[test]
    fn traverse_is_deterministic() {
        let s = two_class_scene(0, 20.0).unwrap();
        let path = [[2.0, 2.0], [18.0, 2.0], [18.0, 6.0]];
        let cal = default_calibration();
        let a = simulate_traverse(&s, &path, &TraverseConfig::default(), &cal, 7).unwrap();
        let b = simulate_traverse(&s, &path, &TraverseConfig::default(), &cal, 7).unwrap();
        assert_eq!(a.imu, b.imu);
        assert_eq!(a.power, b.power);
        assert_eq!(a.uav_frames, b.uav_frames);
        let r = RenderConfig::default();
        assert_eq!(
            a.render_frame(&s, "a00003", &r).unwrap(),
            b.render_frame(&s, "a00003", &r).unwrap()
        );
        assert_eq!(
            a.render_frame(&s, "g00004", &r).unwrap(),
            b.render_frame(&s, "g00004", &r).unwrap()
        );
    }

    #[test]
    fn turns_are_not_straight_driving() {
        let s = two_class_scene(0, 20.0).unwrap();
        let b = simulate_traverse(&s, &[[2.0, 2.0], [18.0, 2.0], [18.0, 10.0]], &TraverseConfig::default(), &default_calibration(), 0)
            .unwrap();
        let iv = crate::dataset::filter_straight_segments(&b.odometry, 0.1);
        assert_eq!(iv.len(), 2, "{iv:?}");
        let driven: f64 = iv.iter().map(|i| (i.end - i.start) * 1.5).sum();
        assert!((driven - 24.0).abs() < 0.5, "{driven}");
    }

    #[test]
    fn survey_dimensions_follow_gsd() {
        let s = two_class_scene(0, 20.0).unwrap();
        let (a, _) = render_survey(&s, [2.0, 2.0], [6.0, 5.0], 0.04, false, 0).unwrap();
        let (b, _) = render_survey(&s, [2.0, 2.0], [6.0, 5.0], 0.02, false, 0).unwrap();
        assert_eq!((a.width(), a.height()), (100, 75));
        assert_eq!((b.width(), b.height()), (200, 150));
    }

    #[test]
    fn aerial_render_matches_direct_texture() {
        let s = two_class_scene(4, 20.0).unwrap();
        let gsd = 0.02;
        let (img, georef) = render_survey(&s, [4.0, 4.0], [8.0, 8.0], gsd, false, 0).unwrap();
        let mut worst: f64 = 0.0;
        for v in (5..img.height() - 5).step_by(7) {
            for u in (5..img.width() - 5).step_by(7) {
                let w = georef.pixel_to_world(&Point2::new(u as f64, v as f64));
                let direct = s.texture_at(w.x, w.y, View::Aerial { occlusion_study: false }, gsd / 2.0);
                worst = worst.max((img.get(u, v) as f64 - direct).abs());
            }
        }
        // the render box-averages four subsamples a quarter pixel apart
        assert!(worst < 3.0, "{worst}");
        // north-up: image top lies at high y
        let top = georef.pixel_to_world(&Point2::new(0.0, 0.0));
        let bottom = georef.pixel_to_world(&Point2::new(0.0, (img.height() - 1) as f64));
        assert!(top.y > bottom.y);
        assert!((top.x - (4.0 + gsd / 2.0)).abs() < 1e-9 && (top.y - (8.0 - gsd / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn horizon_row_sees_no_ground() {
        let s = two_class_scene(0, 20.0).unwrap();
        let cal = default_calibration();
        let level = AttitudeSample::new(0.0, 0.0, 0.0).unwrap();
        let img = render_fpv(&s, Pose2::new(5.0, 10.0, 0.0), &level, &cal, 0.0, 0).unwrap();
        let horizon = cal.camera.cy - cal.camera.fy * 20f64.to_radians().tan();
        let row = horizon.floor() as usize;
        let cfg = camera_from_ground(&cal.robot_from_camera().unwrap(), &level, cal.robot_height).unwrap();
        for u in [0, 100, 212, 423] {
            assert!(back_project_to_ground(&Point2::new(u as f64, row as f64), &cfg, &cal.camera).is_err());
            assert_eq!(img.get(u, row), SKY_GRAY);
            assert!(back_project_to_ground(&Point2::new(u as f64, (row + 1) as f64), &cfg, &cal.camera).is_ok());
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn equivalent_blur_grows_with_distance() {
        let cal = default_calibration();
        let px = 1.5 / 64.0;
        let mut last = 0.0;
        for d in 1..=10 {
            let (sv, sh) = equivalent_blur(&cal, d as f64, px).unwrap();
            assert!(sv > last && sv > sh);
            last = sv;
        }
        // roughly quadratic along the view
        let (s5, _) = equivalent_blur(&cal, 5.0, px).unwrap();
        let (s10, _) = equivalent_blur(&cal, 10.0, px).unwrap();
        assert!(s10 / s5 > 3.0 && s10 / s5 < 5.0);
        let _ = TimeSeries::new(vec![0.0, 1.0], vec![0.0, 0.0], 1.0).unwrap();
    }
}
