//! Points of interest along the driven path, co-registered ground/aerial
//! patches with self-supervised labels, normalization and folds.

use std::collections::BTreeMap;

use image::GrayImage;
use nalgebra::{Point2, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    aerial_gsd_and_heading, bev_resample, camera_from_ground, extract_patch, wrap_angle,
    AerialGeoref, AttitudeSample, Calibration, Footprint, GeometryError, GroundGrid,
    MarkerObservation, PatchSource, Pose2,
};
use crate::raster::Raster;
use crate::signals::{
    bumpiness_metric, energy_metric, label_at_pose, query_grid, vibration_metric, MetricKind, MetricParams,
    MetricSeries, SignalError, TimeSeries,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("min and max of {0} are equal; cannot normalize")]
    DegenerateRange(MetricKind),
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("record {poi_id} has no {view_source} views")]
    NoViews { poi_id: u64, view_source: ViewSource },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSource {
    Ugv,
    Uav,
}

impl ViewSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewSource::Ugv => "ugv",
            ViewSource::Uav => "uav",
        }
    }
}

impl std::fmt::Display for ViewSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViewSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ugv" => Ok(ViewSource::Ugv),
            "uav" => Ok(ViewSource::Uav),
            other => Err(format!("unknown view source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub position: [f64; 3],
    pub yaw: f64,
}

/// Localization track with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, DatasetError> {
        if samples.len() < 2 {
            return Err(DatasetError::InvalidTrajectory("need at least two samples".into()));
        }
        if let Some(i) = samples.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(DatasetError::InvalidTrajectory(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].timestamp
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].timestamp
    }

    /// Linearly interpolated sample (yaw along the shorter arc).
    pub fn sample_at(&self, t: f64) -> Option<TrajectorySample> {
        if t < self.start() - 1e-9 || t > self.end() + 1e-9 {
            return None;
        }
        let i = self.samples.partition_point(|s| s.timestamp <= t);
        if i == 0 {
            return Some(self.samples[0]);
        }
        if i == self.samples.len() {
            return Some(self.samples[i - 1]);
        }
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let f = (t - a.timestamp) / (b.timestamp - a.timestamp);
        Some(lerp_sample(a, b, f))
    }

    pub fn pose_at(&self, t: f64) -> Option<Pose2> {
        self.sample_at(t)
            .map(|s| Pose2::new(s.position[0], s.position[1], s.yaw))
    }
}

fn lerp_sample(a: &TrajectorySample, b: &TrajectorySample, f: f64) -> TrajectorySample {
    let mut position = [0.0; 3];
    for k in 0..3 {
        position[k] = a.position[k] + f * (b.position[k] - a.position[k]);
    }
    TrajectorySample {
        timestamp: a.timestamp + f * (b.timestamp - a.timestamp),
        position,
        yaw: interpolate_yaw(a.yaw, b.yaw, f),
    }
}

/// Shortest-arc yaw interpolation, wrapped to `(-π, π]`.
pub fn interpolate_yaw(a: f64, b: f64, f: f64) -> f64 {
    wrap_angle(a + f * wrap_angle(b - a))
}

/// Left/right wheel speeds, m/s.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WheelOdometry {
    pub timestamps: Vec<f64>,
    pub v_left: Vec<f64>,
    pub v_right: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

/// Minimum wheel speed for a sample to count as driving, m/s.
const MIN_DRIVING_SPEED: f64 = 0.1;

/// Maximal runs of samples where both wheels drive forward at similar speed.
pub fn filter_straight_segments(odom: &WheelOdometry, threshold: f64) -> Vec<TimeInterval> {
    let straight = |i: usize| {
        let (l, r) = (odom.v_left[i], odom.v_right[i]);
        let denom = l.abs().max(r.abs()).max(1e-9);
        (l - r).abs() / denom < threshold && l > MIN_DRIVING_SPEED && r > MIN_DRIVING_SPEED
    };
    let n = odom.timestamps.len().min(odom.v_left.len()).min(odom.v_right.len());
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=n {
        let ok = i < n && straight(i);
        match (ok, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if i - 1 > s {
                    out.push(TimeInterval {
                        start: odom.timestamps[s],
                        end: odom.timestamps[i - 1],
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointOfInterest {
    pub id: u64,
    pub pose: Pose2,
    pub timestamp: f64,
    /// Arc length from the start of its straight interval, meters.
    pub arc_length: f64,
}

/// Resamples the trajectory at fixed arc-length spacing inside each
/// interval. Arc length restarts at zero in every interval.
pub fn sample_pois(traj: &Trajectory, intervals: &[TimeInterval], spacing: f64) -> Vec<PointOfInterest> {
    assert!(spacing > 0.0, "POI spacing must be positive");
    let mut pois = Vec::new();
    for iv in intervals {
        let start = iv.start.max(traj.start());
        let end = iv.end.min(traj.end());
        if !(end > start) {
            continue;
        }
        let mut pts = vec![traj.sample_at(start).expect("inside")];
        pts.extend(
            traj.samples()
                .iter()
                .filter(|s| s.timestamp > start && s.timestamp < end)
                .copied(),
        );
        pts.push(traj.sample_at(end).expect("inside"));

        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1].position[0] - w[0].position[0]).hypot(w[1].position[1] - w[0].position[1]);
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        let mut k = 0usize;
        loop {
            let s = k as f64 * spacing;
            if s > total + 1e-9 {
                break;
            }
            let s = s.min(total);
            // first segment whose end reaches s and that has positive length
            let mut seg = cum.partition_point(|&c| c < s).max(1);
            while seg < cum.len() - 1 && cum[seg] - cum[seg - 1] <= 0.0 {
                seg += 1;
            }
            let seg_len = cum[seg] - cum[seg - 1];
            let f = if seg_len > 0.0 { ((s - cum[seg - 1]) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
            let p = lerp_sample(&pts[seg - 1], &pts[seg], f);
            pois.push(PointOfInterest {
                id: pois.len() as u64,
                pose: Pose2::new(p.position[0], p.position[1], p.yaw),
                timestamp: p.timestamp,
                arc_length: s,
            });
            k += 1;
        }
    }
    pois
}

/// Rate of the label query grid, Hz.
pub const DEFAULT_LABEL_RATE: f64 = 20.0;

/// All three smoothed metrics on a shared query grid covering the span where
/// every window fits inside both the IMU and power streams.
pub fn generate_labels(
    a_z: &TimeSeries<f64>,
    omega: &TimeSeries<[f64; 2]>,
    current: &TimeSeries<f64>,
    voltage: &TimeSeries<f64>,
    params: &MetricParams,
    rate: f64,
) -> Result<LabelSeries, SignalError> {
    let start = a_z.start().max(omega.start()).max(current.start()).max(voltage.start());
    let end = a_z.end().min(omega.end()).min(current.end()).min(voltage.end());
    let query = query_grid(start, end, params.window.alpha(), rate);
    if query.is_empty() {
        return Err(SignalError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(LabelSeries {
        m_z: vibration_metric(a_z, params, &query)?,
        m_omega: bumpiness_metric(omega, params, &query)?,
        m_p: energy_metric(current, voltage, params, &query)?,
    })
}

/// Three-metric label triple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Labels {
    pub m_z: f64,
    pub m_omega: f64,
    pub m_p: f64,
}

impl Labels {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Vibration => self.m_z,
            MetricKind::Bumpiness => self.m_omega,
            MetricKind::Energy => self.m_p,
        }
    }

    pub fn set(&mut self, kind: MetricKind, value: f64) {
        match kind {
            MetricKind::Vibration => self.m_z = value,
            MetricKind::Bumpiness => self.m_omega = value,
            MetricKind::Energy => self.m_p = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m_z.is_finite() && self.m_omega.is_finite() && self.m_p.is_finite()
    }
}

/// Smoothed metric series for the three labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    pub m_z: MetricSeries,
    pub m_omega: MetricSeries,
    pub m_p: MetricSeries,
}

impl LabelSeries {
    pub fn get(&self, kind: MetricKind) -> &MetricSeries {
        match kind {
            MetricKind::Vibration => &self.m_z,
            MetricKind::Bumpiness => &self.m_omega,
            MetricKind::Energy => &self.m_p,
        }
    }

    pub fn labels_at(&self, t: f64) -> Result<Labels, SignalError> {
        Ok(Labels {
            m_z: label_at_pose(&self.m_z, t)?,
            m_omega: label_at_pose(&self.m_omega, t)?,
            m_p: label_at_pose(&self.m_p, t)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchView {
    pub source: ViewSource,
    pub frame_id: String,
    /// Horizontal camera-to-patch-center distance (ground views only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_distance: Option<f64>,
    /// Whether the view belongs to the aerial/ground comparison subset.
    pub in_comparison: bool,
    /// Patch file, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip)]
    pub image: Option<GrayImage>,
}

impl PatchView {
    pub fn file_name(&self) -> String {
        format!("{}_{}.png", self.source, self.frame_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub poi_id: u64,
    pub timestamp: f64,
    pub pose: Pose2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terrain_tag: Option<String>,
    pub views: Vec<PatchView>,
    pub labels: Labels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_norm: Option<Labels>,
}

/// Which views of a record are eligible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFilter {
    pub source: ViewSource,
    /// Restrict ground views to the comparison subset.
    pub comparison_only: bool,
    /// Restrict ground views to `camera_distance` in `[min, max)`.
    pub distance_range: Option<(f64, f64)>,
}

impl ViewFilter {
    pub fn comparison(source: ViewSource) -> Self {
        Self {
            source,
            comparison_only: true,
            distance_range: None,
        }
    }

    pub fn all(source: ViewSource) -> Self {
        Self {
            source,
            comparison_only: false,
            distance_range: None,
        }
    }

    pub fn accepts(&self, v: &PatchView) -> bool {
        if v.source != self.source {
            return false;
        }
        if self.comparison_only && !v.in_comparison {
            return false;
        }
        match (self.distance_range, v.camera_distance) {
            (Some((lo, hi)), Some(d)) => d >= lo && d < hi,
            (Some(_), None) => self.source == ViewSource::Uav,
            _ => true,
        }
    }
}

impl PatchRecord {
    pub fn views_matching(&self, filter: &ViewFilter) -> impl Iterator<Item = &PatchView> + '_ {
        let filter = *filter;
        self.views.iter().filter(move |v| filter.accepts(v))
    }

    pub fn has_views(&self, filter: &ViewFilter) -> bool {
        self.views_matching(filter).next().is_some()
    }

    /// Deterministic evaluation view: smallest frame id among eligible views.
    pub fn first_view(&self, filter: &ViewFilter) -> Option<&PatchView> {
        self.views_matching(filter).min_by(|a, b| a.frame_id.cmp(&b.frame_id))
    }
}

/// Uniformly random eligible view.
pub fn sample_training_view<'a, R: Rng + ?Sized>(
    record: &'a PatchRecord,
    filter: &ViewFilter,
    rng: &mut R,
) -> Result<&'a PatchView, DatasetError> {
    let views: Vec<&PatchView> = record.views_matching(filter).collect();
    if views.is_empty() {
        return Err(DatasetError::NoViews {
            poi_id: record.poi_id,
            view_source: filter.source,
        });
    }
    Ok(views[rng.random_range(0..views.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub poi_spacing: f64,
    pub straight_threshold: f64,
    pub patch_side: f64,
    pub patch_resolution: usize,
    /// Ground views farther than this are kept but left out of the
    /// comparison subset.
    pub comparison_distance: f64,
    /// Ground views farther than this are not extracted at all.
    pub max_view_distance: f64,
    /// BEV grid ahead of the robot.
    pub bev_forward: f64,
    pub bev_lateral: f64,
    pub bev_cell: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            poi_spacing: 0.3,
            straight_threshold: 0.1,
            patch_side: 1.5,
            patch_resolution: 64,
            comparison_distance: 5.0,
            max_view_distance: 10.0,
            bev_forward: 12.0,
            bev_lateral: 6.0,
            bev_cell: 0.025,
        }
    }
}

impl ExtractionConfig {
    pub fn bev_grid(&self) -> Result<GroundGrid, GeometryError> {
        GroundGrid::forward(self.bev_forward, self.bev_lateral, self.bev_cell)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub frame_id: String,
    pub timestamp: f64,
}

/// Onboard camera frame with the attitude at exposure time.
#[derive(Debug, Clone)]
pub struct UgvFrame {
    pub meta: FrameMeta,
    pub attitude: AttitudeSample,
}

#[derive(Debug, Clone)]
pub struct UavFrame {
    pub meta: FrameMeta,
    pub marker: MarkerObservation,
}

/// A per-view problem that did not stop the build.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFailure {
    pub frame_id: String,
    pub poi_id: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub records: Vec<PatchRecord>,
    pub failures: Vec<ViewFailure>,
}

/// Inputs shared by every frame of a build.
pub struct BuildContext<'a> {
    pub trajectory: &'a Trajectory,
    pub calibration: &'a Calibration,
    pub labels: &'a LabelSeries,
    pub config: &'a ExtractionConfig,
    /// Optional terrain tag lookup by POI timestamp.
    pub tag_at: Option<&'a (dyn Fn(f64) -> Option<String> + Sync)>,
}

type FrameViews = (Vec<(u64, PatchView)>, Vec<ViewFailure>);

fn to_gray(r: &Raster) -> GrayImage {
    r.to_gray8()
}

fn ugv_views(
    frame: &UgvFrame,
    image: &Raster,
    pois: &[PointOfInterest],
    ctx: &BuildContext<'_>,
) -> Result<Vec<(u64, PatchView)>, DatasetError> {
    let cfg = ctx.config;
    let Some(robot) = ctx.trajectory.pose_at(frame.meta.timestamp) else {
        return Err(DatasetError::InvalidTrajectory(format!(
            "frame time {:.3} outside trajectory",
            frame.meta.timestamp
        )));
    };
    let robot_from_camera = ctx.calibration.robot_from_camera()?;
    let cam_from_ground = camera_from_ground(&robot_from_camera, &frame.attitude, ctx.calibration.robot_height)?;
    let cam_pos = cam_from_ground.inverse().transform_point(&Vector3::zeros());
    let grid = cfg.bev_grid()?;
    let half_diag = cfg.patch_side * std::f64::consts::FRAC_1_SQRT_2;

    let candidates: Vec<(&PointOfInterest, Vector2<f64>, f64)> = pois
        .iter()
        .filter_map(|poi| {
            let local = robot.to_local(&Vector2::new(poi.pose.x, poi.pose.y));
            let dist = (local - cam_pos.xy()).norm();
            let inside = local.x - half_diag >= grid.origin[0]
                && local.x + half_diag <= grid.origin[0] + grid.width as f64 * grid.cell_size
                && (local.y - half_diag) >= grid.origin[1]
                && (local.y + half_diag) <= grid.origin[1] + grid.height as f64 * grid.cell_size;
            (inside && dist <= cfg.max_view_distance).then_some((poi, local, dist))
        })
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let (bev, mask) = bev_resample(image, &cam_from_ground, &ctx.calibration.camera, &grid);
    let source = PatchSource::Bev {
        raster: &bev,
        mask: &mask,
        grid: &grid,
    };
    let mut out = Vec::new();
    for (poi, local, dist) in candidates {
        let fp = Footprint {
            center: [local.x, local.y],
            yaw: wrap_angle(poi.pose.yaw - robot.yaw),
            side: cfg.patch_side,
        };
        if let Ok(p) = extract_patch(source, &fp, cfg.patch_resolution) {
            out.push((
                poi.id,
                PatchView {
                    source: ViewSource::Ugv,
                    frame_id: frame.meta.frame_id.clone(),
                    camera_distance: Some(dist),
                    in_comparison: dist <= cfg.comparison_distance,
                    path: None,
                    image: Some(to_gray(&p.raster)),
                },
            ));
        }
    }
    Ok(out)
}

fn uav_views(
    frame: &UavFrame,
    image: &Raster,
    pois: &[PointOfInterest],
    ctx: &BuildContext<'_>,
) -> Result<Vec<(u64, PatchView)>, DatasetError> {
    let cfg = ctx.config;
    let Some(robot) = ctx.trajectory.pose_at(frame.meta.timestamp) else {
        return Err(DatasetError::InvalidTrajectory(format!(
            "frame time {:.3} outside trajectory",
            frame.meta.timestamp
        )));
    };
    let fix = aerial_gsd_and_heading(&frame.marker)?;
    let georef = AerialGeoref::from_marker(&fix, robot);
    let margin = cfg.patch_side * std::f64::consts::FRAC_1_SQRT_2 / fix.gsd;
    let source = PatchSource::Aerial {
        raster: image,
        georef: &georef,
    };
    let mut out = Vec::new();
    for poi in pois {
        let c: Point2<f64> = georef.world_to_pixel(&Vector2::new(poi.pose.x, poi.pose.y));
        if c.x < margin * 0.5
            || c.y < margin * 0.5
            || c.x > image.width() as f64 - margin * 0.5
            || c.y > image.height() as f64 - margin * 0.5
        {
            continue;
        }
        let fp = Footprint {
            center: [poi.pose.x, poi.pose.y],
            yaw: poi.pose.yaw,
            side: cfg.patch_side,
        };
        if let Ok(p) = extract_patch(source, &fp, cfg.patch_resolution) {
            out.push((
                poi.id,
                PatchView {
                    source: ViewSource::Uav,
                    frame_id: frame.meta.frame_id.clone(),
                    camera_distance: None,
                    in_comparison: true,
                    path: None,
                    image: Some(to_gray(&p.raster)),
                },
            ));
        }
    }
    Ok(out)
}

/// Extracts every visible view of every POI and attaches labels. Frames are
/// loaded on demand through `load`; per-frame and per-view failures are
/// recorded and skipped.
pub fn build_patch_records<L>(
    pois: &[PointOfInterest],
    ugv_frames: &[UgvFrame],
    uav_frames: &[UavFrame],
    ctx: &BuildContext<'_>,
    load: L,
) -> BuildOutput
where
    L: Fn(&FrameMeta) -> Result<Raster, String> + Sync,
{
    let run = |meta: &FrameMeta, f: &dyn Fn(&Raster) -> Result<Vec<(u64, PatchView)>, DatasetError>| -> FrameViews {
        match load(meta) {
            Err(reason) => (
                Vec::new(),
                vec![ViewFailure {
                    frame_id: meta.frame_id.clone(),
                    poi_id: None,
                    reason,
                }],
            ),
            Ok(img) => match f(&img) {
                Ok(v) => (v, Vec::new()),
                Err(e) => (
                    Vec::new(),
                    vec![ViewFailure {
                        frame_id: meta.frame_id.clone(),
                        poi_id: None,
                        reason: e.to_string(),
                    }],
                ),
            },
        }
    };

    let ugv: Vec<FrameViews> = ugv_frames
        .par_iter()
        .map(|fr| run(&fr.meta, &|img| ugv_views(fr, img, pois, ctx)))
        .collect();
    let uav: Vec<FrameViews> = uav_frames
        .par_iter()
        .map(|fr| run(&fr.meta, &|img| uav_views(fr, img, pois, ctx)))
        .collect();

    let mut by_poi: BTreeMap<u64, Vec<PatchView>> = BTreeMap::new();
    let mut failures = Vec::new();
    for (views, fails) in ugv.into_iter().chain(uav) {
        for (id, v) in views {
            by_poi.entry(id).or_default().push(v);
        }
        failures.extend(fails);
    }

    let mut records = Vec::new();
    for poi in pois {
        let Some(views) = by_poi.remove(&poi.id) else {
            continue;
        };
        let labels = match ctx.labels.labels_at(poi.timestamp) {
            Ok(l) if l.is_finite() => l,
            Ok(_) => {
                failures.push(ViewFailure {
                    frame_id: String::new(),
                    poi_id: Some(poi.id),
                    reason: "non-finite label".into(),
                });
                continue;
            }
            Err(e) => {
                failures.push(ViewFailure {
                    frame_id: String::new(),
                    poi_id: Some(poi.id),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        records.push(PatchRecord {
            poi_id: poi.id,
            timestamp: poi.timestamp,
            pose: poi.pose,
            terrain_tag: ctx.tag_at.and_then(|f| f(poi.timestamp)),
            views,
            labels,
            labels_norm: None,
        });
    }
    BuildOutput { records, failures }
}

/// Per-metric min/max of a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub min: Labels,
    pub max: Labels,
}

impl LabelStats {
    pub fn from_records(records: &[PatchRecord]) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::TooFewRecords { needed: 2, got: 0 });
        }
        let mut min = records[0].labels;
        let mut max = records[0].labels;
        for r in &records[1..] {
            for k in MetricKind::ALL {
                let v = r.labels.get(k);
                min.set(k, min.get(k).min(v));
                max.set(k, max.get(k).max(v));
            }
        }
        for k in MetricKind::ALL {
            if !(max.get(k) > min.get(k)) {
                return Err(DatasetError::DegenerateRange(k));
            }
        }
        Ok(Self { min, max })
    }

    pub fn range(&self, kind: MetricKind) -> (f64, f64) {
        (self.min.get(kind), self.max.get(kind))
    }

    /// Min-max normalization clamped to `[0, 1]`.
    pub fn normalize(&self, kind: MetricKind, x: f64) -> f64 {
        let (lo, hi) = self.range(kind);
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, kind: MetricKind, y: f64) -> f64 {
        let (lo, hi) = self.range(kind);
        lo + y * (hi - lo)
    }

    pub fn apply(&self, labels: &Labels) -> Labels {
        Labels {
            m_z: self.normalize(MetricKind::Vibration, labels.m_z),
            m_omega: self.normalize(MetricKind::Bumpiness, labels.m_omega),
            m_p: self.normalize(MetricKind::Energy, labels.m_p),
        }
    }
}

/// Fills `labels_norm`, computing stats from `records` unless given.
pub fn normalize_labels(records: &mut [PatchRecord], stats: Option<LabelStats>) -> Result<LabelStats, DatasetError> {
    let stats = match stats {
        Some(s) => s,
        None => LabelStats::from_records(records)?,
    };
    for r in records.iter_mut() {
        r.labels_norm = Some(stats.apply(&r.labels));
    }
    Ok(stats)
}

/// Cross-validation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FoldProtocol {
    /// Ten folds (90/10 train/validation splits), the first five evaluated.
    NinetyTen,
    /// Plain k-fold, every fold evaluated.
    KFold { k: usize },
}

impl Default for FoldProtocol {
    fn default() -> Self {
        FoldProtocol::NinetyTen
    }
}

impl FoldProtocol {
    pub fn folds(self) -> usize {
        match self {
            FoldProtocol::NinetyTen => 10,
            FoldProtocol::KFold { k } => k,
        }
    }

    pub fn evaluated(self) -> Vec<usize> {
        match self {
            FoldProtocol::NinetyTen => (0..5).collect(),
            FoldProtocol::KFold { k } => (0..k).collect(),
        }
    }

    pub fn assign(self, records: &[PatchRecord], seed: u64) -> Result<FoldAssignment, DatasetError> {
        let mut f = make_folds(records, self.folds(), seed)?;
        f.evaluated = self.evaluated();
        f.protocol = self;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub protocol: FoldProtocol,
    /// Folds that get a model and a validation score.
    pub evaluated: Vec<usize>,
    pub assignment: BTreeMap<u64, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, poi_id: u64) -> Option<usize> {
        self.assignment.get(&poi_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of POI ids, then round-robin assignment.
pub fn make_folds(records: &[PatchRecord], k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidConfig(format!("fold count {k} < 2")));
    }
    if records.len() < k {
        return Err(DatasetError::TooFewRecords {
            needed: k,
            got: records.len(),
        });
    }
    let mut ids: Vec<u64> = records.iter().map(|r| r.poi_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment = ids.iter().enumerate().map(|(i, &id)| (id, i % k)).collect();
    Ok(FoldAssignment {
        k,
        seed,
        protocol: FoldProtocol::KFold { k },
        evaluated: (0..k).collect(),
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn line(n: usize, dx: f64, dt: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| TrajectorySample {
                    timestamp: i as f64 * dt,
                    position: [i as f64 * dx, 0.0, 0.0],
                    yaw: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn odom(times: &[f64], l: impl Fn(f64) -> f64, r: impl Fn(f64) -> f64) -> WheelOdometry {
        WheelOdometry {
            timestamps: times.to_vec(),
            v_left: times.iter().map(|&t| l(t)).collect(),
            v_right: times.iter().map(|&t| r(t)).collect(),
        }
    }

    #[test]
    fn straight_filter_cases() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let all = filter_straight_segments(&odom(&ts, |_| 1.5, |_| 1.5), 0.1);
        assert_eq!(all, vec![TimeInterval { start: 0.0, end: ts[99] }]);
        assert!(filter_straight_segments(&odom(&ts, |_| 1.5, |_| 0.5), 0.1).is_empty());
        // straight until 3 s, turning in place until 5 s, straight after
        let turn = |t: f64| (3.0..5.0).contains(&t);
        let o = odom(&ts, |t| if turn(t) { -0.5 } else { 1.5 }, |t| if turn(t) { 0.5 } else { 1.5 });
        let iv = filter_straight_segments(&o, 0.1);
        assert_eq!(iv.len(), 2);
        assert!((iv[0].start - 0.0).abs() < 1e-12 && (iv[0].end - 2.9).abs() < 1e-9);
        assert!((iv[1].start - 5.0).abs() < 1e-9 && (iv[1].end - 9.9).abs() < 1e-9);
    }

    #[test]
    fn pois_on_a_three_meter_line() {
        let traj = line(4, 1.0, 1.0);
        let pois = sample_pois(&traj, &[TimeInterval { start: 0.0, end: 3.0 }], 0.3);
        assert_eq!(pois.len(), 11);
        for (k, p) in pois.iter().enumerate() {
            assert!((p.arc_length - 0.3 * k as f64).abs() < 1e-9);
            assert!((p.pose.x - 0.3 * k as f64).abs() < 1e-9);
        }
        let one = sample_pois(&line(2, 1.0, 1.0), &[TimeInterval { start: 0.0, end: 1.0 }], 0.25);
        assert!((one[1].timestamp - 0.25).abs() < 1e-12);
    }

    #[test]
    fn yaw_interpolates_the_short_way() {
        let y = interpolate_yaw(3.1, -3.1, 0.5);
        assert!((y.abs() - PI).abs() < 1e-9, "{y}");
        // oracle: circular mean of the endpoints
        let mean = (3.1f64.sin() + (-3.1f64).sin()).atan2(3.1f64.cos() + (-3.1f64).cos());
        assert!(wrap_angle(y - mean).abs() < 1e-9);
    }

    fn record(id: u64, m: f64) -> PatchRecord {
        PatchRecord {
            poi_id: id,
            timestamp: id as f64,
            pose: Pose2::new(0.0, 0.0, 0.0),
            terrain_tag: None,
            views: Vec::new(),
            labels: Labels { m_z: m, m_omega: m * 2.0, m_p: m + 1.0 },
            labels_norm: None,
        }
    }

    #[test]
    fn normalization_examples() {
        let mut recs = vec![record(0, 2.0), record(1, 4.0), record(2, 6.0)];
        let stats = normalize_labels(&mut recs, None).unwrap();
        let z: Vec<f64> = recs.iter().map(|r| r.labels_norm.unwrap().m_z).collect();
        assert_eq!(z, vec![0.0, 0.5, 1.0]);
        let mut eval = vec![record(3, 8.0)];
        normalize_labels(&mut eval, Some(stats)).unwrap();
        assert_eq!(eval[0].labels_norm.unwrap().m_z, 1.0);
        let mut flat = vec![record(0, 1.0), record(1, 1.0)];
        assert!(matches!(normalize_labels(&mut flat, None), Err(DatasetError::DegenerateRange(_))));
    }

    #[test]
    fn folds_of_hundred() {
        let recs: Vec<PatchRecord> = (0..100).map(|i| record(i, i as f64)).collect();
        let f = make_folds(&recs, 10, 4).unwrap();
        assert!(f.fold_sizes().iter().all(|&s| s == 10));
        assert_eq!(f, make_folds(&recs, 10, 4).unwrap());
        assert_ne!(f.assignment, make_folds(&recs, 10, 5).unwrap().assignment);
        assert!(matches!(make_folds(&recs[..3], 5, 0), Err(DatasetError::TooFewRecords { .. })));
        let p = FoldProtocol::NinetyTen.assign(&recs, 1).unwrap();
        assert_eq!(p.evaluated, vec![0, 1, 2, 3, 4]);
        assert_eq!(p.k, 10);
    }

    fn view(source: ViewSource, id: &str, d: Option<f64>) -> PatchView {
        PatchView {
            source,
            frame_id: id.into(),
            camera_distance: d,
            in_comparison: d.map_or(true, |d| d <= 5.0),
            path: None,
            image: None,
        }
    }

    #[test]
    fn training_view_sampling() {
        let mut r = record(0, 1.0);
        r.views = vec![view(ViewSource::Uav, "a", None)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = ViewFilter::comparison(ViewSource::Uav);
        assert_eq!(sample_training_view(&r, &f, &mut rng).unwrap().frame_id, "a");
        assert!(matches!(
            sample_training_view(&r, &ViewFilter::comparison(ViewSource::Ugv), &mut rng),
            Err(DatasetError::NoViews { .. })
        ));
    }

    #[test]
    fn training_view_uniformity() {
        let mut r = record(0, 1.0);
        r.views = ["a", "b", "c", "d"].iter().map(|id| view(ViewSource::Uav, id, None)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = ViewFilter::all(ViewSource::Uav);
        let mut counts = BTreeMap::new();
        let n = 10_000;
        for _ in 0..n {
            *counts.entry(sample_training_view(&r, &f, &mut rng).unwrap().frame_id.clone()).or_insert(0) += 1;
        }
        // chi-square with 3 dof, 99% quantile 11.34
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.34, "{chi2}");
        for &c in counts.values() {
            assert!((c as f64 / n as f64 - 0.25).abs() <= 0.02);
        }
    }

    #[test]
    fn filters_and_first_view() {
        let mut r = record(0, 1.0);
        r.views = vec![
            view(ViewSource::Ugv, "f9", Some(7.0)),
            view(ViewSource::Ugv, "f3", Some(4.0)),
            view(ViewSource::Uav, "a1", None),
        ];
        let cmp = ViewFilter::comparison(ViewSource::Ugv);
        assert_eq!(r.views_matching(&cmp).count(), 1);
        assert_eq!(r.first_view(&ViewFilter::all(ViewSource::Ugv)).unwrap().frame_id, "f3");
        let bin = ViewFilter {
            source: ViewSource::Ugv,
            comparison_only: false,
            distance_range: Some((6.0, 8.0)),
        };
        assert_eq!(r.first_view(&bin).unwrap().frame_id, "f9");
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..200, k in 2usize..12, seed in 0u64..1000) {
            prop_assume!(n >= k);
            let recs: Vec<PatchRecord> = (0..n as u64).map(|i| record(i * 3, i as f64)).collect();
            let f = make_folds(&recs, k, seed).unwrap();
            prop_assert_eq!(f.assignment.len(), n);
            let sizes = f.fold_sizes();
            let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(mx - mn <= 1);
        }

        #[test]
        fn normalization_round_trip(lo in -50.0f64..50.0, span in 0.1f64..100.0, x in 0.0f64..1.0) {
            let recs = vec![record(0, lo), record(1, lo + span)];
            let stats = LabelStats::from_records(&recs).unwrap();
            let raw = lo + x * span;
            let y = stats.normalize(MetricKind::Vibration, raw);
            prop_assert!((stats.denormalize(MetricKind::Vibration, y) - raw).abs() < 1e-9 * (1.0 + raw.abs()));
            // idempotent under fixed stats
            let mut a = recs.clone();
            normalize_labels(&mut a, Some(stats)).unwrap();
            let first = a.clone();
            normalize_labels(&mut a, Some(stats)).unwrap();
            prop_assert_eq!(first, a);
        }

        #[test]
        fn poi_spacing_is_exact(
            steps in prop::collection::vec((0.05f64..1.0, -0.3f64..0.3), 3..30),
            spacing in 0.1f64..0.7,
        ) {
            let mut samples = Vec::new();
            let (mut x, mut y, mut yaw) = (0.0, 0.0, 0.0);
            for (i, (d, turn)) in steps.iter().enumerate() {
                samples.push(TrajectorySample { timestamp: i as f64, position: [x, y, 0.0], yaw });
                yaw += turn;
                x += d * yaw.cos();
                y += d * yaw.sin();
            }
            let traj = Trajectory::new(samples).unwrap();
            let end = traj.end();
            let pois = sample_pois(&traj, &[TimeInterval { start: 0.0, end }], spacing);
            for w in pois.windows(2) {
                prop_assert!((w[1].arc_length - w[0].arc_length - spacing).abs() < 1e-6);
                prop_assert!(w[1].timestamp >= w[0].timestamp);
            }
        }
    }
}
