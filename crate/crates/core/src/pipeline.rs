//! Stream-level glue shared by the command line and the synthetic kit:
//! raw streams in, labels and patch records out.

use std::path::Path;

use crate::dataset::{
    build_patch_records, filter_straight_segments, generate_labels, sample_pois, BuildContext, BuildOutput,
    ExtractionConfig, FrameMeta, LabelSeries, PointOfInterest, Trajectory, UavFrame, UgvFrame, ViewSource,
    WheelOdometry, DEFAULT_LABEL_RATE,
};
use crate::geometry::{AttitudeSample, Calibration};
use crate::io::{attitude_at, FrameEntry, ImuStreams, IoError, PowerStreams, TagTrack};
use crate::raster::Raster;
use crate::signals::{MetricParams, SignalError};

/// Labels on the default query grid.
pub fn compute_labels(imu: &ImuStreams, power: &PowerStreams, params: &MetricParams) -> Result<LabelSeries, SignalError> {
    generate_labels(&imu.a_z, &imu.omega, &power.current, &power.voltage, params, DEFAULT_LABEL_RATE)
}

/// Everything patch extraction needs besides the images themselves.
#[derive(Debug, Clone)]
pub struct ExtractionInputs {
    pub trajectory: Trajectory,
    pub odometry: WheelOdometry,
    pub attitude: Vec<AttitudeSample>,
    pub tags: Option<TagTrack>,
    pub calibration: Calibration,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub pois: Vec<PointOfInterest>,
    pub output: BuildOutput,
}

/// Straight-segment filtering, POI sampling and view extraction.
pub fn extract_records<L>(inputs: &ExtractionInputs, labels: &LabelSeries, cfg: &ExtractionConfig, load: L) -> Extraction
where
    L: Fn(&FrameEntry) -> Result<Raster, String> + Sync,
{
    let intervals = filter_straight_segments(&inputs.odometry, cfg.straight_threshold);
    let pois = sample_pois(&inputs.trajectory, &intervals, cfg.poi_spacing);
    if pois.is_empty() {
        return Extraction::default();
    }
    let mut ugv = Vec::new();
    let mut uav = Vec::new();
    for f in &inputs.frames {
        let meta = FrameMeta {
            frame_id: f.frame_id.clone(),
            timestamp: f.t,
        };
        match (f.source, f.marker) {
            (ViewSource::Ugv, _) => ugv.push(UgvFrame {
                meta,
                attitude: attitude_at(&inputs.attitude, f.t),
            }),
            (ViewSource::Uav, Some(marker)) => uav.push(UavFrame { meta, marker }),
            // the frame index reader rejects aerial frames without markers
            (ViewSource::Uav, None) => {}
        }
    }
    let tag_fn = inputs.tags.as_ref().map(|t| move |ts: f64| t.tag_at(ts));
    let tag_ref: Option<&(dyn Fn(f64) -> Option<String> + Sync)> =
        tag_fn.as_ref().map(|f| f as &(dyn Fn(f64) -> Option<String> + Sync));
    let ctx = BuildContext {
        trajectory: &inputs.trajectory,
        calibration: &inputs.calibration,
        labels,
        config: cfg,
        tag_at: tag_ref,
    };
    let by_id: std::collections::HashMap<&str, &FrameEntry> =
        inputs.frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let output = build_patch_records(&pois, &ugv, &uav, &ctx, |meta| {
        let entry = by_id
            .get(meta.frame_id.as_str())
            .ok_or_else(|| format!("unknown frame {}", meta.frame_id))?;
        load(entry)
    });
    Extraction { pois, output }
}

/// Loader for frames stored next to the frame index.
pub fn png_loader(root: &Path) -> impl Fn(&FrameEntry) -> Result<Raster, String> + Sync + '_ {
    move |f| Raster::load_png(root.join(&f.path)).map_err(|e| e.to_string())
}

/// Reads the sensor files of a log directory.
pub fn read_extraction_inputs(
    trajectory: &Path,
    odometry: &Path,
    attitude: Option<&Path>,
    tags: Option<&Path>,
    calibration: &Path,
    frames: &Path,
) -> Result<ExtractionInputs, IoError> {
    Ok(ExtractionInputs {
        trajectory: crate::io::read_trajectory(trajectory)?,
        odometry: crate::io::read_odometry(odometry)?,
        attitude: attitude.map(crate::io::read_attitude).transpose()?.unwrap_or_default(),
        tags: tags.map(crate::io::read_tags).transpose()?,
        calibration: crate::io::read_calibration(calibration)?,
        frames: crate::io::read_frames(frames)?,
    })
}
