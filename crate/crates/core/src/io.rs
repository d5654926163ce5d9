//! On-disk formats: sensor CSVs, the frame index, calibration, the patch
//! store and its manifest.
//!
//! All CSVs carry a header row and SI units. Read errors report the file
//! and, where possible, the 1-based line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FoldAssignment, LabelSeries, PatchRecord, Trajectory, TrajectorySample, ViewSource, WheelOdometry};
use crate::geometry::{AttitudeSample, Calibration, MarkerObservation};
use crate::signals::{MetricKind, MetricSeries, TimeSeries};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Row { path: PathBuf, line: u64, msg: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn invalid(path: &Path, msg: impl ToString) -> Self {
        IoError::Invalid {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}

fn reader(path: &Path, required: &[&str]) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| IoError::invalid(path, e))?.clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(IoError::MissingColumn {
                path: path.to_path_buf(),
                column: col.to_string(),
            });
        }
    }
    Ok(rdr)
}

/// Deserializes every row, rejecting non-finite numbers via `check`.
fn read_rows<T: DeserializeOwned>(
    path: &Path,
    required: &[&str],
    check: impl Fn(&T) -> Option<String>,
) -> Result<Vec<T>, IoError> {
    let mut rdr = reader(path, required)?;
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<T>().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let row = row.map_err(|e| IoError::Row {
            path: path.to_path_buf(),
            line: e.position().map_or(line, |p| p.line()),
            msg: e.to_string(),
        })?;
        if let Some(msg) = check(&row) {
            return Err(IoError::Row {
                path: path.to_path_buf(),
                line,
                msg,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| IoError::invalid(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn non_finite(values: &[f64]) -> Option<String> {
    values
        .iter()
        .any(|v| !v.is_finite())
        .then(|| "non-finite value".to_string())
}

/// Median sample rate of a timestamp sequence.
pub fn median_rate(t: &[f64]) -> Option<f64> {
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if dts.is_empty() {
        return None;
    }
    dts.sort_by(f64::total_cmp);
    Some(1.0 / dts[dts.len() / 2])
}

fn series<T>(path: &Path, t: Vec<f64>, v: Vec<T>) -> Result<TimeSeries<T>, IoError> {
    let rate = median_rate(&t).ok_or_else(|| IoError::invalid(path, "need at least two distinct timestamps"))?;
    TimeSeries::new(t, v, rate).map_err(|e| IoError::invalid(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuRow {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

/// The IMU channels the labels use.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStreams {
    pub a_z: TimeSeries<f64>,
    pub omega: TimeSeries<[f64; 2]>,
}

impl ImuStreams {
    pub fn from_rows(path: &Path, rows: &[ImuRow]) -> Result<Self, IoError> {
        let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
        Ok(Self {
            a_z: series(path, t.clone(), rows.iter().map(|r| r.az).collect())?,
            omega: series(path, t, rows.iter().map(|r| [r.wx, r.wy]).collect())?,
        })
    }
}

pub const IMU_COLUMNS: [&str; 7] = ["t", "ax", "ay", "az", "wx", "wy", "wz"];

pub fn read_imu_rows(path: &Path) -> Result<Vec<ImuRow>, IoError> {
    read_rows(path, &IMU_COLUMNS, |r: &ImuRow| {
        non_finite(&[r.t, r.ax, r.ay, r.az, r.wx, r.wy, r.wz])
    })
}

pub fn read_imu(path: &Path) -> Result<ImuStreams, IoError> {
    ImuStreams::from_rows(path, &read_imu_rows(path)?)
}

pub fn write_imu(path: &Path, rows: &[ImuRow]) -> Result<(), IoError> {
    write_rows(path, rows)
}

/// One power sample; either channel may be absent on a given row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub t: f64,
    pub current: Option<f64>,
    pub voltage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerStreams {
    pub current: TimeSeries<f64>,
    pub voltage: TimeSeries<f64>,
}

impl PowerStreams {
    pub fn from_rows(path: &Path, rows: &[PowerRow]) -> Result<Self, IoError> {
        let split = |f: fn(&PowerRow) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
            rows.iter().filter_map(|r| f(r).map(|v| (r.t, v))).unzip()
        };
        let (tc, c) = split(|r| r.current);
        let (tv, v) = split(|r| r.voltage);
        Ok(Self {
            current: series(path, tc, c)?,
            voltage: series(path, tv, v)?,
        })
    }
}

pub fn read_power_rows(path: &Path) -> Result<Vec<PowerRow>, IoError> {
    read_rows(path, &["t", "current", "voltage"], |r: &PowerRow| {
        non_finite(&[r.t, r.current.unwrap_or(0.0), r.voltage.unwrap_or(0.0)])
    })
}

pub fn read_power(path: &Path) -> Result<PowerStreams, IoError> {
    PowerStreams::from_rows(path, &read_power_rows(path)?)
}

pub fn write_power(path: &Path, rows: &[PowerRow]) -> Result<(), IoError> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    t: f64,
    m_z: f64,
    m_omega: f64,
    m_p: f64,
}

pub fn write_labels(path: &Path, labels: &LabelSeries) -> Result<(), IoError> {
    let n = labels.m_z.timestamps.len();
    if labels.m_omega.timestamps.len() != n || labels.m_p.timestamps.len() != n {
        return Err(IoError::invalid(path, "metric series have different lengths"));
    }
    write_rows(
        path,
        (0..n).map(|i| LabelRow {
            t: labels.m_z.timestamps[i],
            m_z: labels.m_z.values[i],
            m_omega: labels.m_omega.values[i],
            m_p: labels.m_p.values[i],
        }),
    )
}

pub fn read_labels(path: &Path) -> Result<LabelSeries, IoError> {
    let rows: Vec<LabelRow> = read_rows(path, &["t", "m_z", "m_omega", "m_p"], |r: &LabelRow| {
        non_finite(&[r.t, r.m_z, r.m_omega, r.m_p])
    })?;
    if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(IoError::invalid(path, "timestamps not strictly increasing"));
    }
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let col = |kind, f: fn(&LabelRow) -> f64| MetricSeries {
        timestamps: t.clone(),
        values: rows.iter().map(f).collect(),
        kind,
    };
    Ok(LabelSeries {
        m_z: col(MetricKind::Vibration, |r| r.m_z),
        m_omega: col(MetricKind::Bumpiness, |r| r.m_omega),
        m_p: col(MetricKind::Energy, |r| r.m_p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let rows: Vec<TrajectoryRow> = read_rows(path, &["t", "x", "y", "z", "yaw"], |r: &TrajectoryRow| {
        non_finite(&[r.t, r.x, r.y, r.z, r.yaw])
    })?;
    Trajectory::new(
        rows.iter()
            .map(|r| TrajectorySample {
                timestamp: r.t,
                position: [r.x, r.y, r.z],
                yaw: r.yaw,
            })
            .collect(),
    )
    .map_err(|e| IoError::invalid(path, e))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    write_rows(
        path,
        traj.samples().iter().map(|s| TrajectoryRow {
            t: s.timestamp,
            x: s.position[0],
            y: s.position[1],
            z: s.position[2],
            yaw: s.yaw,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OdomRow {
    t: f64,
    v_left: f64,
    v_right: f64,
}

pub fn read_odometry(path: &Path) -> Result<WheelOdometry, IoError> {
    let rows: Vec<OdomRow> = read_rows(path, &["t", "v_left", "v_right"], |r: &OdomRow| {
        non_finite(&[r.t, r.v_left, r.v_right])
    })?;
    Ok(WheelOdometry {
        timestamps: rows.iter().map(|r| r.t).collect(),
        v_left: rows.iter().map(|r| r.v_left).collect(),
        v_right: rows.iter().map(|r| r.v_right).collect(),
    })
}

pub fn write_odometry(path: &Path, odom: &WheelOdometry) -> Result<(), IoError> {
    write_rows(
        path,
        (0..odom.timestamps.len()).map(|i| OdomRow {
            t: odom.timestamps[i],
            v_left: odom.v_left[i],
            v_right: odom.v_right[i],
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AttitudeRow {
    t: f64,
    roll: f64,
    pitch: f64,
}

pub fn read_attitude(path: &Path) -> Result<Vec<AttitudeSample>, IoError> {
    let rows: Vec<AttitudeRow> = read_rows(path, &["t", "roll", "pitch"], |r: &AttitudeRow| {
        non_finite(&[r.t, r.roll, r.pitch])
    })?;
    rows.iter()
        .map(|r| AttitudeSample::new(r.t, r.roll, r.pitch).map_err(|e| IoError::invalid(path, e)))
        .collect()
}

pub fn write_attitude(path: &Path, samples: &[AttitudeSample]) -> Result<(), IoError> {
    write_rows(
        path,
        samples.iter().map(|s| AttitudeRow {
            t: s.timestamp,
            roll: s.roll,
            pitch: s.pitch,
        }),
    )
}

/// Attitude at the nearest sample time; level when no samples exist.
pub fn attitude_at(samples: &[AttitudeSample], t: f64) -> AttitudeSample {
    let i = samples.partition_point(|s| s.timestamp < t);
    let best = [i.checked_sub(1), (i < samples.len()).then_some(i)]
        .into_iter()
        .flatten()
        .min_by(|&a, &b| (samples[a].timestamp - t).abs().total_cmp(&(samples[b].timestamp - t).abs()));
    match best {
        Some(k) => AttitudeSample {
            timestamp: t,
            ..samples[k]
        },
        None => AttitudeSample {
            timestamp: t,
            roll: 0.0,
            pitch: 0.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TagRow {
    t: f64,
    tag: String,
}

/// Piecewise-constant terrain tag track: each tag holds from its time until
/// the next entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagTrack {
    pub times: Vec<f64>,
    pub tags: Vec<String>,
}

impl TagTrack {
    pub fn push(&mut self, t: f64, tag: &str) {
        if self.tags.last().map(String::as_str) != Some(tag) {
            self.times.push(t);
            self.tags.push(tag.to_string());
        }
    }

    pub fn tag_at(&self, t: f64) -> Option<String> {
        let i = self.times.partition_point(|&x| x <= t);
        i.checked_sub(1).map(|k| self.tags[k].clone())
    }
}

pub fn read_tags(path: &Path) -> Result<TagTrack, IoError> {
    let rows: Vec<TagRow> = read_rows(path, &["t", "tag"], |r: &TagRow| non_finite(&[r.t]))?;
    if rows.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(IoError::invalid(path, "timestamps not sorted"));
    }
    Ok(TagTrack {
        times: rows.iter().map(|r| r.t).collect(),
        tags: rows.into_iter().map(|r| r.tag).collect(),
    })
}

pub fn write_tags(path: &Path, tags: &TagTrack) -> Result<(), IoError> {
    write_rows(
        path,
        tags.times.iter().zip(&tags.tags).map(|(&t, tag)| TagRow { t, tag: tag.clone() }),
    )
}

/// One line of `frames.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// Image file, relative to the index file's directory.
    pub path: String,
    pub t: f64,
    pub source: ViewSource,
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<MarkerObservation>,
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameEntry>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |msg: String| IoError::Row {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg,
        };
        let entry: FrameEntry = serde_json::from_str(&line).map_err(|e| row_err(e.to_string()))?;
        if entry.source == ViewSource::Uav && entry.marker.is_none() {
            return Err(row_err("aerial frame without marker corners".into()));
        }
        if !entry.t.is_finite() {
            return Err(row_err("non-finite timestamp".into()));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_frames(path: &Path, frames: &[FrameEntry]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| IoError::invalid(path, e))?;
        writeln!(w, "{line}").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| IoError::io(path, e))?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Row {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::invalid(path, e))?;
    writeln!(w).map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_calibration(path: &Path) -> Result<Calibration, IoError> {
    let cal: Calibration = read_json(path)?;
    cal.camera.validate().map_err(|e| IoError::invalid(path, e))?;
    Ok(cal)
}

pub const MANIFEST_NAME: &str = "records.json";
pub const FOLDS_NAME: &str = "folds.json";

/// Writes one directory per POI holding `{source}_{frame_id}.png` views,
/// then `records.json` with view paths relative to `dir`.
pub fn write_patch_store(dir: &Path, records: &[PatchRecord]) -> Result<Vec<PatchRecord>, IoError> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut r = r.clone();
        let sub = dir.join(r.poi_id.to_string());
        for v in &mut r.views {
            let rel = format!("{}/{}", r.poi_id, v.file_name());
            if let Some(img) = &v.image {
                fs::create_dir_all(&sub).map_err(|e| IoError::io(&sub, e))?;
                let p = dir.join(&rel);
                img.save(&p).map_err(|e| IoError::invalid(&p, e))?;
            }
            v.path = Some(rel);
        }
        out.push(r);
    }
    write_json(&dir.join(MANIFEST_NAME), &out)?;
    Ok(out)
}

/// Reads the manifest and, if `load_images`, every referenced patch.
pub fn read_patch_store(dir: &Path, load_images: bool) -> Result<Vec<PatchRecord>, IoError> {
    let manifest = dir.join(MANIFEST_NAME);
    let mut records: Vec<PatchRecord> = read_json(&manifest)?;
    let mut seen = BTreeMap::new();
    for r in &records {
        if seen.insert(r.poi_id, ()).is_some() {
            return Err(IoError::invalid(&manifest, format!("duplicate poi_id {}", r.poi_id)));
        }
        if !r.labels.is_finite() {
            return Err(IoError::invalid(&manifest, format!("non-finite labels for poi {}", r.poi_id)));
        }
    }
    if load_images {
        for r in &mut records {
            for v in &mut r.views {
                let Some(rel) = &v.path else {
                    return Err(IoError::invalid(&manifest, format!("view without path in poi {}", r.poi_id)));
                };
                let p = dir.join(rel);
                let img = image::open(&p).map_err(|e| IoError::invalid(&p, e))?;
                v.image = Some(img.into_luma8());
            }
        }
    }
    Ok(records)
}

pub fn write_folds(path: &Path, folds: &FoldAssignment) -> Result<(), IoError> {
    write_json(path, folds)
}

pub fn read_folds(path: &Path) -> Result<FoldAssignment, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_rows_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("power.csv");
        fs::write(&p, "t,current,voltage\n0.0,1.0,48\n0.1,,48\n0.2,1.2,\n0.3,1.1,48\n0.4,1.0,48\n").unwrap();
        let s = read_power(&p).unwrap();
        assert_eq!(s.current.len(), 4);
        assert_eq!(s.voltage.len(), 4);
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("imu.csv");
        fs::write(&p, "t,ax,ay,az,wx,wy,wz\n0,0,0,9.8,0,0,0\n0.01,0,0,oops,0,0,0\n").unwrap();
        match read_imu(&p) {
            Err(IoError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "t,ax,ay,wx,wy,wz\n0,0,0,0,0,0\n").unwrap();
        assert!(matches!(read_imu(&p), Err(IoError::MissingColumn { .. })));
    }

    #[test]
    fn tag_track_holds_until_next_entry() {
        let mut tags = TagTrack::default();
        tags.push(0.0, "grass");
        tags.push(1.0, "grass");
        tags.push(2.0, "gravel");
        assert_eq!(tags.times, vec![0.0, 2.0]);
        assert_eq!(tags.tag_at(-1.0), None);
        assert_eq!(tags.tag_at(1.5).as_deref(), Some("grass"));
        assert_eq!(tags.tag_at(2.0).as_deref(), Some("gravel"));
    }

    #[test]
    fn frames_require_markers_for_aerial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frames.jsonl");
        fs::write(&p, r#"{"path":"a.png","t":0.0,"source":"uav","frame_id":"a"}"#).unwrap();
        assert!(matches!(read_frames(&p), Err(IoError::Row { line: 1, .. })));
    }
}
