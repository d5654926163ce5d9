//! Frames, rigid transforms, pinhole projection, BEV resampling and
//! marker-based georeferencing of aerial images.
//!
//! Conventions: the ground frame is Z-up, the robot frame is
//! X-forward/Y-left/Z-up and camera frames are Z-forward/X-right/Y-down.
//! A transform tagged `from -> to` maps point coordinates expressed in `from`
//! into `to`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Mask, Raster};

/// Minimum share of in-source samples for a patch to be accepted.
pub const MIN_PATCH_COVERAGE: f64 = 0.95;

/// Known marker perimeter used when calibration does not override it.
pub const DEFAULT_MARKER_PERIMETER: f64 = 1.4;

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame mismatch: cannot compose {outer_from:?} <- {inner_to:?}")]
    FrameMismatch { outer_from: Frame, inner_to: Frame },
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("pixel ray does not intersect the ground plane in front of the camera")]
    NoGroundIntersection,
    #[error("degenerate marker: {0}")]
    DegenerateMarker(String),
    #[error("patch coverage {coverage:.3} below threshold")]
    InsufficientCoverage { coverage: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    World,
    Ground,
    Robot,
    Camera,
    Other(u16),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    from: Frame,
    to: Frame,
}

impl RigidTransform {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        from: Frame,
        to: Frame,
    ) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
            from,
            to,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), frame, frame)
    }

    /// Builds a transform from a `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(
        q: [f64; 4],
        translation: [f64; 3],
        from: Frame,
        to: Frame,
    ) -> Result<Self, GeometryError> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::InvalidParameter(format!(
                "quaternion norm {norm} is not usable"
            )));
        }
        Ok(Self::new(
            UnitQuaternion::from_quaternion(quat),
            Vector3::from(translation),
            from,
            to,
        ))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> Frame {
        self.from
    }

    pub fn to_frame(&self) -> Frame {
        self.to
    }

    pub fn retag(mut self, from: Frame, to: Frame) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -(inv * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> Result<Self, GeometryError> {
        compose(self, inner)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Component-wise comparison on quaternion (sign-canonicalized) and
    /// translation.
    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        if self.from != other.from || self.to != other.to {
            return false;
        }
        let a = self.rotation.quaternion().coords;
        let mut b = other.rotation.quaternion().coords;
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        (a - b).amax() <= tol && (self.translation - other.translation).amax() <= tol
    }

    pub fn to_config(&self) -> TransformConfig {
        let q = self.rotation.quaternion();
        TransformConfig {
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// `a ∘ b`, mapping `b.from -> a.to`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform, GeometryError> {
    if a.from != b.to {
        return Err(GeometryError::FrameMismatch {
            outer_from: a.from,
            inner_to: b.to,
        });
    }
    Ok(RigidTransform::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
        b.from,
        a.to,
    ))
}

/// Serialized form of a transform: quaternion `(w, x, y, z)` + translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl TransformConfig {
    pub fn to_transform(&self, from: Frame, to: Frame) -> Result<RigidTransform, GeometryError> {
        RigidTransform::from_wxyz(self.rotation_wxyz, self.translation, from, to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidParameter(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidParameter(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<Point2<f64>, GeometryError> {
        if p_cam.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { depth: p_cam.z });
        }
        Ok(Point2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Camera-frame ray direction (unnormalized, z = 1) through a pixel.
    pub fn ray(&self, pixel: &Point2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeSample {
    pub timestamp: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl AttitudeSample {
    pub fn new(timestamp: f64, roll: f64, pitch: f64) -> Result<Self, GeometryError> {
        if !(roll.abs() < PI / 2.0 && pitch.abs() < PI / 2.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "attitude out of driving range: roll {roll}, pitch {pitch}"
            )));
        }
        Ok(Self {
            timestamp,
            roll,
            pitch,
        })
    }
}

/// Robot-to-ground transform from IMU roll/pitch. Yaw is zero: the ground
/// frame is the robot's heading frame, with its origin below the robot.
pub fn ground_from_attitude(att: &AttitudeSample, robot_height: f64) -> RigidTransform {
    let rotation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), att.pitch)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), att.roll);
    RigidTransform::new(
        rotation,
        Vector3::new(0.0, 0.0, robot_height),
        Frame::Robot,
        Frame::Ground,
    )
}

/// Camera-from-ground chain: `(robot <- camera)^-1 ∘ (ground <- robot)^-1`.
pub fn camera_from_ground(
    robot_from_camera: &RigidTransform,
    att: &AttitudeSample,
    robot_height: f64,
) -> Result<RigidTransform, GeometryError> {
    let robot_from_ground = ground_from_attitude(att, robot_height).inverse();
    compose(&robot_from_camera.inverse(), &robot_from_ground)
}

/// Extrinsics of a forward-looking camera on the robot, tilted down by
/// `tilt_down` radians, mounted at `position` in the robot frame.
pub fn forward_camera_mount(position: Vector3<f64>, tilt_down: f64) -> RigidTransform {
    let (s, c) = tilt_down.sin_cos();
    let x_cam = Vector3::new(0.0, -1.0, 0.0);
    let y_cam = Vector3::new(-s, 0.0, -c);
    let z_cam = Vector3::new(c, 0.0, -s);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x_cam, y_cam, z_cam]));
    RigidTransform::new(
        UnitQuaternion::from_rotation_matrix(&rot),
        position,
        Frame::Camera,
        Frame::Robot,
    )
}

/// Projects a ground-frame point into the image.
pub fn project_ground_point(
    p_ground: &Vector3<f64>,
    cam_from_ground: &RigidTransform,
    cam: &CameraModel,
) -> Result<Point2<f64>, GeometryError> {
    cam.project(&cam_from_ground.transform_point(p_ground))
}

/// Intersects a pixel's ray with the `z = 0` ground plane.
pub fn back_project_to_ground(
    pixel: &Point2<f64>,
    cam_from_ground: &RigidTransform,
    cam: &CameraModel,
) -> Result<Vector3<f64>, GeometryError> {
    let ground_from_cam = cam_from_ground.inverse();
    let origin = ground_from_cam.translation;
    let dir = ground_from_cam.transform_vector(&cam.ray(pixel));
    if dir.z >= -1e-12 {
        return Err(GeometryError::NoGroundIntersection);
    }
    let s = -origin.z / dir.z;
    if s <= 0.0 {
        return Err(GeometryError::NoGroundIntersection);
    }
    Ok(origin + dir * s)
}

/// Target raster on the ground plane. Cell `(col, row)` covers
/// `x ∈ origin.x + [col, col+1)·cell_size`, `y ∈ origin.y + [row, row+1)·cell_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GroundGrid {
    pub fn new(
        origin: [f64; 2],
        cell_size: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(cell_size > 0.0) || width == 0 || height == 0 {
            return Err(GeometryError::InvalidParameter(
                "ground grid needs positive cell size and extent".into(),
            ));
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
        })
    }

    /// Forward-only grid: `[0, forward]` ahead of the robot and
    /// `±lateral` to each side.
    pub fn forward(forward: f64, lateral: f64, cell_size: f64) -> Result<Self, GeometryError> {
        Self::new(
            [0.0, -lateral],
            cell_size,
            (forward / cell_size).round() as usize,
            (2.0 * lateral / cell_size).round() as usize,
        )
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Continuous raster coordinate of a ground point (pixel-center convention).
    pub fn ground_to_raster(&self, p: &Vector2<f64>) -> Point2<f64> {
        Point2::new(
            (p.x - self.origin[0]) / self.cell_size - 0.5,
            (p.y - self.origin[1]) / self.cell_size - 0.5,
        )
    }
}

/// Resamples a perspective image onto a ground grid under the flat-ground
/// hypothesis.
pub fn bev_resample(
    image: &Raster,
    cam_from_ground: &RigidTransform,
    cam: &CameraModel,
    grid: &GroundGrid,
) -> (Raster, Mask) {
    let mut out = Raster::filled(grid.width, grid.height, 0.0);
    let mut mask = Mask::filled(grid.width, grid.height, false);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let c = grid.cell_center(col, row);
            let Ok(px) = project_ground_point(&Vector3::new(c.x, c.y, 0.0), cam_from_ground, cam)
            else {
                continue;
            };
            if let Some(v) = image.sample_bilinear(px.x, px.y) {
                out.set(col, row, v as f32);
                mask.set(col, row, true);
            }
        }
    }
    (out, mask)
}

/// Ground extents of one pixel, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFootprint {
    /// Extent between the ground hits of the pixel's top and bottom edge
    /// midpoints.
    pub along: f64,
    /// Extent between the left and right edge midpoints.
    pub cross: f64,
}

pub fn ground_pixel_footprint(
    cam_from_ground: &RigidTransform,
    cam: &CameraModel,
    pixel: &Point2<f64>,
) -> Result<PixelFootprint, GeometryError> {
    let hit = |du: f64, dv: f64| {
        back_project_to_ground(&Point2::new(pixel.x + du, pixel.y + dv), cam_from_ground, cam)
    };
    let top = hit(0.0, -0.5)?;
    let bottom = hit(0.0, 0.5)?;
    let left = hit(-0.5, 0.0)?;
    let right = hit(0.5, 0.0)?;
    Ok(PixelFootprint {
        along: (top - bottom).norm(),
        cross: (right - left).norm(),
    })
}

/// Detected marker corners in aerial pixel coordinates, clockwise starting
/// at the marker's front-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub corners: [[f64; 2]; 4],
    #[serde(default = "default_marker_perimeter")]
    pub known_perimeter: f64,
}

fn default_marker_perimeter() -> f64 {
    DEFAULT_MARKER_PERIMETER
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerFix {
    /// Meters per pixel.
    pub gsd: f64,
    /// Angle of the robot's forward direction in image coordinates
    /// (`atan2(dv, du)`).
    pub heading: f64,
    pub center: Point2<f64>,
}

pub fn aerial_gsd_and_heading(m: &MarkerObservation) -> Result<MarkerFix, GeometryError> {
    if !(m.known_perimeter > 0.0) {
        return Err(GeometryError::InvalidParameter(
            "marker perimeter must be positive".into(),
        ));
    }
    let c: Vec<Point2<f64>> = m.corners.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let pixel_perimeter: f64 = (0..4).map(|i| (c[(i + 1) % 4] - c[i]).norm()).sum();
    if !(pixel_perimeter >= 4.0) {
        return Err(GeometryError::DegenerateMarker(format!(
            "pixel perimeter {pixel_perimeter:.3} px"
        )));
    }
    if !is_simple_quad(&c) {
        return Err(GeometryError::DegenerateMarker(
            "corners form a self-intersecting quadrilateral".into(),
        ));
    }
    let center = Point2::from((c[0].coords + c[1].coords + c[2].coords + c[3].coords) / 4.0);
    // front-left, front-right, rear-right, rear-left
    let rear_mid = Point2::from((c[2].coords + c[3].coords) / 2.0);
    let dir = center - rear_mid;
    Ok(MarkerFix {
        gsd: m.known_perimeter / pixel_perimeter,
        heading: dir.y.atan2(dir.x),
        center,
    })
}

fn is_simple_quad(c: &[Point2<f64>]) -> bool {
    fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    }
    fn segments_cross(p1: &Point2<f64>, p2: &Point2<f64>, q1: &Point2<f64>, q2: &Point2<f64>) -> bool {
        let d1 = cross(q1, q2, p1);
        let d2 = cross(q1, q2, p2);
        let d3 = cross(p1, p2, q1);
        let d4 = cross(p1, p2, q2);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }
    !segments_cross(&c[0], &c[1], &c[2], &c[3]) && !segments_cross(&c[1], &c[2], &c[3], &c[0])
}

/// Planar pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    /// Expresses a world point in this pose's heading frame.
    pub fn to_local(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let d = p - Vector2::new(self.x, self.y);
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn to_world(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }
}

/// World <-> pixel mapping of a nadir aerial image, anchored on the marker:
/// the marker center pixel images the robot's world position, and the
/// marker heading images the robot's world yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AerialGeoref {
    pub center_px: [f64; 2],
    pub heading: f64,
    pub gsd: f64,
    pub anchor: Pose2,
}

impl AerialGeoref {
    pub fn from_marker(fix: &MarkerFix, robot: Pose2) -> Self {
        Self {
            center_px: [fix.center.x, fix.center.y],
            heading: fix.heading,
            gsd: fix.gsd,
            anchor: robot,
        }
    }

    fn image_axes(&self) -> (Vector2<f64>, Vector2<f64>) {
        let (s, c) = self.heading.sin_cos();
        // image y points down, so robot-left is the forward axis turned by -90°
        (Vector2::new(c, s), Vector2::new(s, -c))
    }

    pub fn world_to_pixel(&self, p: &Vector2<f64>) -> Point2<f64> {
        let local = self.anchor.to_local(p);
        let (fwd, left) = self.image_axes();
        let d = (fwd * local.x + left * local.y) / self.gsd;
        Point2::new(self.center_px[0] + d.x, self.center_px[1] + d.y)
    }

    pub fn pixel_to_world(&self, px: &Point2<f64>) -> Vector2<f64> {
        let d = Vector2::new(px.x - self.center_px[0], px.y - self.center_px[1]) * self.gsd;
        let (fwd, left) = self.image_axes();
        self.anchor.to_world(&Vector2::new(d.dot(&fwd), d.dot(&left)))
    }
}

/// Oriented square on the ground. `yaw` orients the patch's "up" direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub center: [f64; 2],
    pub yaw: f64,
    pub side: f64,
}

impl Footprint {
    /// Ground position of patch pixel `(col, row)` center: the top row lies
    /// ahead along `yaw`, the left column lies to its left.
    pub fn sample_point(&self, col: usize, row: usize, n: usize) -> Vector2<f64> {
        let n = n as f64;
        let a = self.side * (0.5 - (row as f64 + 0.5) / n);
        let b = self.side * (0.5 - (col as f64 + 0.5) / n);
        Pose2::new(self.center[0], self.center[1], self.yaw).to_world(&Vector2::new(a, b))
    }
}

/// Where patch samples come from.
#[derive(Debug, Clone, Copy)]
pub enum PatchSource<'a> {
    /// BEV raster in the robot heading frame; footprints in ground coordinates.
    Bev {
        raster: &'a Raster,
        mask: &'a Mask,
        grid: &'a GroundGrid,
    },
    /// Nadir aerial raster; footprints in world coordinates.
    Aerial {
        raster: &'a Raster,
        georef: &'a AerialGeoref,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPatch {
    pub raster: Raster,
    pub coverage: f64,
}

/// Samples the footprint without enforcing a coverage threshold. Samples
/// that fall outside the source are filled with the mean of valid samples.
pub fn sample_footprint(source: PatchSource<'_>, footprint: &Footprint, out_res: usize) -> ExtractedPatch {
    let n = out_res;
    let mut values: Vec<Option<f64>> = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let p = footprint.sample_point(col, row, n);
            let v = match source {
                PatchSource::Bev { raster, mask, grid } => {
                    let q = grid.ground_to_raster(&p);
                    raster.sample_bilinear_masked(q.x, q.y, Some(mask))
                }
                PatchSource::Aerial { raster, georef } => {
                    let q = georef.world_to_pixel(&p);
                    raster.sample_bilinear(q.x, q.y)
                }
            };
            values.push(v);
        }
    }
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    let coverage = valid.len() as f64 / values.len() as f64;
    let fill = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    let data = values.iter().map(|v| v.unwrap_or(fill) as f32).collect();
    ExtractedPatch {
        raster: Raster::from_vec(n, n, data).expect("patch shape"),
        coverage,
    }
}

pub fn extract_patch(
    source: PatchSource<'_>,
    footprint: &Footprint,
    out_res: usize,
) -> Result<ExtractedPatch, GeometryError> {
    if !(footprint.side > 0.0) || out_res == 0 {
        return Err(GeometryError::InvalidParameter(
            "footprint side and output resolution must be positive".into(),
        ));
    }
    let patch = sample_footprint(source, footprint, out_res);
    if patch.coverage < MIN_PATCH_COVERAGE {
        return Err(GeometryError::InsufficientCoverage {
            coverage: patch.coverage,
        });
    }
    Ok(patch)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Ground-side calibration: intrinsics, extrinsics and marker size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub camera: CameraModel,
    /// Camera -> robot transform.
    pub robot_from_camera: TransformConfig,
    pub robot_height: f64,
    #[serde(default = "default_marker_perimeter")]
    pub marker_perimeter: f64,
}

impl Calibration {
    pub fn robot_from_camera(&self) -> Result<RigidTransform, GeometryError> {
        self.robot_from_camera.to_transform(Frame::Camera, Frame::Robot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn translation(t: [f64; 3], from: Frame, to: Frame) -> RigidTransform {
        RigidTransform::new(UnitQuaternion::identity(), Vector3::from(t), from, to)
    }

    fn nadir(altitude: f64) -> RigidTransform {
        // camera x = ground x, camera y = -ground y, looking down
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        ]));
        RigidTransform::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            Vector3::new(0.0, 0.0, altitude),
            Frame::Camera,
            Frame::Ground,
        )
        .inverse()
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.1, -0.4, 1.2),
            Vector3::new(1.0, -2.0, 0.5),
            Frame::Robot,
            Frame::Ground,
        );
        let id = RigidTransform::identity(Frame::Ground);
        assert!(compose(&id, &t).unwrap().approx_eq(&t, 1e-12));
        let round = compose(&t, &t.inverse()).unwrap();
        assert!(round.approx_eq(&RigidTransform::identity(Frame::Ground), 1e-9));
    }

    #[test]
    fn compose_pure_translations() {
        let a = translation([1.0, 0.0, 0.0], Frame::Robot, Frame::Ground);
        let b = translation([0.0, 2.0, 0.0], Frame::Camera, Frame::Robot);
        let c = compose(&a, &b).unwrap();
        assert_eq!(c.translation(), &Vector3::new(1.0, 2.0, 0.0));
        assert_eq!((c.from_frame(), c.to_frame()), (Frame::Camera, Frame::Ground));
    }

    #[test]
    fn compose_rejects_mismatched_frames() {
        let a = translation([1.0, 0.0, 0.0], Frame::Robot, Frame::Ground);
        let b = translation([0.0, 2.0, 0.0], Frame::Camera, Frame::World);
        assert!(matches!(
            compose(&a, &b),
            Err(GeometryError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn attitude_level_is_pure_translation() {
        let t = ground_from_attitude(&AttitudeSample::new(0.0, 0.0, 0.0).unwrap(), 0.5);
        assert!(t.approx_eq(&translation([0.0, 0.0, 0.5], Frame::Robot, Frame::Ground), 1e-15));
    }

    #[test]
    fn attitude_signs() {
        let p = 0.3;
        let t = ground_from_attitude(&AttitudeSample::new(0.0, 0.0, p).unwrap(), 0.0);
        let x = t.transform_vector(&Vector3::x());
        assert!(close(x.z, -p.sin(), 1e-12));
        let r = -0.2;
        let t = ground_from_attitude(&AttitudeSample::new(0.0, r, 0.0).unwrap(), 0.0);
        let y = t.transform_vector(&Vector3::y());
        assert!(close(y.z, r.sin(), 1e-12));
    }

    #[test]
    fn attitude_rejects_inverted() {
        assert!(AttitudeSample::new(0.0, 1.7, 0.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let id = RigidTransform::identity(Frame::Camera);
        let px = project_ground_point(&Vector3::new(0.0, 0.0, 1.0), &id, &cam()).unwrap();
        assert_eq!((px.x, px.y), (320.0, 240.0));
        let px = project_ground_point(&Vector3::new(0.1, 0.0, 1.0), &id, &cam()).unwrap();
        assert!(close(px.x, 370.0, 1e-12) && close(px.y, 240.0, 1e-12));
        assert!(matches!(
            project_ground_point(&Vector3::new(0.0, 0.0, -1.0), &id, &cam()),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn forward_mount_looks_ahead() {
        let mount = forward_camera_mount(Vector3::new(0.3, 0.0, 0.7), 0.25);
        let att = AttitudeSample::new(0.0, 0.0, 0.0).unwrap();
        let c = camera_from_ground(&mount, &att, 0.5).unwrap();
        // a point ahead and slightly left lands left of center, below the horizon
        let px = project_ground_point(&Vector3::new(4.0, 0.5, 0.0), &c, &cam()).unwrap();
        assert!(px.x < 320.0);
        assert!(px.y > 240.0);
        let q = back_project_to_ground(&px, &c, &cam()).unwrap();
        assert!((q - Vector3::new(4.0, 0.5, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn bev_masks_cells_behind_camera() {
        let mount = forward_camera_mount(Vector3::new(0.0, 0.0, 0.5), 0.3);
        let att = AttitudeSample::new(0.0, 0.0, 0.0).unwrap();
        let c = camera_from_ground(&mount, &att, 0.5).unwrap();
        let grid = GroundGrid::new([-3.0, -1.0], 0.5, 12, 4).unwrap();
        let img = Raster::filled(640, 480, 7.0);
        let (bev, mask) = bev_resample(&img, &c, &cam(), &grid);
        // x < 0 is behind the camera
        assert!(!mask.get(0, 2));
        let visible = (0..12).find(|&col| mask.get(col, 2)).expect("some visible cell");
        assert!(grid.cell_center(visible, 2).x > 0.0);
        assert_eq!(bev.get(visible, 2), 7.0);
    }

    #[test]
    fn footprint_of_level_camera() {
        // optical axis parallel to the ground, 1 m high
        let mount = forward_camera_mount(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let att = AttitudeSample::new(0.0, 0.0, 0.0).unwrap();
        let c = camera_from_ground(&mount, &att, 0.0).unwrap();
        let cam = CameraModel::new(1000.0, 1000.0, 1000.0, 500.0, 2000, 3000).unwrap();
        let fp_at = |d: f64| {
            let px = project_ground_point(&Vector3::new(d, 0.0, 0.0), &c, &cam).unwrap();
            ground_pixel_footprint(&c, &cam, &px).unwrap()
        };
        let f10 = fp_at(10.0);
        assert!((f10.along - 0.1).abs() < 0.005, "{}", f10.along);
        let ratio = fp_at(20.0).along / f10.along;
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
        // horizon never reaches the ground
        assert!(matches!(
            ground_pixel_footprint(&c, &cam, &Point2::new(1000.0, 500.0)),
            Err(GeometryError::NoGroundIntersection)
        ));
    }

    #[test]
    fn nadir_footprint_is_uniform() {
        let cam = CameraModel::new(2732.0, 2732.0, 1920.0, 1080.0, 3840, 2160).unwrap();
        let c = nadir(10.0);
        for px in [[1920.0, 1080.0], [10.0, 10.0], [3800.0, 2000.0]] {
            let fp = ground_pixel_footprint(&c, &cam, &Point2::new(px[0], px[1])).unwrap();
            assert!((fp.along - 0.00366).abs() < 1e-5, "{}", fp.along);
            assert!((fp.cross - fp.along).abs() < 1e-9);
        }
    }

    fn square_marker(center: [f64; 2], half: f64, rot: f64) -> MarkerObservation {
        // robot facing image-up: FL, FR, RR, RL
        let base = [[-half, -half], [half, -half], [half, half], [-half, half]];
        let (s, c) = rot.sin_cos();
        let mut corners = [[0.0; 2]; 4];
        for (i, b) in base.iter().enumerate() {
            corners[i] = [
                center[0] + c * b[0] - s * b[1],
                center[1] + s * b[0] + c * b[1],
            ];
        }
        MarkerObservation {
            corners,
            known_perimeter: 1.4,
        }
    }

    #[test]
    fn marker_gsd_and_heading() {
        let fix = aerial_gsd_and_heading(&square_marker([200.0, 100.0], 50.0, 0.0)).unwrap();
        assert!(close(fix.gsd, 1.4 / 400.0, 1e-15));
        assert!(close(fix.heading, -PI / 2.0, 1e-12));
        assert_eq!((fix.center.x, fix.center.y), (200.0, 100.0));

        let rot = aerial_gsd_and_heading(&square_marker([200.0, 100.0], 50.0, PI / 2.0)).unwrap();
        assert!(close(wrap_angle(rot.heading - fix.heading), PI / 2.0, 1e-12));
    }

    #[test]
    fn marker_degenerate() {
        let m = MarkerObservation {
            corners: [[5.0, 5.0]; 4],
            known_perimeter: 1.4,
        };
        assert!(matches!(
            aerial_gsd_and_heading(&m),
            Err(GeometryError::DegenerateMarker(_))
        ));
        let mut bow = square_marker([0.0, 0.0], 20.0, 0.0);
        bow.corners.swap(1, 2);
        assert!(matches!(
            aerial_gsd_and_heading(&bow),
            Err(GeometryError::DegenerateMarker(_))
        ));
    }

    #[test]
    fn georef_round_trip_and_marker_consistency() {
        let fix = aerial_gsd_and_heading(&square_marker([300.0, 250.0], 35.0, 0.7)).unwrap();
        let robot = Pose2::new(12.0, -4.0, 0.3);
        let g = AerialGeoref::from_marker(&fix, robot);
        let px = g.world_to_pixel(&Vector2::new(12.0, -4.0));
        assert!(close(px.x, 300.0, 1e-9) && close(px.y, 250.0, 1e-9));
        // a point 1 m ahead of the robot lies along the marker heading
        let ahead = robot.to_world(&Vector2::new(1.0, 0.0));
        let pa = g.world_to_pixel(&ahead);
        let ang = (pa.y - 250.0).atan2(pa.x - 300.0);
        assert!(close(wrap_angle(ang - fix.heading), 0.0, 1e-9));
        let back = g.pixel_to_world(&Point2::new(17.0, 401.0));
        let again = g.world_to_pixel(&back);
        assert!(close(again.x, 17.0, 1e-9) && close(again.y, 401.0, 1e-9));
    }

    #[test]
    fn patch_from_constant_source() {
        let img = Raster::filled(200, 200, 90.0);
        let g = AerialGeoref {
            center_px: [100.0, 100.0],
            heading: 0.0,
            gsd: 0.02,
            anchor: Pose2::new(0.0, 0.0, 0.0),
        };
        let fp = Footprint {
            center: [0.0, 0.0],
            yaw: 0.4,
            side: 1.5,
        };
        let p = extract_patch(PatchSource::Aerial { raster: &img, georef: &g }, &fp, 32).unwrap();
        assert_eq!(p.coverage, 1.0);
        assert!(p.raster.data().iter().all(|&v| (v - 90.0).abs() < 1e-4));

        let half_out = Footprint {
            center: [2.0, 0.0],
            yaw: 0.0,
            side: 1.5,
        };
        assert!(matches!(
            extract_patch(PatchSource::Aerial { raster: &img, georef: &g }, &half_out, 32),
            Err(GeometryError::InsufficientCoverage { .. })
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert!(close(wrap_angle(3.0 * PI), PI, 1e-12));
        assert!(close(wrap_angle(-PI), PI, 1e-12));
        assert!(close(wrap_angle(0.5), 0.5, 1e-15));
    }

    fn arb_transform(from: Frame, to: Frame) -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_map(move |(r, t)| {
                RigidTransform::new(
                    UnitQuaternion::from_euler_angles(r[0], r[1], r[2]),
                    Vector3::from(t),
                    from,
                    to,
                )
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            a in arb_transform(Frame::Robot, Frame::World),
            b in arb_transform(Frame::Ground, Frame::Robot),
            c in arb_transform(Frame::Camera, Frame::Ground),
        ) {
            let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
            let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
            prop_assert!(left.approx_eq(&right, 1e-9));
            let q = left.rotation().quaternion().norm();
            prop_assert!((q - 1.0).abs() < 1e-9);
        }

        #[test]
        fn marker_scale_invariance(s in 0.2f64..5.0, rot in -3.0f64..3.0) {
            let m = square_marker([400.0, 300.0], 30.0, rot);
            let mut scaled = m;
            for c in scaled.corners.iter_mut() {
                c[0] *= s;
                c[1] *= s;
            }
            let a = aerial_gsd_and_heading(&m).unwrap();
            let b = aerial_gsd_and_heading(&scaled).unwrap();
            prop_assert!((b.gsd - a.gsd / s).abs() < 1e-9 * a.gsd.max(1.0));
            prop_assert!(wrap_angle(b.heading - a.heading).abs() < 1e-9);
        }
    }
}
