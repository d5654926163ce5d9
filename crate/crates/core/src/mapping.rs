//! Cost maps from aerial imagery: sliding-window tiles, per-tile
//! prediction and per-cell averaging.

use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, LumaA, Rgb, RgbImage};
use nalgebra::{Point2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::extract_features;
use crate::geometry::{extract_patch, AerialGeoref, Footprint, GroundGrid, PatchSource};
use crate::predictor::{PredictorError, RegressorModel};
use crate::raster::Raster;
use crate::signals::MetricKind;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("cost map has no observed cells")]
    EmptyMap,
    #[error("invalid sliding window: {0}")]
    InvalidSpec(String),
    #[error("map file is inconsistent: {0}")]
    BadMapFile(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlidingWindowSpec {
    pub patch_side: f64,
    pub stride: f64,
    pub cell_size: f64,
    pub patch_resolution: usize,
}

impl Default for SlidingWindowSpec {
    fn default() -> Self {
        Self {
            patch_side: 1.5,
            stride: 0.75,
            cell_size: 0.25,
            patch_resolution: 64,
        }
    }
}

impl SlidingWindowSpec {
    pub fn validate(&self) -> Result<(), MappingError> {
        if !(self.stride > 0.0 && self.stride <= self.patch_side) {
            return Err(MappingError::InvalidSpec(format!(
                "need 0 < stride ≤ patch_side, got stride {} side {}",
                self.stride, self.patch_side
            )));
        }
        if !(self.cell_size > 0.0) || self.patch_resolution == 0 {
            return Err(MappingError::InvalidSpec("cell size and patch resolution must be positive".into()));
        }
        Ok(())
    }

    /// Window positions along an extent of `length` meters.
    pub fn count_along(&self, length: f64) -> usize {
        if length + 1e-9 < self.patch_side {
            0
        } else {
            ((length - self.patch_side) / self.stride + 1e-9).floor() as usize + 1
        }
    }
}

/// Axis-aligned world bounds `(min, max)` of an aerial image's pixel area.
pub fn image_world_bounds(image: &Raster, georef: &AerialGeoref) -> ([f64; 2], [f64; 2]) {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let corners = [(-0.5, -0.5), (w - 0.5, -0.5), (w - 0.5, h - 0.5), (-0.5, h - 0.5)];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (u, v) in corners {
        let p = georef.pixel_to_world(&Point2::new(u, v));
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub footprint: Footprint,
    pub patch: Raster,
}

/// Axis-aligned sliding-window tiles over the image's world bounds; tiles
/// without enough image coverage are skipped.
pub fn tile_image(image: &Raster, georef: &AerialGeoref, spec: &SlidingWindowSpec) -> Result<Vec<Tile>, MappingError> {
    spec.validate()?;
    let (lo, hi) = image_world_bounds(image, georef);
    let nx = spec.count_along(hi[0] - lo[0]);
    let ny = spec.count_along(hi[1] - lo[1]);
    let half = 0.5 * spec.patch_side;
    let source = PatchSource::Aerial { raster: image, georef };
    let tiles = (0..ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..nx).filter_map(move |i| {
                let footprint = Footprint {
                    center: [lo[0] + half + i as f64 * spec.stride, lo[1] + half + j as f64 * spec.stride],
                    yaw: 0.0,
                    side: spec.patch_side,
                };
                extract_patch(source, &footprint, spec.patch_resolution)
                    .ok()
                    .map(|p| Tile { footprint, patch: p.raster })
            })
        })
        .collect();
    Ok(tiles)
}

/// Per-cell running sums of tile predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub grid: GroundGrid,
    pub metric_kind: MetricKind,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl CostMap {
    pub fn new(grid: GroundGrid, metric_kind: MetricKind) -> Self {
        let n = grid.width * grid.height;
        Self {
            grid,
            metric_kind,
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Grid covering `[lo, hi]` with the given cell size.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], cell_size: f64, metric_kind: MetricKind) -> Result<Self, MappingError> {
        let w = ((hi[0] - lo[0]) / cell_size - 1e-9).ceil().max(1.0) as usize;
        let h = ((hi[1] - lo[1]) / cell_size - 1e-9).ceil().max(1.0) as usize;
        let grid = GroundGrid::new(lo, cell_size, w, h).map_err(|e| MappingError::InvalidSpec(e.to_string()))?;
        Ok(Self::new(grid, metric_kind))
    }

    /// Map with one observation per `Some` cell, row-major from `(0, 0)`.
    pub fn from_values(grid: GroundGrid, metric_kind: MetricKind, values: &[Option<f64>]) -> Self {
        assert_eq!(values.len(), grid.width * grid.height);
        let mut m = Self::new(grid, metric_kind);
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                m.sum[i] = *v;
                m.count[i] = 1;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    fn idx(&self, col: usize, row: usize) -> usize {
        row * self.grid.width + col
    }

    pub fn count(&self, col: usize, row: usize) -> u32 {
        self.count[self.idx(col, row)]
    }

    pub fn sum(&self, col: usize, row: usize) -> f64 {
        self.sum[self.idx(col, row)]
    }

    pub fn value(&self, col: usize, row: usize) -> Option<f64> {
        let i = self.idx(col, row);
        (self.count[i] > 0).then(|| self.sum[i] / self.count[i] as f64)
    }

    pub fn observed_cells(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        let c = self.grid.cell_center(col, row);
        [c.x, c.y]
    }

    pub fn world_to_cell(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.grid.origin[0]) / self.grid.cell_size).floor();
        let fy = ((p[1] - self.grid.origin[1]) / self.grid.cell_size).floor();
        (fx >= 0.0 && fy >= 0.0 && (fx as usize) < self.grid.width && (fy as usize) < self.grid.height)
            .then_some((fx as usize, fy as usize))
    }

    /// Cells whose centers lie in the half-open axis-aligned square.
    pub fn cells_in(&self, center: [f64; 2], side: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
        let half = 0.5 * side;
        let c = self.grid.cell_size;
        let range = |o: f64, lo: f64, n: usize| {
            // center_k = o + (k + 0.5)c ∈ [lo, lo + side)
            let first = ((lo - o) / c - 0.5).ceil().max(0.0) as usize;
            let last = ((lo + side - o) / c - 0.5).ceil().max(0.0) as usize;
            first.min(n)..last.min(n)
        };
        let xs = range(self.grid.origin[0], center[0] - half, self.grid.width);
        let ys = range(self.grid.origin[1], center[1] - half, self.grid.height);
        ys.flat_map(move |r| xs.clone().map(move |col| (col, r)))
    }

    /// Adds `value` to every cell covered by the footprint.
    pub fn accumulate(&mut self, center: [f64; 2], side: f64, value: f64) {
        let cells: Vec<(usize, usize)> = self.cells_in(center, side).collect();
        for (col, row) in cells {
            let i = self.idx(col, row);
            self.sum[i] += value;
            self.count[i] += 1;
        }
    }

    /// Observed `(x, y, value)` triples in row-major order.
    pub fn observations(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for row in 0..self.height() {
            for col in 0..self.width() {
                if let Some(v) = self.value(col, row) {
                    let c = self.cell_center(col, row);
                    out.push((c[0], c[1], v));
                }
            }
        }
        out
    }

    /// Mean value over observed cells inside an axis-aligned region.
    pub fn mean_in(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<f64> {
        let vals: Vec<f64> = self
            .observations()
            .into_iter()
            .filter(|&(x, y, _)| x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1])
            .map(|(_, _, v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Predicts every tile and averages overlapping predictions per cell.
pub fn predict_map(tiles: &[Tile], model: &RegressorModel, map: CostMap) -> Result<CostMap, MappingError> {
    let preds: Vec<f64> = tiles
        .par_iter()
        .map(|t| -> Result<f64, MappingError> {
            let fv = extract_features(&t.patch).map_err(PredictorError::from)?;
            Ok(crate::predictor::forward(model, &fv)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(accumulate_predictions(tiles.iter().map(|t| &t.footprint).zip(preds), map))
}

pub fn accumulate_predictions<'a>(items: impl IntoIterator<Item = (&'a Footprint, f64)>, mut map: CostMap) -> CostMap {
    for (fp, v) in items {
        map.accumulate(fp.center, fp.side, v);
    }
    map
}

/// Sidecar metadata of an exported map. Row 0 of the PNG is the grid's
/// highest-`y` row so that the image reads north-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMetadata {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub metric_kind: MetricKind,
    pub encoding: String,
    pub no_data: String,
}

const ENCODING: &str = "gray16+alpha16, value = gray / 65535";
const NO_DATA: &str = "alpha = 0";

pub type MapImage = ImageBuffer<LumaA<u16>, Vec<u16>>;

pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_map(map: &CostMap) -> Result<(MapImage, MapMetadata), MappingError> {
    if map.observed_cells() == 0 {
        return Err(MappingError::EmptyMap);
    }
    let (w, h) = (map.width(), map.height());
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let row = h - 1 - y as usize;
        match map.value(x as usize, row) {
            Some(v) => LumaA([quantize(v), u16::MAX]),
            None => LumaA([0, 0]),
        }
    });
    let meta = MapMetadata {
        origin: map.grid.origin,
        cell_size: map.grid.cell_size,
        width: w,
        height: h,
        metric_kind: map.metric_kind,
        encoding: ENCODING.into(),
        no_data: NO_DATA.into(),
    };
    Ok((img, meta))
}

pub fn decode_map(img: &MapImage, meta: &MapMetadata) -> Result<CostMap, MappingError> {
    if img.width() as usize != meta.width || img.height() as usize != meta.height {
        return Err(MappingError::BadMapFile(format!(
            "image is {}x{}, metadata says {}x{}",
            img.width(),
            img.height(),
            meta.width,
            meta.height
        )));
    }
    let grid = GroundGrid::new(meta.origin, meta.cell_size, meta.width, meta.height)
        .map_err(|e| MappingError::BadMapFile(e.to_string()))?;
    let mut values = vec![None; meta.width * meta.height];
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[1] != 0 {
            let row = meta.height - 1 - y as usize;
            values[row * meta.width + x as usize] = Some(p.0[0] as f64 / 65535.0);
        }
    }
    Ok(CostMap::from_values(grid, meta.metric_kind, &values))
}

/// Writes `{stem}.png`, `{stem}.json` and `{stem}.csv` into `dir`.
pub fn export_map(map: &CostMap, dir: &Path, stem: &str) -> Result<MapMetadata, MappingError> {
    let (img, meta) = encode_map(map)?;
    std::fs::create_dir_all(dir)?;
    img.save(dir.join(format!("{stem}.png")))?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
    writeln!(csv, "x,y,value")?;
    for (x, y, v) in map.observations() {
        writeln!(csv, "{x},{y},{v}")?;
    }
    csv.flush()?;
    Ok(meta)
}

pub fn import_map(png: &Path, sidecar: &Path) -> Result<CostMap, MappingError> {
    let meta: MapMetadata = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let img = image::open(png)?.into_luma_alpha16();
    decode_map(&img, &meta)
}

/// Grayscale rendering of the map (no-data dark blue) with polylines drawn
/// on top, north-up.
pub fn render_overlay(map: &CostMap, paths: &[(&[[f64; 2]], [u8; 3])]) -> RgbImage {
    let (w, h) = (map.width(), map.height());
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| match map.value(x as usize, h - 1 - y as usize) {
        Some(v) => {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([g, g, g])
        }
        None => Rgb([10, 10, 60]),
    });
    for (pts, color) in paths {
        for seg in pts.windows(2) {
            let a = Vector2::new(seg[0][0], seg[0][1]);
            let b = Vector2::new(seg[1][0], seg[1][1]);
            let steps = (((b - a).norm() / map.grid.cell_size) * 4.0).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let p = a + (b - a) * (s as f64 / steps as f64);
                if let Some((c, r)) = map.world_to_cell([p.x, p.y]) {
                    img.put_pixel(c as u32, (h - 1 - r) as u32, Rgb(*color));
                }
            }
        }
    }
    img
}
