//! Minimum-cost grid paths over a cost map.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::CostMap;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no passable path between start and goal")]
    NoPath,
    #[error("{which} ({x:.3}, {y:.3}) is outside the map or unobserved")]
    UnobservedEndpoint { which: &'static str, x: f64, y: f64 },
    #[error("{which} cell has cost {value:.3} above the feasibility threshold {threshold}")]
    ImpassableEndpoint { which: &'static str, value: f64, threshold: f64 },
    #[error("start and goal fall in the same cell")]
    SameEndpoints,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Edge weight: step length × mean endpoint value.
    MetricOptimal,
    /// Edge weight: step length.
    ShortestFeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

pub const DEFAULT_FEASIBILITY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub mode: PlanMode,
    pub feasibility_threshold: f64,
    pub connectivity: Connectivity,
}

impl PlanRequest {
    pub fn new(start: [f64; 2], goal: [f64; 2], mode: PlanMode) -> Self {
        Self {
            start,
            goal,
            mode,
            feasibility_threshold: DEFAULT_FEASIBILITY_THRESHOLD,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub cells: Vec<(usize, usize)>,
    /// Cell centers, world coordinates.
    pub waypoints: Vec<[f64; 2]>,
    /// Accumulated edge cost at each waypoint.
    pub cumulative_cost: Vec<f64>,
    pub total_cost: f64,
    pub total_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub length: f64,
    pub mean_cost: f64,
    pub max_cost: f64,
    /// Path cost under metric-optimal edge weights.
    pub metric_cost: f64,
}

/// Edge weight between two neighboring cells.
pub fn edge_cost(map: &CostMap, a: (usize, usize), b: (usize, usize), mode: PlanMode) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    let step = dx.hypot(dy) * map.grid.cell_size;
    match mode {
        PlanMode::ShortestFeasible => step,
        PlanMode::MetricOptimal => {
            let va = map.value(a.0, a.1).expect("passable cell is observed");
            let vb = map.value(b.0, b.1).expect("passable cell is observed");
            step * 0.5 * (va + vb)
        }
    }
}

fn passable(map: &CostMap, col: usize, row: usize, threshold: f64) -> bool {
    map.value(col, row).is_some_and(|v| v <= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on cost, ties on index
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn endpoint(map: &CostMap, p: [f64; 2], which: &'static str, threshold: f64) -> Result<(usize, usize), PlanError> {
    let cell = map
        .world_to_cell(p)
        .filter(|&(c, r)| map.count(c, r) > 0)
        .ok_or(PlanError::UnobservedEndpoint { which, x: p[0], y: p[1] })?;
    let value = map.value(cell.0, cell.1).unwrap();
    if value > threshold {
        return Err(PlanError::ImpassableEndpoint { which, value, threshold });
    }
    Ok(cell)
}

/// Dijkstra over observed cells at or below the feasibility threshold.
pub fn plan(map: &CostMap, req: &PlanRequest) -> Result<PathPlan, PlanError> {
    if !(req.feasibility_threshold > 0.0 && req.feasibility_threshold <= 1.0) {
        return Err(PlanError::InvalidRequest(format!(
            "feasibility threshold {} outside (0, 1]",
            req.feasibility_threshold
        )));
    }
    let th = req.feasibility_threshold;
    let start = endpoint(map, req.start, "start", th)?;
    let goal = endpoint(map, req.goal, "goal", th)?;
    if start == goal {
        return Err(PlanError::SameEndpoints);
    }
    let (w, h) = (map.width(), map.height());
    let idx = |c: (usize, usize)| c.1 * w + c.0;
    let mut dist = vec![f64::INFINITY; w * h];
    let mut prev = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = 0.0;
    heap.push(Entry { cost: 0.0, idx: idx(start) });
    while let Some(Entry { cost, idx: i }) = heap.pop() {
        if cost > dist[i] {
            continue;
        }
        if i == idx(goal) {
            break;
        }
        let here = (i % w, i / w);
        for &(dx, dy) in req.connectivity.offsets() {
            let (nc, nr) = (here.0 as isize + dx, here.1 as isize + dy);
            if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                continue;
            }
            let next = (nc as usize, nr as usize);
            if !passable(map, next.0, next.1, th) {
                continue;
            }
            let nd = cost + edge_cost(map, here, next, req.mode);
            let j = idx(next);
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = i;
                heap.push(Entry { cost: nd, idx: j });
            }
        }
    }
    if !dist[idx(goal)].is_finite() {
        return Err(PlanError::NoPath);
    }
    let mut cells = vec![goal];
    let mut cur = idx(goal);
    while cur != idx(start) {
        cur = prev[cur];
        cells.push((cur % w, cur / w));
    }
    cells.reverse();
    Ok(build_plan(map, cells, req.mode))
}

fn build_plan(map: &CostMap, cells: Vec<(usize, usize)>, mode: PlanMode) -> PathPlan {
    let mut cumulative = vec![0.0];
    let mut length = 0.0;
    for w in cells.windows(2) {
        let c = cumulative.last().unwrap() + edge_cost(map, w[0], w[1], mode);
        cumulative.push(c);
        length += edge_cost(map, w[0], w[1], PlanMode::ShortestFeasible);
    }
    PathPlan {
        waypoints: cells.iter().map(|&(c, r)| map.cell_center(c, r)).collect(),
        total_cost: *cumulative.last().unwrap(),
        cumulative_cost: cumulative,
        total_length: length,
        cells,
    }
}

pub fn path_metrics(plan: &PathPlan, map: &CostMap) -> PathMetrics {
    let values: Vec<f64> = plan.cells.iter().filter_map(|&(c, r)| map.value(c, r)).collect();
    let metric_cost = plan
        .cells
        .windows(2)
        .map(|w| edge_cost(map, w[0], w[1], PlanMode::MetricOptimal))
        .sum();
    PathMetrics {
        length: plan
            .cells
            .windows(2)
            .map(|w| edge_cost(map, w[0], w[1], PlanMode::ShortestFeasible))
            .sum(),
        mean_cost: values.iter().sum::<f64>() / values.len().max(1) as f64,
        max_cost: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        metric_cost,
    }
}

/// `x,y,cumulative_cost` rows with header.
pub fn plan_to_csv(plan: &PathPlan) -> String {
    let mut s = String::from("x,y,cumulative_cost\n");
    for (p, c) in plan.waypoints.iter().zip(&plan.cumulative_cost) {
        s.push_str(&format!("{},{},{}\n", p[0], p[1], c));
    }
    s
}
