//! Small fully-connected regressor on texture features, trained per fold.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    DatasetError, FoldAssignment, LabelStats, PatchRecord, ViewFilter, ViewSource,
};
use crate::features::{extract_features, FeatureError, FeatureVector, SCHEMA_ID};
use crate::raster::Raster;
use crate::signals::MetricKind;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("feature schema mismatch: model expects {expected} ({expected_dim} values), got {got} ({got_dim})")]
    SchemaMismatch {
        expected: String,
        expected_dim: usize,
        got: String,
        got_dim: usize,
    },
    #[error("non-finite loss at fold {fold}, epoch {epoch}: {loss}")]
    NonFiniteLoss { fold: usize, epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("view {frame_id} of record {poi_id} has no patch image loaded")]
    MissingImage { poi_id: u64, frame_id: String },
    #[error("fold {0} has no training records")]
    EmptyFold(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
    /// Hidden layer widths; empty gives a single affine layer.
    pub hidden: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 150,
            seed: 0,
            l2: 0.0,
            hidden: vec![64, 32],
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Batch size and learning rate suited to a large convolutional backbone.
    pub fn large_batch() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 5e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.batch_size == 0 {
            return Err(PredictorError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(PredictorError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(PredictorError::InvalidConfig("l2 must be ≥ 0".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(PredictorError::InvalidConfig("hidden widths must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Dense layer: `z = W·a + b`, `W` is `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: DMatrix::zeros(outputs, inputs),
            b: DVector::zeros(outputs),
        }
    }

    fn xavier<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for r in 0..outputs {
            for c in 0..inputs {
                layer.w[(r, c)] = rng.random_range(-limit..=limit);
            }
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Serialized layer: row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseJson {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&Dense> for DenseJson {
    fn from(d: &Dense) -> Self {
        Self {
            inputs: d.inputs(),
            outputs: d.outputs(),
            weights: (0..d.outputs())
                .flat_map(|r| (0..d.inputs()).map(move |c| (r, c)))
                .map(|rc| d.w[rc])
                .collect(),
            bias: d.b.iter().copied().collect(),
        }
    }
}

impl TryFrom<DenseJson> for Dense {
    type Error = String;

    fn try_from(j: DenseJson) -> Result<Self, String> {
        if j.weights.len() != j.inputs * j.outputs || j.bias.len() != j.outputs {
            return Err(format!("layer {}→{} has inconsistent array sizes", j.inputs, j.outputs));
        }
        Ok(Self {
            w: DMatrix::from_row_slice(j.outputs, j.inputs, &j.weights),
            b: DVector::from_vec(j.bias),
        })
    }
}

/// ReLU hidden layers and a sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DenseJson>", into = "Vec<DenseJson>")]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl TryFrom<Vec<DenseJson>> for Mlp {
    type Error = String;

    fn try_from(v: Vec<DenseJson>) -> Result<Self, String> {
        let layers = v.into_iter().map(Dense::try_from).collect::<Result<Vec<_>, _>>()?;
        Mlp::from_layers(layers)
    }
}

impl From<Mlp> for Vec<DenseJson> {
    fn from(m: Mlp) -> Self {
        m.layers.iter().map(DenseJson::from).collect()
    }
}

/// Per-batch activations kept for backpropagation.
struct Trace {
    /// Layer inputs, `a[0]` is the network input.
    a: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, String> {
        if layers.is_empty() {
            return Err("network needs at least one layer".into());
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(format!("layer shapes do not chain: {} → {}", w[0].outputs(), w[1].inputs()));
            }
        }
        if layers.last().unwrap().outputs() != 1 {
            return Err("output layer must have one unit".into());
        }
        Ok(Self { layers })
    }

    /// Uniform ±√(6/(fan_in+fan_out)) weights, zero biases.
    pub fn new<R: Rng>(inputs: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes.windows(2).map(|s| Dense::xavier(s[0], s[1], rng)).collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened parameters: per layer, row-major weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for r in 0..l.outputs() {
                for c in 0..l.inputs() {
                    out.push(l.w[(r, c)]);
                }
            }
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut i = 0;
        for l in &mut self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    l.w[(r, c)] = p[i];
                    i += 1;
                }
            }
            for r in 0..l.b.len() {
                l.b[r] = p[i];
                i += 1;
            }
        }
    }

    fn trace(&self, x: &DMatrix<f64>) -> Trace {
        let mut a = vec![x.clone()];
        let mut z = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut zk = &l.w * &a[k];
            for mut col in zk.column_iter_mut() {
                col += &l.b;
            }
            let ak = if k == last {
                zk.map(sigmoid)
            } else {
                zk.map(|v| v.max(0.0))
            };
            z.push(zk);
            a.push(ak);
        }
        Trace { a, z }
    }

    /// Outputs for a batch whose columns are (already standardized) inputs.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.trace(x).a.last().unwrap().iter().copied().collect()
    }

    /// Mean squared error plus `l2/2 · Σ W²`.
    pub fn loss(&self, x: &DMatrix<f64>, t: &[f64], l2: f64) -> f64 {
        let y = self.forward_batch(x);
        let mse = y.iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / t.len() as f64;
        mse + 0.5 * l2 * self.layers.iter().map(|l| l.w.norm_squared()).sum::<f64>()
    }

    /// Loss and its gradient by backpropagation.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, t: &[f64], l2: f64) -> (f64, Mlp) {
        let tr = self.trace(x);
        let n = t.len() as f64;
        let y = tr.a.last().unwrap();
        let mut loss = 0.0;
        let mut dz = DMatrix::zeros(1, t.len());
        for j in 0..t.len() {
            let e = y[(0, j)] - t[j];
            loss += e * e;
            dz[(0, j)] = 2.0 * e / n * y[(0, j)] * (1.0 - y[(0, j)]);
        }
        loss /= n;
        loss += 0.5 * l2 * self.layers.iter().map(|l| l.w.norm_squared()).sum::<f64>();

        let mut grad = self.zeros_like();
        for k in (0..self.layers.len()).rev() {
            let g = &mut grad.layers[k];
            g.w = &dz * tr.a[k].transpose() + l2 * &self.layers[k].w;
            g.b = dz.column_sum();
            if k > 0 {
                let da = self.layers[k].w.transpose() * &dz;
                dz = da.zip_map(&tr.z[k - 1], |d, z| if z > 0.0 { d } else { 0.0 });
            }
        }
        (loss, grad)
    }
}

/// Adam state over a network's parameters.
struct Adam {
    m: Mlp,
    v: Mlp,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(net: &Mlp, cfg: &TrainConfig) -> Self {
        Self {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let (b1, b2, lr, eps) = (self.b1, self.b2, self.lr, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (gl, ml, vl) = (&grad.layers[k], &mut self.m.layers[k], &mut self.v.layers[k]);
            for i in 0..layer.w.len() {
                update(&mut layer.w[i], gl.w[i], &mut ml.w[i], &mut vl.w[i]);
            }
            for i in 0..layer.b.len() {
                update(&mut layer.b[i], gl.b[i], &mut ml.b[i], &mut vl.b[i]);
            }
        }
    }
}

/// Per-dimension standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics; zero-variance dimensions get unit scale.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for k in 0..dim {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

const OUTPUT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub schema_id: String,
    pub feature_dim: usize,
    pub metric_kind: MetricKind,
    pub source: ViewSource,
    /// Fold held out from this model's training data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_fold: Option<usize>,
    /// Raw-label range used to normalize this model's targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_range: Option<(f64, f64)>,
    pub feature_stats: FeatureStats,
    pub hidden_activation: String,
    pub output_activation: String,
    pub layers: Mlp,
}

impl RegressorModel {
    pub fn new(net: Mlp, feature_stats: FeatureStats, metric_kind: MetricKind, source: ViewSource) -> Self {
        Self {
            schema_id: SCHEMA_ID.to_string(),
            feature_dim: net.inputs(),
            metric_kind,
            source,
            heldout_fold: None,
            label_range: None,
            feature_stats,
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            layers: net,
        }
    }

    pub fn check_schema(&self, schema_id: &str, dim: usize) -> Result<(), PredictorError> {
        if schema_id != self.schema_id || dim != self.feature_dim {
            return Err(PredictorError::SchemaMismatch {
                expected: self.schema_id.clone(),
                expected_dim: self.feature_dim,
                got: schema_id.to_string(),
                got_dim: dim,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Prediction for one raw feature vector, strictly inside `(0, 1)`.
    pub fn predict_values(&self, raw: &[f64]) -> f64 {
        let x = DVector::from_vec(self.feature_stats.apply(raw));
        let y = self.layers.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))[0];
        y.clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS)
    }
}

/// standardize → (affine + relu)* → affine → sigmoid
pub fn forward(model: &RegressorModel, features: &FeatureVector) -> Result<f64, PredictorError> {
    model.check_schema(&features.schema_id, features.values.len())?;
    Ok(model.predict_values(&features.values))
}

pub fn predict_patch(model: &RegressorModel, patch: &Raster) -> Result<f64, PredictorError> {
    forward(model, &extract_features(patch)?)
}

/// Max relative error between `analytic` and central differences of the
/// loss. Entries where both are below `1e-8` count as agreeing.
pub fn gradient_error(net: &Mlp, x: &DMatrix<f64>, t: &[f64], l2: f64, eps: f64, analytic: &[f64]) -> f64 {
    let base = net.params();
    let mut probe = net.clone();
    let mut p = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        p[i] = base[i] + eps;
        probe.set_params(&p);
        let up = probe.loss(x, t, l2);
        p[i] = base[i] - eps;
        probe.set_params(&p);
        let down = probe.loss(x, t, l2);
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

/// Backpropagation vs central finite differences on one batch.
pub fn finite_difference_check(net: &Mlp, x: &DMatrix<f64>, t: &[f64], l2: f64, eps: f64) -> f64 {
    assert!((1e-7..=1e-3).contains(&eps), "epsilon out of range");
    let (_, g) = net.loss_and_gradient(x, t, l2);
    gradient_error(net, x, t, l2, eps, &g.params())
}

/// Features for every eligible view: `[record][view]`, `None` when the view
/// does not pass the filter.
pub type FeatureTable = Vec<Vec<Option<Vec<f64>>>>;

pub fn compute_features(records: &[PatchRecord], filter: &ViewFilter) -> Result<FeatureTable, PredictorError> {
    records
        .par_iter()
        .map(|r| {
            r.views
                .iter()
                .map(|v| {
                    if !filter.accepts(v) {
                        return Ok(None);
                    }
                    let img = v.image.as_ref().ok_or_else(|| PredictorError::MissingImage {
                        poi_id: r.poi_id,
                        frame_id: v.frame_id.clone(),
                    })?;
                    Ok(Some(extract_features(&Raster::from_gray8(img))?.values))
                })
                .collect::<Result<Vec<_>, PredictorError>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub fold: usize,
    pub model: RegressorModel,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
    pub train_records: usize,
}

/// Deterministic per-fold seed.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one model on the given training rows. `views[i]` lists the
/// feature vectors of training record `i`; one is sampled per epoch.
pub fn fit(
    views: &[Vec<&[f64]>],
    targets: &[f64],
    cfg: &TrainConfig,
    seed: u64,
    fold: usize,
) -> Result<(Mlp, FeatureStats, Vec<f64>), PredictorError> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(PredictorError::EmptyFold(fold));
    }
    let all: Vec<&[f64]> = views.iter().flatten().copied().collect();
    let stats = FeatureStats::fit(&all);
    let standardized: Vec<Vec<Vec<f64>>> = views
        .iter()
        .map(|vs| vs.iter().map(|v| stats.apply(v)).collect())
        .collect();
    let dim = stats.mean.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(dim, &cfg.hidden, &mut rng);
    let mut adam = Adam::new(&net, cfg);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let picks: Vec<usize> = order.iter().map(|&i| rng.random_range(0..views[i].len())).collect();
        let mut epoch_loss = 0.0;
        for (chunk, pick) in order.chunks(cfg.batch_size).zip(picks.chunks(cfg.batch_size)) {
            let mut x = DMatrix::zeros(dim, chunk.len());
            let mut t = Vec::with_capacity(chunk.len());
            for (j, (&i, &v)) in chunk.iter().zip(pick).enumerate() {
                x.set_column(j, &DVector::from_column_slice(&standardized[i][v]));
                t.push(targets[i]);
            }
            let (loss, grad) = net.loss_and_gradient(&x, &t, cfg.l2);
            if !loss.is_finite() {
                return Err(PredictorError::NonFiniteLoss { fold, epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut net, &grad);
        }
        curve.push(epoch_loss / views.len() as f64);
    }
    Ok((net, stats, curve))
}

fn train_split(
    records: &[PatchRecord],
    features: &FeatureTable,
    filter: &ViewFilter,
    kind: MetricKind,
    cfg: &TrainConfig,
    train_idx: &[usize],
    fold: usize,
    seed: u64,
) -> Result<(RegressorModel, Vec<f64>), PredictorError> {
    if train_idx.is_empty() {
        return Err(PredictorError::EmptyFold(fold));
    }
    let subset: Vec<PatchRecord> = train_idx
        .iter()
        .map(|&i| {
            let mut r = records[i].clone();
            r.views.clear();
            r
        })
        .collect();
    let stats = LabelStats::from_records(&subset)?;
    let targets: Vec<f64> = train_idx
        .iter()
        .map(|&i| stats.normalize(kind, records[i].labels.get(kind)))
        .collect();
    let views: Vec<Vec<&[f64]>> = train_idx
        .iter()
        .map(|&i| features[i].iter().flatten().map(Vec::as_slice).collect())
        .collect();
    let (net, fstats, curve) = fit(&views, &targets, cfg, seed, fold)?;
    let mut model = RegressorModel::new(net, fstats, kind, filter.source);
    model.label_range = Some(stats.range(kind));
    Ok((model, curve))
}

/// One model per evaluated fold, each trained only on the other folds.
/// Targets are min-max normalized with that training split's statistics.
pub fn train(
    records: &[PatchRecord],
    features: &FeatureTable,
    filter: &ViewFilter,
    kind: MetricKind,
    folds: &FoldAssignment,
    cfg: &TrainConfig,
) -> Result<Vec<FoldModel>, PredictorError> {
    cfg.validate()?;
    folds
        .evaluated
        .par_iter()
        .map(|&fold| {
            let train_idx: Vec<usize> = (0..records.len())
                .filter(|&i| {
                    folds.fold_of(records[i].poi_id).is_some_and(|f| f != fold)
                        && features[i].iter().any(Option::is_some)
                })
                .collect();
            let (mut model, curve) =
                train_split(records, features, filter, kind, cfg, &train_idx, fold, fold_seed(cfg.seed, fold))?;
            model.heldout_fold = Some(fold);
            Ok(FoldModel {
                fold,
                model,
                curve,
                train_records: train_idx.len(),
            })
        })
        .collect()
}

/// Single model trained on every record that has a matching view, for
/// deployment on new imagery.
pub fn train_all(
    records: &[PatchRecord],
    features: &FeatureTable,
    filter: &ViewFilter,
    kind: MetricKind,
    cfg: &TrainConfig,
) -> Result<(RegressorModel, Vec<f64>), PredictorError> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..records.len())
        .filter(|&i| features[i].iter().any(Option::is_some))
        .collect();
    train_split(records, features, filter, kind, cfg, &idx, 0, cfg.seed)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return f64::NAN;
    }
    (pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: ViewSource,
    pub metric: MetricKind,
    pub folds: Vec<FoldScore>,
    pub mean_rmse: f64,
    /// Per-tag RMSE, averaged over the folds in which the tag occurs.
    pub per_tag: BTreeMap<String, f64>,
}

/// One evaluated prediction, kept for downstream breakdowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub record: usize,
    pub fold: usize,
    pub predicted: f64,
    pub target: f64,
}

/// Held-out predictions on each record's first eligible view.
pub fn predict_heldout(
    models: &[FoldModel],
    records: &[PatchRecord],
    features: &FeatureTable,
    filter: &ViewFilter,
    folds: &FoldAssignment,
) -> Vec<Prediction> {
    let by_fold: BTreeMap<usize, &FoldModel> = models.iter().map(|m| (m.fold, m)).collect();
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(fold) = folds.fold_of(r.poi_id) else { continue };
        let Some(fm) = by_fold.get(&fold) else { continue };
        debug_assert_eq!(fm.model.heldout_fold, Some(fold));
        let Some(view) = r.first_view(filter) else { continue };
        let vi = r.views.iter().position(|v| std::ptr::eq(v, view)).unwrap();
        let Some(feat) = features[i][vi].as_ref() else { continue };
        let (lo, hi) = fm.model.label_range.expect("trained model has a label range");
        let target = ((r.labels.get(fm.model.metric_kind) - lo) / (hi - lo)).clamp(0.0, 1.0);
        out.push(Prediction {
            record: i,
            fold,
            predicted: fm.model.predict_values(feat),
            target,
        });
    }
    out
}

/// Per-fold, mean and per-tag RMSE on normalized labels.
pub fn evaluate(
    models: &[FoldModel],
    records: &[PatchRecord],
    features: &FeatureTable,
    filter: &ViewFilter,
    folds: &FoldAssignment,
) -> EvalReport {
    let preds = predict_heldout(models, records, features, filter, folds);
    summarize(models, records, &preds, filter.source)
}

pub fn summarize(models: &[FoldModel], records: &[PatchRecord], preds: &[Prediction], source: ViewSource) -> EvalReport {
    let metric = models.first().map_or(MetricKind::Vibration, |m| m.model.metric_kind);
    let mut fold_scores = Vec::new();
    let mut tag_scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in models {
        let in_fold: Vec<&Prediction> = preds.iter().filter(|p| p.fold == m.fold).collect();
        if in_fold.is_empty() {
            continue;
        }
        let (p, t): (Vec<f64>, Vec<f64>) = in_fold.iter().map(|p| (p.predicted, p.target)).unzip();
        fold_scores.push(FoldScore {
            fold: m.fold,
            rmse: rmse(&p, &t),
            n: p.len(),
        });
        let mut by_tag: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for pr in &in_fold {
            if let Some(tag) = records[pr.record].terrain_tag.as_deref() {
                let e = by_tag.entry(tag).or_default();
                e.0.push(pr.predicted);
                e.1.push(pr.target);
            }
        }
        for (tag, (p, t)) in by_tag {
            tag_scores.entry(tag.to_string()).or_default().push(rmse(&p, &t));
        }
    }
    let mean_rmse = if fold_scores.is_empty() {
        f64::NAN
    } else {
        fold_scores.iter().map(|f| f.rmse).sum::<f64>() / fold_scores.len() as f64
    };
    EvalReport {
        source,
        metric,
        folds: fold_scores,
        mean_rmse,
        per_tag: tag_scores
            .into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
    }
}
