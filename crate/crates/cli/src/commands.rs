use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use terrascout::dataset::{FoldAssignment, FoldProtocol, LabelSeries, PatchRecord, ViewFilter, ViewSource};
use terrascout::geometry::AerialGeoref;
use terrascout::io;
use terrascout::mapping::{export_map, import_map, predict_map, render_overlay, tile_image, CostMap, MapMetadata};
use terrascout::pipeline::{compute_labels, extract_records, png_loader, read_extraction_inputs};
use terrascout::planner::{path_metrics, plan, plan_to_csv, Connectivity, PathMetrics, PlanError, PlanMode, PlanRequest};
use terrascout::predictor::{
    compute_features, predict_heldout, summarize, train, train_all, EvalReport, FeatureTable, FoldModel,
    RegressorModel,
};
use terrascout::raster::Raster;
use terrascout::signals::MetricKind;
use terrascout::simkit::{
    default_calibration, lawnmower, occlusion_scene, render_survey, run_ablation, simulate_traverse, strip_scene,
    texture_scene, two_class_scene, AblationKind, AblationReport, Scene, SceneSpec,
};

use crate::config::PipelineConfig;
use crate::failure::{Failure, ResultExt};
use crate::{AblationArg, Cli, Command, ModeArg, ScenePreset, SourceArg};

pub const SURVEY_IMAGE: &str = "survey.png";
pub const SURVEY_GEOREF: &str = "survey.json";
pub const MAP_STEM: &str = "costmap";

/// Georeference of a survey image.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyMeta {
    pub georef: AerialGeoref,
    pub width: usize,
    pub height: usize,
}

fn required(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| Failure::input(format!("missing --{name} (flag or config paths.{})", name.replace('-', "_"))))
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::input(format!("{what} not found: {}", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).input(format!("creating {}", dir.display()))
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<(), Failure> {
    io::write_json(path, report).internal("writing report")
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = PipelineConfig::load_or_default(cli.common.config.as_deref())?;
    let seed = cli.common.seed.or(cfg.seed).unwrap_or(0);
    let report_at = |default: PathBuf| cli.common.report.clone().unwrap_or(default);
    match &cli.command {
        Command::Simulate {
            out,
            scene,
            scene_file,
            size,
            legs,
            margin,
            occlusion_study,
            survey_gsd,
        } => {
            let out = required(out, &cfg.paths.out, "out")?;
            let scene_file = scene_file.clone().or(cfg.paths.scene.clone());
            let scene = match scene_file {
                Some(p) => {
                    let mut spec: SceneSpec = io::read_json(&existing(p, "scene file")?).input("reading scene")?;
                    if cli.common.seed.is_some() {
                        spec.config.seed = seed;
                    }
                    Scene::generate(spec).input("invalid scene")?
                }
                None => preset_scene(*scene, seed, *size)?,
            };
            let mut render = cfg.render;
            render.occlusion_study |= *occlusion_study;
            render.seed = seed;
            let report = simulate(&scene, &out, &cfg, render, *legs, *margin, *survey_gsd, seed)?;
            write_report(&report_at(out.join("report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::GenLabels {
            imu,
            power,
            out,
            robot_length,
            speed,
            smoothing_sigma,
        } => {
            let imu = existing(required(imu, &cfg.paths.imu, "imu")?, "IMU log")?;
            let power = existing(required(power, &cfg.paths.power, "power")?, "power log")?;
            let out = required(out, &cfg.paths.labels, "out")?;
            let mut params = cfg.metric_params;
            if robot_length.is_some() || speed.is_some() {
                params.window = terrascout::signals::WindowSpec::new(
                    robot_length.unwrap_or(params.window.robot_length),
                    speed.unwrap_or(params.window.speed),
                )
                .input("invalid evaluation window")?;
            }
            if let Some(s) = smoothing_sigma {
                params.smoothing_sigma = *s;
            }
            let labels = gen_labels(&imu, &power, &params)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            io::write_labels(&out, &labels).internal("writing labels")?;
            let report = LabelReport::new(&labels);
            write_report(&report_at(out.with_extension("report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Extract {
            log,
            labels,
            out,
            poi_spacing,
        } => {
            let log = existing(required(log, &cfg.paths.log, "log")?, "log directory")?;
            let labels = labels.clone().or(cfg.paths.labels.clone()).unwrap_or_else(|| log.join("labels.csv"));
            let out = required(out, &cfg.paths.patches, "out")?;
            let mut ex = cfg.extraction;
            if let Some(s) = poi_spacing {
                ex.poi_spacing = *s;
            }
            let report = extract(&log, &existing(labels, "labels")?, &out, &ex)?;
            write_report(&report_at(out.join("report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Train {
            patches,
            out,
            source,
            metric,
            kfold,
            epochs,
        } => {
            let patches = existing(required(patches, &cfg.paths.patches, "patches")?, "patch store")?;
            let out = required(out, &cfg.paths.models, "out")?;
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed;
            if let Some(e) = epochs {
                tcfg.epochs = *e;
            }
            let protocol = kfold.map_or(FoldProtocol::NinetyTen, |k| FoldProtocol::KFold { k });
            let report = train_models(&patches, &out, sources(*source), &metrics(metric)?, protocol, &tcfg, seed)?;
            write_report(&report_at(out.join("report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Eval { patches, models } => {
            let patches = existing(required(patches, &cfg.paths.patches, "patches")?, "patch store")?;
            let models = existing(required(models, &cfg.paths.models, "models")?, "model directory")?;
            let report = eval(&patches, &models)?;
            write_report(&report_at(models.join("eval.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Map {
            image,
            georef,
            model,
            out,
            cell_size,
            stride,
        } => {
            let image = existing(required(image, &cfg.paths.image, "image")?, "aerial image")?;
            let georef = georef
                .clone()
                .or(cfg.paths.georef.clone())
                .unwrap_or_else(|| image.with_extension("json"));
            let model = existing(required(model, &cfg.paths.model, "model")?, "model")?;
            let out = required(out, &cfg.paths.out, "out")?;
            let mut spec = cfg.sliding_window;
            if let Some(c) = cell_size {
                spec.cell_size = *c;
            }
            if let Some(s) = stride {
                spec.stride = *s;
            }
            let report = make_map(&image, &existing(georef, "georeference")?, &model, &out, &spec)?;
            write_report(&report_at(out.join("map_report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Plan {
            map,
            map_meta,
            start,
            goal,
            mode,
            threshold,
            connectivity,
            out,
        } => {
            let map = existing(required(map, &cfg.paths.map, "map")?, "cost map")?;
            let meta = map_meta
                .clone()
                .or(cfg.paths.map_meta.clone())
                .unwrap_or_else(|| map.with_extension("json"));
            let out = required(out, &cfg.paths.out, "out")?;
            let connectivity = match connectivity {
                4 => Connectivity::Four,
                8 => Connectivity::Eight,
                other => return Err(Failure::input(format!("connectivity must be 4 or 8, got {other}"))),
            };
            let modes = match mode {
                ModeArg::Metric => vec![PlanMode::MetricOptimal],
                ModeArg::Shortest => vec![PlanMode::ShortestFeasible],
                ModeArg::Both => vec![PlanMode::MetricOptimal, PlanMode::ShortestFeasible],
            };
            let costmap = import_map(&map, &existing(meta, "cost map sidecar")?).input("reading cost map")?;
            let mut req = PlanRequest::new(*start, *goal, modes[0]);
            req.connectivity = connectivity;
            if let Some(t) = threshold {
                req.feasibility_threshold = *t;
            }
            let report = plan_paths(&costmap, req, &modes, &out)?;
            write_report(&report_at(out.join("plan_report.json")), &report)?;
            print!("{}", report.table());
        }
        Command::Ablate {
            kind,
            out,
            metric,
            size,
            legs,
            kfold,
            epochs,
            replicates,
            scenes,
        } => {
            let out = required(out, &cfg.paths.out, "out")?;
            let mut acfg = cfg.ablation.clone();
            acfg.seed = seed;
            if let Some(m) = metric {
                acfg.metric = m.parse().map_err(Failure::input)?;
            }
            if let Some(s) = size {
                acfg.scene_size = *s;
            }
            if let Some(l) = legs {
                acfg.legs = *l;
            }
            if let Some(k) = kfold {
                acfg.protocol = FoldProtocol::KFold { k: *k };
            }
            if let Some(e) = epochs {
                acfg.train.epochs = *e;
            }
            if let Some(r) = replicates {
                acfg.replicates = *r;
            }
            if let Some(s) = scenes {
                acfg.scenes = *s;
            }
            let report = ablate(*kind, &acfg, &out)?;
            write_report(&report_at(out.join(format!("ablation_{}.json", report.kind.as_str()))), &report)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn preset_scene(preset: ScenePreset, seed: u64, size: f64) -> Result<Scene, Failure> {
    let scene = match preset {
        ScenePreset::TwoClass => two_class_scene(seed, size),
        ScenePreset::Texture => texture_scene(seed, size),
        ScenePreset::Occlusion => occlusion_scene(seed, size),
        ScenePreset::Strip => strip_scene(seed, size).map(|(s, _)| s),
    };
    scene.input("invalid scene size")
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub classes: Vec<String>,
    pub duration: f64,
    pub imu_samples: usize,
    pub power_samples: usize,
    pub ugv_frames: usize,
    pub uav_frames: usize,
    pub survey: Option<SurveyMeta>,
}

impl SimulateReport {
    fn table(&self) -> String {
        let mut s = format!("simulated {:.1} s over classes {}\n", self.duration, self.classes.join(", "));
        s += &format!("{:<14}{:>10}\n", "imu samples", self.imu_samples);
        s += &format!("{:<14}{:>10}\n", "power samples", self.power_samples);
        s += &format!("{:<14}{:>10}\n", "ugv frames", self.ugv_frames);
        s += &format!("{:<14}{:>10}\n", "uav frames", self.uav_frames);
        if let Some(m) = &self.survey {
            s += &format!("survey {}x{} px at {} m/px\n", m.width, m.height, m.georef.gsd);
        }
        s
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scene: &Scene,
    out: &Path,
    cfg: &PipelineConfig,
    render: terrascout::simkit::RenderConfig,
    legs: usize,
    margin: f64,
    survey_gsd: f64,
    seed: u64,
) -> Result<SimulateReport, Failure> {
    let size = scene.size();
    if legs == 0 || !(margin >= 0.0 && 2.0 * margin < size[0].min(size[1])) {
        return Err(Failure::input("need at least one leg and a margin smaller than half the scene"));
    }
    let path = lawnmower(size, legs, margin);
    let mut traverse = cfg.traverse;
    if !render.render_ugv {
        traverse.ugv_rate = 0.0;
    }
    if !render.render_uav {
        traverse.uav_rate = 0.0;
    }
    let bundle = simulate_traverse(scene, &path, &traverse, &default_calibration(), seed).input("simulation")?;
    create_dir(out)?;
    bundle.write(out, scene, &render).internal("writing log")?;
    let survey = if survey_gsd > 0.0 {
        let (img, georef) =
            render_survey(scene, [0.0, 0.0], size, survey_gsd, render.occlusion_study, seed).input("survey")?;
        img.save_png(out.join(SURVEY_IMAGE)).internal("writing survey")?;
        let meta = SurveyMeta {
            georef,
            width: img.width(),
            height: img.height(),
        };
        io::write_json(&out.join(SURVEY_GEOREF), &meta).internal("writing survey georeference")?;
        Some(meta)
    } else {
        None
    };
    Ok(SimulateReport {
        seed,
        classes: scene.classes().iter().map(|c| c.name.clone()).collect(),
        duration: bundle.duration,
        imu_samples: bundle.imu.len(),
        power_samples: bundle.power.len(),
        ugv_frames: bundle.ugv_frames.len(),
        uav_frames: bundle.uav_frames.len(),
        survey,
    })
}

/// Same computation the library exposes, reading the two CSV logs.
pub fn gen_labels(
    imu: &Path,
    power: &Path,
    params: &terrascout::signals::MetricParams,
) -> Result<LabelSeries, Failure> {
    let imu = io::read_imu(imu).input("reading IMU log")?;
    let power = io::read_power(power).input("reading power log")?;
    compute_labels(&imu, &power, params).input("computing labels")
}

#[derive(Debug, Serialize)]
pub struct SeriesStats {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Serialize)]
pub struct LabelReport {
    pub metrics: BTreeMap<String, SeriesStats>,
}

impl LabelReport {
    fn new(labels: &LabelSeries) -> Self {
        let metrics = MetricKind::ALL
            .iter()
            .map(|&k| {
                let v = &labels.get(k).values;
                let n = v.len();
                let stats = SeriesStats {
                    n,
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    mean: v.iter().sum::<f64>() / n.max(1) as f64,
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                (k.as_str().to_string(), stats)
            })
            .collect();
        Self { metrics }
    }

    fn table(&self) -> String {
        let mut s = format!("{:<8}{:>8}{:>12}{:>12}{:>12}\n", "metric", "n", "min", "mean", "max");
        for (k, v) in &self.metrics {
            s += &format!("{k:<8}{:>8}{:>12.4}{:>12.4}{:>12.4}\n", v.n, v.min, v.mean, v.max);
        }
        s
    }
}

#[derive(Debug, Serialize)]
pub struct ExtractReport {
    pub pois: usize,
    pub records: usize,
    pub views: BTreeMap<String, usize>,
    pub failures: usize,
}

impl ExtractReport {
    fn table(&self) -> String {
        let mut s = format!("{} points of interest, {} records\n", self.pois, self.records);
        for (k, v) in &self.views {
            s += &format!("{k:<6}{v:>8} views\n");
        }
        s += &format!("{} views failed\n", self.failures);
        s
    }
}

fn optional_file(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

fn extract(
    log: &Path,
    labels: &Path,
    out: &Path,
    ex: &terrascout::dataset::ExtractionConfig,
) -> Result<ExtractReport, Failure> {
    let attitude = optional_file(log, "attitude.csv");
    let tags = optional_file(log, "terrain_tags.csv");
    let inputs = read_extraction_inputs(
        &existing(log.join("trajectory.csv"), "trajectory")?,
        &existing(log.join("odom.csv"), "odometry")?,
        attitude.as_deref(),
        tags.as_deref(),
        &existing(log.join("calibration.json"), "calibration")?,
        &existing(log.join("frames.jsonl"), "frame index")?,
    )
    .input("reading log")?;
    let labels = io::read_labels(labels).input("reading labels")?;
    let extraction = extract_records(&inputs, &labels, ex, png_loader(log));
    for f in &extraction.output.failures {
        log::warn!("frame {} (poi {:?}): {}", f.frame_id, f.poi_id, f.reason);
    }
    create_dir(out)?;
    let records = io::write_patch_store(out, &extraction.output.records).internal("writing patch store")?;
    let mut views = BTreeMap::new();
    for r in &records {
        for v in &r.views {
            *views.entry(v.source.as_str().to_string()).or_insert(0) += 1;
        }
    }
    Ok(ExtractReport {
        pois: extraction.pois.len(),
        records: records.len(),
        views,
        failures: extraction.output.failures.len(),
    })
}

fn sources(s: SourceArg) -> Vec<ViewSource> {
    match s {
        SourceArg::Uav => vec![ViewSource::Uav],
        SourceArg::Ugv => vec![ViewSource::Ugv],
        SourceArg::Both => vec![ViewSource::Ugv, ViewSource::Uav],
    }
}

fn metrics(s: &str) -> Result<Vec<MetricKind>, Failure> {
    if s == "all" {
        Ok(MetricKind::ALL.to_vec())
    } else {
        Ok(vec![s.parse().map_err(Failure::input)?])
    }
}

fn model_name(source: ViewSource, metric: MetricKind, fold: Option<usize>) -> String {
    match fold {
        Some(k) => format!("{source}_{metric}_fold{k}.json"),
        None => format!("{source}_{metric}.json"),
    }
}

/// Records that carry comparison views from every requested source.
fn comparable(records: Vec<PatchRecord>, sources: &[ViewSource]) -> Vec<PatchRecord> {
    records
        .into_iter()
        .filter(|r| sources.iter().all(|&s| r.has_views(&ViewFilter::comparison(s))))
        .collect()
}

/// Held-out RMSE per terrain tag, metric and view source.
#[derive(Debug, Serialize)]
pub struct EvalTable {
    pub records: usize,
    pub reports: Vec<EvalReport>,
}

impl EvalTable {
    fn table(&self) -> String {
        let cols: Vec<(MetricKind, ViewSource)> = self.reports.iter().map(|r| (r.metric, r.source)).collect();
        let mut tags: Vec<&String> = self.reports.iter().flat_map(|r| r.per_tag.keys()).collect();
        tags.sort();
        tags.dedup();
        let mut s = format!("held-out RMSE on normalized labels, {} records\n{:<14}", self.records, "terrain");
        for (m, src) in &cols {
            s += &format!("{:>14}", format!("{m} {src}"));
        }
        s.push('\n');
        for tag in tags {
            s += &format!("{tag:<14}");
            for r in &self.reports {
                match r.per_tag.get(tag) {
                    Some(v) => s += &format!("{v:>14.4}"),
                    None => s += &format!("{:>14}", "-"),
                }
            }
            s.push('\n');
        }
        s += &format!("{:<14}", "all");
        for r in &self.reports {
            s += &format!("{:>14.4}", r.mean_rmse);
        }
        s.push('\n');
        s
    }
}

fn train_models(
    patches: &Path,
    out: &Path,
    sources: Vec<ViewSource>,
    metrics: &[MetricKind],
    protocol: FoldProtocol,
    tcfg: &terrascout::predictor::TrainConfig,
    seed: u64,
) -> Result<EvalTable, Failure> {
    let records = comparable(io::read_patch_store(patches, true).input("reading patch store")?, &sources);
    if records.is_empty() {
        return Err(Failure::degenerate("no records carry views from every requested source"));
    }
    let folds = protocol.assign(&records, seed).degenerate("assigning folds")?;
    create_dir(out)?;
    io::write_folds(&out.join(io::FOLDS_NAME), &folds).internal("writing folds")?;
    let mut reports = Vec::new();
    for &source in &sources {
        let filter = ViewFilter::comparison(source);
        let features = compute_features(&records, &filter).input("computing features")?;
        for &metric in metrics {
            let models = train(&records, &features, &filter, metric, &folds, tcfg).degenerate("training")?;
            for m in &models {
                write_model(&out.join(model_name(source, metric, Some(m.fold))), &m.model)?;
            }
            let (full, _) = train_all(&records, &features, &filter, metric, tcfg).degenerate("training")?;
            write_model(&out.join(model_name(source, metric, None)), &full)?;
            let preds = predict_heldout(&models, &records, &features, &filter, &folds);
            reports.push(summarize(&models, &records, &preds, source));
        }
    }
    Ok(EvalTable {
        records: records.len(),
        reports,
    })
}

fn write_model(path: &Path, model: &RegressorModel) -> Result<(), Failure> {
    std::fs::write(path, model.to_json().internal("serializing model")?).internal("writing model")
}

fn read_model(path: &Path) -> Result<RegressorModel, Failure> {
    let text = std::fs::read_to_string(path).input(format!("reading {}", path.display()))?;
    RegressorModel::from_json(&text).input(format!("parsing {}", path.display()))
}

fn eval(patches: &Path, models_dir: &Path) -> Result<EvalTable, Failure> {
    let folds: FoldAssignment = io::read_folds(&models_dir.join(io::FOLDS_NAME)).input("reading folds")?;
    let records: Vec<PatchRecord> = io::read_patch_store(patches, true)
        .input("reading patch store")?
        .into_iter()
        .filter(|r| folds.fold_of(r.poi_id).is_some())
        .collect();
    let mut reports = Vec::new();
    for source in [ViewSource::Ugv, ViewSource::Uav] {
        let filter = ViewFilter::comparison(source);
        let mut features: Option<FeatureTable> = None;
        for metric in MetricKind::ALL {
            let mut models = Vec::new();
            for &fold in &folds.evaluated {
                let p = models_dir.join(model_name(source, metric, Some(fold)));
                if p.exists() {
                    let model = read_model(&p)?;
                    models.push(FoldModel {
                        fold,
                        model,
                        curve: Vec::new(),
                        train_records: 0,
                    });
                }
            }
            if models.is_empty() {
                continue;
            }
            if features.is_none() {
                features = Some(compute_features(&records, &filter).input("computing features")?);
            }
            let feats = features.as_ref().expect("computed above");
            let preds = predict_heldout(&models, &records, feats, &filter, &folds);
            reports.push(summarize(&models, &records, &preds, source));
        }
    }
    if reports.is_empty() {
        return Err(Failure::input(format!("no fold models in {}", models_dir.display())));
    }
    Ok(EvalTable {
        records: records.len(),
        reports,
    })
}

#[derive(Debug, Serialize)]
pub struct MapReport {
    pub tiles: usize,
    pub observed_cells: usize,
    pub mean_value: Option<f64>,
    pub metadata: MapMetadata,
}

impl MapReport {
    fn table(&self) -> String {
        format!(
            "{} tiles, {}x{} cells of {} m, {} observed, mean {}\n",
            self.tiles,
            self.metadata.width,
            self.metadata.height,
            self.metadata.cell_size,
            self.observed_cells,
            self.mean_value.map_or("-".into(), |v| format!("{v:.4}"))
        )
    }
}

fn make_map(
    image: &Path,
    georef: &Path,
    model: &Path,
    out: &Path,
    spec: &terrascout::mapping::SlidingWindowSpec,
) -> Result<MapReport, Failure> {
    let img = Raster::load_png(image).input("reading aerial image")?;
    let meta: SurveyMeta = io::read_json(georef).input("reading georeference")?;
    if (meta.width, meta.height) != (img.width(), img.height()) {
        return Err(Failure::input("georeference size does not match the image"));
    }
    let model = read_model(model)?;
    let tiles = tile_image(&img, &meta.georef, spec).input("tiling image")?;
    if tiles.is_empty() {
        return Err(Failure::degenerate("image too small for a single tile"));
    }
    let (lo, hi) = terrascout::mapping::image_world_bounds(&img, &meta.georef);
    let map = CostMap::covering(lo, hi, spec.cell_size, model.metric_kind).input("map grid")?;
    let map = predict_map(&tiles, &model, map).input("predicting map")?;
    create_dir(out)?;
    let metadata = export_map(&map, out, MAP_STEM).internal("writing map")?;
    render_overlay(&map, &[])
        .save(out.join(format!("{MAP_STEM}_overlay.png")))
        .internal("writing overlay")?;
    let obs = map.observations();
    Ok(MapReport {
        tiles: tiles.len(),
        observed_cells: map.observed_cells(),
        mean_value: (!obs.is_empty()).then(|| obs.iter().map(|o| o.2).sum::<f64>() / obs.len() as f64),
        metadata,
    })
}

#[derive(Debug, Serialize)]
pub struct PlanEntry {
    pub mode: PlanMode,
    pub total_cost: f64,
    pub metrics: PathMetrics,
    pub waypoints: usize,
}

#[derive(Debug, Serialize)]
pub struct PlanReport {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub threshold: f64,
    pub plans: Vec<PlanEntry>,
}

impl PlanReport {
    fn table(&self) -> String {
        let mut s = format!(
            "{:<18}{:>10}{:>12}{:>12}{:>10}\n",
            "mode", "length", "metric cost", "mean cost", "max cost"
        );
        for p in &self.plans {
            s += &format!(
                "{:<18}{:>10.2}{:>12.4}{:>12.4}{:>10.4}\n",
                mode_name(p.mode),
                p.metrics.length,
                p.metrics.metric_cost,
                p.metrics.mean_cost,
                p.metrics.max_cost
            );
        }
        s
    }
}

fn mode_name(m: PlanMode) -> &'static str {
    match m {
        PlanMode::MetricOptimal => "metric_optimal",
        PlanMode::ShortestFeasible => "shortest_feasible",
    }
}

fn plan_paths(map: &CostMap, base: PlanRequest, modes: &[PlanMode], out: &Path) -> Result<PlanReport, Failure> {
    let mut plans = Vec::new();
    let mut drawn = Vec::new();
    for &mode in modes {
        let req = PlanRequest { mode, ..base };
        let p = plan(map, &req).map_err(|e| match e {
            PlanError::NoPath => Failure::degenerate(format!("{}: {e}", mode_name(mode))),
            other => Failure::input(format!("{}: {other}", mode_name(mode))),
        })?;
        plans.push(PlanEntry {
            mode,
            total_cost: p.total_cost,
            metrics: path_metrics(&p, map),
            waypoints: p.waypoints.len(),
        });
        drawn.push(p);
    }
    create_dir(out)?;
    for (p, e) in drawn.iter().zip(&plans) {
        std::fs::write(out.join(format!("path_{}.csv", mode_name(e.mode))), plan_to_csv(p)).internal("writing path")?;
    }
    let colors = [[220, 40, 40], [40, 160, 220]];
    let lines: Vec<(&[[f64; 2]], [u8; 3])> =
        drawn.iter().zip(colors).map(|(p, c)| (p.waypoints.as_slice(), c)).collect();
    render_overlay(map, &lines)
        .save(out.join("plan_overlay.png"))
        .internal("writing overlay")?;
    Ok(PlanReport {
        start: base.start,
        goal: base.goal,
        threshold: base.feasibility_threshold,
        plans,
    })
}

fn ablate(kind: AblationArg, cfg: &terrascout::simkit::AblationConfig, out: &Path) -> Result<AblationReport, Failure> {
    let kind: AblationKind = kind.into();
    let report = run_ablation(kind, cfg).degenerate("ablation")?;
    create_dir(out)?;
    let stem = format!("ablation_{}", kind.as_str());
    std::fs::write(out.join(format!("{stem}.csv")), report.to_csv()).internal("writing csv")?;
    report
        .chart()
        .save(out.join(format!("{stem}.png")))
        .internal("writing chart")?;
    Ok(report)
}
