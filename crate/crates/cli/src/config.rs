//! JSON pipeline configuration. Every section is optional; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use terrascout::dataset::ExtractionConfig;
use terrascout::mapping::SlidingWindowSpec;
use terrascout::predictor::TrainConfig;
use terrascout::signals::MetricParams;
use terrascout::simkit::{AblationConfig, RenderConfig, TraverseConfig};

use crate::failure::{Failure, ResultExt};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub imu: Option<PathBuf>,
    pub power: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub patches: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub georef: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub map_meta: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    fn inputs(&self) -> impl Iterator<Item = (&'static str, &PathBuf)> {
        [
            ("imu", &self.imu),
            ("power", &self.power),
            ("labels", &self.labels),
            ("log", &self.log),
            ("patches", &self.patches),
            ("models", &self.models),
            ("model", &self.model),
            ("image", &self.image),
            ("georef", &self.georef),
            ("map", &self.map),
            ("map_meta", &self.map_meta),
            ("scene", &self.scene),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|p| (k, p)))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub metric_params: MetricParams,
    pub extraction: ExtractionConfig,
    pub train: TrainConfig,
    pub sliding_window: SlidingWindowSpec,
    pub traverse: TraverseConfig,
    pub render: RenderConfig,
    pub ablation: AblationConfig,
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory, and every input path must exist.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).input(format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).input(format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fields = [
            &mut cfg.paths.imu,
            &mut cfg.paths.power,
            &mut cfg.paths.labels,
            &mut cfg.paths.log,
            &mut cfg.paths.patches,
            &mut cfg.paths.models,
            &mut cfg.paths.model,
            &mut cfg.paths.image,
            &mut cfg.paths.georef,
            &mut cfg.paths.map,
            &mut cfg.paths.map_meta,
            &mut cfg.paths.scene,
            &mut cfg.paths.out,
        ];
        for p in fields.into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for (key, p) in cfg.paths.inputs() {
            if !p.exists() {
                return Err(Failure::input(format!("config path `{key}` does not exist: {}", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Failure> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
