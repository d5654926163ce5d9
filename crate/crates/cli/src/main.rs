mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use terrascout::simkit::AblationKind;

use crate::failure::Failure;

/// Terrain property labels, patch regression, cost maps and planning from
/// aerial and ground imagery.
#[derive(Debug, Parser)]
#[command(name = "terrascout", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON pipeline configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the JSON report (default: inside the output).
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenePreset {
    TwoClass,
    Texture,
    Occlusion,
    Strip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Uav,
    Ugv,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Metric,
    Shortest,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Distance,
    Blur,
    Occlusion,
}

impl From<AblationArg> for AblationKind {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Distance => AblationKind::Distance,
            AblationArg::Blur => AblationKind::Blur,
            AblationArg::Occlusion => AblationKind::Occlusion,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene, drive a lawnmower path through it and write the log.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "two-class")]
        scene: ScenePreset,
        /// Scene specification JSON; replaces the preset.
        #[arg(long)]
        scene_file: Option<PathBuf>,
        /// Side of the square scene, meters.
        #[arg(long, default_value_t = 40.0)]
        size: f64,
        #[arg(long, default_value_t = 9)]
        legs: usize,
        #[arg(long, default_value_t = 3.0)]
        margin: f64,
        /// Aerial frames show the ground under cover.
        #[arg(long)]
        occlusion_study: bool,
        /// Ground sampling distance of the survey image; 0 skips it.
        #[arg(long, default_value_t = 0.02)]
        survey_gsd: f64,
    },
    /// Compute smoothed labels from IMU and power logs.
    GenLabels {
        #[arg(long)]
        imu: Option<PathBuf>,
        #[arg(long)]
        power: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        robot_length: Option<f64>,
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        smoothing_sigma: Option<f64>,
    },
    /// Cut labeled ground and aerial patches at points of interest.
    Extract {
        /// Log directory written by `simulate` or a recording.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Labels CSV (default: `<log>/labels.csv`).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        poi_spacing: Option<f64>,
    },
    /// Train per-fold and full-data regressors.
    Train {
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        source: SourceArg,
        /// m_z, m_omega, m_p or all.
        #[arg(long, default_value = "all")]
        metric: String,
        /// Plain k-fold instead of the ten-fold, five-evaluated protocol.
        #[arg(long)]
        kfold: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Held-out RMSE per terrain and metric for every trained model.
    Eval {
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Predict a cost map over a georeferenced aerial image.
    Map {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        georef: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cell_size: Option<f64>,
        #[arg(long)]
        stride: Option<f64>,
    },
    /// Plan over an exported cost map.
    Plan {
        /// Cost map PNG; its JSON sidecar sits next to it.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        map_meta: Option<PathBuf>,
        /// Start as `x,y` in world meters.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: [f64; 2],
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        goal: [f64; 2],
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long)]
        threshold: Option<f64>,
        /// 4 or 8.
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance, blur or occlusion study on synthetic data.
    Ablate {
        #[arg(value_enum)]
        kind: AblationArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        size: Option<f64>,
        #[arg(long)]
        legs: Option<usize>,
        #[arg(long)]
        kfold: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        scenes: Option<usize>,
    },
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.parse().map_err(|e| format!("bad x: {e}"))?;
            let y: f64 = y.parse().map_err(|e| format!("bad y: {e}"))?;
            if x.is_finite() && y.is_finite() {
                Ok([x, y])
            } else {
                Err("coordinates must be finite".into())
            }
        }
        _ => Err(format!("expected `x,y`, got `{s}`")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { failure::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
