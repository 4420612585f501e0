//! Experiment harness: config loading, the three subcommands and the CSV /
//! JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mavtrack_core::scenario::{run_scenario, Metrics, RunResult, ScenarioConfig};
use mavtrack_core::{
    calibrate, CalibrationConfig, DensityModel, EstimateSource, Error, RateMode, ScanPatternConfig, Scene,
    ValidationReport, VoxelCloud,
};

pub mod schema;

pub use schema::{verify_dir, Schema, SCHEMAS};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const CALIBRATION: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{0}")]
    Run(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("output check failed: {0}")]
    Schema(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Run(Error::Config { .. }) => exit::CONFIG,
            CliError::Calibration(_) => exit::CALIBRATION,
            _ => exit::FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn config_err(e: Error) -> CliError {
    match e {
        Error::Config { .. } => CliError::Config(e.to_string()),
        other => CliError::Run(other),
    }
}

/// Settings for `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    /// Static surroundings; the calibration target is placed in front of
    /// the sensor.
    #[serde(default)]
    pub scene: Scene,
    #[serde(default)]
    pub scan: ScanPatternConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

impl CalibrateConfig {
    pub fn from_toml(s: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.scan.validate().map_err(config_err)?;
        cfg.calibration.validate(&cfg.scan).map_err(config_err)?;
        let mut template = cfg.scene.clone();
        template.mav = None;
        template.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn load_scenario(path: &Path) -> CliResult<ScenarioConfig> {
    ScenarioConfig::from_toml(&read(path)?).map_err(config_err)
}

pub fn load_calibrate(path: &Path) -> CliResult<CalibrateConfig> {
    CalibrateConfig::from_toml(&read(path)?)
}

pub fn load_model(path: &Path) -> CliResult<DensityModel> {
    DensityModel::from_json(&read(path)?)
        .map_err(|e| CliError::Config(format!("model {}: {e}", path.display())))
}

fn out_dir(flag: Option<&Path>, configured: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| configured.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// `calibrate`: writes `model.json` and `calibration.csv`.
pub fn run_calibrate(config: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult<PathBuf> {
    let mut cfg = load_calibrate(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out_dir(out, cfg.output.as_deref());
    let mut template = cfg.scene.clone();
    template.mav = None;
    let model = calibrate(&template, &cfg.scan, &cfg.calibration, cfg.seed).map_err(|e| match e {
        Error::Config { .. } => CliError::Config(e.to_string()),
        other => CliError::Calibration(other.to_string()),
    })?;
    model
        .validate()
        .map_err(|e| CliError::Calibration(format!("model failed its invariants: {e}")))?;
    create_dir(&dir)?;
    let path = dir.join("model.json");
    fs::write(&path, model.to_json()?).map_err(io_err(&path))?;
    write_calibration_csv(&dir.join("calibration.csv"), &model)?;
    verify_dir(&dir)?;
    Ok(path)
}

/// The given model, or a fresh calibration under the scenario's settings.
pub fn model_for(cfg: &ScenarioConfig, model: Option<&Path>) -> CliResult<DensityModel> {
    match model {
        Some(p) => load_model(p),
        None => {
            let mut template = cfg.scene.clone();
            template.mav = None;
            template.obstacles.clear();
            calibrate(&template, &cfg.scan, &cfg.calibration, cfg.seed)
                .map_err(|e| CliError::Calibration(e.to_string()))
        }
    }
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<RateMode>,
}

fn apply(mut cfg: ScenarioConfig, o: &Overrides) -> ScenarioConfig {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    cfg
}

/// Scenario from a file or a built-in preset name.
pub fn scenario_source(config: Option<&Path>, preset: Option<&str>) -> CliResult<ScenarioConfig> {
    match (config, preset) {
        (Some(p), None) => load_scenario(p),
        (None, Some(name)) => ScenarioConfig::preset(name).map_err(config_err),
        (Some(_), Some(_)) => Err(CliError::Config("give either --config or --preset, not both".into())),
        (None, None) => Err(CliError::Config("one of --config or --preset is required".into())),
    }
}

/// `track`: one closed-loop run, written to `out`.
pub fn run_track(
    cfg: ScenarioConfig,
    model: Option<&Path>,
    out: Option<&Path>,
    o: &Overrides,
) -> CliResult<RunResult> {
    let cfg = apply(cfg, o);
    let dir = out_dir(out, cfg.output.as_deref());
    let model = model_for(&cfg, model)?;
    let result = run_scenario(&cfg, &model).map_err(config_err)?;
    write_run(&dir, &result)?;
    Ok(result)
}

/// Directory name for a mode's outputs, e.g. `fixed_5`.
pub fn mode_dir(mode: &RateMode) -> String {
    mode.to_string().replace(':', "_")
}

/// Keeps the first occurrence of each mode.
pub fn dedup_modes(modes: &[RateMode]) -> Vec<RateMode> {
    let mut out: Vec<RateMode> = Vec::new();
    for m in modes {
        if !out.contains(m) {
            out.push(*m);
        }
    }
    out
}

/// `compare`: the same scenario under each mode.
pub fn run_compare(
    cfg: ScenarioConfig,
    model: Option<&Path>,
    out: Option<&Path>,
    modes: &[RateMode],
    seed: Option<u64>,
) -> CliResult<Vec<Metrics>> {
    let modes = dedup_modes(modes);
    if modes.is_empty() {
        return Err(CliError::Config("mode list is empty".into()));
    }
    let cfg = apply(cfg, &Overrides { seed, mode: None });
    let dir = out_dir(out, cfg.output.as_deref());
    let model = model_for(&cfg, model)?;
    let mut rows = Vec::new();
    for mode in &modes {
        let mut c = cfg.clone();
        c.mode = *mode;
        let result = run_scenario(&c, &model).map_err(config_err)?;
        write_run(&dir.join(mode_dir(mode)), &result)?;
        rows.push(result.metrics);
    }
    create_dir(&dir)?;
    write_comparison_csv(&dir.join("comparison.csv"), &rows)?;
    verify_dir(&dir)?;
    Ok(rows)
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn writer(path: &Path, header: &[&str]) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(io_err(path))
}

pub fn write_calibration_csv(path: &Path, model: &DensityModel) -> CliResult<()> {
    let mut w = writer(path, schema::CALIBRATION.header)?;
    for (i, d) in model.distances.iter().enumerate() {
        for (j, f) in model.frequencies.iter().enumerate() {
            w.write_record([f6(*d), f6(*f), f6(model.mu[i][j]), f6(model.sigma[i][j])])?;
        }
    }
    finish(w, path)
}

pub fn write_comparison_csv(path: &Path, rows: &[Metrics]) -> CliResult<()> {
    let mut w = writer(path, schema::COMPARISON.header)?;
    for m in rows {
        w.write_record([
            m.mode.clone(),
            f6(m.track_duration),
            u8::from(m.lost).to_string(),
            m.revolutions.map(f6).unwrap_or_default(),
            f6(m.hf.rmse),
            f6(m.mf.rmse),
            f6(m.fused.rmse),
            f6(m.fused.mean),
            f6(m.miss_rate),
        ])?;
    }
    finish(w, path)
}

/// Diagnostics bundle written as `diagnostics.json`.
#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    seed: u64,
    metrics: &'a Metrics,
    lost_at: Option<f64>,
    rate_changes: usize,
    command_changes: usize,
    validations: &'a [ValidationReport],
}

/// Writes every output of one run into `dir`.
pub fn write_run(dir: &Path, r: &RunResult) -> CliResult<()> {
    create_dir(dir)?;
    write_track_csv(&dir.join("track.csv"), r)?;
    write_ground_truth_csv(&dir.join("ground_truth.csv"), r)?;
    write_frames_csv(&dir.join("frames.csv"), r)?;
    write_spacing_csv(&dir.join("spacing.csv"), r)?;
    let (expected, observed) = match &r.voxels {
        Some((e, o)) => (Some(e), Some(o)),
        None => (None, None),
    };
    write_voxels_csv(&dir.join("voxels_expected.csv"), expected)?;
    write_voxels_csv(&dir.join("voxels_observed.csv"), observed)?;
    let diag = Diagnostics {
        seed: r.config.seed,
        metrics: &r.metrics,
        lost_at: r.record.lost_at,
        rate_changes: r.record.rate_history.len(),
        command_changes: r.record.commands.len(),
        validations: &r.validations,
    };
    let path = dir.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&diag).map_err(Error::from)?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    let path = dir.join("scenario.toml");
    fs::write(&path, r.config.to_toml()?).map_err(io_err(&path))?;
    verify_dir(dir)
}

fn write_track_csv(path: &Path, r: &RunResult) -> CliResult<()> {
    let mut rows: Vec<_> = r
        .record
        .raw
        .iter()
        .chain(&r.record.fused)
        .map(|row| {
            let order = match row.state.source {
                EstimateSource::Hf => 0,
                EstimateSource::Mf => 1,
                EstimateSource::Fused => 2,
            };
            (row, order)
        })
        .collect();
    rows.sort_by(|a, b| a.0.state.t.total_cmp(&b.0.state.t).then(a.1.cmp(&b.1)));
    let mut w = writer(path, schema::TRACK.header)?;
    let record = |row: &mavtrack_core::tracker::TrackRow, t: f64, name: &str, lost: bool| {
        let s = &row.state;
        [
            f6(t),
            name.to_string(),
            f6(s.p.x),
            f6(s.p.y),
            f6(s.p.z),
            f6(s.v.x),
            f6(s.v.y),
            f6(s.v.z),
            s.n_points.to_string(),
            f6(row.f_hf),
            f6(row.f_mf),
            u8::from(lost).to_string(),
        ]
    };
    for (row, _) in &rows {
        w.write_record(record(row, row.state.t, row.state.source.as_str(), false))?;
    }
    if let (Some(t), Some(last)) = (r.record.lost_at, r.record.fused.last()) {
        w.write_record(record(last, t, "fused", true))?;
    }
    finish(w, path)
}

fn write_ground_truth_csv(path: &Path, r: &RunResult) -> CliResult<()> {
    let mut w = writer(path, schema::GROUND_TRUTH.header)?;
    for row in &r.ground_truth {
        let mut rec = vec![f6(row.t)];
        match row.mav {
            Some((p, v)) => rec.extend([p.x, p.y, p.z, v.x, v.y, v.z].map(f6)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.extend([row.ugv.x, row.ugv.y, row.ugv.yaw].map(f6));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

fn write_frames_csv(path: &Path, r: &RunResult) -> CliResult<()> {
    let mut w = writer(path, schema::FRAMES.header)?;
    for f in &r.frames {
        w.write_record([
            f.modality.as_str().to_string(),
            f6(f.t_start),
            f6(f.integration_time),
            f.n_points.to_string(),
        ])?;
    }
    finish(w, path)
}

fn write_spacing_csv(path: &Path, r: &RunResult) -> CliResult<()> {
    let mut w = writer(path, schema::SPACING.header)?;
    for s in &r.spacing {
        w.write_record([
            f6(s.t),
            s.modality.as_str().to_string(),
            f6(s.f),
            f6(s.speed),
            f6(s.spacing),
            f6(s.expected),
            s.n_points.to_string(),
        ])?;
    }
    finish(w, path)
}

fn write_voxels_csv(path: &Path, cloud: Option<&VoxelCloud>) -> CliResult<()> {
    let mut w = writer(path, schema::VOXELS.header)?;
    if let Some(c) = cloud {
        for p in c.centers() {
            w.write_record([f6(p.x), f6(p.y), f6(p.z)])?;
        }
    }
    finish(w, path)
}
