//! Pipelines and the manifest.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use capsize_core::grid::ScalarField;
use capsize_core::ldt::ldp_slope;
use capsize_core::mc::sample_transitions_parallel;
use capsize_core::model::FilterSpec;
use capsize_core::rng::derive_seed;
use capsize_core::saddle::stable_manifold_2d;
use capsize_core::tpt::Generator;
use capsize_core::{
    capsize_time_ensemble, couple_filter, default_dividing_surface, find_saddle, integrate_ode, integrate_sde, minimize_action,
    reactive_density, reactive_histogram, toy_roll_system, DividingSurface, MinimizeOptions, RollModelParams, SaddleInfo,
    SystemSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Pipeline};
use crate::RunError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Independent streams per transition-sampling run; fixed so results do not
/// depend on the worker count.
const MC_PARTITIONS: usize = 8;
const DEFAULT_SEGMENTS: usize = 500;
const DEFAULT_N_POINTS: usize = 200;
const MANIFOLD_ARCLENGTH: f64 = 3.0;
const MANIFOLD_OFFSET: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    /// CSV numeric payload.
    Data,
    /// JSON summary or field sidecar.
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub kind: ArtifactKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&RunError> for ErrorRecord {
    fn from(e: &RunError) -> Self {
        let kind = match e {
            RunError::Config(_) => "config",
            RunError::Numerical(_) => "numerical",
            RunError::Io { .. } => "io",
        };
        Self { kind: kind.into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub wall_time_s: f64,
    pub error: Option<ErrorRecord>,
}

impl Manifest {
    pub fn data_artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.iter().filter(|a| a.kind == ArtifactKind::Data)
    }
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| RunError::Io { path: path.display().to_string(), source })?;
        let kind = if name.ends_with(".csv") { ArtifactKind::Data } else { ArtifactKind::Metadata };
        self.artifacts.push(Artifact { path: name.to_string(), kind });
        Ok(())
    }

    fn field(&mut self, name: &str, field: &ScalarField) -> Result<(), RunError> {
        self.write(&format!("{name}.csv"), &field.to_csv())?;
        self.write(&format!("{name}.json"), &field.sidecar_json())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), RunError> {
        self.write(name, &serde_json::to_string_pretty(value).expect("json serialize"))
    }
}

/// Runs the configured pipeline into `out_dir` and writes `manifest.json`.
/// On failure the manifest lists whatever was written and carries an error
/// record.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &FsPath) -> Result<Manifest, RunError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io { path: out_dir.display().to_string(), source })?;
    let clock = Instant::now();
    let mut out = Outputs { dir: out_dir.to_path_buf(), artifacts: Vec::new() };
    let result = match config.pipeline {
        Pipeline::Simulate => simulate(config, &mut out),
        Pipeline::CapsizeTime => capsize_time(config, &mut out),
        Pipeline::Committor => committor(config, &mut out),
        Pipeline::McRate => mc_rate(config, &mut out),
        Pipeline::Minact => minact(config, &mut out),
        Pipeline::Figure2 => figure2(config, &mut out),
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        pipeline: config.pipeline,
        seed: config.seed,
        config: config.clone(),
        artifacts: out.artifacts,
        wall_time_s: clock.elapsed().as_secs_f64(),
        error: result.as_ref().err().map(ErrorRecord::from),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    fs::write(&path, text).map_err(|source| RunError::Io { path: path.display().to_string(), source })?;
    result.map(|_| manifest)
}

fn as_config(e: capsize_core::Error) -> RunError {
    RunError::Config(e.to_string())
}

/// Roll model at noise level `epsilon`, with the filter attached when
/// configured. Every failure here is a configuration problem.
fn system(cfg: &ExperimentConfig, epsilon: f64) -> Result<SystemSpec, RunError> {
    let ship = toy_roll_system(RollModelParams { epsilon, ..cfg.model }).map_err(as_config)?;
    match &cfg.filter {
        None => Ok(ship),
        Some(f) => {
            let spec = FilterSpec::velocity_forcing(f.k, &f.a, &f.c, f.epsilon, ship.dim(), 1).map_err(as_config)?;
            couple_filter(&ship, &spec).map_err(as_config)
        }
    }
}

fn on_axis(dim: usize, theta: f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[0] = theta;
    x
}

fn saddles(cfg: &ExperimentConfig, sys: &SystemSpec) -> Result<(SaddleInfo, SaddleInfo), RunError> {
    let angle = cfg.model.saddle_angle();
    Ok((find_saddle(sys, &on_axis(sys.dim(), angle))?, find_saddle(sys, &on_axis(sys.dim(), -angle))?))
}

fn simulate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sys = system(cfg, cfg.model.epsilon)?;
    let x0 = cfg.initial_state.clone().unwrap_or_else(|| vec![0.0; sys.dim()]);
    let (horizon, dt) = (cfg.horizon.unwrap_or_default(), cfg.dt.unwrap_or_default());
    let path = if sys.epsilon() > 0.0 {
        integrate_sde(&sys, &x0, 0.0, horizon, dt, cfg.seed)?
    } else {
        integrate_ode(&sys, &x0, 0.0, horizon, dt)?
    };
    out.write("path.csv", &path.to_csv(None))
}

fn capsize_time(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sys = system(cfg, cfg.model.epsilon)?;
    let (starboard, port) = saddles(cfg, &sys)?;
    let surface = DividingSurface::any_of(vec![default_dividing_surface(&starboard), default_dividing_surface(&port)]);
    let sampler = cfg.sampler.as_ref().expect("validated");
    let stats = capsize_time_ensemble(
        &sys,
        sampler,
        &surface,
        cfg.horizon.unwrap_or_default(),
        cfg.dt.unwrap_or_default(),
        cfg.n_samples.unwrap_or_default(),
        cfg.seed,
    )?;
    out.write("capsize_stats.json", &stats.to_json())?;
    let mut csv = String::from("t,survivability,rate\n");
    for k in 0..stats.times.len() {
        csv.push_str(&format!("{},{},{}\n", stats.times[k], stats.survivability[k], stats.rate_curve[k]));
    }
    out.write("survivability.csv", &csv)?;
    if sys.dim() == 2 {
        let calm = system(cfg, 0.0)?;
        for (name, s) in [("starboard", &starboard), ("port", &port)] {
            let curve = stable_manifold_2d(&calm, s, MANIFOLD_ARCLENGTH, MANIFOLD_OFFSET)?;
            out.write(&format!("stable_manifold_{name}.csv"), &curve.to_csv())?;
        }
    }
    Ok(())
}

fn committor(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sys = system(cfg, cfg.model.epsilon)?;
    let (a, b) = (&cfg.region_a, &cfg.region_b);
    let gen = Generator::assemble(&sys, &cfg.grid)?;
    let rho = gen.stationary_density()?;
    let q_plus = gen.committor_forward(a, b)?;
    let q_minus = gen.committor_backward(a, b, &rho)?.field;
    let reactive = reactive_density(&rho, &q_plus, &q_minus)?;
    let rate = gen.rate(&rho, &q_plus, &q_minus, a)?;
    out.field("rho", &rho)?;
    out.field("q_plus", &q_plus)?;
    out.field("q_minus", &q_minus)?;
    out.field("rho_reactive", &reactive)?;
    out.json(
        "tpt_rate.json",
        &json!({
            "epsilon": sys.epsilon(),
            "rate": rate.rate,
            "outflux_rate": rate.outflux_rate,
            "dirichlet_form": rate.dirichlet_form,
            "reactive_mass": rate.reactive_mass,
        }),
    )
}

fn mc_rate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let epsilons = cfg.epsilons.clone().unwrap_or_else(|| vec![cfg.model.epsilon]);
    let mut records = Vec::new();
    let mut rates = Vec::new();
    for (i, &eps) in epsilons.iter().enumerate() {
        let sys = system(cfg, eps)?;
        let rec = sample_transitions_parallel(
            &sys,
            &cfg.region_a,
            &cfg.region_b,
            cfg.total_time.unwrap_or_default(),
            cfg.dt.unwrap_or_default(),
            derive_seed(cfg.seed, i as u64),
            MC_PARTITIONS,
            cfg.max_segments.unwrap_or(DEFAULT_SEGMENTS),
        )?;
        if i == 0 {
            out.field("mc_reactive_hist", &reactive_histogram(&rec, &cfg.grid)?)?;
        }
        let mut v: Value = serde_json::from_str(&rec.to_json()).expect("record json");
        v["epsilon"] = json!(eps);
        v["mean_segment_duration"] = json!(rec.mean_segment_duration());
        records.push(v);
        rates.push(rec.rate());
    }
    let fit = if epsilons.len() >= 2 && rates.iter().all(|r| *r > 0.0) {
        serde_json::to_value(ldp_slope(&epsilons, &rates)?).expect("fit json")
    } else {
        Value::Null
    };
    out.json("mc_rate.json", &json!({ "records": records, "ldp_fit": fit }))
}

fn minact(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sys = system(cfg, cfg.model.epsilon)?;
    let start = vec![0.0; sys.dim()];
    let end = cfg.end_state.clone().unwrap_or_else(|| on_axis(sys.dim(), cfg.model.saddle_angle()));
    let opts = MinimizeOptions {
        n_points: cfg.n_points.unwrap_or(DEFAULT_N_POINTS),
        duration: cfg.duration.unwrap_or_default(),
        ..Default::default()
    };
    let res = minimize_action(&sys, &start, &end, &opts)?;
    out.write("instanton.csv", &res.to_csv())?;
    out.write("instanton.json", &res.to_json())
}

fn drift_field(cfg: &ExperimentConfig, sys: &SystemSpec) -> String {
    let g = &cfg.grid;
    let mut csv = String::from("theta,v,dtheta,dv\n");
    for k in 0..g.len() {
        let [t, v] = g.node(k);
        let f = sys.drift_vec(&[t, v], 0.0);
        csv.push_str(&format!("{t},{v},{},{}\n", f[0], f[1]));
    }
    csv
}

fn figure2(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sys = system(cfg, cfg.model.epsilon)?;
    out.write("drift_field.csv", &drift_field(cfg, &sys))?;
    committor(cfg, out)?;
    let single = ExperimentConfig { epsilons: Some(vec![cfg.model.epsilon]), ..cfg.clone() };
    mc_rate(&single, out)?;
    minact(cfg, out)
}
