//! `mstpp fit|simulate|map|check`.
//!
//! Exit codes: 0 success, 1 failed self-check, 2 configuration error,
//! 3 data error, 4 sampler failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::availability::{build_augmented, write_augmented_csv};
use crate::check::{check_table, run_checks, CheckOptions};
use crate::config::{LayerMode, RunConfig};
use crate::derived::{coefficient_report, posterior_map, MapRequest, Quantity, Statistic};
use crate::diagnostics::summary_table;
use crate::error::Error;
use crate::hmc::{read_chain_csv, sample, write_chain_csv, HmcConfig, MassMatrix};
use crate::likelihood::{ConditionalPosterior, Prior};
use crate::raster::{read_ascii_grid, write_ascii_grid, CovariateStack};
use crate::selection::SelectionFamily;
use crate::simulate::{simulate, DeltaBarMode, SimConfig};
use crate::telemetry::{estimate_delta_bar, read_track, write_track};

pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SAMPLER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mstpp", version, about = "Mechanistic step-selection models for telemetry data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a track and write the posterior chain.
    Fit(FitArgs),
    /// Simulate a track from known coefficients.
    Simulate(SimulateArgs),
    /// Turn a chain into residence-time, movement-probability, or motility maps.
    Map(MapArgs),
    /// Run the built-in oracle checks.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Config file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    pub family: Option<SelectionFamily>,
    /// Slots per step: the used position plus J-1 available positions.
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Motility moving-average window, hours.
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub dump_augmented: Option<PathBuf>,
    /// Accept every finite trajectory instead of applying the Metropolis step.
    #[arg(long)]
    pub no_mh_correction: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Config file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long, value_parser = parse_quantity)]
    pub quantity: Option<Quantity>,
    #[arg(long, value_parser = parse_statistic)]
    pub statistic: Option<Statistic>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Fix interval in hours.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

fn parse_family(s: &str) -> Result<SelectionFamily, String> {
    s.parse()
}

fn parse_quantity(s: &str) -> Result<Quantity, String> {
    s.parse()
}

fn parse_statistic(s: &str) -> Result<Statistic, String> {
    s.parse()
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }

    fn data(error: Error) -> Self {
        Failure { code: EXIT_DATA, error }
    }

    fn sampler(error: Error) -> Self {
        Failure {
            code: EXIT_SAMPLER,
            error,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Standardization applied to one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub path: PathBuf,
    pub standardized: bool,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prepare_seconds: f64,
    pub run_seconds: f64,
}

/// Everything needed to repeat a run: the resolved config text, its hash,
/// and the seed. Passing the manifest back as `--config` reruns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub layers: Vec<LayerInfo>,
    pub coefficient_names: Vec<String>,
    pub delta_bar: Vec<f64>,
    /// Steps inside each moving-average window; empty for `simulate`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub window_counts: Vec<usize>,
    pub notes: Vec<String>,
    pub outputs: Vec<PathBuf>,
    pub timing: Timing,
}

/// Ground truth written next to a simulated track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta_true: Vec<f64>,
    pub coefficient_names: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub dt: f64,
    pub start: (f64, f64),
    pub delta_bar_mode: DeltaBarMode,
    pub delta_bar: Vec<f64>,
    pub proposals: u64,
}

/// Loads a config file, or the config embedded in a manifest when the path
/// ends in `.json`.
pub fn load_config(path: &Path) -> CmdResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(Error::io(path, e)))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let text = if path.extension().is_some_and(|e| e == "json") {
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::config(Error::InvalidConfig(format!("{}: {e}", path.display()))))?;
        manifest.config
    } else {
        text
    };
    RunConfig::from_text(&text, base).map_err(Failure::config)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl FitArgs {
    pub fn resolve(&self) -> CmdResult<RunConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = absolute(v);
        }
        if let Some(v) = self.family {
            cfg.family = v;
        }
        if let Some(v) = self.j {
            cfg.j = v;
        }
        if let Some(v) = self.window {
            cfg.window_hours = v;
        }
        if let Some(v) = self.iters {
            cfg.iterations = v;
        }
        if let Some(v) = self.burnin {
            cfg.burn_in = v;
        }
        if let Some(v) = &self.dump_augmented {
            cfg.dump_augmented = Some(absolute(v));
        }
        if self.no_mh_correction {
            cfg.mh_correction = false;
        }
        Ok(cfg)
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> CmdResult<RunConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = absolute(v);
        }
        Ok(cfg)
    }
}

impl MapArgs {
    pub fn resolve(&self) -> CmdResult<RunConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(v) = &self.chain {
            cfg.chain = Some(absolute(v));
        }
        if let Some(v) = self.quantity {
            cfg.quantity = v;
        }
        if let Some(v) = self.statistic {
            cfg.statistic = v;
        }
        if let Some(v) = self.thin {
            cfg.thin = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = absolute(v);
        }
        Ok(cfg)
    }
}

/// Reads every layer, standardizing those not marked raw.
pub fn load_stack(cfg: &RunConfig) -> CmdResult<(CovariateStack, Vec<LayerInfo>)> {
    let mut layers = Vec::with_capacity(cfg.layers.len());
    let mut info = Vec::with_capacity(cfg.layers.len());
    for spec in &cfg.layers {
        let raster = read_ascii_grid(&spec.path).map_err(Failure::data)?;
        let (raster, mean, sd) = match spec.mode {
            LayerMode::Standardize => {
                let (r, m, s) = raster.standardize().map_err(|e| match e {
                    Error::DegenerateLayer(_) => Failure::data(Error::DegenerateLayer(spec.name.clone())),
                    other => Failure::data(other),
                })?;
                (r, Some(m), Some(s))
            }
            LayerMode::Raw => (raster, None, None),
        };
        info.push(LayerInfo {
            name: spec.name.clone(),
            path: spec.path.clone(),
            standardized: mean.is_some(),
            mean,
            sd,
        });
        layers.push((spec.name.clone(), raster));
    }
    let stack = CovariateStack::new(layers, cfg.intercept).map_err(Failure::data)?;
    Ok((stack, info))
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text).map_err(|e| Failure::data(Error::io(path, e)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    write_text(path, &(text + "\n"))
}

fn create_out_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::data(Error::io(dir, e)))
}

/// Identifiability caveats for the chosen family.
fn family_notes(cfg: &RunConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if !cfg.family.scale_identifiable() {
        notes.push(format!(
            "selection family '{}' identifies theta only up to a positive scale factor",
            cfg.family
        ));
    }
    if cfg.family == SelectionFamily::Exponential && cfg.intercept {
        notes.push("the intercept cancels under the exponential family; its posterior is the prior".into());
    }
    notes
}

/// Paths written by a successful `fit`.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub chain: PathBuf,
    pub summary_json: PathBuf,
    pub summary_txt: PathBuf,
    pub manifest: PathBuf,
    pub accept_rate: f64,
}

pub fn cmd_fit(cfg: &RunConfig) -> CmdResult<FitOutput> {
    let started = Instant::now();
    cfg.validate_fit().map_err(Failure::config)?;
    let (mu, var) = cfg.prior_parts();
    let prior = Prior::diagonal(mu.clone(), &var).map_err(Failure::config)?;
    let (stack, layer_info) = load_stack(cfg)?;
    let track_path = cfg.track.as_ref().expect("validated");
    let track = read_track(track_path).map_err(Failure::data)?;
    let motility = estimate_delta_bar(&track, cfg.window_hours).map_err(Failure::data)?;
    let data = build_augmented(&track, &motility, &stack, cfg.j, cfg.seed).map_err(Failure::data)?;
    if let Some(path) = &cfg.dump_augmented {
        write_augmented_csv(&data, path).map_err(Failure::data)?;
    }
    let posterior = ConditionalPosterior::new(&data, cfg.family, prior).map_err(Failure::data)?;
    let notes = family_notes(cfg);
    for n in &notes {
        eprintln!("warning: {n}");
    }
    let hmc = HmcConfig {
        step_size: cfg.step_size,
        trajectory_time: cfg.trajectory_time,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        mass: MassMatrix::scaled_identity(stack.p(), cfg.mass_scale).map_err(Failure::config)?,
        seed: cfg.seed,
        theta_init: cfg.theta_init.clone().unwrap_or(mu),
        mh_correction: cfg.mh_correction,
    };
    let prepare_seconds = started.elapsed().as_secs_f64();
    let run_started = Instant::now();
    let chain = sample(&posterior, &hmc).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::Dimension(_) => Failure::config(e),
        other => Failure::sampler(other),
    })?;
    let run_seconds = run_started.elapsed().as_secs_f64();

    let names = stack.coefficient_names();
    let summary = coefficient_report(&chain, &names).map_err(Failure::sampler)?;
    create_out_dir(&cfg.out_dir)?;
    let out = FitOutput {
        chain: cfg.out_dir.join("chain.csv"),
        summary_json: cfg.out_dir.join("summary.json"),
        summary_txt: cfg.out_dir.join("summary.txt"),
        manifest: cfg.out_dir.join("manifest.json"),
        accept_rate: chain.accept_rate,
    };
    write_chain_csv(&chain, &out.chain).map_err(Failure::data)?;
    write_json(&out.summary_json, &summary)?;
    write_text(&out.summary_txt, &summary_table(&summary))?;
    let mut outputs = vec![out.chain.clone(), out.summary_json.clone(), out.summary_txt.clone()];
    outputs.extend(cfg.dump_augmented.clone());
    let manifest = Manifest {
        command: "fit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.canonical_text(),
        layers: layer_info,
        coefficient_names: names,
        delta_bar: motility.delta_bar,
        window_counts: motility.n_i,
        notes,
        outputs,
        timing: Timing {
            prepare_seconds,
            run_seconds,
        },
    };
    write_json(&out.manifest, &manifest)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub track: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
}

pub fn cmd_simulate(cfg: &RunConfig) -> CmdResult<SimulateOutput> {
    let started = Instant::now();
    cfg.validate_simulate().map_err(Failure::config)?;
    let (stack, layer_info) = load_stack(cfg)?;
    let start = cfg.start.expect("validated");
    if !stack.is_valid(start.0, start.1) {
        return Err(Failure::config(Error::InvalidConfig(format!(
            "keys 'start_x' and 'start_y': ({}, {}) is outside the raster or on a nodata cell",
            start.0, start.1
        ))));
    }
    let sim_cfg = SimConfig {
        theta_true: cfg.theta_true.clone().expect("validated"),
        n_steps: cfg.n_steps,
        dt: cfg.dt,
        start,
        delta_bar_mode: cfg
            .delta_bar_mode
            .unwrap_or_else(|| SimConfig::default_mode(stack.header().cellsize)),
        seed: cfg.seed,
    };
    let prepare_seconds = started.elapsed().as_secs_f64();
    let run_started = Instant::now();
    let sim = simulate(&sim_cfg, &stack).map_err(|e| match e {
        Error::InvalidConfig(_) => Failure::config(e),
        other => Failure::data(other),
    })?;
    let run_seconds = run_started.elapsed().as_secs_f64();

    create_out_dir(&cfg.out_dir)?;
    let out = SimulateOutput {
        track: cfg.out_dir.join("track.csv"),
        truth: cfg.out_dir.join("truth.json"),
        manifest: cfg.out_dir.join("manifest.json"),
    };
    write_track(&sim.track, &out.track).map_err(Failure::data)?;
    let names = stack.coefficient_names();
    let truth = Truth {
        theta_true: sim_cfg.theta_true.clone(),
        coefficient_names: names.clone(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        dt: sim_cfg.dt,
        start,
        delta_bar_mode: sim_cfg.delta_bar_mode,
        delta_bar: sim.delta_bar.clone(),
        proposals: sim.proposals,
    };
    write_json(&out.truth, &truth)?;
    let manifest = Manifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.canonical_text(),
        layers: layer_info,
        coefficient_names: names,
        delta_bar: sim.delta_bar,
        window_counts: Vec::new(),
        notes: Vec::new(),
        outputs: vec![out.track.clone(), out.truth.clone()],
        timing: Timing {
            prepare_seconds,
            run_seconds,
        },
    };
    write_json(&out.manifest, &manifest)?;
    Ok(out)
}

/// Writes `<quantity>_<statistic>.asc` into the output directory.
pub fn cmd_map(cfg: &RunConfig) -> CmdResult<PathBuf> {
    cfg.validate_map().map_err(Failure::config)?;
    let chain = read_chain_csv(cfg.chain.as_ref().expect("validated")).map_err(Failure::data)?;
    let (stack, _) = load_stack(cfg)?;
    let req = MapRequest {
        quantity: cfg.quantity,
        statistic: cfg.statistic,
        dt: cfg.dt,
        thin: cfg.thin,
    };
    let map = posterior_map(&chain, &stack, &req).map_err(Failure::data)?;
    create_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("{}_{}.asc", cfg.quantity, cfg.statistic));
    write_ascii_grid(&map, &path).map_err(Failure::data)?;
    Ok(path)
}

/// Runs the checks; returns the exit code and the printed table.
pub fn cmd_check(opts: &CheckOptions) -> (i32, String) {
    let outcomes = run_checks(opts);
    let mut table = check_table(&outcomes);
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        table.push_str(&format!("all {} checks passed\n", outcomes.len()));
        (0, table)
    } else {
        table.push_str(&format!("failed: {}\n", failed.join(", ")));
        (EXIT_CHECK, table)
    }
}

fn report<T>(result: CmdResult<T>, ok: impl FnOnce(T)) -> i32 {
    match result {
        Ok(v) => {
            ok(v);
            0
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Fit(args) => report(args.resolve().and_then(|c| cmd_fit(&c)), |o| {
            println!("acceptance rate {:.3}", o.accept_rate);
            println!("wrote {}", o.chain.display());
            println!("wrote {}", o.manifest.display());
        }),
        Command::Simulate(args) => report(args.resolve().and_then(|c| cmd_simulate(&c)), |o| {
            println!("wrote {}", o.track.display());
            println!("wrote {}", o.truth.display());
        }),
        Command::Map(args) => report(args.resolve().and_then(|c| cmd_map(&c)), |p| {
            println!("wrote {}", p.display());
        }),
        Command::Check(args) => {
            let (code, table) = cmd_check(&CheckOptions {
                seed: args.seed,
                corrupt_gradient: args.corrupt_gradient,
            });
            print!("{table}");
            code
        }
    }
}
