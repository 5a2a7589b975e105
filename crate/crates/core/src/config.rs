//! Plain-text run configuration.
//!
//! The format is flat `key = value` lines with repeatable `[layer]`
//! sections, `#` comments, and blank lines:
//!
//! ```text
//! track = fixes.csv
//! selection_family = ede
//! J = 101
//!
//! [layer]
//! name = elevation
//! path = elevation.asc
//! mode = standardize
//! ```
//!
//! Relative paths resolve against the config file's directory. Command-line
//! flags override config values, which override defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::derived::{Quantity, Statistic, DEFAULT_THIN};
use crate::error::{Error, Result};
use crate::hmc::{DEFAULT_BURN_IN, DEFAULT_ITERATIONS, DEFAULT_MASS_SCALE, DEFAULT_STEP_SIZE, DEFAULT_TRAJECTORY_TIME};
use crate::selection::SelectionFamily;
use crate::simulate::DeltaBarMode;
use crate::telemetry::DEFAULT_WINDOW_HOURS;

pub const DEFAULT_J: usize = 101;
pub const DEFAULT_DT: f64 = 3.0;
pub const DEFAULT_N_STEPS: usize = 2000;

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Syntax-level parse: top-level entries and one entry list per `[layer]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    pub entries: Vec<Entry>,
    pub layers: Vec<Vec<Entry>>,
}

pub fn parse_config(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    let mut in_layer = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if line != "[layer]" {
                return Err(Error::parse(lineno, format!("unknown section '{line}'")));
            }
            raw.layers.push(Vec::new());
            in_layer = true;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, format!("expected 'key = value', found '{line}'")))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(lineno, format!("invalid key '{key}'")));
        }
        let target = if in_layer {
            raw.layers.last_mut().expect("layer section opened")
        } else {
            &mut raw.entries
        };
        if target.iter().any(|e| e.key == key) {
            return Err(Error::parse(lineno, format!("duplicate key '{key}'")));
        }
        target.push(Entry {
            line: lineno,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Standardize,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub path: PathBuf,
    pub mode: LayerMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub track: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub layers: Vec<LayerSpec>,
    pub intercept: bool,
    pub family: SelectionFamily,
    pub j: usize,
    pub window_hours: f64,
    pub prior_mu: Option<Vec<f64>>,
    pub prior_var: Option<Vec<f64>>,
    pub step_size: f64,
    pub trajectory_time: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub mass_scale: f64,
    pub theta_init: Option<Vec<f64>>,
    pub mh_correction: bool,
    pub seed: u64,
    pub dump_augmented: Option<PathBuf>,
    pub theta_true: Option<Vec<f64>>,
    pub n_steps: usize,
    pub dt: f64,
    pub start: Option<(f64, f64)>,
    pub delta_bar_mode: Option<DeltaBarMode>,
    pub chain: Option<PathBuf>,
    pub quantity: Quantity,
    pub statistic: Statistic,
    pub thin: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            track: None,
            out_dir: PathBuf::from("out"),
            layers: Vec::new(),
            intercept: true,
            family: SelectionFamily::EdeInverseLogit,
            j: DEFAULT_J,
            window_hours: DEFAULT_WINDOW_HOURS,
            prior_mu: None,
            prior_var: None,
            step_size: DEFAULT_STEP_SIZE,
            trajectory_time: DEFAULT_TRAJECTORY_TIME,
            iterations: DEFAULT_ITERATIONS,
            burn_in: DEFAULT_BURN_IN,
            mass_scale: DEFAULT_MASS_SCALE,
            theta_init: None,
            mh_correction: true,
            seed: 0,
            dump_augmented: None,
            theta_true: None,
            n_steps: DEFAULT_N_STEPS,
            dt: DEFAULT_DT,
            start: None,
            delta_bar_mode: None,
            chain: None,
            quantity: Quantity::ResidenceTime,
            statistic: Statistic::Mean,
            thin: DEFAULT_THIN,
        }
    }
}

fn bad(entry: &Entry, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("line {}: key '{}': {msg}", entry.line, entry.key))
}

fn num<T: std::str::FromStr>(entry: &Entry) -> Result<T> {
    entry
        .value
        .parse()
        .map_err(|_| bad(entry, format!("cannot parse '{}'", entry.value)))
}

fn finite(entry: &Entry) -> Result<f64> {
    let v: f64 = num(entry)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(entry, "must be finite"))
    }
}

fn vector(entry: &Entry) -> Result<Vec<f64>> {
    entry
        .value
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| bad(entry, format!("expected comma-separated numbers, got '{}'", entry.value)))
}

fn boolean(entry: &Entry) -> Result<bool> {
    match entry.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(entry, "expected true or false")),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    let joined = if p.is_absolute() { p } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_text(&text, base)
    }

    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let raw = parse_config(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut cfg = RunConfig {
            out_dir: resolve(base_dir, "out"),
            ..RunConfig::default()
        };
        let mut start_x = None;
        let mut start_y = None;
        let mut mode_name: Option<&Entry> = None;
        let mut radius = None;
        let mut fixed = None;
        for e in &raw.entries {
            match e.key.as_str() {
                "track" => cfg.track = Some(resolve(base_dir, &e.value)),
                "out" => cfg.out_dir = resolve(base_dir, &e.value),
                "intercept" => cfg.intercept = boolean(e)?,
                "selection_family" => cfg.family = e.value.parse().map_err(|m: String| bad(e, m))?,
                "J" => cfg.j = num(e)?,
                "window_hours" => cfg.window_hours = finite(e)?,
                "prior_mu" => cfg.prior_mu = Some(vector(e)?),
                "prior_var" => cfg.prior_var = Some(vector(e)?),
                "step_size" => cfg.step_size = finite(e)?,
                "trajectory_time" => cfg.trajectory_time = finite(e)?,
                "iterations" => cfg.iterations = num(e)?,
                "burn_in" => cfg.burn_in = num(e)?,
                "mass_scale" => cfg.mass_scale = finite(e)?,
                "theta_init" => cfg.theta_init = Some(vector(e)?),
                "mh_correction" => cfg.mh_correction = boolean(e)?,
                "seed" => cfg.seed = num(e)?,
                "dump_augmented" => cfg.dump_augmented = Some(resolve(base_dir, &e.value)),
                "theta_true" => cfg.theta_true = Some(vector(e)?),
                "n_steps" => cfg.n_steps = num(e)?,
                "dt" => cfg.dt = finite(e)?,
                "start_x" => start_x = Some(finite(e)?),
                "start_y" => start_y = Some(finite(e)?),
                "delta_bar_mode" => mode_name = Some(e),
                "harmonic_radius" => radius = Some(finite(e)?),
                "delta_bar_fixed" => fixed = Some(finite(e)?),
                "chain" => cfg.chain = Some(resolve(base_dir, &e.value)),
                "quantity" => cfg.quantity = e.value.parse().map_err(|m: String| bad(e, m))?,
                "statistic" => cfg.statistic = e.value.parse().map_err(|m: String| bad(e, m))?,
                "thin" => cfg.thin = num(e)?,
                _ => return Err(bad(e, "unknown key")),
            }
        }
        cfg.start = match (start_x, start_y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => return Err(Error::InvalidConfig("start_x and start_y must be given together".into())),
        };
        cfg.delta_bar_mode = match mode_name.map(|e| (e, e.value.as_str())) {
            None => match (radius, fixed) {
                (Some(r), _) => Some(DeltaBarMode::HarmonicLocal { radius: r }),
                (None, Some(v)) => Some(DeltaBarMode::Fixed { value: v }),
                (None, None) => None,
            },
            Some((_, "harmonic_local")) => radius.map(|r| DeltaBarMode::HarmonicLocal { radius: r }),
            Some((e, "fixed")) => Some(DeltaBarMode::Fixed {
                value: fixed.ok_or_else(|| bad(e, "fixed mode needs delta_bar_fixed"))?,
            }),
            Some((e, other)) => return Err(bad(e, format!("unknown mode '{other}' (expected harmonic_local|fixed)"))),
        };

        for layer in &raw.layers {
            let get = |key: &str| layer.iter().find(|e| e.key == key);
            if let Some(e) = layer.iter().find(|e| !["name", "path", "mode"].contains(&e.key.as_str())) {
                return Err(bad(e, "unknown layer key"));
            }
            let name = get("name")
                .map(|e| e.value.clone())
                .ok_or_else(|| Error::InvalidConfig("[layer] section missing key 'name'".into()))?;
            let path = get("path")
                .map(|e| resolve(base_dir, &e.value))
                .ok_or_else(|| Error::InvalidConfig(format!("layer '{name}' missing key 'path'")))?;
            let mode = match get("mode") {
                None => LayerMode::Standardize,
                Some(e) => match e.value.as_str() {
                    "standardize" => LayerMode::Standardize,
                    "raw" => LayerMode::Raw,
                    other => return Err(bad(e, format!("unknown mode '{other}' (expected standardize|raw)"))),
                },
            };
            cfg.layers.push(LayerSpec { name, path, mode });
        }
        Ok(cfg)
    }

    /// Number of coefficients implied by the layers and intercept flag.
    pub fn p(&self) -> usize {
        self.layers.len() + usize::from(self.intercept)
    }

    /// Prior mean and variances, defaulting to zero mean with variance 0.1
    /// on the intercept and 1 elsewhere.
    pub fn prior_parts(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.p();
        let mu = self.prior_mu.clone().unwrap_or_else(|| vec![0.0; p]);
        let var = self.prior_var.clone().unwrap_or_else(|| {
            let mut v = vec![1.0; p];
            if self.intercept && p > 0 {
                v[0] = 0.1;
            }
            v
        });
        (mu, var)
    }

    fn check_file(key: &str, path: &Option<PathBuf>) -> Result<()> {
        match path {
            None => Err(Error::InvalidConfig(format!("key '{key}' is required"))),
            Some(p) if !p.is_file() => Err(Error::InvalidConfig(format!(
                "key '{key}': file {} does not exist",
                p.display()
            ))),
            Some(_) => Ok(()),
        }
    }

    fn check_layers(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("at least one [layer] is required".into()));
        }
        for layer in &self.layers {
            if !layer.path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "key 'path' of layer '{}': file {} does not exist",
                    layer.name,
                    layer.path.display()
                )));
            }
        }
        Ok(())
    }

    fn check_vector(&self, key: &str, v: &Option<Vec<f64>>) -> Result<()> {
        match v {
            Some(v) if v.len() != self.p() => Err(Error::InvalidConfig(format!(
                "key '{key}' has {} entries, expected {}",
                v.len(),
                self.p()
            ))),
            _ => Ok(()),
        }
    }

    pub fn validate_fit(&self) -> Result<()> {
        Self::check_file("track", &self.track)?;
        self.check_layers()?;
        if self.j < 2 {
            return Err(Error::InvalidConfig(format!("key 'J' must be at least 2, got {}", self.j)));
        }
        if !(self.window_hours > 0.0) {
            return Err(Error::InvalidConfig("key 'window_hours' must be positive".into()));
        }
        self.check_vector("prior_mu", &self.prior_mu)?;
        self.check_vector("prior_var", &self.prior_var)?;
        self.check_vector("theta_init", &self.theta_init)?;
        if self.prior_var.iter().flatten().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("key 'prior_var' must be positive".into()));
        }
        if !(self.mass_scale > 0.0) {
            return Err(Error::InvalidConfig("key 'mass_scale' must be positive".into()));
        }
        if !(self.step_size > 0.0) || !(self.trajectory_time >= self.step_size) {
            return Err(Error::InvalidConfig(
                "keys 'step_size' and 'trajectory_time' need 0 < step_size <= trajectory_time".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig("key 'burn_in' must be smaller than 'iterations'".into()));
        }
        Ok(())
    }

    pub fn validate_simulate(&self) -> Result<()> {
        self.check_layers()?;
        if self.theta_true.is_none() {
            return Err(Error::InvalidConfig("key 'theta_true' is required".into()));
        }
        self.check_vector("theta_true", &self.theta_true)?;
        if self.start.is_none() {
            return Err(Error::InvalidConfig("keys 'start_x' and 'start_y' are required".into()));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidConfig("key 'n_steps' must be at least 2".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("key 'dt' must be positive".into()));
        }
        match self.delta_bar_mode {
            Some(DeltaBarMode::HarmonicLocal { radius }) if !(radius > 0.0) => {
                Err(Error::InvalidConfig("key 'harmonic_radius' must be positive".into()))
            }
            Some(DeltaBarMode::Fixed { value }) if !(value > 0.0) => {
                Err(Error::InvalidConfig("key 'delta_bar_fixed' must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn validate_map(&self) -> Result<()> {
        Self::check_file("chain", &self.chain)?;
        self.check_layers()?;
        if self.thin == 0 {
            return Err(Error::InvalidConfig("key 'thin' must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("key 'dt' must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved configuration in the same text format; parsing it back
    /// yields an identical `RunConfig`.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        if let Some(t) = &self.track {
            writeln!(out, "track = {}", t.display()).unwrap();
        }
        writeln!(out, "out = {}", self.out_dir.display()).unwrap();
        writeln!(out, "intercept = {}", self.intercept).unwrap();
        writeln!(out, "selection_family = {}", self.family).unwrap();
        writeln!(out, "J = {}", self.j).unwrap();
        writeln!(out, "window_hours = {}", self.window_hours).unwrap();
        if let Some(v) = &self.prior_mu {
            writeln!(out, "prior_mu = {}", join(v)).unwrap();
        }
        if let Some(v) = &self.prior_var {
            writeln!(out, "prior_var = {}", join(v)).unwrap();
        }
        writeln!(out, "step_size = {}", self.step_size).unwrap();
        writeln!(out, "trajectory_time = {}", self.trajectory_time).unwrap();
        writeln!(out, "iterations = {}", self.iterations).unwrap();
        writeln!(out, "burn_in = {}", self.burn_in).unwrap();
        writeln!(out, "mass_scale = {}", self.mass_scale).unwrap();
        if let Some(v) = &self.theta_init {
            writeln!(out, "theta_init = {}", join(v)).unwrap();
        }
        writeln!(out, "mh_correction = {}", self.mh_correction).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        if let Some(p) = &self.dump_augmented {
            writeln!(out, "dump_augmented = {}", p.display()).unwrap();
        }
        if let Some(v) = &self.theta_true {
            writeln!(out, "theta_true = {}", join(v)).unwrap();
        }
        writeln!(out, "n_steps = {}", self.n_steps).unwrap();
        writeln!(out, "dt = {}", self.dt).unwrap();
        if let Some((x, y)) = self.start {
            writeln!(out, "start_x = {x}\nstart_y = {y}").unwrap();
        }
        match self.delta_bar_mode {
            Some(DeltaBarMode::HarmonicLocal { radius }) => {
                writeln!(out, "delta_bar_mode = harmonic_local\nharmonic_radius = {radius}").unwrap()
            }
            Some(DeltaBarMode::Fixed { value }) => {
                writeln!(out, "delta_bar_mode = fixed\ndelta_bar_fixed = {value}").unwrap()
            }
            None => {}
        }
        if let Some(c) = &self.chain {
            writeln!(out, "chain = {}", c.display()).unwrap();
        }
        writeln!(out, "quantity = {}", self.quantity).unwrap();
        writeln!(out, "statistic = {}", self.statistic).unwrap();
        writeln!(out, "thin = {}", self.thin).unwrap();
        for layer in &self.layers {
            let mode = match layer.mode {
                LayerMode::Standardize => "standardize",
                LayerMode::Raw => "raw",
            };
            writeln!(out, "\n[layer]\nname = {}\npath = {}\nmode = {mode}", layer.name, layer.path.display()).unwrap();
        }
        out
    }

    /// SHA-256 of the canonical text without the output directory, hex
    /// encoded. Runs that differ only in where they write share a hash.
    pub fn hash(&self) -> String {
        let text: String = self
            .canonical_text()
            .lines()
            .filter(|l| !l.starts_with("out = "))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
