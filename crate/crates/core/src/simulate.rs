//! Synthetic tracks from the homogenized diffusion fundamental solution.
//!
//! Given the previous position, the next one has density proportional to
//! `g(w(s), theta) * N(s; s_prev, 2 delta_bar dt I)` on the valid cells of
//! the stack, with `g = 1 / psi(s)`. Draws are exact: Gaussian proposals
//! (truncated to valid cells, as for availability) are accepted with
//! probability `g / G_max`, where `G_max` is the largest `g` over the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::availability::{availability_sd, gaussian_proposal, Position};
use crate::error::{Error, Result};
use crate::raster::{CovariateStack, Raster, RasterHeader};
use crate::selection::{motility, MotilityContext, SelectionFamily};
use crate::telemetry::{Fix, Track};

pub const MAX_SIM_PROPOSALS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeltaBarMode {
    /// Harmonic mean of cell motility within `radius` meters of the
    /// current position.
    HarmonicLocal { radius: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub theta_true: Vec<f64>,
    pub n_steps: usize,
    pub dt: f64,
    pub start: Position,
    pub delta_bar_mode: DeltaBarMode,
    pub seed: u64,
}

impl SimConfig {
    /// Harmonic-local mode with a radius of five cells.
    pub fn default_mode(cellsize: f64) -> DeltaBarMode {
        DeltaBarMode::HarmonicLocal { radius: 5.0 * cellsize }
    }
}

/// Harmonic mean of motility over the non-nodata cells whose centres lie
/// within `radius` of `center`.
pub fn local_harmonic_delta_bar(
    stack: &CovariateStack,
    theta: &[f64],
    center: Position,
    radius: f64,
    ctx: MotilityContext,
) -> Result<f64> {
    let cell_delta = |row: usize, col: usize| stack.cell_covariates(row, col).map(|w| motility(&w, theta, ctx));
    harmonic_over_disk(stack.header(), center, radius, cell_delta)
}

fn harmonic_over_disk(
    h: &RasterHeader,
    center: Position,
    radius: f64,
    mut cell_delta: impl FnMut(usize, usize) -> Option<f64>,
) -> Result<f64> {
    let no_cells = || Error::NoValidCells {
        x: center.0,
        y: center.1,
        radius,
    };
    if !(radius >= 0.0) {
        return Err(no_cells());
    }
    // column/row index ranges of cell centres that could fall in the disk
    let col_lo = (((center.0 - radius - h.xll) / h.cellsize - 0.5).ceil()).max(0.0);
    let col_hi = (((center.0 + radius - h.xll) / h.cellsize - 0.5).floor()).min(h.ncols as f64 - 1.0);
    let up_lo = (((center.1 - radius - h.yll) / h.cellsize - 0.5).ceil()).max(0.0);
    let up_hi = (((center.1 + radius - h.yll) / h.cellsize - 0.5).floor()).min(h.nrows as f64 - 1.0);
    if col_lo > col_hi || up_lo > up_hi {
        return Err(no_cells());
    }
    let (mut count, mut inv_sum) = (0usize, 0.0);
    for up in up_lo as usize..=up_hi as usize {
        let row = h.nrows - 1 - up;
        for col in col_lo as usize..=col_hi as usize {
            let (x, y) = h.cell_center(row, col);
            if (x - center.0).powi(2) + (y - center.1).powi(2) > radius * radius {
                continue;
            }
            if let Some(d) = cell_delta(row, col) {
                count += 1;
                inv_sum += 1.0 / d;
            }
        }
    }
    if count == 0 {
        return Err(no_cells());
    }
    Ok(count as f64 / inv_sum)
}

/// Per-cell selection and motility for one `theta`, precomputed so each
/// step only needs lookups.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    stack: &'a CovariateStack,
    theta: Vec<f64>,
    cell_g: Vec<f64>,
    cell_delta: Vec<f64>,
    g_max: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(stack: &'a CovariateStack, theta: &[f64], dt: f64) -> Result<Self> {
        if theta.len() != stack.p() {
            return Err(Error::Dimension(format!(
                "theta has length {}, stack design has length {}",
                theta.len(),
                stack.p()
            )));
        }
        let h = *stack.header();
        let ctx = MotilityContext::new(h.cellsize, dt)?;
        let mut cell_g = Vec::with_capacity(h.nrows * h.ncols);
        let mut cell_delta = Vec::with_capacity(h.nrows * h.ncols);
        for row in 0..h.nrows {
            for col in 0..h.ncols {
                match stack.cell_covariates(row, col) {
                    Some(w) => {
                        cell_g.push(SelectionFamily::EdeInverseLogit.g(&w, theta)?);
                        cell_delta.push(motility(&w, theta, ctx));
                    }
                    None => {
                        cell_g.push(f64::NAN);
                        cell_delta.push(f64::NAN);
                    }
                }
            }
        }
        let g_max = cell_g.iter().copied().filter(|g| !g.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !g_max.is_finite() {
            return Err(Error::Stack("selection function is not finite on every valid cell".into()));
        }
        Ok(Simulator {
            stack,
            theta: theta.to_vec(),
            cell_g,
            cell_delta,
            g_max,
        })
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn cell_index(&self, pos: Position) -> Option<usize> {
        let h = self.stack.header();
        let (row, col) = h.cell_of(pos.0, pos.1)?;
        let idx = row * h.ncols + col;
        (!self.cell_g[idx].is_nan()).then_some(idx)
    }

    pub fn local_delta_bar(&self, center: Position, radius: f64) -> Result<f64> {
        let h = self.stack.header();
        harmonic_over_disk(h, center, radius, |row, col| {
            let d = self.cell_delta[row * h.ncols + col];
            (!d.is_nan()).then_some(d)
        })
    }

    /// One exact draw of the next position. Returns the position and the
    /// number of proposals used.
    pub fn step_sample<R: Rng + ?Sized>(&self, s_prev: Position, delta_bar: f64, dt: f64, rng: &mut R) -> Result<(Position, u64)> {
        if !(delta_bar > 0.0 && dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step needs positive delta_bar and dt, got {delta_bar} and {dt}"
            )));
        }
        let sd = availability_sd(delta_bar, dt);
        for proposals in 1..=MAX_SIM_PROPOSALS {
            let s = gaussian_proposal(rng, s_prev, sd);
            let Some(idx) = self.cell_index(s) else {
                continue;
            };
            let u: f64 = rng.random();
            if u * self.g_max < self.cell_g[idx] {
                return Ok((s, proposals));
            }
        }
        Err(Error::RejectionExhausted {
            proposals: MAX_SIM_PROPOSALS,
        })
    }
}

/// A simulated track with the motility used for each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub track: Track,
    pub delta_bar: Vec<f64>,
    pub proposals: u64,
}

/// Simulates `n_steps` steps at spacing `dt` from `cfg.start`.
pub fn simulate(cfg: &SimConfig, stack: &CovariateStack) -> Result<Simulation> {
    if cfg.n_steps < 2 {
        return Err(Error::InvalidConfig(format!("n_steps must be at least 2, got {}", cfg.n_steps)));
    }
    if !stack.is_valid(cfg.start.0, cfg.start.1) {
        return Err(Error::OutOfDomain {
            x: cfg.start.0,
            y: cfg.start.1,
        });
    }
    let sim = Simulator::new(stack, &cfg.theta_true, cfg.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);

    let mut fixes = Vec::with_capacity(cfg.n_steps + 1);
    let mut delta_bar = Vec::with_capacity(cfg.n_steps);
    let mut pos = cfg.start;
    let mut proposals = 0;
    fixes.push(Fix {
        t: 0.0,
        x: pos.0,
        y: pos.1,
    });
    for k in 1..=cfg.n_steps {
        let d = match cfg.delta_bar_mode {
            DeltaBarMode::HarmonicLocal { radius } => sim.local_delta_bar(pos, radius)?,
            DeltaBarMode::Fixed { value } => value,
        };
        let (next, used) = sim.step_sample(pos, d, cfg.dt, &mut rng)?;
        proposals += used;
        delta_bar.push(d);
        pos = next;
        fixes.push(Fix {
            t: k as f64 * cfg.dt,
            x: pos.0,
            y: pos.1,
        });
    }
    Ok(Simulation {
        track: Track::new(fixes, "simulated")?,
        delta_bar,
        proposals,
    })
}

pub fn simulate_track(cfg: &SimConfig, stack: &CovariateStack) -> Result<Track> {
    simulate(cfg, stack).map(|s| s.track)
}

/// A square landscape of `n x n` cells with two smooth, standardized
/// covariates (`ridge`: sum of sinusoids; `basin`: radial bumps) and an
/// intercept, for demos and recovery tests. Features span a few cells.
pub fn synthetic_landscape(n: usize, cellsize: f64, seed: u64) -> Result<CovariateStack> {
    synthetic_landscape_scaled(n, cellsize, 4.0, seed)
}

/// As [`synthetic_landscape`] with bump radius `feature_cells` cells and
/// ridge wavelength three times that.
pub fn synthetic_landscape_scaled(n: usize, cellsize: f64, feature_cells: f64, seed: u64) -> Result<CovariateStack> {
    let header = RasterHeader::new(n, n, 0.0, 0.0, cellsize, -9999.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = n as f64 * cellsize;
    let wavelength = 3.0 * feature_cells * cellsize;
    let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let k = std::f64::consts::TAU / wavelength;
    let ridge = Raster::from_fn(header, |x, y| {
        (k * x + phases[0]).sin() + (k * 0.7 * y + phases[1]).sin() + 0.5 * (k * 0.6 * (x + y) + phases[2]).cos()
    })?;
    let n_bumps = (40.0 * (4.0 / feature_cells).powi(2) * (n as f64 / 200.0).powi(2)).round().max(40.0) as usize;
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            )
        })
        .collect();
    let scale = feature_cells * cellsize;
    let basin = Raster::from_fn(header, |x, y| {
        bumps
            .iter()
            .map(|&(bx, by, sign)| sign * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * scale * scale)).exp())
            .sum::<f64>()
            + 0.3 * (k * 0.5 * y + phases[3]).sin()
    })?;
    let (ridge, _, _) = ridge.standardize()?;
    let (basin, _, _) = basin.standardize()?;
    CovariateStack::new(vec![("ridge".into(), ridge), ("basin".into(), basin)], true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_stack(n: usize, cellsize: f64) -> CovariateStack {
        let h = RasterHeader::new(n, n, 0.0, 0.0, cellsize, -9999.0).unwrap();
        let r = Raster::from_fn(h, |_, _| 0.0).unwrap();
        CovariateStack::new(vec![("flat".into(), r)], true).unwrap()
    }

    #[test]
    fn harmonic_mean_of_constant_motility() {
        let stack = flat_stack(20, 10.0);
        let ctx = MotilityContext::new(10.0, 2.0).unwrap();
        let d = local_harmonic_delta_bar(&stack, &[0.3, 1.0], (100.0, 100.0), 35.0, ctx).unwrap();
        let expected = motility(&[1.0, 0.0], &[0.3, 1.0], ctx);
        assert!((d - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn harmonic_mean_of_two_cells() {
        // cellsize 2 and dt 0.25 give motility 4 psi, so psi 1/4 and 3/4 map to 1 and 3
        let h = RasterHeader::new(2, 1, 0.0, 0.0, 2.0, -9999.0).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let r = Raster::new(h, vec![logit(0.25), logit(0.75)]).unwrap();
        let stack = CovariateStack::new(vec![("a".into(), r)], false).unwrap();
        let ctx = MotilityContext::new(2.0, 0.25).unwrap();
        let d = local_harmonic_delta_bar(&stack, &[1.0], (2.0, 1.0), 1.5, ctx).unwrap();
        assert!((d - 1.5).abs() < 1e-12, "{d}");
    }

    #[test]
    fn harmonic_mean_needs_a_cell() {
        let stack = flat_stack(5, 10.0);
        let ctx = MotilityContext::new(10.0, 1.0).unwrap();
        let res = local_harmonic_delta_bar(&stack, &[0.0, 0.0], (500.0, 500.0), 10.0, ctx);
        assert!(matches!(res, Err(Error::NoValidCells { .. })));
    }

    #[test]
    fn simulation_is_deterministic_and_regular() {
        let stack = synthetic_landscape(60, 100.0, 4).unwrap();
        let cfg = SimConfig {
            theta_true: vec![0.5, 1.0, -1.0],
            n_steps: 50,
            dt: 3.0,
            start: (3000.0, 3000.0),
            delta_bar_mode: SimConfig::default_mode(100.0),
            seed: 12,
        };
        let a = simulate(&cfg, &stack).unwrap();
        let b = simulate(&cfg, &stack).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.track.len(), 51);
        assert!(a.track.steps().iter().all(|s| s.dt == 3.0));
        assert_eq!(a.track.fixes()[0].x, 3000.0);
        let other = simulate(&SimConfig { seed: 13, ..cfg.clone() }, &stack).unwrap();
        assert_ne!(a.track, other.track);
    }

    #[test]
    fn start_outside_is_rejected() {
        let stack = flat_stack(10, 1.0);
        let cfg = SimConfig {
            theta_true: vec![0.0, 0.0],
            n_steps: 5,
            dt: 1.0,
            start: (-1.0, 5.0),
            delta_bar_mode: DeltaBarMode::Fixed { value: 0.1 },
            seed: 0,
        };
        assert!(matches!(simulate(&cfg, &stack), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn small_motility_stays_close() {
        let stack = flat_stack(50, 10.0);
        let sim = Simulator::new(&stack, &[0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sd = availability_sd(1e-4, 1.0);
        let mut total = 0.0;
        for _ in 0..1000 {
            let ((x, y), _) = sim.step_sample((250.0, 250.0), 1e-4, 1.0, &mut rng).unwrap();
            total += ((x - 250.0).powi(2) + (y - 250.0).powi(2)).sqrt();
        }
        assert!(total / 1000.0 < 3.0 * sd);
    }

    #[test]
    fn landscape_layers_are_standardized() {
        let stack = synthetic_landscape(40, 50.0, 1).unwrap();
        assert_eq!(stack.p(), 3);
        for (_, layer) in stack.layers() {
            let n = layer.values().len() as f64;
            let m = layer.values().iter().sum::<f64>() / n;
            assert!(m.abs() < 1e-10);
        }
    }
}
