//! Hamiltonian Monte Carlo with Gaussian momentum and a leapfrog integrator.
//!
//! The Hamiltonian is `h(theta, v) = -log post(theta) + v' M^-1 v / 2` for
//! momentum covariance `M`, and positions move as `d theta / d tau = M^-1 v`.
//! A Metropolis correction on the energy error is applied by default;
//! [`HmcConfig::mh_correction`] set to `false` accepts every finite
//! trajectory instead.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::likelihood::ConditionalPosterior;

/// A differentiable log density (up to a constant).
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl LogDensity for ConditionalPosterior {
    fn dim(&self) -> usize {
        ConditionalPosterior::dim(self)
    }

    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(theta)?;
        Ok((e.value(), e.grad))
    }
}

/// Momentum covariance with its Cholesky factor and inverse.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl MassMatrix {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::InvalidConfig("mass matrix must be square".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("mass matrix is not positive definite".into()))?;
        Ok(MassMatrix {
            chol_lower: chol.l(),
            inverse: chol.inverse(),
            cov,
        })
    }

    pub fn scaled_identity(p: usize, scale: f64) -> Result<Self> {
        MassMatrix::new(DMatrix::identity(p, p) * scale)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `M^-1 v`.
    pub fn velocity(&self, v: &[f64]) -> Vec<f64> {
        (&self.inverse * DVector::from_column_slice(v)).iter().copied().collect()
    }

    pub fn kinetic(&self, v: &[f64]) -> f64 {
        0.5 * v.iter().zip(self.velocity(v)).map(|(a, b)| a * b).sum::<f64>()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.chol_lower * z).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub step_size: f64,
    pub trajectory_time: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub mass: MassMatrix,
    pub seed: u64,
    /// Starting point; the prior mean is the usual choice.
    pub theta_init: Vec<f64>,
    pub mh_correction: bool,
}

pub const DEFAULT_STEP_SIZE: f64 = 0.05;
pub const DEFAULT_TRAJECTORY_TIME: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 20_000;
pub const DEFAULT_BURN_IN: usize = 1_000;
pub const DEFAULT_MASS_SCALE: f64 = 3.0;

impl HmcConfig {
    /// Step size 0.05, trajectory time 10, 20000 iterations with 1000
    /// burn-in, and momentum covariance `3 I`.
    pub fn with_defaults(theta_init: Vec<f64>, seed: u64) -> Self {
        let p = theta_init.len();
        HmcConfig {
            step_size: DEFAULT_STEP_SIZE,
            trajectory_time: DEFAULT_TRAJECTORY_TIME,
            iterations: DEFAULT_ITERATIONS,
            burn_in: DEFAULT_BURN_IN,
            mass: MassMatrix::scaled_identity(p.max(1), DEFAULT_MASS_SCALE).expect("3I is positive definite"),
            seed,
            theta_init,
            mh_correction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.trajectory_time >= self.step_size) || !self.trajectory_time.is_finite() {
            return Err(Error::InvalidConfig("trajectory_time must be at least step_size".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.mass.dim() != self.theta_init.len() {
            return Err(Error::Dimension("mass matrix and theta_init differ in dimension".into()));
        }
        Ok(())
    }

    pub fn n_leapfrog(&self) -> usize {
        ((self.trajectory_time / self.step_size).round() as usize).max(1)
    }
}

/// Hamiltonian at `(theta, v)`.
pub fn hamiltonian<T: LogDensity + ?Sized>(theta: &[f64], v: &[f64], target: &T, mass: &MassMatrix) -> Result<f64> {
    let (lp, _) = target.log_density_grad(theta)?;
    Ok(-lp + mass.kinetic(v))
}

/// End state of a leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
    pub grad_evals: usize,
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Runs `n_steps` leapfrog steps from `(theta, v)` whose log density and
/// gradient are already known.
#[allow(clippy::too_many_arguments)]
fn integrate<T: LogDensity + ?Sized>(
    target: &T,
    mass: &MassMatrix,
    step_size: f64,
    n_steps: usize,
    theta: &[f64],
    v: &[f64],
    mut grad: Vec<f64>,
    mut log_density: f64,
) -> Result<Trajectory> {
    let mut theta = theta.to_vec();
    let mut v = v.to_vec();
    let half = 0.5 * step_size;
    for _ in 0..n_steps {
        for (vk, gk) in v.iter_mut().zip(&grad) {
            *vk += half * gk;
        }
        for (tk, uk) in theta.iter_mut().zip(mass.velocity(&v)) {
            *tk += step_size * uk;
        }
        if !all_finite(&theta) {
            return Err(Error::NonFiniteTrajectory);
        }
        let (lp, g) = target.log_density_grad(&theta)?;
        log_density = lp;
        grad = g;
        for (vk, gk) in v.iter_mut().zip(&grad) {
            *vk += half * gk;
        }
        if !log_density.is_finite() || !all_finite(&v) || !all_finite(&grad) {
            return Err(Error::NonFiniteTrajectory);
        }
    }
    Ok(Trajectory {
        theta,
        v,
        log_density,
        grad,
        grad_evals: n_steps,
    })
}

/// Leapfrog trajectory of `cfg.n_leapfrog()` steps of size `cfg.step_size`.
pub fn leapfrog<T: LogDensity + ?Sized>(theta: &[f64], v: &[f64], target: &T, cfg: &HmcConfig) -> Result<Trajectory> {
    let (lp, grad) = target.log_density_grad(theta)?;
    if !lp.is_finite() || !all_finite(&grad) {
        return Err(Error::NonFiniteTrajectory);
    }
    let mut traj = integrate(target, &cfg.mass, cfg.step_size, cfg.n_leapfrog(), theta, v, grad, lp)?;
    traj.grad_evals += 1;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub p: usize,
    /// Retained draws, row-major `(iterations - burn_in) x p`.
    pub draws: Vec<f64>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Acceptance fraction over retained iterations.
    pub accept_rate: f64,
    /// Hamiltonian at the start of every iteration, burn-in included.
    pub energy_trace: Vec<f64>,
    /// `h(end) - h(start)` per iteration; NaN for divergent trajectories.
    pub energy_error: Vec<f64>,
    pub divergent: usize,
    pub seed: u64,
    /// Iteration number of the first retained draw.
    pub first_iter: usize,
}

impl Chain {
    pub fn n_draws(&self) -> usize {
        self.log_post.len()
    }

    pub fn draw(&self, k: usize) -> &[f64] {
        &self.draws[k * self.p..(k + 1) * self.p]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().skip(k).step_by(self.p).copied().collect()
    }

    /// Chain from retained draws alone, e.g. read back from CSV.
    pub fn from_draws(p: usize, draws: Vec<f64>, log_post: Vec<f64>, accepted: Vec<bool>, first_iter: usize) -> Result<Self> {
        if p == 0 || draws.len() != p * log_post.len() || accepted.len() != log_post.len() {
            return Err(Error::Dimension("chain columns have inconsistent lengths".into()));
        }
        let n = accepted.len();
        let accept_rate = if n == 0 {
            0.0
        } else {
            accepted.iter().filter(|a| **a).count() as f64 / n as f64
        };
        Ok(Chain {
            p,
            draws,
            log_post,
            accepted,
            accept_rate,
            energy_trace: Vec::new(),
            energy_error: Vec::new(),
            divergent: 0,
            seed: 0,
            first_iter,
        })
    }
}

/// Runs the sampler. Deterministic given `cfg.seed`.
pub fn sample<T: LogDensity + ?Sized>(target: &T, cfg: &HmcConfig) -> Result<Chain> {
    cfg.validate()?;
    let p = target.dim();
    if cfg.theta_init.len() != p {
        return Err(Error::Dimension(format!(
            "theta_init has length {}, target has dimension {p}",
            cfg.theta_init.len()
        )));
    }
    let (mut lp, mut grad) = target
        .log_density_grad(&cfg.theta_init)
        .map_err(|_| Error::InitializationFailure)?;
    if !lp.is_finite() || !all_finite(&grad) {
        return Err(Error::InitializationFailure);
    }
    let mut theta = cfg.theta_init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_steps = cfg.n_leapfrog();
    let kept = cfg.iterations - cfg.burn_in;

    let mut draws = Vec::with_capacity(kept * p);
    let mut log_post = Vec::with_capacity(kept);
    let mut accepted = Vec::with_capacity(kept);
    let mut energy_trace = Vec::with_capacity(cfg.iterations);
    let mut energy_error = Vec::with_capacity(cfg.iterations);
    let mut divergent = 0;

    for iter in 0..cfg.iterations {
        let v = cfg.mass.draw(&mut rng);
        let h_start = -lp + cfg.mass.kinetic(&v);
        energy_trace.push(h_start);
        let u: f64 = rng.random();
        let outcome = integrate(target, &cfg.mass, cfg.step_size, n_steps, &theta, &v, grad.clone(), lp);
        let accept = match outcome {
            Ok(traj) => {
                let h_end = -traj.log_density + cfg.mass.kinetic(&traj.v);
                energy_error.push(h_end - h_start);
                let ok = !cfg.mh_correction || u.ln() < h_start - h_end;
                if ok {
                    theta = traj.theta;
                    lp = traj.log_density;
                    grad = traj.grad;
                }
                ok
            }
            Err(_) => {
                energy_error.push(f64::NAN);
                divergent += 1;
                false
            }
        };
        if iter >= cfg.burn_in {
            draws.extend_from_slice(&theta);
            log_post.push(lp);
            accepted.push(accept);
        }
    }
    let accept_rate = accepted.iter().filter(|a| **a).count() as f64 / kept as f64;
    Ok(Chain {
        p,
        draws,
        log_post,
        accepted,
        accept_rate,
        energy_trace,
        energy_error,
        divergent,
        seed: cfg.seed,
        first_iter: cfg.burn_in,
    })
}

/// CSV with header `iter,theta_0,...,theta_{p-1},log_post,accepted`.
pub fn chain_csv_string(chain: &Chain) -> String {
    let mut out = String::from("iter");
    for k in 0..chain.p {
        write!(out, ",theta_{k}").unwrap();
    }
    out.push_str(",log_post,accepted\n");
    for k in 0..chain.n_draws() {
        write!(out, "{}", chain.first_iter + k).unwrap();
        for v in chain.draw(k) {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{}", chain.log_post[k], u8::from(chain.accepted[k])).unwrap();
    }
    out
}

pub fn write_chain_csv(chain: &Chain, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, chain_csv_string(chain)).map_err(|e| Error::io(path, e))
}

pub fn read_chain_csv(path: impl AsRef<Path>) -> Result<Chain> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_chain_csv(&text)
}

/// Parses the chain CSV format written by [`chain_csv_string`].
pub fn parse_chain_csv(text: &str) -> Result<Chain> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty chain file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let ncol = cols.len();
    if ncol < 4 || cols[0] != "iter" || cols[ncol - 2] != "log_post" || cols[ncol - 1] != "accepted" {
        return Err(Error::parse(1, "expected header 'iter,theta_0,...,log_post,accepted'"));
    }
    let p = ncol - 3;
    for (k, c) in cols[1..=p].iter().enumerate() {
        if *c != format!("theta_{k}") {
            return Err(Error::parse(1, format!("expected column theta_{k}, found '{c}'")));
        }
    }
    let mut draws = Vec::new();
    let mut log_post = Vec::new();
    let mut accepted = Vec::new();
    let mut first_iter = None;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ncol {
            return Err(Error::parse(lineno, format!("expected {ncol} fields, found {}", fields.len())));
        }
        let iter: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad iteration '{}'", fields[0])))?;
        first_iter.get_or_insert(iter);
        for f in &fields[1..=p + 1] {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("non-numeric value '{f}'")))?;
            draws.push(v);
        }
        log_post.push(draws.pop().expect("pushed above"));
        accepted.push(match fields[ncol - 1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(lineno, format!("accepted must be 0 or 1, got '{other}'"))),
        });
    }
    if log_post.is_empty() {
        return Err(Error::parse(1, "chain has no draws"));
    }
    Chain::from_draws(p, draws, log_post, accepted, first_iter.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian {
        precision: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.precision.len()
        }
        fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            let lp = -0.5 * theta.iter().zip(&self.precision).map(|(t, q)| q * t * t).sum::<f64>();
            Ok((lp, theta.iter().zip(&self.precision).map(|(t, q)| -q * t).collect()))
        }
    }

    struct Flat(usize);

    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_grad(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0; self.0]))
        }
    }

    fn cfg(p: usize) -> HmcConfig {
        HmcConfig::with_defaults(vec![0.0; p], 7)
    }

    #[test]
    fn defaults() {
        let c = cfg(2);
        assert_eq!((c.step_size, c.trajectory_time, c.iterations, c.burn_in), (0.05, 10.0, 20_000, 1_000));
        assert_eq!(c.n_leapfrog(), 200);
        assert_eq!(c.mass.cov()[(1, 1)], 3.0);
    }

    #[test]
    fn hamiltonian_is_even_in_momentum() {
        let g = Gaussian { precision: vec![1.0, 2.0] };
        let m = MassMatrix::scaled_identity(2, 3.0).unwrap();
        let h0 = hamiltonian(&[0.3, -0.2], &[0.0, 0.0], &g, &m).unwrap();
        assert!((h0 - (0.5 * 0.09 + 0.04)).abs() < 1e-15);
        let a = hamiltonian(&[0.3, -0.2], &[1.0, -2.0], &g, &m).unwrap();
        let b = hamiltonian(&[0.3, -0.2], &[-1.0, 2.0], &g, &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn free_particle_moves_linearly() {
        let mut c = cfg(2);
        c.trajectory_time = 1.0;
        let t = leapfrog(&[1.0, 2.0], &[3.0, -6.0], &Flat(2), &c).unwrap();
        assert!((t.theta[0] - 2.0).abs() < 1e-12 && (t.theta[1] - 0.0).abs() < 1e-12);
        assert_eq!(t.v, vec![3.0, -6.0]);
        assert_eq!(t.grad_evals, 21);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let g = Gaussian { precision: vec![1.0, 4.0, 0.5] };
        let c = cfg(3);
        let fwd = leapfrog(&[0.5, -1.0, 2.0], &[1.0, 0.3, -0.7], &g, &c).unwrap();
        let neg: Vec<f64> = fwd.v.iter().map(|v| -v).collect();
        let back = leapfrog(&fwd.theta, &neg, &g, &c).unwrap();
        for (a, b) in back.theta.iter().zip([0.5, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in back.v.iter().zip([1.0, 0.3, -0.7]) {
            assert!((a + b).abs() < 1e-8);
        }
    }

    #[test]
    fn divergent_trajectory_errors() {
        let g = Gaussian { precision: vec![1e100] };
        let mut c = cfg(1);
        c.step_size = 0.5;
        assert!(matches!(leapfrog(&[1.0], &[1.0], &g, &c), Err(Error::NonFiniteTrajectory)));
    }

    #[test]
    fn sampler_is_deterministic_and_counts_divergences() {
        let g = Gaussian { precision: vec![1.0] };
        let mut c = cfg(1);
        c.iterations = 200;
        c.burn_in = 20;
        c.trajectory_time = 1.0;
        let a = sample(&g, &c).unwrap();
        let b = sample(&g, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 180);
        assert_eq!(a.energy_trace.len(), 200);

        let stiff = Gaussian { precision: vec![1e100] };
        c.step_size = 0.5;
        c.trajectory_time = 10.0;
        let d = sample(&stiff, &c).unwrap();
        assert_eq!(d.divergent, 200);
        assert_eq!(d.accept_rate, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(1);
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let mut c = cfg(1);
        c.trajectory_time = 0.01;
        assert!(c.validate().is_err());
        let mut c = cfg(1);
        c.step_size = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_finite_start_fails() {
        struct Broken;
        impl LogDensity for Broken {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((f64::NAN, vec![0.0]))
            }
        }
        assert!(matches!(sample(&Broken, &cfg(1)), Err(Error::InitializationFailure)));
    }

    #[test]
    fn chain_csv_round_trip_and_errors() {
        let g = Gaussian { precision: vec![1.0, 2.0] };
        let mut c = cfg(2);
        c.iterations = 30;
        c.burn_in = 5;
        c.trajectory_time = 0.5;
        let chain = sample(&g, &c).unwrap();
        let text = chain_csv_string(&chain);
        assert!(text.starts_with("iter,theta_0,theta_1,log_post,accepted\n5,"));
        let back = parse_chain_csv(&text).unwrap();
        assert_eq!(back.draws, chain.draws);
        assert_eq!(back.log_post, chain.log_post);
        assert_eq!(back.accepted, chain.accepted);
        assert_eq!(back.first_iter, 5);

        assert!(parse_chain_csv("iter,theta_0,log_post,accepted\n").is_err());
        assert!(parse_chain_csv("iter,theta_1,log_post,accepted\n0,1,2,1\n").is_err());
        assert!(matches!(
            parse_chain_csv("iter,theta_0,log_post,accepted\n0,1,2,1\n1,1,x,0\n"),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
