//! Built-in self-verification: the likelihood is compared against its
//! oracles, the analytic gradient against finite differences, and the
//! leapfrog integrator against its reversibility and error order.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::availability::{AugmentedDataset, StepFrame};
use crate::error::Result;
use crate::hmc::{leapfrog, HmcConfig, LogDensity};
use crate::likelihood::{
    bernoulli_conditional_oracle, cond_log_lik, log_posterior, multinomial_oracle, step_log_lik, ConditionalPosterior,
    Prior,
};
use crate::selection::{SelectionFamily, ALL_FAMILIES};

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Test hook: perturbs the analytic gradient so the gradient check fails.
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Random augmented dataset with `n_steps` steps, `j` slots, and `p`
/// coefficients, plus a coefficient vector at which every family is defined.
/// Slot rows include an intercept column of ones when `p > 1`. For the
/// linear families covariates and coefficients are positive.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    family: SelectionFamily,
    n_steps: usize,
    j: usize,
    p: usize,
) -> Result<(AugmentedDataset, Vec<f64>)> {
    let positive = !family.scale_identifiable();
    let draw = |rng: &mut R| -> f64 {
        if positive {
            rng.random_range(0.1..2.0)
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    };
    let frames = (1..=n_steps)
        .map(|step| {
            let rows: Vec<Vec<f64>> = (0..j)
                .map(|_| {
                    (0..p)
                        .map(|k| if k == 0 && p > 1 { 1.0 } else { draw(rng) })
                        .collect()
                })
                .collect();
            StepFrame::from_covariates(step, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let theta = (0..p).map(|_| draw(rng)).collect();
    Ok((AugmentedDataset::from_frames(frames)?, theta))
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R) -> (usize, usize, usize) {
    (rng.random_range(2..=10), rng.random_range(2..=12), rng.random_range(1..=4))
}

/// Largest pairwise disagreement between the per-step likelihood and the
/// Bernoulli and multinomial oracles over `instances` random datasets.
pub fn likelihood_triangle(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let family = ALL_FAMILIES[k % 4];
        let (n, j, p) = random_shape(&mut rng);
        let (data, theta) = random_instance(&mut rng, family, n, j, p)?;
        for frame in &data.frames {
            let a = step_log_lik(frame, family, &theta)?.exp();
            let b = bernoulli_conditional_oracle(frame, family, &theta, 0.0)?;
            let c = multinomial_oracle(frame, family, &theta)?;
            worst = worst.max((a - b).abs()).max((a - c).abs()).max((b - c).abs());
        }
    }
    Ok(worst)
}

/// Largest change of the Bernoulli oracle across `beta0` in {-5, 0, 5}.
pub fn beta0_spread(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let family = ALL_FAMILIES[k % 4];
        let (n, j, p) = random_shape(&mut rng);
        let (data, theta) = random_instance(&mut rng, family, n, j, p)?;
        for frame in &data.frames {
            let base = bernoulli_conditional_oracle(frame, family, &theta, 0.0)?;
            for beta0 in [-5.0, 5.0] {
                worst = worst.max((bernoulli_conditional_oracle(frame, family, &theta, beta0)? - base).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest change in the conditional log-likelihood under the
/// transformations each family cannot identify: an intercept shift for the
/// exponential family, and `theta -> c theta` for the linear families.
pub fn identifiability_spread(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = [SelectionFamily::Exponential, SelectionFamily::Linear, SelectionFamily::InverseLinear];
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let family = families[k % 3];
        let (n, j, _) = random_shape(&mut rng);
        let p = rng.random_range(2..=4);
        let (data, theta) = random_instance(&mut rng, family, n, j, p)?;
        let base = cond_log_lik(&data, family, &theta)?;
        for c in [0.5, 2.0, 10.0] {
            let moved: Vec<f64> = if family == SelectionFamily::Exponential {
                let mut t = theta.clone();
                t[0] += c;
                t
            } else {
                theta.iter().map(|t| c * t).collect()
            };
            worst = worst.max((cond_log_lik(&data, family, &moved)? - base).abs());
        }
    }
    Ok(worst)
}

struct Corrupted<'a>(&'a ConditionalPosterior);

impl LogDensity for Corrupted<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (lp, mut g) = LogDensity::log_density_grad(self.0, theta)?;
        g[0] = g[0] * 1.01 + 1e-3;
        Ok((lp, g))
    }
}

/// Worst gradient error over random posteriors, as the largest of
/// `|analytic - fd| / max(|fd|, 1e-3)`, with components where both are below
/// `1e-8` ignored. Both the direct and the compact evaluation paths are
/// checked.
pub fn gradient_error(seed: u64, instances: usize, corrupt: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let family = ALL_FAMILIES[k % 4];
        let (n, j, p) = random_shape(&mut rng);
        let (data, theta) = random_instance(&mut rng, family, n, j, p)?;
        let mu: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..2.0)).collect();
        let prior = Prior::diagonal(mu, &var)?;
        let direct = log_posterior(&data, family, &theta, &prior)?;
        let posterior = ConditionalPosterior::new(&data, family, prior)?;
        let target: Box<dyn LogDensity> = if corrupt {
            Box::new(Corrupted(&posterior))
        } else {
            Box::new(posterior.clone())
        };
        let (_, analytic) = target.log_density_grad(&theta)?;
        for d in 0..p {
            let h = 1e-5 * theta[d].abs().max(1.0);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[d] += h;
            down[d] -= h;
            let fd = (posterior.evaluate(&up)?.value() - posterior.evaluate(&down)?.value()) / (2.0 * h);
            for a in [analytic[d], direct.grad[d]] {
                let err = (a - fd).abs();
                if err > 1e-8 {
                    worst = worst.max(err / fd.abs().max(1e-3));
                }
            }
        }
    }
    Ok(worst)
}

fn gaussian_target(p: usize) -> Result<ConditionalPosterior> {
    let var: Vec<f64> = (0..p).map(|k| 0.5 + k as f64).collect();
    Ok(ConditionalPosterior::prior_only(
        SelectionFamily::EdeInverseLogit,
        Prior::diagonal(vec![0.0; p], &var)?,
    ))
}

/// Largest coordinate error after integrating forward, negating the
/// momentum, and integrating back, over random starts on a Gaussian target.
pub fn leapfrog_reversal_error(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = gaussian_target(3)?;
    let cfg = HmcConfig::with_defaults(vec![0.0; 3], seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let theta: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let v: Vec<f64> = (0..3).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let fwd = leapfrog(&theta, &v, &target, &cfg)?;
        let flipped: Vec<f64> = fwd.v.iter().map(|x| -x).collect();
        let back = leapfrog(&fwd.theta, &flipped, &target, &cfg)?;
        for (a, b) in back.theta.iter().zip(&theta) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in back.v.iter().zip(&v) {
            worst = worst.max((a + b).abs());
        }
    }
    Ok(worst)
}

/// Ratio of the absolute energy error at step size `step` to that at
/// `step / 4`, over the same trajectory time on a Gaussian target. A
/// second-order integrator gives about 16.
pub fn energy_error_ratio(step: f64, trajectory_time: f64) -> Result<f64> {
    let target = gaussian_target(3)?;
    let theta = [0.8, -0.4, 1.1];
    let v = [1.0, 0.5, -1.5];
    let energy_error = |dt: f64| -> Result<f64> {
        let mut cfg = HmcConfig::with_defaults(theta.to_vec(), 0);
        cfg.step_size = dt;
        cfg.trajectory_time = trajectory_time;
        let h0 = -LogDensity::log_density_grad(&target, &theta)?.0 + cfg.mass.kinetic(&v);
        let t = leapfrog(&theta, &v, &target, &cfg)?;
        Ok((-t.log_density + cfg.mass.kinetic(&t.v) - h0).abs())
    };
    Ok(energy_error(step)? / energy_error(step / 4.0)?)
}

fn outcome(name: &'static str, start: Instant, result: Result<(bool, String)>) -> CheckOutcome {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every check.
pub fn run_checks(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let seed = opts.seed;
    let mut out = Vec::new();

    let t = Instant::now();
    let r = likelihood_triangle(seed, 200).map(|e| (e < 1e-12, format!("max pairwise difference {e:.2e}")));
    out.push(outcome("likelihood_oracles", t, r));

    let t = Instant::now();
    let r = beta0_spread(seed + 1, 100).map(|e| (e < 1e-12, format!("max change over beta0 {e:.2e}")));
    out.push(outcome("beta0_cancellation", t, r));

    let t = Instant::now();
    let r = identifiability_spread(seed + 2, 50).map(|e| (e < 1e-10, format!("max log-likelihood change {e:.2e}")));
    out.push(outcome("identifiability", t, r));

    let t = Instant::now();
    let r = gradient_error(seed + 3, 50, opts.corrupt_gradient)
        .map(|e| (e < 1e-5, format!("max relative error {e:.2e}")));
    out.push(outcome("gradient", t, r));

    let t = Instant::now();
    let r = leapfrog_reversal_error(seed + 4, 20).map(|e| (e < 1e-8, format!("max coordinate error {e:.2e}")));
    out.push(outcome("leapfrog_reversibility", t, r));

    let t = Instant::now();
    let r = energy_error_ratio(0.2, 2.0).map(|q| ((12.0..=20.0).contains(&q), format!("error ratio {q:.2}")));
    out.push(outcome("leapfrog_order", t, r));

    out
}

pub fn check_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(5);
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&format!(
            "{:<width$}  {}  {:>7.3}s  {}\n",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.seconds,
            o.detail
        ));
    }
    s
}
