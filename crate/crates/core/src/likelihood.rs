//! Conditional (step-selection) likelihood, Gaussian prior, and the two
//! small-scale oracles it must agree with.
//!
//! For step `i` with slots `j = 1..J` (slot 1 observed), the likelihood
//! contribution is `g(w_i1) / sum_j g(w_ij)`. Denominators are accumulated in
//! log space. Sums over steps run sequentially in step order, so results are
//! reproducible bit for bit.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::availability::{AugmentedDataset, StepFrame};
use crate::error::{Error, Result};
use crate::selection::{dot, inv_logit, SelectionFamily};

/// Largest `J` the Bernoulli enumeration oracle accepts.
pub const MAX_ENUMERATION_J: usize = 20;

/// Multivariate normal prior `N(mu, sigma)` on the coefficients. The
/// log-density omits its normalizing constant.
#[derive(Debug, Clone)]
pub struct Prior {
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl Prior {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if p == 0 || sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::InvalidPrior(format!(
                "mean has length {p} but covariance is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPrior("non-finite entries".into()));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::InvalidPrior("covariance is not symmetric".into()));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidPrior("covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        Ok(Prior {
            mu,
            sigma,
            precision,
        })
    }

    pub fn diagonal(mu: Vec<f64>, variances: &[f64]) -> Result<Self> {
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidPrior("variances must be positive".into()));
        }
        Prior::new(mu, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    /// Zero-mean prior with variance 0.1 on the intercept (when present) and
    /// 1 on every other coefficient.
    pub fn default_for(p: usize, includes_intercept: bool) -> Self {
        let mut variances = vec![1.0; p];
        if includes_intercept && p > 0 {
            variances[0] = 0.1;
        }
        Prior::diagonal(vec![0.0; p], &variances).expect("default prior is valid")
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `-(theta - mu)' Sigma^-1 (theta - mu) / 2` and its gradient.
    pub fn log_density_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let diff = DVector::from_iterator(self.mu.len(), theta.iter().zip(&self.mu).map(|(t, m)| t - m));
        let pd = &self.precision * &diff;
        (-0.5 * diff.dot(&pd), pd.iter().map(|v| -v).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogPosteriorEval {
    pub log_lik: f64,
    pub log_prior: f64,
    pub grad: Vec<f64>,
    pub per_step_log_lik: Option<Vec<f64>>,
}

impl LogPosteriorEval {
    pub fn value(&self) -> f64 {
        self.log_lik + self.log_prior
    }
}

fn locate(err: Error, step: usize, slot: usize) -> Error {
    match err {
        Error::NonPositiveSelection {
            linear_predictor, ..
        } => Error::NonPositiveSelection {
            linear_predictor,
            step: Some(step),
            slot: Some(slot),
        },
        other => other,
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-likelihood contribution of one step, `log g(w_1) - log sum_j g(w_j)`.
pub fn step_log_lik(frame: &StepFrame, family: SelectionFamily, theta: &[f64]) -> Result<f64> {
    let log_g = frame
        .rows()
        .enumerate()
        .map(|(j, w)| family.log_g(w, theta).map_err(|e| locate(e, frame.step_index, j + 1)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_g[0] - log_sum_exp(&log_g))
}

/// Conditional log-likelihood summed over every step.
pub fn cond_log_lik(data: &AugmentedDataset, family: SelectionFamily, theta: &[f64]) -> Result<f64> {
    check_dim(data.p, theta)?;
    data.frames
        .iter()
        .try_fold(0.0, |acc, f| Ok(acc + step_log_lik(f, family, theta)?))
}

fn check_dim(p: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != p {
        return Err(Error::Dimension(format!("theta has length {}, expected {p}", theta.len())));
    }
    Ok(())
}

/// Per-step probability of the observed configuration under independent
/// Bernoulli draws with `logit(phi_j) = beta0 + log g(w_j)`, conditioned on
/// exactly one success, by enumerating all `J` one-hot configurations.
pub fn bernoulli_conditional_oracle(
    frame: &StepFrame,
    family: SelectionFamily,
    theta: &[f64],
    beta0: f64,
) -> Result<f64> {
    let j_count = frame.j();
    if j_count > MAX_ENUMERATION_J {
        return Err(Error::EnumerationTooLarge(j_count));
    }
    let mut log_phi = Vec::with_capacity(j_count);
    let mut log_one_minus = Vec::with_capacity(j_count);
    for (j, w) in frame.rows().enumerate() {
        let lg = family.log_g(w, theta).map_err(|e| locate(e, frame.step_index, j + 1))?;
        let z = beta0 + lg;
        // log logit^-1(z) and log(1 - logit^-1(z))
        log_phi.push(-softplus(-z));
        log_one_minus.push(-softplus(z));
    }
    let config_log_prob = |hot: usize| -> f64 {
        (0..j_count)
            .map(|j| if j == hot { log_phi[j] } else { log_one_minus[j] })
            .sum()
    };
    let all: Vec<f64> = (0..j_count).map(config_log_prob).collect();
    Ok((all[0] - log_sum_exp(&all)).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Multinomial cell probabilities `g(w_j) / sum_l g(w_l)`.
pub fn multinomial_probs(frame: &StepFrame, family: SelectionFamily, theta: &[f64]) -> Result<Vec<f64>> {
    let g = frame
        .rows()
        .enumerate()
        .map(|(j, w)| family.g(w, theta).map_err(|e| locate(e, frame.step_index, j + 1)))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = g.iter().sum();
    Ok(g.into_iter().map(|v| v / total).collect())
}

/// Likelihood of the observed slot under a single multinomial draw.
pub fn multinomial_oracle(frame: &StepFrame, family: SelectionFamily, theta: &[f64]) -> Result<f64> {
    Ok(multinomial_probs(frame, family, theta)?[0])
}

/// Log posterior (up to a constant) with its analytic gradient, evaluated
/// directly over every slot of every frame.
pub fn log_posterior(
    data: &AugmentedDataset,
    family: SelectionFamily,
    theta: &[f64],
    prior: &Prior,
) -> Result<LogPosteriorEval> {
    check_dim(data.p, theta)?;
    check_dim(prior.dim(), theta)?;
    let p = data.p;
    let mut grad = vec![0.0; p];
    let mut per_step = Vec::with_capacity(data.frames.len());
    let mut log_g = Vec::with_capacity(data.j);
    let mut dlog = Vec::with_capacity(data.j);
    for frame in &data.frames {
        log_g.clear();
        dlog.clear();
        for (j, w) in frame.rows().enumerate() {
            let eta = dot(w, theta);
            let wrap = |e| locate(e, frame.step_index, j + 1);
            log_g.push(family.log_g_eta(eta).map_err(wrap)?);
            dlog.push(family.dlog_g_eta(eta).map_err(wrap)?);
        }
        let lse = log_sum_exp(&log_g);
        per_step.push(log_g[0] - lse);
        for (j, w) in frame.rows().enumerate() {
            let weight = (log_g[j] - lse).exp();
            let coef = if j == 0 { dlog[0] * (1.0 - weight) } else { -dlog[j] * weight };
            for (gk, wk) in grad.iter_mut().zip(w) {
                *gk += coef * wk;
            }
        }
    }
    let (log_prior, prior_grad) = prior.log_density_grad(theta);
    for (g, pg) in grad.iter_mut().zip(prior_grad) {
        *g += pg;
    }
    Ok(LogPosteriorEval {
        log_lik: per_step.iter().sum(),
        log_prior,
        grad,
        per_step_log_lik: Some(per_step),
    })
}

/// A step with duplicate covariate rows merged: availability draws that land
/// in the same cell share a covariate vector, so the denominator can be
/// summed over distinct rows weighted by multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactFrame {
    pub step_index: usize,
    pub used: Vec<f64>,
    /// Distinct rows across all `J` slots (including the used slot).
    pub rows: Vec<f64>,
    pub counts: Vec<f64>,
    /// 1-based slot of each distinct row's first occurrence.
    pub first_slot: Vec<usize>,
}

impl CompactFrame {
    pub fn from_frame(frame: &StepFrame) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut first_slot = Vec::new();
        for (j, w) in frame.rows().enumerate() {
            let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&u) => counts[u] += 1.0,
                None => {
                    index.insert(key, counts.len());
                    rows.extend_from_slice(w);
                    counts.push(1.0);
                    first_slot.push(j + 1);
                }
            }
        }
        CompactFrame {
            step_index: frame.step_index,
            used: frame.w(0).to_vec(),
            rows,
            counts,
            first_slot,
        }
    }
}

/// The log posterior target sampled by HMC: compact frames, a family, and
/// a prior. With no frames it reduces to the prior.
#[derive(Debug, Clone)]
pub struct ConditionalPosterior {
    frames: Vec<CompactFrame>,
    pooled: Option<PooledRows>,
    p: usize,
    family: SelectionFamily,
    prior: Prior,
}

/// Distinct covariate rows pooled across all steps. Covariates are constant
/// within a cell, so a dataset holds at most one distinct row per cell
/// however many slots it has; each row's exponential is then computed once
/// per evaluation and steps only index into it.
#[derive(Debug, Clone)]
struct PooledRows {
    rows: Vec<f64>,
    step_used: Vec<u32>,
    /// Offsets into `entry_row`/`entry_count`, one range per step.
    step_start: Vec<usize>,
    entry_row: Vec<u32>,
    entry_count: Vec<f64>,
    step_total: Vec<f64>,
}

impl PooledRows {
    fn new(frames: &[CompactFrame], p: usize) -> Self {
        let mut index: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut rows = Vec::new();
        let mut intern = |w: &[f64]| -> u32 {
            let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                rows.extend_from_slice(w);
                (rows.len() / p - 1) as u32
            })
        };
        let mut pooled = PooledRows {
            rows: Vec::new(),
            step_used: Vec::with_capacity(frames.len()),
            step_start: vec![0],
            entry_row: Vec::new(),
            entry_count: Vec::new(),
            step_total: Vec::with_capacity(frames.len()),
        };
        for f in frames {
            pooled.step_used.push(intern(&f.used));
            for (w, c) in f.rows.chunks_exact(p).zip(&f.counts) {
                pooled.entry_row.push(intern(w));
                pooled.entry_count.push(*c);
            }
            pooled.step_start.push(pooled.entry_row.len());
            pooled.step_total.push(f.counts.iter().sum());
        }
        pooled.rows = rows;
        pooled
    }
}

impl ConditionalPosterior {
    pub fn new(data: &AugmentedDataset, family: SelectionFamily, prior: Prior) -> Result<Self> {
        if prior.dim() != data.p {
            return Err(Error::Dimension(format!(
                "prior has dimension {} but covariates have length {}",
                prior.dim(),
                data.p
            )));
        }
        let frames: Vec<CompactFrame> = data.frames.iter().map(CompactFrame::from_frame).collect();
        let pooled = (family == SelectionFamily::EdeInverseLogit).then(|| PooledRows::new(&frames, data.p));
        Ok(ConditionalPosterior {
            frames,
            pooled,
            p: data.p,
            family,
            prior,
        })
    }

    pub fn prior_only(family: SelectionFamily, prior: Prior) -> Self {
        ConditionalPosterior {
            frames: Vec::new(),
            pooled: None,
            p: prior.dim(),
            family,
            prior,
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn family(&self) -> SelectionFamily {
        self.family
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn n_steps(&self) -> usize {
        self.frames.len()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<LogPosteriorEval> {
        self.evaluate_inner(theta, false)
    }

    /// As [`evaluate`](Self::evaluate), also returning per-step terms.
    pub fn evaluate_with_steps(&self, theta: &[f64]) -> Result<LogPosteriorEval> {
        self.evaluate_inner(theta, true)
    }

    fn evaluate_inner(&self, theta: &[f64], keep_steps: bool) -> Result<LogPosteriorEval> {
        check_dim(self.p, theta)?;
        let mut grad = vec![0.0; self.p];
        let mut per_step = keep_steps.then(|| Vec::with_capacity(self.frames.len()));
        let mut log_lik = 0.0;
        let mut scratch = Vec::new();
        if let Some(pool) = &self.pooled {
            log_lik = self.pooled_ede(pool, theta, &mut grad, &mut per_step);
        } else {
            for frame in &self.frames {
                let term = match self.family {
                    SelectionFamily::EdeInverseLogit => ede_step(frame, theta, &mut grad, &mut scratch),
                    family => generic_step(frame, family, theta, &mut grad, &mut scratch)?,
                };
                log_lik += term;
                if let Some(v) = per_step.as_mut() {
                    v.push(term);
                }
            }
        }
        let (log_prior, prior_grad) = self.prior.log_density_grad(theta);
        for (g, pg) in grad.iter_mut().zip(prior_grad) {
            *g += pg;
        }
        Ok(LogPosteriorEval {
            log_lik,
            log_prior,
            grad,
            per_step_log_lik: per_step,
        })
    }
}

impl ConditionalPosterior {
    /// Inverse-logit likelihood over pooled rows with one shared shift
    /// `s = max(0, max_u a_u)`, `a_u = -eta_u`. A step whose shifted
    /// denominator underflows is recomputed with its own shift.
    fn pooled_ede(&self, pool: &PooledRows, theta: &[f64], grad: &mut [f64], per_step: &mut Option<Vec<f64>>) -> f64 {
        let p = self.p;
        let a: Vec<f64> = pool.rows.chunks_exact(p).map(|w| -dot(w, theta)).collect();
        let shift = a.iter().copied().fold(0.0, f64::max);
        let e: Vec<f64> = a.iter().map(|x| (x - shift).exp()).collect();
        let base = (-shift).exp();
        let mut weight = vec![0.0; a.len()];
        let mut used = vec![0.0; a.len()];
        let mut log_lik = 0.0;
        let mut scratch = Vec::new();
        for (i, frame) in self.frames.iter().enumerate() {
            let range = pool.step_start[i]..pool.step_start[i + 1];
            let mut denom = pool.step_total[i] * base;
            for k in range.clone() {
                denom += pool.entry_count[k] * e[pool.entry_row[k] as usize];
            }
            let term = if denom > 1e-250 && denom.is_finite() {
                let inv = 1.0 / denom;
                for k in range {
                    weight[pool.entry_row[k] as usize] += pool.entry_count[k] * inv;
                }
                let u = pool.step_used[i] as usize;
                used[u] += 1.0;
                ede_log_g(-a[u]) - (shift + denom.ln())
            } else {
                ede_step(frame, theta, grad, &mut scratch)
            };
            log_lik += term;
            if let Some(v) = per_step.as_mut() {
                v.push(term);
            }
        }
        for (u, w) in pool.rows.chunks_exact(p).enumerate() {
            let coef = weight[u] * e[u] - used[u] * inv_logit(a[u]);
            if coef != 0.0 {
                for (gk, wk) in grad.iter_mut().zip(w) {
                    *gk += coef * wk;
                }
            }
        }
        log_lik
    }
}

/// `log(1 + exp(-eta))` without overflow.
fn ede_log_g(eta: f64) -> f64 {
    if eta > 0.0 {
        (-eta).exp().ln_1p()
    } else {
        -eta + eta.exp().ln_1p()
    }
}

/// Inverse-logit family: `g = 1 + exp(a)` with `a = -eta`, so
/// `sum_j c_j g_j = e^s (C e^-s + sum_j c_j e^(a_j - s))` for `s = max(0, max a_j)`.
/// One exponential per distinct row, no overflow.
fn ede_step(frame: &CompactFrame, theta: &[f64], grad: &mut [f64], scratch: &mut Vec<f64>) -> f64 {
    let p = theta.len();
    scratch.clear();
    scratch.extend(frame.rows.chunks_exact(p).map(|w| -dot(w, theta)));
    let shift = scratch.iter().copied().fold(0.0, f64::max);
    let total: f64 = frame.counts.iter().sum();
    let mut denom = total * (-shift).exp();
    for (a, c) in scratch.iter_mut().zip(&frame.counts) {
        *a = c * (*a - shift).exp();
        denom += *a;
    }
    let eta_used = dot(&frame.used, theta);
    let used_log_g = ede_log_g(eta_used);
    let used_coef = -inv_logit(-eta_used);
    for (gk, wk) in grad.iter_mut().zip(&frame.used) {
        *gk += used_coef * wk;
    }
    for (w, e) in frame.rows.chunks_exact(p).zip(scratch.iter()) {
        let coef = e / denom;
        for (gk, wk) in grad.iter_mut().zip(w) {
            *gk += coef * wk;
        }
    }
    used_log_g - (shift + denom.ln())
}

fn generic_step(
    frame: &CompactFrame,
    family: SelectionFamily,
    theta: &[f64],
    grad: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let p = theta.len();
    let wrap = |slot: usize| move |e| locate(e, frame.step_index, slot);
    scratch.clear();
    for ((w, c), slot) in frame.rows.chunks_exact(p).zip(&frame.counts).zip(&frame.first_slot) {
        scratch.push(family.log_g_eta(dot(w, theta)).map_err(wrap(*slot))? + c.ln());
    }
    let lse = log_sum_exp(scratch);
    let eta_used = dot(&frame.used, theta);
    let used_log_g = family.log_g_eta(eta_used).map_err(wrap(1))?;
    let used_coef = family.dlog_g_eta(eta_used).map_err(wrap(1))?;
    for (gk, wk) in grad.iter_mut().zip(&frame.used) {
        *gk += used_coef * wk;
    }
    for ((w, lw), slot) in frame.rows.chunks_exact(p).zip(scratch.iter()).zip(&frame.first_slot) {
        let coef = -(lw - lse).exp() * family.dlog_g_eta(dot(w, theta)).map_err(wrap(*slot))?;
        for (gk, wk) in grad.iter_mut().zip(w) {
            *gk += coef * wk;
        }
    }
    Ok(used_log_g - lse)
}
