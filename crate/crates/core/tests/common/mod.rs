//! Reference implementations written independently of the library, used as
//! oracles by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use mstpp::availability::{AugmentedDataset, StepFrame};
use mstpp::raster::{ascii_grid_string, CovariateStack};
use mstpp::selection::SelectionFamily;
use rand::Rng;
use rand_distr::StandardNormal;

/// Selection function straight from its definition.
pub fn g(family: SelectionFamily, w: &[f64], theta: &[f64]) -> f64 {
    let eta: f64 = w.iter().zip(theta).map(|(a, b)| a * b).sum();
    match family {
        SelectionFamily::EdeInverseLogit => 1.0 + (-eta).exp(),
        SelectionFamily::Exponential => eta.exp(),
        SelectionFamily::Linear => eta,
        SelectionFamily::InverseLinear => 1.0 / eta,
    }
}

fn rows(frame: &StepFrame) -> Vec<&[f64]> {
    frame.w.chunks(frame.p).collect()
}

/// `g_1 / sum_j g_j`.
pub fn multinomial(frame: &StepFrame, family: SelectionFamily, theta: &[f64]) -> f64 {
    let g: Vec<f64> = rows(frame).iter().map(|w| g(family, w, theta)).collect();
    g[0] / g.iter().sum::<f64>()
}

/// Independent Bernoulli draws with `logit(phi_j) = beta0 + log g_j`,
/// enumerating every binary vector of length `J` and conditioning on a
/// single success.
pub fn bernoulli_enumeration(frame: &StepFrame, family: SelectionFamily, theta: &[f64], beta0: f64) -> f64 {
    // success and failure probabilities each from their own logistic form,
    // so neither is formed by subtracting from one
    let z: Vec<f64> = rows(frame).iter().map(|w| beta0 + g(family, w, theta).ln()).collect();
    let phi: Vec<f64> = z.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let fail: Vec<f64> = z.iter().map(|z| 1.0 / (1.0 + z.exp())).collect();
    let j = phi.len();
    assert!(j <= 16);
    let mut observed = 0.0;
    let mut single = 0.0;
    for mask in 0u32..(1 << j) {
        if mask.count_ones() != 1 {
            continue;
        }
        let prob: f64 = (0..j)
            .map(|k| if mask & (1 << k) != 0 { phi[k] } else { fail[k] })
            .product();
        single += prob;
        if mask == 1 {
            observed = prob;
        }
    }
    observed / single
}

/// Log posterior under a diagonal Gaussian prior, summed term by term.
pub fn log_posterior(
    data: &AugmentedDataset,
    family: SelectionFamily,
    theta: &[f64],
    mu: &[f64],
    var: &[f64],
) -> f64 {
    let lik: f64 = data.frames.iter().map(|f| multinomial(f, family, theta).ln()).sum();
    let prior: f64 = theta
        .iter()
        .zip(mu)
        .zip(var)
        .map(|((t, m), v)| -0.5 * (t - m).powi(2) / v)
        .sum();
    lik + prior
}

/// Random dataset and coefficients on which `family` is defined. Row entry 0
/// is an intercept when `p > 1`.
pub fn instance<R: Rng>(
    rng: &mut R,
    family: SelectionFamily,
    n_steps: usize,
    j: usize,
    p: usize,
) -> (AugmentedDataset, Vec<f64>) {
    let positive = matches!(family, SelectionFamily::Linear | SelectionFamily::InverseLinear);
    let draw = |rng: &mut R| {
        if positive {
            rng.random_range(0.2..2.5)
        } else {
            rng.sample::<f64, _>(StandardNormal) * 1.2
        }
    };
    let mut frames = Vec::new();
    for step in 1..=n_steps {
        let rows: Vec<Vec<f64>> = (0..j)
            .map(|_| (0..p).map(|k| if k == 0 && p > 1 { 1.0 } else { draw(rng) }).collect())
            .collect();
        frames.push(StepFrame::from_covariates(step, &rows).unwrap());
    }
    let theta = (0..p).map(|_| draw(rng)).collect();
    (AugmentedDataset::from_frames(frames).unwrap(), theta)
}

/// Writes every layer of a stack as an ASCII grid and returns a config
/// fragment listing them as raw layers.
pub fn write_layers(stack: &CovariateStack, dir: &Path) -> String {
    let mut text = String::new();
    for (name, raster) in stack.layers() {
        let path = dir.join(format!("{name}.asc"));
        std::fs::write(&path, ascii_grid_string(raster)).unwrap();
        text.push_str(&format!("\n[layer]\nname = {name}\npath = {name}.asc\nmode = raw\n"));
    }
    text
}
