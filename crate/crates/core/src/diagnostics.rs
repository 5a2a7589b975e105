//! Posterior summaries and effective sample size for a single chain.

use serde::{Deserialize, Serialize};

use crate::hmc::Chain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
    pub accept_rate: f64,
    /// Posterior probability that the coefficient is positive.
    pub p_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub coefficients: Vec<CoefficientSummary>,
    pub accept_rate: f64,
    pub n_draws: usize,
    pub divergent: usize,
}

/// Mean computed about the first element, exact for constant input.
pub fn mean(x: &[f64]) -> f64 {
    let Some(&first) = x.first() else {
        return f64::NAN;
    };
    first + x.iter().map(|v| v - first).sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size with Geyer's initial positive sequence: lag
/// autocorrelations are summed in adjacent pairs until a pair turns
/// non-positive. A constant chain reports 1.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if !(c0 > 0.0) {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

pub fn summarize(chain: &Chain, names: &[String]) -> ChainSummary {
    let coefficients = (0..chain.p)
        .map(|k| {
            let col = chain.column(k);
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            CoefficientSummary {
                name: names.get(k).cloned().unwrap_or_else(|| format!("theta_{k}")),
                mean: mean(&col),
                sd: sd(&col),
                q025: quantile_sorted(&sorted, 0.025),
                q975: quantile_sorted(&sorted, 0.975),
                ess: effective_sample_size(&col),
                accept_rate: chain.accept_rate,
                p_positive: col.iter().filter(|v| **v > 0.0).count() as f64 / col.len() as f64,
            }
        })
        .collect();
    ChainSummary {
        coefficients,
        accept_rate: chain.accept_rate,
        n_draws: chain.n_draws(),
        divergent: chain.divergent,
    }
}

/// Aligned-column text table of a summary.
pub fn summary_table(summary: &ChainSummary) -> String {
    let width = summary
        .coefficients
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(4)
        .max(11);
    let mut out = format!(
        "{:<width$} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
        "coefficient", "mean", "sd", "q025", "q975", "ess", "P(>0)"
    );
    for c in &summary.coefficients {
        out.push_str(&format!(
            "{:<width$} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.1} {:>8.3}\n",
            c.name, c.mean, c.sd, c.q025, c.q975, c.ess, c.p_positive
        ));
    }
    out.push_str(&format!(
        "draws {}  acceptance {:.3}  divergent {}\n",
        summary.n_draws, summary.accept_rate, summary.divergent
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn chain_of(cols: &[Vec<f64>]) -> Chain {
        let n = cols[0].len();
        let mut draws = Vec::new();
        for k in 0..n {
            for c in cols {
                draws.push(c[k]);
            }
        }
        Chain::from_draws(cols.len(), draws, vec![0.0; n], vec![true; n], 0).unwrap()
    }

    #[test]
    fn constant_chain() {
        let chain = chain_of(&[vec![2.5; 100], vec![-1.0; 100]]);
        let s = summarize(&chain, &["a".into(), "b".into()]);
        assert_eq!(s.coefficients[0].mean, 2.5);
        assert_eq!(s.coefficients[0].sd, 0.0);
        assert_eq!(s.coefficients[0].ess, 1.0);
        assert_eq!(s.coefficients[0].p_positive, 1.0);
        assert_eq!(s.coefficients[1].p_positive, 0.0);
        assert!(summary_table(&s).contains("acceptance 1.000"));
    }

    #[test]
    fn white_noise_ess_near_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&x);
        assert!((ess / 10_000.0 - 1.0).abs() < 0.15, "{ess}");
        let p = x.iter().filter(|v| **v > 0.0).count() as f64 / x.len() as f64;
        assert!((p - 0.5).abs() < 0.02);
    }

    #[test]
    fn ar1_ess_is_reduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = vec![0.0f64; 20_000];
        for k in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[k] = 0.9 * x[k - 1] + e;
        }
        // theoretical n (1 - rho) / (1 + rho)
        let ess = effective_sample_size(&x);
        let expected = 20_000.0 * 0.1 / 1.9;
        assert!((ess / expected - 1.0).abs() < 0.3, "{ess} vs {expected}");
    }

    #[test]
    fn quantiles_interpolate() {
        let x: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&x, 0.025), 2.5);
        assert_eq!(quantile(&x, 0.975), 97.5);
        assert_eq!(quantile(&[3.0], 0.5), 3.0);
    }
}
