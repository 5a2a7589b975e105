//! Posterior maps of residence time, movement probability, and motility.
//!
//! Each cell's statistic is taken over the per-draw values of the derived
//! quantity, never by plugging a posterior summary of `theta` into the
//! nonlinear map. Residence time is in hours per cell of area `cellsize^2`
//! (hours per hectare when the cellsize is 100 m).

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::{quantile_sorted, summarize, ChainSummary};
use crate::error::{Error, Result};
use crate::hmc::Chain;
use crate::raster::{CovariateStack, Raster};
use crate::selection::{motility, psi, residence_time, MotilityContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    ResidenceTime,
    MovementProbability,
    Motility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Q025,
    Q975,
}

pub const DEFAULT_THIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRequest {
    pub quantity: Quantity,
    pub statistic: Statistic,
    pub dt: f64,
    pub thin: usize,
}

impl FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "residence_time" => Ok(Quantity::ResidenceTime),
            "movement_probability" => Ok(Quantity::MovementProbability),
            "motility" => Ok(Quantity::Motility),
            other => Err(format!(
                "unknown quantity '{other}' (expected residence_time|movement_probability|motility)"
            )),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::ResidenceTime => "residence_time",
            Quantity::MovementProbability => "movement_probability",
            Quantity::Motility => "motility",
        })
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "mean" => Ok(Statistic::Mean),
            "q025" => Ok(Statistic::Q025),
            "q975" => Ok(Statistic::Q975),
            other => Err(format!("unknown statistic '{other}' (expected mean|q025|q975)")),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Mean => "mean",
            Statistic::Q025 => "q025",
            Statistic::Q975 => "q975",
        })
    }
}

/// Value of the requested quantity at covariates `w` under one draw.
pub fn quantity_at(quantity: Quantity, w: &[f64], theta: &[f64], ctx: MotilityContext) -> f64 {
    match quantity {
        Quantity::ResidenceTime => residence_time(w, theta, ctx.dt),
        Quantity::MovementProbability => psi(w, theta),
        Quantity::Motility => motility(w, theta, ctx),
    }
}

pub fn posterior_map(chain: &Chain, stack: &CovariateStack, req: &MapRequest) -> Result<Raster> {
    if chain.n_draws() == 0 {
        return Err(Error::Dimension("chain has no draws".into()));
    }
    if chain.p != stack.p() {
        return Err(Error::Dimension(format!(
            "chain has {} coefficients but the covariate stack has {}",
            chain.p,
            stack.p()
        )));
    }
    if req.thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    let h = *stack.header();
    let ctx = MotilityContext::new(h.cellsize, req.dt)?;
    let draws: Vec<&[f64]> = (0..chain.n_draws()).step_by(req.thin).map(|k| chain.draw(k)).collect();
    let mut values = Vec::with_capacity(h.nrows * h.ncols);
    let mut per_draw = Vec::with_capacity(draws.len());
    for row in 0..h.nrows {
        for col in 0..h.ncols {
            let Some(w) = stack.cell_covariates(row, col) else {
                values.push(h.nodata);
                continue;
            };
            per_draw.clear();
            per_draw.extend(draws.iter().map(|theta| quantity_at(req.quantity, &w, theta, ctx)));
            let v = match req.statistic {
                Statistic::Mean => per_draw.iter().sum::<f64>() / per_draw.len() as f64,
                Statistic::Q025 | Statistic::Q975 => {
                    per_draw.sort_by(f64::total_cmp);
                    let q = if req.statistic == Statistic::Q025 { 0.025 } else { 0.975 };
                    quantile_sorted(&per_draw, q)
                }
            };
            values.push(v);
        }
    }
    Raster::new(h, values)
}

/// Per-coefficient posterior summary over the full chain.
pub fn coefficient_report(chain: &Chain, names: &[String]) -> Result<ChainSummary> {
    if names.len() != chain.p {
        return Err(Error::Dimension(format!(
            "{} names for {} coefficients",
            names.len(),
            chain.p
        )));
    }
    if chain.n_draws() == 0 {
        return Err(Error::Dimension("chain has no draws".into()));
    }
    Ok(summarize(chain, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterHeader;

    fn stack() -> CovariateStack {
        let h = RasterHeader::new(4, 3, 0.0, 0.0, 100.0, -9999.0).unwrap();
        let mut vals: Vec<f64> = (0..12).map(|k| (k as f64 - 6.0) / 3.0).collect();
        vals[5] = -9999.0;
        let r = Raster::new(h, vals).unwrap();
        CovariateStack::new(vec![("a".into(), r)], true).unwrap()
    }

    fn chain(rows: &[[f64; 2]]) -> Chain {
        let draws = rows.iter().flatten().copied().collect();
        Chain::from_draws(2, draws, vec![0.0; rows.len()], vec![true; rows.len()], 0).unwrap()
    }

    #[test]
    fn zero_theta_residence_time_is_constant() {
        let c = chain(&[[0.0, 0.0]; 5]);
        let req = MapRequest {
            quantity: Quantity::ResidenceTime,
            statistic: Statistic::Mean,
            dt: 3.0,
            thin: 1,
        };
        let map = posterior_map(&c, &stack(), &req).unwrap();
        for (k, v) in map.values().iter().enumerate() {
            if k == 5 {
                assert_eq!(*v, -9999.0);
            } else {
                assert_eq!(*v, 24.0);
            }
        }
    }

    #[test]
    fn mean_map_averages_over_draws() {
        let rows = [[0.1, 1.0], [-0.4, 2.0], [0.3, -0.5], [1.0, 0.0]];
        let c = chain(&rows);
        let s = stack();
        let req = MapRequest {
            quantity: Quantity::ResidenceTime,
            statistic: Statistic::Mean,
            dt: 2.0,
            thin: 1,
        };
        let map = posterior_map(&c, &s, &req).unwrap();
        let w = s.cell_covariates(2, 3).unwrap();
        let direct: f64 = rows
            .iter()
            .map(|t| 4.0 * 2.0 * (1.0 + (-(w[0] * t[0] + w[1] * t[1])).exp()))
            .sum::<f64>()
            / 4.0;
        assert!((map.value_at(2, 3).unwrap() - direct).abs() < 1e-10);
        // plugging in the mean theta gives a different answer
        let plug = residence_time(&w, &[0.25, 0.625], 2.0);
        assert!((plug - direct).abs() > 1e-3);
    }

    #[test]
    fn probability_map_in_unit_interval_and_quantiles_ordered() {
        let rows: Vec<[f64; 2]> = (0..50).map(|k| [k as f64 / 25.0 - 1.0, 0.5 - k as f64 / 50.0]).collect();
        let c = chain(&rows);
        let s = stack();
        let mk = |statistic| MapRequest {
            quantity: Quantity::MovementProbability,
            statistic,
            dt: 3.0,
            thin: 2,
        };
        let lo = posterior_map(&c, &s, &mk(Statistic::Q025)).unwrap();
        let hi = posterior_map(&c, &s, &mk(Statistic::Q975)).unwrap();
        let mean = posterior_map(&c, &s, &mk(Statistic::Mean)).unwrap();
        for k in (0..12).filter(|k| *k != 5) {
            let (l, m, h) = (lo.values()[k], mean.values()[k], hi.values()[k]);
            assert!(0.0 < l && l <= m && m <= h && h < 1.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let c = Chain::from_draws(3, vec![0.0; 3], vec![0.0], vec![true], 0).unwrap();
        let req = MapRequest {
            quantity: Quantity::Motility,
            statistic: Statistic::Mean,
            dt: 1.0,
            thin: 1,
        };
        assert!(matches!(posterior_map(&c, &stack(), &req), Err(Error::Dimension(_))));
        assert!(coefficient_report(&c, &["a".into()]).is_err());
    }

    #[test]
    fn report_of_constant_chain() {
        let c = chain(&[[0.7, -0.2]; 10]);
        let r = coefficient_report(&c, &["intercept".into(), "a".into()]).unwrap();
        assert_eq!(r.coefficients[0].mean, 0.7);
        assert_eq!(r.coefficients[0].sd, 0.0);
        assert_eq!(r.coefficients[0].p_positive, 1.0);
        assert_eq!(r.coefficients[1].p_positive, 0.0);
    }

    #[test]
    fn names_parse() {
        assert_eq!("motility".parse::<Quantity>().unwrap(), Quantity::Motility);
        assert_eq!("q975".parse::<Statistic>().unwrap(), Statistic::Q975);
        assert!("median".parse::<Statistic>().is_err());
    }
}
