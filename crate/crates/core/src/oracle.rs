//! Brute-force references for the closed-form design: the per-symbol
//! constrained optimum, Monte-Carlo estimates of the mean powers and an
//! exhaustive search over small cancellation-carrier subsets.
//!
//! Nothing here is fast. These paths exist to check the main solver.

use itertools::Itertools;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::occs::CapRule;
use crate::simlab::{qpsk_symbols, symbol_rng};
use crate::solver::design;
use crate::spectral::{check_grid_avoids, projection_matrix, CMatrix, FrequencyGrid, ProjectionMatrices, SystemGeometry};

/// Largest subset count the exhaustive search will enumerate.
pub const SUBSET_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    CcVector,
    MeanOob,
    MeanCcPower,
    Subset,
}

/// One oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: Quantity,
    pub oracle: f64,
    pub closed_form: f64,
    pub rel_err: f64,
}

impl OracleReport {
    pub fn new(quantity: Quantity, oracle: f64, closed_form: f64) -> Self {
        let rel_err = if closed_form == 0.0 {
            oracle.abs()
        } else {
            ((oracle - closed_form) / closed_form).abs()
        };
        Self { quantity, oracle, closed_form, rel_err }
    }
}

/// Exact minimizer of `‖P_CC c + P_DC d‖²` subject to `‖c‖² ≤ cap`, solved
/// independently for each data vector as in classic per-symbol designs.
pub struct PerSymbolOptimizer {
    p_dc: CMatrix,
    u_adj: CMatrix,
    v: CMatrix,
    s: Vec<f64>,
}

impl PerSymbolOptimizer {
    pub fn new(p_cc: &CMatrix, p_dc: &CMatrix) -> Result<Self> {
        if p_cc.nrows() != p_dc.nrows() || p_cc.ncols() == 0 {
            return Err(Error::Contract("per-symbol optimizer needs conformable, non-empty P_CC".into()));
        }
        let svd = p_cc.clone().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Err(Error::Numerical("SVD returned no singular vectors".into()));
        };
        let tol = svd.singular_values.max() * p_cc.nrows().max(p_cc.ncols()) as f64 * f64::EPSILON;
        let s = svd.singular_values.iter().map(|&s| if s <= tol { 0.0 } else { s }).collect();
        Ok(Self { p_dc: p_dc.clone(), u_adj: u.adjoint(), v: v_t.adjoint(), s })
    }

    pub fn solve(&self, d_dc: &[Complex64], cap: f64) -> Vec<Complex64> {
        let d = CMatrix::from_column_slice(d_dc.len(), 1, d_dc);
        let coeffs = &self.u_adj * (&self.p_dc * d);
        let weights: Vec<f64> = coeffs.iter().map(Complex64::norm_sqr).collect();
        let power = |theta: f64| -> f64 {
            self.s
                .iter()
                .zip(&weights)
                .filter(|(&s, _)| s > 0.0)
                .map(|(&s, &b)| b * s * s / (theta + s * s).powi(2))
                .sum()
        };
        let theta = if power(0.0) <= cap {
            0.0
        } else {
            // plain bisection: power is decreasing and power(hi) ≤ cap
            let mut lo = 0.0;
            let mut hi = (self.s.iter().zip(&weights).map(|(s, b)| b * s * s).sum::<f64>() / cap).sqrt();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if power(mid) > cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        let scaled = CMatrix::from_fn(self.s.len(), 1, |i, _| {
            let s = self.s[i];
            if s == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                coeffs[i] * (-s / (theta + s * s))
            }
        });
        (&self.v * scaled).iter().copied().collect()
    }
}

pub fn per_symbol_optimal_cc(p_cc: &CMatrix, p_dc: &CMatrix, d_dc: &[Complex64], power_cap: f64) -> Result<Vec<Complex64>> {
    if power_cap.is_nan() || power_cap <= 0.0 {
        return Err(Error::Contract(format!("power cap {power_cap} must be positive")));
    }
    if d_dc.len() != p_dc.ncols() {
        return Err(Error::Contract(format!("{} data symbols for {} columns", d_dc.len(), p_dc.ncols())));
    }
    Ok(PerSymbolOptimizer::new(p_cc, p_dc)?.solve(d_dc, power_cap))
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

fn estimate(values: impl Iterator<Item = f64>) -> Estimate {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Estimate { mean, std_err: (var / n as f64).sqrt(), trials: n }
}

/// `(1/γ) E‖(P_CC W + P_DC) d‖²` over random QPSK data.
pub fn monte_carlo_oob(w: &CMatrix, p_cc: &CMatrix, p_dc: &CMatrix, n_trials: usize, seed: u64) -> Result<Estimate> {
    if n_trials == 0 {
        return Err(Error::Contract("need at least one trial".into()));
    }
    let gamma = p_dc.nrows() as f64;
    let g = if p_cc.ncols() == 0 { p_dc.clone() } else { p_cc * w + p_dc };
    Ok(estimate((0..n_trials as u64).map(|t| {
        let d = qpsk_symbols(&mut symbol_rng(seed, t), p_dc.ncols());
        (&g * CMatrix::from_column_slice(d.len(), 1, &d)).norm_squared() / gamma
    })))
}

/// `E‖W d‖²` over random QPSK data.
pub fn monte_carlo_cc_power(w: &CMatrix, n_trials: usize, seed: u64) -> Result<Estimate> {
    if n_trials == 0 {
        return Err(Error::Contract("need at least one trial".into()));
    }
    Ok(estimate((0..n_trials as u64).map(|t| {
        let d = qpsk_symbols(&mut symbol_rng(seed, t), w.ncols());
        (w * CMatrix::from_column_slice(d.len(), 1, &d)).norm_squared()
    })))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub cc: Vec<i32>,
    pub p_oob: f64,
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Best set of `beta` cancellation carriers among `occupied`, by the
/// closed-form mean out-of-band power. Ties go to the lexicographically
/// smallest subset.
pub fn exhaustive_selection(
    geom: &SystemGeometry,
    occupied: &[i32],
    grid: &FrequencyGrid,
    beta: usize,
    cap_rule: CapRule,
) -> Result<SubsetResult> {
    let mut carriers = occupied.to_vec();
    carriers.sort_unstable();
    if beta >= carriers.len() {
        return Err(Error::Contract(format!("{beta} cancellation carriers leave no data among {}", carriers.len())));
    }
    let count = binomial(carriers.len() as u64, beta as u64);
    if count > SUBSET_BUDGET {
        return Err(Error::Contract(format!("{count} subsets exceed the budget of {SUBSET_BUDGET}")));
    }
    crate::spectral::CarrierAllocation::data_only(carriers.clone())?.check_range(geom)?;
    check_grid_avoids(grid, &carriers)?;
    let full = projection_matrix(geom, &carriers, grid);
    let budget = cap_rule.budget(beta.max(1))?;
    let mut best: Option<SubsetResult> = None;
    for cc_pos in (0..carriers.len()).combinations(beta) {
        let dc_pos: Vec<usize> = (0..carriers.len()).filter(|j| !cc_pos.contains(j)).collect();
        let p = ProjectionMatrices { p_dc: full.select_columns(&dc_pos), p_cc: full.select_columns(&cc_pos) };
        let p_oob = design(&p, budget)?.p_oob;
        if best.as_ref().is_none_or(|b| p_oob < b.p_oob) {
            best = Some(SubsetResult { cc: cc_pos.iter().map(|&j| carriers[j]).collect(), p_oob });
        }
    }
    best.ok_or_else(|| Error::Contract("no subsets enumerated".into()))
}
