//! Mean-power-constrained cancellation-carrier design.
//!
//! Minimizes the expected sampled out-of-band power `E‖P_CC W d + P_DC d‖²`
//! over the linear map `W` subject to `E‖W d‖² ≤ cap` for zero-mean,
//! unit-variance data symbols `d`. With `P_CC = U S Vᴴ` the solution is
//!
//! ```text
//! W = -V_δ diag(s_i / (θ + s_i²)) U_δᴴ P_DC
//! ```
//!
//! where the multiplier `θ ≥ 0` is the root of a scalar monotone equation in
//! the singular values and the diagonal of `A = Uᴴ P_DC P_DCᴴ U`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{CMatrix, ProjectionMatrices};

const ROOT_REL_TOL: f64 = 1e-9;
const ROOT_MAX_ITER: usize = 100;
const SVD_MAX_ITER: usize = 10_000;

/// Economy SVD of `P_CC`: `u` is γ×δ, `v` is β×δ and `s` holds the δ
/// singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdParts {
    pub u: CMatrix,
    pub v: CMatrix,
    pub s: Vec<f64>,
}

impl SvdParts {
    pub fn delta(&self) -> usize {
        self.s.len()
    }

    /// Singular values at or below this are treated as exact zeros.
    pub fn rank_tol(&self) -> f64 {
        let dim = self.u.nrows().max(self.v.nrows()) as f64;
        self.s.first().copied().unwrap_or(0.0) * dim * f64::EPSILON
    }

    pub fn is_zero_mode(&self, i: usize) -> bool {
        self.s[i] <= self.rank_tol()
    }
}

/// SVD of `P_CC` together with what the closed forms need from `P_DC`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub svd: SvdParts,
    /// `U_δᴴ P_DC`, δ×α.
    pub projected: CMatrix,
    /// `A_ii` for `i ≤ δ`.
    pub a_head: Vec<f64>,
    /// `Σ_{i>δ} A_ii`, from `‖P_DC‖²_F − Σ_{i≤δ} A_ii`.
    pub a_tail: f64,
    pub gamma: usize,
}

impl Decomposition {
    pub fn a_total(&self) -> f64 {
        self.a_head.iter().sum::<f64>() + self.a_tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBudget {
    cap: f64,
}

impl PowerBudget {
    pub fn new(cap: f64) -> Result<Self> {
        if cap > 0.0 && cap.is_finite() {
            Ok(Self { cap })
        } else {
            Err(Error::Contract(format!("power cap {cap} must be positive")))
        }
    }

    /// Unit mean power per cancellation carrier.
    pub fn per_carrier(beta: usize) -> Result<Self> {
        Self::new(beta as f64)
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    pub theta: f64,
    pub iterations: usize,
    /// Set when `P_CC` has no usable singular direction.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ShapingSolution {
    /// β×α map from data symbols to cancellation-carrier values.
    pub w: CMatrix,
    pub theta: f64,
    pub s: Vec<f64>,
    pub a_head: Vec<f64>,
    pub a_tail: f64,
    pub mean_cc_power: f64,
    pub p_oob: f64,
    pub p_oob_baseline: f64,
    pub degenerate: bool,
}

pub fn decompose(p_cc: &CMatrix, p_dc: &CMatrix) -> Result<Decomposition> {
    let (gamma, beta) = p_cc.shape();
    if gamma == 0 || beta == 0 {
        return Err(Error::Contract(format!("cannot decompose a {gamma}x{beta} matrix")));
    }
    if p_dc.nrows() != gamma {
        return Err(Error::Contract(format!(
            "P_DC has {} rows, P_CC has {gamma}",
            p_dc.nrows()
        )));
    }
    let svd = p_cc
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "SVD of {gamma}x{beta} P_CC did not converge (‖P_CC‖_F = {:.3e})",
                p_cc.norm()
            ))
        })?;
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Numerical("SVD returned no singular vectors".into()));
    };
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let projected = u.adjoint() * p_dc;
    let a_head: Vec<f64> = projected.row_iter().map(|row| row.norm_squared()).collect();
    // direct residual rather than ‖P_DC‖² − Σ a_head, which cancels badly
    // once the suppression is deep
    let a_tail = (p_dc - &u * &projected).norm_squared();
    Ok(Decomposition {
        svd: SvdParts { u, v: v_t.adjoint(), s },
        projected,
        a_head,
        a_tail,
        gamma,
    })
}

/// `Σ A_ii s_i² / (θ + s_i²)²`, the expected cancellation-carrier power at
/// multiplier `θ`. Zero modes are dropped.
pub fn cc_power_at(a_head: &[f64], svd: &SvdParts, theta: f64) -> f64 {
    (0..svd.delta())
        .filter(|&i| !svd.is_zero_mode(i))
        .map(|i| {
            let s2 = svd.s[i] * svd.s[i];
            a_head[i] * s2 / ((theta + s2) * (theta + s2))
        })
        .sum()
}

fn cc_power_slope(a_head: &[f64], svd: &SvdParts, theta: f64) -> f64 {
    (0..svd.delta())
        .filter(|&i| !svd.is_zero_mode(i))
        .map(|i| {
            let s2 = svd.s[i] * svd.s[i];
            -2.0 * a_head[i] * s2 / (theta + s2).powi(3)
        })
        .sum()
}

/// Finds the smallest `θ ≥ 0` meeting the mean power budget.
///
/// Newton steps are taken on `1/√f(θ)`, which is exactly linear for a single
/// mode and close to linear otherwise; a step leaving the current bracket
/// falls back to bisection.
pub fn solve_power_multiplier(dec: &Decomposition, budget: PowerBudget) -> Result<Multiplier> {
    let svd = &dec.svd;
    let a = &dec.a_head;
    let cap = budget.cap();
    let degenerate = (0..svd.delta()).all(|i| svd.is_zero_mode(i));
    if degenerate || cc_power_at(a, svd, 0.0) <= cap {
        return Ok(Multiplier { theta: 0.0, iterations: 0, degenerate });
    }

    let weight: f64 = (0..svd.delta())
        .filter(|&i| !svd.is_zero_mode(i))
        .map(|i| a[i] * svd.s[i] * svd.s[i])
        .sum();
    let mut lo = 0.0;
    let mut hi = (weight / cap).sqrt();
    let target = cap.sqrt().recip();
    let mut theta = 0.0;
    for iter in 1..=ROOT_MAX_ITER {
        let f = cc_power_at(a, svd, theta);
        if (f - cap).abs() <= ROOT_REL_TOL * cap {
            return Ok(Multiplier { theta, iterations: iter - 1, degenerate });
        }
        if f > cap {
            lo = theta;
        } else {
            hi = theta;
        }
        let h = f.sqrt().recip() - target;
        let dh = -0.5 * f.powf(-1.5) * cc_power_slope(a, svd, theta);
        let newton = theta - h / dh;
        theta = if dh > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(Multiplier { theta, iterations: iter, degenerate });
        }
    }
    let f = cc_power_at(a, svd, theta);
    if (f - cap).abs() <= ROOT_REL_TOL * cap {
        Ok(Multiplier { theta, iterations: ROOT_MAX_ITER, degenerate })
    } else {
        Err(Error::Numerical(format!(
            "multiplier search stalled at θ={theta:e}: power {f:e} vs cap {cap:e}"
        )))
    }
}

/// `W = -V_δ diag(s_i / (θ + s_i²)) U_δᴴ P_DC`; zero modes contribute nothing.
pub fn shaping_matrix(dec: &Decomposition, theta: f64) -> CMatrix {
    let svd = &dec.svd;
    let mut scaled = dec.projected.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        let gain = if svd.is_zero_mode(i) {
            0.0
        } else {
            -svd.s[i] / (theta + svd.s[i] * svd.s[i])
        };
        row *= Complex64::new(gain, 0.0);
    }
    &svd.v * scaled
}

/// Expected `‖W d‖²` for unit-variance data, i.e. `tr(WᴴW)`.
pub fn mean_cc_power(w: &CMatrix) -> f64 {
    w.norm_squared()
}

/// Closed-form mean out-of-band power per grid point and the same quantity
/// without cancellation carriers.
pub fn mean_oob_power(dec: &Decomposition, theta: f64) -> (f64, f64) {
    let svd = &dec.svd;
    let gamma = dec.gamma as f64;
    let head: f64 = (0..svd.delta())
        .map(|i| {
            if svd.is_zero_mode(i) {
                dec.a_head[i]
            } else {
                let r = theta / (theta + svd.s[i] * svd.s[i]);
                dec.a_head[i] * r * r
            }
        })
        .sum();
    ((dec.a_tail + head) / gamma, dec.a_total() / gamma)
}

/// `G = P_CC W + P_DC`: data symbols to sampled spectrum after cancellation.
pub fn residual_projection(p_cc: &CMatrix, w: &CMatrix, p_dc: &CMatrix) -> CMatrix {
    if p_cc.ncols() == 0 {
        return p_dc.clone();
    }
    p_cc * w + p_dc
}

/// Full design for one allocation. With no cancellation carriers the result
/// is the empty map and the baseline out-of-band power.
pub fn design(p: &ProjectionMatrices, budget: PowerBudget) -> Result<ShapingSolution> {
    let gamma = p.p_dc.nrows();
    let alpha = p.p_dc.ncols();
    let beta = p.p_cc.ncols();
    if beta == 0 {
        let baseline = p.p_dc.norm_squared() / gamma as f64;
        return Ok(ShapingSolution {
            w: DMatrix::zeros(0, alpha),
            theta: 0.0,
            s: Vec::new(),
            a_head: Vec::new(),
            a_tail: p.p_dc.norm_squared(),
            mean_cc_power: 0.0,
            p_oob: baseline,
            p_oob_baseline: baseline,
            degenerate: false,
        });
    }
    let dec = decompose(&p.p_cc, &p.p_dc)?;
    let mult = solve_power_multiplier(&dec, budget)?;
    let w = shaping_matrix(&dec, mult.theta);
    let (p_oob, p_oob_baseline) = mean_oob_power(&dec, mult.theta);
    Ok(ShapingSolution {
        mean_cc_power: mean_cc_power(&w),
        w,
        theta: mult.theta,
        s: dec.svd.s,
        a_head: dec.a_head,
        a_tail: dec.a_tail,
        p_oob,
        p_oob_baseline,
        degenerate: mult.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn single_mode(a: f64, s: f64) -> Decomposition {
        Decomposition {
            svd: SvdParts {
                u: CMatrix::identity(1, 1),
                v: CMatrix::identity(1, 1),
                s: vec![s],
            },
            projected: CMatrix::from_element(1, 1, Complex64::new(a.sqrt(), 0.0)),
            a_head: vec![a],
            a_tail: 0.0,
            gamma: 1,
        }
    }

    #[test]
    fn scaled_identity_decomposition() {
        let p_cc = CMatrix::identity(2, 2) * Complex64::new(2.0, 0.0);
        let p_dc = CMatrix::from_row_slice(
            2,
            1,
            &[Complex64::new(1.0, 1.0), Complex64::new(0.5, -2.0)],
        );
        let dec = decompose(&p_cc, &p_dc).unwrap();
        assert_relative_eq!(dec.svd.s[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(dec.svd.s[1], 2.0, epsilon = 1e-14);
        let uh_pdc = dec.svd.u.adjoint() * &p_dc;
        for i in 0..2 {
            assert_relative_eq!(dec.a_head[i], uh_pdc.row(i).norm_squared(), epsilon = 1e-12);
        }
        assert_relative_eq!(dec.a_total(), p_dc.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn single_mode_multiplier_closed_form() {
        // 4 / (θ + 1)² = 1  ⇒  θ = 1
        let dec = single_mode(4.0, 1.0);
        let m = solve_power_multiplier(&dec, PowerBudget::new(1.0).unwrap()).unwrap();
        assert_relative_eq!(m.theta, 1.0, epsilon = 1e-9);
        assert!(m.iterations <= 2);
    }

    #[test]
    fn inactive_constraint_gives_zero_multiplier() {
        let dec = single_mode(0.5, 1.0);
        let m = solve_power_multiplier(&dec, PowerBudget::new(1.0).unwrap()).unwrap();
        assert_eq!(m.theta, 0.0);
        assert!(!m.degenerate);
    }

    #[test]
    fn all_zero_singular_values_flagged() {
        let p_cc = CMatrix::zeros(4, 2);
        let p_dc = CMatrix::from_element(4, 3, Complex64::new(1.0, 0.0));
        let dec = decompose(&p_cc, &p_dc).unwrap();
        let m = solve_power_multiplier(&dec, PowerBudget::new(2.0).unwrap()).unwrap();
        assert_eq!(m.theta, 0.0);
        assert!(m.degenerate);
        let w = shaping_matrix(&dec, m.theta);
        assert_eq!(w.norm(), 0.0);
        let (p_oob, base) = mean_oob_power(&dec, 0.0);
        assert_relative_eq!(p_oob, base, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_cc_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col = random_matrix(&mut rng, 8, 1);
        let p_cc = CMatrix::from_columns(&[col.column(0), col.column(0)]);
        let p_dc = random_matrix(&mut rng, 8, 3);
        let dec = decompose(&p_cc, &p_dc).unwrap();
        assert!(dec.svd.is_zero_mode(1));
        for budget in [1e-3, 1e6] {
            let m = solve_power_multiplier(&dec, PowerBudget::new(budget).unwrap()).unwrap();
            let w = shaping_matrix(&dec, m.theta);
            assert!(w.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
            let g = residual_projection(&p_cc, &w, &p_dc);
            let (p_oob, _) = mean_oob_power(&dec, m.theta);
            assert_relative_eq!(g.norm_squared() / 8.0, p_oob, max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_data_projection_gives_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p_cc = random_matrix(&mut rng, 6, 2);
        let p_dc = CMatrix::zeros(6, 3);
        let dec = decompose(&p_cc, &p_dc).unwrap();
        let m = solve_power_multiplier(&dec, PowerBudget::new(2.0).unwrap()).unwrap();
        assert_eq!(shaping_matrix(&dec, m.theta).norm(), 0.0);
    }

    #[test]
    fn unconstrained_map_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p_cc = random_matrix(&mut rng, 6, 2);
            let p_dc = random_matrix(&mut rng, 6, 3);
            let dec = decompose(&p_cc, &p_dc).unwrap();
            let w = shaping_matrix(&dec, 0.0);
            // c = -(P_CCᴴ P_CC)⁻¹ P_CCᴴ P_DC d, independent of the SVD route
            let gram = p_cc.adjoint() * &p_cc;
            let oracle = -gram.try_inverse().unwrap() * p_cc.adjoint() * &p_dc;
            let d = random_matrix(&mut rng, 3, 1);
            let got = &w * &d;
            let want = &oracle * &d;
            assert!((got - &want).norm() <= 1e-9 * want.norm());
        }
    }

    #[test]
    fn large_multiplier_shrinks_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p_cc = random_matrix(&mut rng, 10, 3);
        let p_dc = random_matrix(&mut rng, 10, 4);
        let dec = decompose(&p_cc, &p_dc).unwrap();
        let smax2 = dec.svd.s[0] * dec.svd.s[0];
        let mut last = f64::INFINITY;
        for exp in 0..=12 {
            let w = shaping_matrix(&dec, smax2 * 10f64.powi(exp));
            let norm = w.norm();
            assert!(norm < last);
            last = norm;
        }
        assert!(last < 1e-11);
        let (p_oob, base) = mean_oob_power(&dec, 1e12 * smax2);
        assert_relative_eq!(p_oob, base, max_relative = 1e-10);
    }

    #[test]
    fn full_span_cancels_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p_cc = random_matrix(&mut rng, 3, 5);
        let p_dc = random_matrix(&mut rng, 3, 2);
        let dec = decompose(&p_cc, &p_dc).unwrap();
        assert_eq!(dec.svd.delta(), 3);
        let (p_oob, _) = mean_oob_power(&dec, 0.0);
        assert!(p_oob < 1e-12 * dec.a_total());
        let w = shaping_matrix(&dec, 0.0);
        assert!(residual_projection(&p_cc, &w, &p_dc).norm() < 1e-10 * p_dc.norm());
    }

    #[test]
    fn residual_orthogonal_to_cc_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p_cc = random_matrix(&mut rng, 9, 3);
        let p_dc = random_matrix(&mut rng, 9, 4);
        let dec = decompose(&p_cc, &p_dc).unwrap();
        let w = shaping_matrix(&dec, 0.0);
        let g = residual_projection(&p_cc, &w, &p_dc);
        assert!((p_cc.adjoint() * &g).norm() <= 1e-9 * p_cc.norm() * g.norm());
        let g0 = residual_projection(&p_cc, &CMatrix::zeros(3, 4), &p_dc);
        assert_eq!(g0, p_dc);
    }

    #[test]
    fn mean_cc_power_is_frobenius() {
        assert_eq!(mean_cc_power(&CMatrix::zeros(2, 3)), 0.0);
        assert_eq!(mean_cc_power(&CMatrix::identity(3, 3)), 3.0);
    }

    #[test]
    fn design_without_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ProjectionMatrices {
            p_dc: random_matrix(&mut rng, 7, 3),
            p_cc: CMatrix::zeros(7, 0),
        };
        let sol = design(&p, PowerBudget::new(1.0).unwrap()).unwrap();
        assert_eq!(sol.w.shape(), (0, 3));
        assert_relative_eq!(sol.p_oob, p.p_dc.norm_squared() / 7.0, epsilon = 1e-12);
        assert_eq!(sol.p_oob, sol.p_oob_baseline);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(decompose(&CMatrix::zeros(3, 2), &CMatrix::zeros(4, 2)).is_err());
        assert!(decompose(&CMatrix::zeros(3, 0), &CMatrix::zeros(3, 2)).is_err());
    }
}
