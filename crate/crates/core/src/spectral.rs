//! Analytic subcarrier spectrum of a cyclic-prefixed OFDM symbol and the
//! projection matrices that map carrier symbols onto sampled spectrum values.
//!
//! A subcarrier `k` observed at normalized frequency `v` (in subcarrier
//! spacings) contributes
//!
//! ```text
//! S(v, k) = Σ_{n=-N_CP}^{N-1} exp(j2π n (k - v) / N)
//! ```
//!
//! which is evaluated here with the closed-form geometric sum.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Transform order plus guard lengths, all in nominal (non-oversampled) samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemGeometry {
    n: usize,
    n_cp: usize,
    n_cs: usize,
}

impl SystemGeometry {
    pub fn new(n: usize, n_cp: usize, n_cs: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Geometry(format!("transform order {n} is not a power of two >= 2")));
        }
        if n_cp >= n {
            return Err(Error::Geometry(format!("cyclic prefix {n_cp} must be shorter than {n}")));
        }
        if n_cs >= n {
            return Err(Error::Geometry(format!("cyclic suffix {n_cs} must be shorter than {n}")));
        }
        Ok(Self { n, n_cp, n_cs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_cp(&self) -> usize {
        self.n_cp
    }

    pub fn n_cs(&self) -> usize {
        self.n_cs
    }

    /// Samples in one rectangular symbol, `N + N_CP`.
    pub fn symbol_len(&self) -> usize {
        self.n + self.n_cp
    }

    pub fn min_index(&self) -> i32 {
        -(self.n as i32 / 2)
    }

    pub fn max_index(&self) -> i32 {
        self.n as i32 / 2 - 1
    }

    pub fn contains(&self, k: i32) -> bool {
        (self.min_index()..=self.max_index()).contains(&k)
    }

    /// Same geometry with another cyclic-prefix length.
    pub fn with_cp(&self, n_cp: usize) -> Result<Self> {
        Self::new(self.n, n_cp, self.n_cs)
    }

    pub fn with_cs(&self, n_cs: usize) -> Result<Self> {
        Self::new(self.n, self.n_cp, n_cs)
    }
}

/// Disjoint, ascending sets of data-carrier and cancellation-carrier indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarrierAllocation {
    dc: Vec<i32>,
    cc: Vec<i32>,
}

impl CarrierAllocation {
    pub fn new(mut dc: Vec<i32>, mut cc: Vec<i32>) -> Result<Self> {
        dc.sort_unstable();
        cc.sort_unstable();
        if dc.is_empty() {
            return Err(Error::Allocation("at least one data carrier is required".into()));
        }
        if dc.windows(2).any(|w| w[0] == w[1]) || cc.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Allocation("duplicate carrier index".into()));
        }
        if let Some(k) = cc.iter().find(|k| dc.binary_search(k).is_ok()) {
            return Err(Error::Allocation(format!("carrier {k} is both data and cancellation")));
        }
        Ok(Self { dc, cc })
    }

    /// Every carrier carries data.
    pub fn data_only(dc: Vec<i32>) -> Result<Self> {
        Self::new(dc, Vec::new())
    }

    pub fn dc(&self) -> &[i32] {
        &self.dc
    }

    pub fn cc(&self) -> &[i32] {
        &self.cc
    }

    pub fn alpha(&self) -> usize {
        self.dc.len()
    }

    pub fn beta(&self) -> usize {
        self.cc.len()
    }

    pub fn check_range(&self, geom: &SystemGeometry) -> Result<()> {
        if self.alpha() + self.beta() > geom.n() {
            return Err(Error::Allocation(format!(
                "{} carriers do not fit a transform of order {}",
                self.alpha() + self.beta(),
                geom.n()
            )));
        }
        match self.dc.iter().chain(&self.cc).find(|&&k| !geom.contains(k)) {
            Some(k) => Err(Error::Allocation(format!(
                "carrier {k} outside [{}, {}]",
                geom.min_index(),
                geom.max_index()
            ))),
            None => Ok(()),
        }
    }
}

/// Normalized frequencies at which out-of-band power is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Grid("grid has no points".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Grid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("grid points are not strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionMatrices {
    pub p_dc: CMatrix,
    pub p_cc: CMatrix,
}

/// Spectrum of subcarrier `k` at normalized frequency `v`.
pub fn subcarrier_spectrum(v: f64, k: i32, geom: &SystemGeometry) -> Complex64 {
    let n = geom.n() as f64;
    let len = geom.symbol_len() as f64;
    let offset = f64::from(k) - v;
    if (offset / n).fract() == 0.0 {
        // every summand is exp(j2π·integer)
        return Complex64::new(len, 0.0);
    }
    let x = 2.0 * PI * offset / n;
    let denom = (0.5 * x).sin();
    if denom == 0.0 {
        return Complex64::new(len, 0.0);
    }
    // Σ_{n=a}^{b} e^{jxn} = e^{jx(a+b)/2} sin(x·len/2) / sin(x/2)
    let center = 0.5 * (n - 1.0 - geom.n_cp() as f64);
    let magnitude = (0.5 * x * len).sin() / denom;
    Complex64::from_polar(magnitude, x * center)
}

/// Spectrum sampling matrix for one set of carriers: rows follow the grid,
/// columns follow `carriers`.
pub fn projection_matrix(geom: &SystemGeometry, carriers: &[i32], grid: &FrequencyGrid) -> CMatrix {
    let rows = grid.len();
    let cols = carriers.len();
    let column_major: Vec<Complex64> = carriers
        .par_iter()
        .flat_map_iter(|&k| grid.points().iter().map(move |&v| subcarrier_spectrum(v, k, geom)))
        .collect();
    CMatrix::from_vec(rows, cols, column_major)
}

pub fn build_projection_matrices(
    geom: &SystemGeometry,
    alloc: &CarrierAllocation,
    grid: &FrequencyGrid,
) -> Result<ProjectionMatrices> {
    alloc.check_range(geom)?;
    check_grid_avoids(grid, alloc.dc().iter().chain(alloc.cc()))?;
    Ok(ProjectionMatrices {
        p_dc: projection_matrix(geom, alloc.dc(), grid),
        p_cc: projection_matrix(geom, alloc.cc(), grid),
    })
}

/// Rejects grids that sample exactly on an occupied carrier.
pub fn check_grid_avoids<'a>(grid: &FrequencyGrid, carriers: impl IntoIterator<Item = &'a i32>) -> Result<()> {
    for &k in carriers {
        let kf = f64::from(k);
        if grid.points().contains(&kf) {
            return Err(Error::Grid(format!("grid point {kf} coincides with occupied carrier {k}")));
        }
    }
    Ok(())
}

/// Inclusive grid over each `(lo, hi)` region at spacing `step`.
pub fn make_sampling_grid(regions: &[(f64, f64)], step: f64) -> Result<FrequencyGrid> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Grid(format!("step {step} must be positive")));
    }
    let mut points = Vec::new();
    for &(lo, hi) in regions {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::Grid(format!("bad region <{lo}; {hi}>")));
        }
        let steps = (hi - lo) / step;
        let count = steps.round();
        if (steps - count).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Grid(format!(
                "region <{lo}; {hi}> is not a whole number of {step} steps"
            )));
        }
        let count = count as usize;
        if let Some(&last) = points.last() {
            if lo <= last {
                return Err(Error::Grid(format!("region <{lo}; {hi}> overlaps or precedes the previous one")));
            }
        }
        points.extend((0..=count).map(|i| if i == count { hi } else { lo + i as f64 * step }));
    }
    FrequencyGrid::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn direct_sum(v: f64, k: i32, geom: &SystemGeometry) -> Complex64 {
        let n = geom.n() as f64;
        (-(geom.n_cp() as i64)..geom.n() as i64)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 * (f64::from(k) - v) / n))
            .sum()
    }

    #[test]
    fn spectrum_peak_at_own_frequency() {
        let geom = SystemGeometry::new(256, 16, 0).unwrap();
        assert_eq!(subcarrier_spectrum(5.0, 5, &geom), Complex64::new(272.0, 0.0));
    }

    #[test]
    fn orthogonal_without_prefix() {
        let geom = SystemGeometry::new(256, 0, 0).unwrap();
        assert!(subcarrier_spectrum(0.0, 1, &geom).norm() < 1e-12);
        for k in -128..128 {
            if k != 3 {
                assert!(subcarrier_spectrum(3.0, k, &geom).norm() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn half_bin_small_case() {
        let geom = SystemGeometry::new(4, 1, 0).unwrap();
        let s = subcarrier_spectrum(0.5, 0, &geom);
        let oracle = direct_sum(0.5, 0, &geom);
        assert_relative_eq!(s.re, oracle.re, epsilon = 1e-12);
        assert_relative_eq!(s.im, oracle.im, epsilon = 1e-12);
        assert_relative_eq!(s.re, 1.0 + 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s.im, -(1.0 + 0.5f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn aliased_peak_uses_exact_branch() {
        let geom = SystemGeometry::new(16, 4, 0).unwrap();
        assert_eq!(subcarrier_spectrum(-13.0, 3, &geom), Complex64::new(20.0, 0.0));
    }

    #[test]
    fn closed_form_matches_summation() {
        let geom = SystemGeometry::new(64, 5, 0).unwrap();
        for k in [-32, -7, 0, 1, 31] {
            for i in 0..200 {
                let v = -40.0 + i as f64 * 0.4137;
                let a = subcarrier_spectrum(v, k, &geom);
                let b = direct_sum(v, k, &geom);
                assert!((a - b).norm() <= 1e-10 * b.norm().max(1.0), "v={v} k={k}");
            }
        }
    }

    #[test]
    fn paper_grid_has_485_points() {
        let grid = make_sampling_grid(&[(-125.75, -81.0), (17.0, 48.0), (81.0, 125.75)], 0.25).unwrap();
        assert_eq!(grid.len(), 485);
        assert_eq!(grid.points()[0], -125.75);
        assert_eq!(*grid.points().last().unwrap(), 125.75);
    }

    #[test]
    fn small_grids() {
        let grid = make_sampling_grid(&[(0.0, 1.0)], 0.5).unwrap();
        assert_eq!(grid.points(), &[0.0, 0.5, 1.0]);
        let grid = make_sampling_grid(&[(2.0, 2.0)], 1.0).unwrap();
        assert_eq!(grid.points(), &[2.0]);
    }

    #[test]
    fn grid_rejects_fractional_region() {
        assert!(matches!(make_sampling_grid(&[(0.0, 1.0)], 0.3), Err(Error::Grid(_))));
        assert!(matches!(make_sampling_grid(&[(0.0, 1.0)], 0.0), Err(Error::Grid(_))));
        assert!(matches!(
            make_sampling_grid(&[(0.0, 2.0), (1.0, 3.0)], 1.0),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn projection_matches_scalar_op() {
        let geom = SystemGeometry::new(32, 3, 0).unwrap();
        let alloc = CarrierAllocation::new(vec![-4, -3, 2, 5], vec![-5, 6]).unwrap();
        let grid = make_sampling_grid(&[(-12.0, -8.0), (9.0, 12.5)], 0.5).unwrap();
        let p = build_projection_matrices(&geom, &alloc, &grid).unwrap();
        assert_eq!(p.p_dc.shape(), (grid.len(), 4));
        assert_eq!(p.p_cc.shape(), (grid.len(), 2));
        for (i, &v) in grid.points().iter().enumerate() {
            for (j, &k) in alloc.dc().iter().enumerate() {
                assert_eq!(p.p_dc[(i, j)], subcarrier_spectrum(v, k, &geom));
            }
            for (l, &k) in alloc.cc().iter().enumerate() {
                assert_eq!(p.p_cc[(i, l)], subcarrier_spectrum(v, k, &geom));
            }
        }
    }

    #[test]
    fn empty_cc_set_gives_zero_columns() {
        let geom = SystemGeometry::new(16, 1, 0).unwrap();
        let alloc = CarrierAllocation::data_only(vec![1, 2, 3]).unwrap();
        let grid = FrequencyGrid::new(vec![6.5]).unwrap();
        let p = build_projection_matrices(&geom, &alloc, &grid).unwrap();
        assert_eq!(p.p_cc.shape(), (1, 0));
        assert_eq!(p.p_dc.shape(), (1, 3));
    }

    #[test]
    fn rejects_bad_allocations() {
        assert!(CarrierAllocation::new(vec![1, 2], vec![2]).is_err());
        assert!(CarrierAllocation::new(vec![], vec![2]).is_err());
        let geom = SystemGeometry::new(16, 1, 0).unwrap();
        let alloc = CarrierAllocation::new(vec![1, 8], vec![]).unwrap();
        let grid = FrequencyGrid::new(vec![0.5]).unwrap();
        assert!(matches!(build_projection_matrices(&geom, &alloc, &grid), Err(Error::Allocation(_))));
        let alloc = CarrierAllocation::new(vec![1, 2], vec![]).unwrap();
        let grid = FrequencyGrid::new(vec![2.0]).unwrap();
        assert!(matches!(build_projection_matrices(&geom, &alloc, &grid), Err(Error::Grid(_))));
    }

    #[test]
    fn geometry_validation() {
        assert!(SystemGeometry::new(100, 0, 0).is_err());
        assert!(SystemGeometry::new(16, 16, 0).is_err());
        assert!(SystemGeometry::new(16, 2, 16).is_err());
        let g = SystemGeometry::new(256, 16, 10).unwrap();
        assert_eq!((g.min_index(), g.max_index()), (-128, 127));
    }
}
