#![allow(dead_code)]

use ccshape::occs::OccupiedSet;
use ccshape::spectral::{make_sampling_grid, FrequencyGrid, SystemGeometry};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

pub fn notch_grid() -> FrequencyGrid {
    make_sampling_grid(&[(-125.75, -81.0), (17.0, 48.0), (81.0, 125.75)], 0.25).unwrap()
}

/// {-80..16} without the DC carrier, and {49..80}.
pub fn notch_occupied() -> OccupiedSet {
    let low: Vec<i32> = (-80..=16).filter(|&k| k != 0).collect();
    let high: Vec<i32> = (49..=80).collect();
    OccupiedSet::new(vec![low, high]).unwrap()
}

pub fn geometry(n_cp: usize) -> SystemGeometry {
    SystemGeometry::new(256, n_cp, 0).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}
