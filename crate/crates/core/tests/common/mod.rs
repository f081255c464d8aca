#![allow(dead_code)]

use coma_core::nn::ParameterSet;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central difference of `loss` with respect to `values[index]`.
pub fn numeric_grad<F>(values: &mut [f64], index: usize, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = values[index];
    values[index] = orig + FD_STEP;
    let up = loss(values);
    values[index] = orig - FD_STEP;
    let down = loss(values);
    values[index] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Checks `analytic` against central differences on `indices` of `params`.
/// Returns the worst relative error.
pub fn check_params<F>(params: &ParameterSet, analytic: &[f64], indices: &[usize], mut loss: F) -> f64
where
    F: FnMut(&ParameterSet) -> f64,
{
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe.values_mut()[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Up to `count` distinct indices below `len`, spread evenly.
pub fn sample_indices(len: usize, count: usize, offset: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|k| (k * len / count + offset) % len).collect()
}
pub mod gradcheck;
