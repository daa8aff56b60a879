//! Shared fixtures for the benchmarks.

use taumfg::{Coupling, Grid, GridFunction, ModelSpec, Potential};

/// One-dimensional model with `U = 0.5 cos(2 pi x)` and log coupling.
pub fn log_model(n: usize, tau: f64) -> ModelSpec {
    ModelSpec::new(Grid::new(1, n).expect("grid"), tau, Potential::cosine(0.5), Coupling::Log).expect("model")
}

/// Two-dimensional counterpart of [`log_model`].
pub fn planar_model(n: usize, tau: f64) -> ModelSpec {
    ModelSpec::new(Grid::new(2, n).expect("grid"), tau, Potential::cosine(0.4), Coupling::Log).expect("model")
}

/// A smooth test function with a few active modes.
pub fn test_function(model: &ModelSpec) -> GridFunction {
    let tp = 2.0 * std::f64::consts::PI;
    GridFunction::from_fn(model.grid, |x| 0.3 * (tp * x[0]).cos() + 0.1 * (2.0 * tp * (x[0] + x[1])).sin())
}
