//! Random smooth test data used by diagnostics: trigonometric functions of
//! low degree and densities bounded away from zero.

use rand::Rng;
use std::f64::consts::PI;

use crate::grid::{Grid, GridFunction};

const TWO_PI: f64 = 2.0 * PI;

/// Random trigonometric polynomial of degree at most 3 per axis with
/// coefficients uniform in `(-amp, amp)`.
pub fn smooth_function(grid: Grid, rng: &mut impl Rng, amp: f64) -> GridFunction {
    let axes = grid.dim();
    let c: Vec<[f64; 4]> = (0..axes)
        .map(|_| std::array::from_fn(|_| rng.random_range(-amp..amp)))
        .collect();
    let mixed = if axes == 2 { rng.random_range(-amp..amp) } else { 0.0 };
    GridFunction::from_fn(grid, |x| {
        let mut s = 0.0;
        for (a, c) in c.iter().enumerate() {
            let t = TWO_PI * x[a];
            s += c[0] * t.cos() + c[1] * t.sin() + c[2] * (2.0 * t).cos() + c[3] * (3.0 * t).sin();
        }
        s + mixed * (TWO_PI * (x[0] + x[1])).cos()
    })
}

/// Random smooth probability density with values in roughly `[0.2, 1.8]`.
pub fn smooth_density(grid: Grid, rng: &mut impl Rng) -> GridFunction {
    let amp = 0.2 / grid.dim() as f64;
    let f = smooth_function(grid, rng, amp).add_scalar(1.0);
    f.scale(1.0 / f.integrate())
}
