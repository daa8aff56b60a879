//! The periodic heat kernel `eta^tau` and the smoothing operator
//! `Gamma_tau u = eta^tau * u`.
//!
//! On the torus the kernel has two equivalent forms: the Gaussian image sum
//! `(4 pi tau)^{-d/2} sum_k exp(-|z + k|^2 / (4 tau))` and the Fourier sum
//! `sum_k exp(-tau |2 pi k|^2) exp(2 pi i k.z)`. Smoothing of grid functions
//! is done spectrally, which is exact for the trigonometric interpolant.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{MfgError, Result};
use crate::grid::{Grid, GridFunction, Point, SpectralField, TrigEvaluator};

const TWO_PI: f64 = 2.0 * PI;

/// Terms below this size are dropped from both kernel sums.
const TERM_CUTOFF: f64 = 1e-16;

/// Multipliers below this are dropped when building off-grid evaluators.
const EVAL_CUTOFF: f64 = 1e-18;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(MfgError::Parameter(format!("heat kernel needs tau > 0, got {tau}")))
    }
}

/// `exp(-tau |2 pi k|^2)` for `|k|^2 = k2`.
#[inline]
pub fn multiplier(tau: f64, k2: f64) -> f64 {
    (-tau * TWO_PI * TWO_PI * k2).exp()
}

/// Heat kernel on a grid, with its spectral multipliers precomputed.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    tau: f64,
    grid: Grid,
    multipliers: Vec<f64>,
}

impl HeatKernel {
    pub fn new(tau: f64, grid: Grid) -> Result<Self> {
        check_tau(tau)?;
        let multipliers = (0..grid.len())
            .map(|idx| {
                let mi = grid.multi_index(idx);
                let k0 = grid.wavenumber(mi[0]);
                let k1 = if grid.dim() == 2 { grid.wavenumber(mi[1]) } else { 0 };
                multiplier(tau, (k0 * k0 + k1 * k1) as f64)
            })
            .collect();
        Ok(HeatKernel { tau, grid, multipliers })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Multipliers in FFT storage order.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Apply the multipliers to a spectral field.
    pub fn apply_spectral(&self, s: &SpectralField) -> SpectralField {
        let coeffs =
            s.coeffs().iter().zip(&self.multipliers).map(|(c, &m)| c * m).collect::<Vec<_>>();
        SpectralField::from_coeffs(s.grid(), coeffs)
    }

    /// `Gamma_tau u` on the grid.
    pub fn smooth(&self, u: &GridFunction) -> GridFunction {
        self.apply_spectral(&u.to_spectral()).to_grid()
    }

    /// Off-grid evaluator of `eta^tau * u`, with negligible modes dropped.
    pub fn smoothed_evaluator(&self, u: &GridFunction) -> TrigEvaluator {
        let tau = self.tau;
        u.to_spectral().filtered_evaluator(|k2| multiplier(tau, k2), EVAL_CUTOFF)
    }

    /// Evaluator of the kernel itself, `z -> eta^tau(z)`, band-limited to the grid.
    pub fn kernel_evaluator(&self) -> TrigEvaluator {
        let n = self.grid.len();
        let coeffs = vec![Complex64::new(1.0, 0.0); n];
        let tau = self.tau;
        SpectralField::from_coeffs(self.grid, coeffs)
            .filtered_evaluator(|k2| multiplier(tau, k2), EVAL_CUTOFF)
    }

    /// Peak value `eta^tau(0)`, the sup of the kernel on the torus.
    pub fn peak(&self) -> f64 {
        kernel_value_fourier(self.tau, self.grid.dim(), [0.0, 0.0]).unwrap_or(f64::NAN)
    }
}

/// `Gamma_tau u`.
pub fn smooth(k: &HeatKernel, u: &GridFunction) -> GridFunction {
    k.smooth(u)
}

/// Number of lattice images per axis needed so that every dropped term is
/// below the cutoff; never fewer than the images within `6 sqrt(2 tau) + 1`.
fn image_radius(tau: f64, dim: usize) -> f64 {
    let pref = (4.0 * PI * tau).powf(-(dim as f64) / 2.0);
    let tail = if pref > TERM_CUTOFF { (4.0 * tau * (pref / TERM_CUTOFF).ln()).sqrt() } else { 0.0 };
    tail.max(6.0 * (2.0 * tau).sqrt() + 1.0)
}

/// `eta^tau(z)` by the Gaussian image sum.
pub fn kernel_value(tau: f64, dim: usize, z: Point) -> Result<f64> {
    check_tau(tau)?;
    check_dim(dim)?;
    let pref = (4.0 * PI * tau).powf(-(dim as f64) / 2.0);
    let r = image_radius(tau, dim);
    let z = [crate::grid::periodic_delta(z[0]), crate::grid::periodic_delta(z[1])];
    let kmax = r.ceil() as i64 + 1;
    let mut sum = 0.0;
    let range1 = if dim == 2 { -kmax..=kmax } else { 0..=0 };
    for k0 in -kmax..=kmax {
        for k1 in range1.clone() {
            let a = z[0] + k0 as f64;
            let b = if dim == 2 { z[1] + k1 as f64 } else { 0.0 };
            let r2 = a * a + b * b;
            if r2 <= r * r {
                sum += (-r2 / (4.0 * tau)).exp();
            }
        }
    }
    Ok(pref * sum)
}

/// `eta^tau(z)` by the Fourier sum, truncated where terms fall below the cutoff.
pub fn kernel_value_fourier(tau: f64, dim: usize, z: Point) -> Result<f64> {
    check_tau(tau)?;
    check_dim(dim)?;
    let kr = ((1.0 / TERM_CUTOFF).ln() / (TWO_PI * TWO_PI * tau)).sqrt();
    let kmax = kr.ceil() as i64 + 1;
    let mut sum = 0.0;
    let range1 = if dim == 2 { -kmax..=kmax } else { 0..=0 };
    for k0 in -kmax..=kmax {
        for k1 in range1.clone() {
            let k2 = (k0 * k0 + k1 * k1) as f64;
            if k2 <= kr * kr {
                let ph = TWO_PI * (k0 as f64 * z[0] + k1 as f64 * z[1]);
                sum += multiplier(tau, k2) * ph.cos();
            }
        }
    }
    Ok(sum)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(MfgError::Parameter(format!("dimension must be 1 or 2, got {dim}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
        let vals = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFunction::new(g, vals).unwrap()
    }

    #[test]
    fn multipliers_are_in_unit_interval() {
        let k = HeatKernel::new(0.05, Grid::new(2, 16).unwrap()).unwrap();
        assert_eq!(k.multipliers()[0], 1.0);
        assert!(k.multipliers().iter().all(|&m| m > 0.0 && m <= 1.0));
    }

    #[test]
    fn rejects_nonpositive_tau() {
        assert!(kernel_value(0.0, 1, [0.0, 0.0]).is_err());
        assert!(kernel_value_fourier(-1.0, 1, [0.0, 0.0]).is_err());
        assert!(HeatKernel::new(0.0, Grid::new(1, 8).unwrap()).is_err());
    }

    #[test]
    fn fourier_value_at_origin() {
        let v = kernel_value_fourier(0.25, 1, [0.0, 0.0]).unwrap();
        let expect = 1.0 + 2.0 * (-PI * PI).exp() + 2.0 * (-4.0 * PI * PI).exp();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 1.000104).abs() < 1e-6);
    }

    #[test]
    fn image_and_fourier_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1, 2] {
            for _ in 0..100 {
                let tau = rng.random_range(0.01..1.0);
                let z = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a = kernel_value(tau, dim, z).unwrap();
                let b = kernel_value_fourier(tau, dim, z).unwrap();
                assert!((a - b).abs() < 1e-12, "tau={tau} z={z:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn kernel_is_even_and_has_unit_mass() {
        let g = Grid::new(1, 256).unwrap();
        for tau in [0.01, 0.1, 0.7] {
            let k = HeatKernel::new(tau, g).unwrap();
            let ev = k.kernel_evaluator();
            for z in [0.13, 0.31, 0.77] {
                let a = kernel_value(tau, 1, [z, 0.0]).unwrap();
                let b = kernel_value(tau, 1, [-z, 0.0]).unwrap();
                assert!((a - b).abs() < 1e-13);
                assert!((ev.eval([z, 0.0]) - a).abs() < 1e-12);
            }
            let samples = GridFunction::from_fn(g, |x| kernel_value(tau, 1, x).unwrap());
            assert!((samples.integrate() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_examples() {
        let g = Grid::new(1, 64).unwrap();
        let k = HeatKernel::new(0.05, g).unwrap();
        let c = GridFunction::constant(g, 2.5);
        assert!(k.smooth(&c).values().iter().all(|&v| (v - 2.5).abs() < 1e-14));
        let u = GridFunction::from_fn(g, |x| (TWO_PI * x[0]).cos());
        let s = k.smooth(&u);
        let damp = (-4.0 * PI * PI * 0.05).exp();
        for i in 0..g.len() {
            assert!((s.values()[i] - damp * u.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [1, 2] {
            let g = Grid::new(dim, 32).unwrap();
            let u = random_field(g, &mut rng);
            let a = HeatKernel::new(0.03, g).unwrap();
            let b = HeatKernel::new(0.07, g).unwrap();
            let ab = HeatKernel::new(0.10, g).unwrap();
            let lhs = a.smooth(&b.smooth(&u));
            let rhs = ab.smooth(&u);
            let err = lhs.zip_map(&rhs, |x, y| x - y).sup_norm();
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn maximum_principle_and_lr_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dim in [1, 2] {
            let g = Grid::new(dim, 64).unwrap();
            for tau in [0.01, 0.1, 1.0] {
                let k = HeatKernel::new(tau, g).unwrap();
                for _ in 0..5 {
                    let u = random_field(g, &mut rng);
                    let s = k.smooth(&u);
                    assert!(s.max() <= u.max() + 1e-12 && s.min() >= u.min() - 1e-12);
                    for r in [2.0, 3.0] {
                        assert!(s.norm_lr(r) <= u.norm_lr(r) * (1.0 + 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn smoothed_evaluator_matches_grid_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Grid::new(2, 16).unwrap();
        let u = random_field(g, &mut rng);
        let k = HeatKernel::new(0.02, g).unwrap();
        let s = k.smooth(&u);
        let ev = k.smoothed_evaluator(&u);
        for i in 0..g.len() {
            assert!((ev.eval(g.coords(i)) - s.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn peak_exceeds_free_space_value() {
        let g = Grid::new(1, 8).unwrap();
        let k = HeatKernel::new(0.4, g).unwrap();
        assert!(k.peak() >= 1.0);
        assert!(k.peak() > (4.0 * PI * 0.4f64).powf(-0.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernel_is_positive(tau in 0.01f64..1.0, z in -1.0f64..1.0) {
            prop_assert!(kernel_value(tau, 1, [z, 0.0]).unwrap() > 0.0);
        }

        #[test]
        fn smoothing_preserves_mean(seed in 0u64..1000, tau in 0.001f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(1, 32).unwrap();
            let u = random_field(g, &mut rng);
            let k = HeatKernel::new(tau, g).unwrap();
            prop_assert!((k.smooth(&u).integrate() - u.integrate()).abs() < 1e-14);
        }
    }
}
