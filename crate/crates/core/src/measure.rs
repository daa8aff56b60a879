//! Projected measures of holonomic plans: the push-forward-and-smooth
//! operator `T_V m (z) = int eta^tau(x + tau V(x) - z) dm(x)` and its fixed
//! point, the stationary distribution of the players.
//!
//! `T_V` is implemented as the exact adjoint of evaluating `eta^tau * f` at
//! the transported nodes `x_i + tau V(x_i)`, so that
//! `int f T_V m = sum_i m_i h^d (eta^tau * f)(x_i + tau V(x_i))` holds to
//! rounding for every grid function `f`.

use std::ops::Deref;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{MfgError, Result};
use crate::grid::{Grid, GridFunction, SpectralField};
use crate::kernel::HeatKernel;
use crate::lax::{lax, ControlField};
use crate::models::ModelSpec;

const HISTORY: usize = 64;

/// A probability density on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Density(GridFunction);

impl Density {
    /// Validate non-negativity and unit mass (within `1e-10`).
    pub fn new(f: GridFunction) -> Result<Self> {
        if let Some(i) = f.values().iter().position(|&v| v < 0.0 || !v.is_finite()) {
            return Err(MfgError::Domain {
                what: format!("density must be non-negative, found {:e}", f.values()[i]),
                node: i,
            });
        }
        let mass = f.integrate();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(MfgError::Parameter(format!("density has mass {mass}, expected 1")));
        }
        Ok(Density(f))
    }

    /// Rescale a non-negative function to unit mass.
    pub fn normalized(f: GridFunction) -> Result<Self> {
        let mass = f.integrate();
        if mass.is_nan() || mass <= 0.0 {
            return Err(MfgError::Parameter("cannot normalize a function without mass".into()));
        }
        Density::new(f.scale(1.0 / mass))
    }

    pub fn uniform(grid: Grid) -> Self {
        Density(GridFunction::constant(grid, 1.0))
    }

    pub fn as_function(&self) -> &GridFunction {
        &self.0
    }

    pub fn into_function(self) -> GridFunction {
        self.0
    }
}

impl Deref for Density {
    type Target = GridFunction;
    fn deref(&self) -> &GridFunction {
        &self.0
    }
}

/// The density bound `(4 pi tau)^{-d/2}`.
pub fn free_space_bound(tau: f64, dim: usize) -> f64 {
    (4.0 * std::f64::consts::PI * tau).powf(-(dim as f64) / 2.0)
}

/// `T_V m`.
pub fn push_smooth(model: &ModelSpec, v: &ControlField, m: &GridFunction) -> Result<Density> {
    let kernel = HeatKernel::new(model.tau, model.grid)?;
    Ok(Density(push_with(&kernel, model.tau, v, m)))
}

pub(crate) fn push_with(kernel: &HeatKernel, tau: f64, v: &ControlField, m: &GridFunction) -> GridFunction {
    let grid = kernel.grid();
    let ev = kernel.kernel_evaluator();
    let modes = &ev.modes;
    let kmax = ev.kmax();
    let dim = grid.dim();
    let w = grid.cell_volume();
    let table = |k: usize, y: f64| -> Vec<Complex64> {
        let y = crate::grid::wrap(y);
        (0..=2 * k)
            .map(|j| {
                let kk = j as f64 - k as f64;
                let (s, c) = (-2.0 * std::f64::consts::PI * kk * y).sin_cos();
                Complex64::new(c, s)
            })
            .collect()
    };
    // S_k = h^d sum_i m_i exp(-2 pi i k . y_i)
    let sums = (0..grid.len())
        .into_par_iter()
        .fold(
            || vec![Complex64::new(0.0, 0.0); modes.len()],
            |mut acc, i| {
                let x = grid.coords(i);
                let q = v.get(i);
                let t0 = table(kmax[0], x[0] + tau * q[0]);
                let t1 = if dim == 2 { table(kmax[1], x[1] + tau * q[1]) } else { vec![Complex64::new(1.0, 0.0)] };
                let o0 = kmax[0] as i32;
                let o1 = if dim == 2 { kmax[1] as i32 } else { 0 };
                let mi = m.values()[i] * w;
                for (a, md) in acc.iter_mut().zip(modes) {
                    *a += t0[(md.k[0] + o0) as usize] * t1[(md.k[1] + o1) as usize] * mi;
                }
                acc
            },
        )
        .reduce(
            || vec![Complex64::new(0.0, 0.0); modes.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (md, s) in modes.iter().zip(sums) {
        let b0 = grid.fft_index(md.k[0] as i64);
        let idx = if dim == 2 { grid.index([b0, grid.fft_index(md.k[1] as i64)]) } else { b0 };
        coeffs[idx] += md.c * s;
    }
    SpectralField::from_coeffs(grid, coeffs).to_grid()
}

/// Fixed point of `T_V` by power iteration from `m0`.
pub fn stationary(model: &ModelSpec, v: &ControlField, m0: &GridFunction) -> Result<Density> {
    let kernel = HeatKernel::new(model.tau, model.grid)?;
    let tol = model.tolerances.fp;
    let cap = model.solver.max_fp_iterations;
    let mut m = m0.clone();
    let mut prev_diff = f64::NAN;
    let mut history = Vec::new();
    for it in 1..=cap {
        let next = push_with(&kernel, model.tau, v, &m);
        let diff = next.zip_map(&m, |a, b| a - b).norm_l1();
        history.push(diff / prev_diff);
        if history.len() > HISTORY {
            history.remove(0);
        }
        prev_diff = diff;
        m = next;
        if diff <= tol {
            // one more sweep keeps the returned density in the range of T_V
            let last = push_with(&kernel, model.tau, v, &m);
            return Ok(Density(last));
        }
        if !m.is_finite() {
            return Err(MfgError::NonConvergence {
                solver: "stationary measure",
                iterations: it,
                detail: "iterate became non-finite".into(),
                history,
            });
        }
    }
    Err(MfgError::NonConvergence {
        solver: "stationary measure",
        iterations: cap,
        detail: format!("L1 step {prev_diff:e} above tolerance {tol:e}; history holds contraction factors"),
        history,
    })
}

/// `sum_i m_i h^d [(eta^tau * f)(x_i + tau V(x_i)) - f(x_i)]`.
pub fn holonomic_residual(
    model: &ModelSpec,
    v: &ControlField,
    m: &GridFunction,
    f: &GridFunction,
) -> Result<f64> {
    let kernel = HeatKernel::new(model.tau, model.grid)?;
    let ev = kernel.smoothed_evaluator(f);
    let g = model.grid;
    let w = g.cell_volume();
    Ok((0..g.len())
        .map(|i| {
            let x = g.coords(i);
            let q = v.get(i);
            let y = [x[0] + model.tau * q[0], x[1] + model.tau * q[1]];
            m.values()[i] * w * (ev.eval(y) - f.values()[i])
        })
        .sum())
}

/// `sup |(T_{V_phi} m - m)/tau - (Delta m - div(m D phi))|`, with `V_phi` the
/// control of `L_tau phi`.
pub fn fp_consistency(model: &ModelSpec, phi: &GridFunction, m: &GridFunction) -> Result<f64> {
    let v = lax(model, phi)?.v;
    let tm = push_smooth(model, &v, m)?;
    let lap = m.laplacian();
    let grad = phi.gradient();
    let mut div = GridFunction::zeros(model.grid);
    for (a, ga) in grad.iter().enumerate() {
        let flux = m.zip_map(ga, |x, y| x * y);
        let d = &flux.gradient()[a];
        div = div.zip_map(d, |x, y| x + y);
    }
    let tau = model.tau;
    Ok((0..m.len())
        .map(|i| {
            let lhs = (tm.values()[i] - m.values()[i]) / tau;
            (lhs - (lap.values()[i] - div.values()[i])).abs()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hj::solve_hj;
    use crate::models::{Coupling, Potential};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn model(dim: usize, n: usize, tau: f64, pot: Potential) -> ModelSpec {
        ModelSpec::new(Grid::new(dim, n).unwrap(), tau, pot, Coupling::Log).unwrap()
    }

    fn random_control(g: Grid, rng: &mut ChaCha8Rng, amp: f64) -> ControlField {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-amp..amp)).collect();
        let q = (0..g.len())
            .map(|i| {
                let x = g.coords(i);
                [
                    c[0] + c[1] * (TWO_PI * x[0]).sin() + 0.3 * c[2] * (TWO_PI * x[1]).cos(),
                    if g.dim() == 2 { c[2] + c[3] * (TWO_PI * x[1]).sin() } else { 0.0 },
                ]
            })
            .collect();
        ControlField::new(g, q).unwrap()
    }

    fn random_density(g: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
        let raw = GridFunction::new(g, (0..g.len()).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        raw.scale(1.0 / raw.integrate())
    }

    #[test]
    fn still_controls() {
        let m = model(1, 64, 0.05, Potential::zero());
        let zero = ControlField::zeros(m.grid);
        let one = GridFunction::constant(m.grid, 1.0);
        let r = push_smooth(&m, &zero, &one).unwrap();
        assert!(r.zip_map(&one, |a, b| a - b).sup_norm() < 1e-13);

        let bump = GridFunction::from_fn(m.grid, |x| 1.0 + 0.4 * (TWO_PI * x[0]).cos());
        let r = push_smooth(&m, &zero, &bump).unwrap();
        let damp = (-4.0 * PI * PI * 0.05).exp();
        for i in 0..m.grid.len() {
            let x = m.grid.coords(i)[0];
            let expect = 1.0 + 0.4 * damp * (TWO_PI * x).cos();
            assert!((r.values()[i] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_drift_keeps_uniform() {
        let m = model(1, 64, 0.05, Potential::zero());
        let v = ControlField::new(m.grid, vec![[0.1, 0.0]; 64]).unwrap();
        let one = GridFunction::constant(m.grid, 1.0);
        let r = push_smooth(&m, &v, &one).unwrap();
        assert!(r.zip_map(&one, |a, b| a - b).sup_norm() < 1e-12);
    }

    #[test]
    fn mass_positivity_and_adjointness() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [1, 2] {
            let n = if dim == 1 { 64 } else { 16 };
            let m = model(dim, n, 0.05, Potential::zero());
            let k = HeatKernel::new(m.tau, m.grid).unwrap();
            for _ in 0..5 {
                let v = random_control(m.grid, &mut rng, 2.0);
                let d = random_density(m.grid, &mut rng);
                let t = push_smooth(&m, &v, &d).unwrap();
                assert!((t.integrate() - 1.0).abs() < 1e-12);
                assert!(t.min() > 0.0);
                let f = GridFunction::new(m.grid, (0..m.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
                let ev = k.smoothed_evaluator(&f);
                let rhs: f64 = (0..m.grid.len())
                    .map(|i| {
                        let x = m.grid.coords(i);
                        let q = v.get(i);
                        d.values()[i] * m.grid.cell_volume() * ev.eval([x[0] + m.tau * q[0], x[1] + m.tau * q[1]])
                    })
                    .sum();
                assert!((f.dot(&t) - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contraction_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(1, 64, 0.05, Potential::zero());
        for _ in 0..10 {
            let v = random_control(m.grid, &mut rng, 2.0);
            let a = random_density(m.grid, &mut rng);
            let b = random_density(m.grid, &mut rng);
            let ta = push_smooth(&m, &v, &a).unwrap();
            let tb = push_smooth(&m, &v, &b).unwrap();
            let before = a.zip_map(&b, |x, y| x - y).norm_l1();
            let after = ta.zip_map(&tb, |x, y| x - y).norm_l1();
            assert!(after < before);
        }
    }

    #[test]
    fn stationary_uniqueness_and_holonomy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dim in [1, 2] {
            let n = if dim == 1 { 64 } else { 16 };
            let m = model(dim, n, 0.05, Potential::zero());
            let v = random_control(m.grid, &mut rng, 1.5);
            let a = stationary(&m, &v, &random_density(m.grid, &mut rng)).unwrap();
            let b = stationary(&m, &v, &random_density(m.grid, &mut rng)).unwrap();
            assert!(a.zip_map(&b, |x, y| x - y).norm_l1() <= 10.0 * m.tolerances.fp);
            let f = GridFunction::from_fn(m.grid, |x| (TWO_PI * x[0]).sin() + 0.5 * (TWO_PI * (x[0] - x[1])).cos());
            assert!(holonomic_residual(&m, &v, &a, &f).unwrap().abs() <= 10.0 * m.tolerances.fp);
            let c = GridFunction::constant(m.grid, 3.0);
            assert!(holonomic_residual(&m, &v, &a, &c).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn still_uniform_is_stationary() {
        let m = model(1, 32, 0.1, Potential::zero());
        let zero = ControlField::zeros(m.grid);
        let d = GridFunction::from_fn(m.grid, |x| 1.0 + 0.5 * (TWO_PI * x[0]).cos());
        let s = stationary(&m, &zero, &d).unwrap();
        assert!(s.add_scalar(-1.0).sup_norm() < 1e-10);
        let one = GridFunction::constant(m.grid, 1.0);
        let cosf = GridFunction::from_fn(m.grid, |x| (TWO_PI * x[0]).cos());
        assert!(holonomic_residual(&m, &zero, &one, &cosf).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gibbs_density_for_gradient_drift() {
        // drift D u from a solved HJ problem; the continuum density is e^u / Z
        let base = model(1, 128, 0.1, Potential::cosine(0.5));
        let z = GridFunction::zeros(base.grid);
        let mut errs = Vec::new();
        for tau in [0.1, 0.05, 0.025] {
            let m = base.with_tau(tau).unwrap();
            let s = solve_hj(&m, &z, &z).unwrap();
            let st = stationary(&m, &s.v, &GridFunction::constant(m.grid, 1.0)).unwrap();
            let gibbs = s.u.map(f64::exp);
            let gibbs = gibbs.scale(1.0 / gibbs.integrate());
            errs.push(st.zip_map(&gibbs, |a, b| a - b).norm_l1());
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn fp_consistency_examples() {
        let m = model(1, 64, 0.1, Potential::zero());
        let z = GridFunction::zeros(m.grid);
        let one = GridFunction::constant(m.grid, 1.0);
        assert!(fp_consistency(&m, &z, &one).unwrap() < 1e-12);

        let phi = GridFunction::from_fn(m.grid, |x| 0.1 * (TWO_PI * x[0]).cos());
        let bump = GridFunction::from_fn(m.grid, |x| 1.0 + 0.3 * (TWO_PI * x[0]).cos());
        let mut a = Vec::new();
        let mut b = Vec::new();
        for tau in [0.1, 0.05, 0.025] {
            let mt = m.with_tau(tau).unwrap();
            a.push(fp_consistency(&mt, &phi, &one).unwrap());
            b.push(fp_consistency(&mt, &z, &bump).unwrap());
        }
        assert!(a.windows(2).all(|w| w[1] < w[0]), "{a:?}");
        assert!(b.windows(2).all(|w| w[1] < w[0]), "{b:?}");
    }

    #[test]
    fn density_validation() {
        let g = Grid::new(1, 8).unwrap();
        assert!(Density::new(GridFunction::constant(g, 2.0)).is_err());
        let mut f = GridFunction::constant(g, 1.0);
        f.values_mut()[0] = -0.1;
        assert!(Density::new(f).is_err());
        assert!(Density::normalized(GridFunction::constant(g, 3.0)).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn push_conserves_mass(seed in 0u64..10_000, tau in 0.01f64..0.4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = model(1, 32, tau, Potential::zero());
            let v = random_control(m.grid, &mut rng, 3.0);
            let d = random_density(m.grid, &mut rng);
            let t = push_smooth(&m, &v, &d).unwrap();
            prop_assert!((t.integrate() - 1.0).abs() < 1e-12);
            prop_assert!(t.min() > 0.0);
        }
    }
}
