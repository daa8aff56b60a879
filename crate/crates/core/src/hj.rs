//! Discrete ergodic Hamilton-Jacobi equation `u = L_tau u - tau G - tau alpha`
//! for a given source `G`, solved by relative value iteration.

use crate::error::{MfgError, Result};
use crate::grid::GridFunction;
use crate::kernel::HeatKernel;
use crate::lax::{lax, ControlField};
use crate::models::{ModelSpec, Normalization};

/// Number of trailing span values kept for error reports.
const HISTORY: usize = 64;

#[derive(Clone, Debug)]
pub struct ErgodicHJSolution {
    pub alpha: f64,
    pub u: GridFunction,
    pub v: ControlField,
    pub iterations: usize,
    /// Span seminorm of the last increment.
    pub span_residual: f64,
    /// `sup |L_tau u - u - tau G - tau alpha|` at the returned `u`.
    pub residual: f64,
    /// Largest first-order-condition defect of the returned control.
    pub optimality_residual: f64,
}

/// Fix the additive constant of `u` as the model prescribes.
pub fn normalize(model: &ModelSpec, u: &GridFunction) -> Result<GridFunction> {
    let shift = match model.normalization {
        Normalization::Point { node } => u.values()[node],
        Normalization::MaxSmooth => {
            let k = HeatKernel::new(model.tau, model.grid)?;
            let s = k.smooth(u);
            let ev = k.smoothed_evaluator(u);
            let start = model.grid.coords(s.argmax());
            let (v, _) = ev.refine_max(start);
            v.max(s.max())
        }
    };
    Ok(u.add_scalar(-shift))
}

/// Solve the ergodic problem with source `g`, starting from `u0`.
pub fn solve_hj(
    model: &ModelSpec,
    g: &GridFunction,
    u0: &GridFunction,
) -> Result<ErgodicHJSolution> {
    if g.grid() != model.grid || u0.grid() != model.grid {
        return Err(MfgError::InvalidGrid("HJ inputs must live on the model grid".into()));
    }
    let tau = model.tau;
    let tol = model.tolerances.hj;
    let cap = model.solver.max_hj_iterations;
    let tg = g.scale(tau);
    let mut w = normalize(model, u0)?;
    let mut history = Vec::new();
    for it in 1..=cap {
        let r = lax(model, &w)?;
        // increment of one Bellman sweep
        let delta = GridFunction::from_vec_unchecked(
            model.grid,
            (0..w.len()).map(|i| r.lu.values()[i] - tg.values()[i] - w.values()[i]).collect(),
        );
        let (hi, lo) = (delta.max(), delta.min());
        let span = hi - lo;
        let mid = 0.5 * (hi + lo);
        history.push(span);
        if history.len() > HISTORY {
            history.remove(0);
        }
        if span < tol * tau {
            let alpha = mid / tau;
            let u = normalize(model, &w)?;
            // the residual is invariant under the normalizing shift
            let residual = 0.5 * span;
            return Ok(ErgodicHJSolution {
                alpha,
                u,
                v: r.v,
                iterations: it,
                span_residual: span,
                residual,
                optimality_residual: r.optimality_residual,
            });
        }
        w = w.zip_map(&delta, |a, d| a + d - mid);
        if it % 64 == 0 {
            w = normalize(model, &w)?;
        }
        if !w.is_finite() {
            return Err(MfgError::NonConvergence {
                solver: "ergodic HJ",
                iterations: it,
                detail: "iterate became non-finite".into(),
                history,
            });
        }
    }
    Err(MfgError::NonConvergence {
        solver: "ergodic HJ",
        iterations: cap,
        detail: format!(
            "span {:e} above tolerance {:e}",
            history.last().copied().unwrap_or(f64::NAN),
            tol * tau
        ),
        history,
    })
}

/// Admissible interval for `-alpha`:
/// `[min L + min G, max_x L(x, 0) + max G]`.
pub fn ergodic_bracket(model: &ModelSpec, g: &GridFunction) -> (f64, f64) {
    let d = model.dim();
    (model.lagrangian.min_value(d) + g.min(), model.lagrangian.max_at_rest(d) + g.max())
}

/// Admissible interval for `-rho` in the coupled problem:
/// `[min L + a_F, max_x L(x, 0) + b_F]`.
pub fn coupled_bracket(model: &ModelSpec) -> (f64, f64) {
    let d = model.dim();
    let (a, b) = model.coupling_bounds();
    (model.lagrangian.min_value(d) + a, model.lagrangian.max_at_rest(d) + b)
}

/// `max_x (L_tau phi - phi)(x)/tau - G(x)`, an upper bound for `alpha`.
pub fn minmax_upper(model: &ModelSpec, g: &GridFunction, phi: &GridFunction) -> Result<f64> {
    let r = lax(model, phi)?;
    let tau = model.tau;
    Ok((0..phi.len())
        .map(|i| (r.lu.values()[i] - phi.values()[i]) / tau - g.values()[i])
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::models::{Coupling, Potential};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn model(dim: usize, n: usize, tau: f64, pot: Potential) -> ModelSpec {
        ModelSpec::new(Grid::new(dim, n).unwrap(), tau, pot, Coupling::Log).unwrap()
    }

    fn residual(m: &ModelSpec, g: &GridFunction, s: &ErgodicHJSolution) -> f64 {
        let lu = lax(m, &s.u).unwrap().lu;
        (0..lu.len())
            .map(|i| (lu.values()[i] - s.u.values()[i] - m.tau * g.values()[i] - m.tau * s.alpha).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn trivial_solutions() {
        let m = model(1, 32, 0.1, Potential::zero());
        let z = GridFunction::zeros(m.grid);
        let s = solve_hj(&m, &z, &z).unwrap();
        assert!(s.alpha.abs() < 1e-14);
        assert!(s.u.sup_norm() < 1e-14 && s.v.max_norm() < 1e-14);

        let g = GridFunction::constant(m.grid, 0.3);
        let s = solve_hj(&m, &g, &z).unwrap();
        assert!((s.alpha + 0.3).abs() < 1e-12);
        assert!(s.u.sup_norm() < 1e-12);
    }

    #[test]
    fn cosine_potential_in_bracket() {
        let m = model(1, 64, 0.1, Potential::cosine(0.5));
        let z = GridFunction::zeros(m.grid);
        let s = solve_hj(&m, &z, &z).unwrap();
        let (lo, hi) = ergodic_bracket(&m, &z);
        assert!((lo + 0.5).abs() < 1e-10 && (hi - 0.5).abs() < 1e-10);
        assert!(lo <= -s.alpha && -s.alpha <= hi);
        assert!(residual(&m, &z, &s) <= 1e-9);
        assert!(s.residual <= 1e-9);
        // max-smooth normalization
        let k = HeatKernel::new(m.tau, m.grid).unwrap();
        assert!(k.smooth(&s.u).max().abs() < 1e-12);
    }

    #[test]
    fn coupled_bracket_adds_coupling_bounds() {
        let g = Grid::new(1, 32).unwrap();
        let m = ModelSpec::new(g, 0.1, Potential::cosine(0.5), Coupling::power(0.5).unwrap()).unwrap();
        let (lo, hi) = coupled_bracket(&m);
        assert!((lo + 0.5).abs() < 1e-10 && (hi - 1.5).abs() < 1e-10);
    }

    #[test]
    fn start_invariance_and_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [1, 2] {
            let n = if dim == 1 { 64 } else { 16 };
            let m = model(dim, n, 0.1, Potential::cosine(0.4));
            let g = GridFunction::from_fn(m.grid, |x| 0.2 * (TWO_PI * x[1]).sin() + 0.1 * (TWO_PI * x[0]).sin());
            let z = GridFunction::zeros(m.grid);
            let a = solve_hj(&m, &g, &z).unwrap();
            let c: f64 = rng.random_range(-5.0..5.0);
            let b = solve_hj(&m, &g, &z.add_scalar(c)).unwrap();
            assert!((a.alpha - b.alpha).abs() < 1e-12);
            assert!(a.u.zip_map(&b.u, |x, y| x - y).sup_norm() < 1e-10);
            assert!(residual(&m, &g, &a) <= 1e-9);
            let (lo, hi) = ergodic_bracket(&m, &g);
            assert!(lo <= -a.alpha && -a.alpha <= hi);
        }
    }

    #[test]
    fn point_normalization() {
        let mut m = model(1, 32, 0.1, Potential::cosine(0.5));
        m.normalization = Normalization::Point { node: 5 };
        let z = GridFunction::zeros(m.grid);
        let s = solve_hj(&m, &z, &z).unwrap();
        assert_eq!(s.u.values()[5], 0.0);
    }

    #[test]
    fn minmax_bound_tight_at_solution() {
        let m = model(1, 64, 0.05, Potential::cosine(0.5));
        let g = GridFunction::from_fn(m.grid, |x| 0.3 * (TWO_PI * x[0]).sin());
        let z = GridFunction::zeros(m.grid);
        let s = solve_hj(&m, &g, &z).unwrap();
        let at_u = minmax_upper(&m, &g, &s.u).unwrap();
        assert!((at_u - s.alpha).abs() <= 1e-9 / m.tau * 1.01);
        let m0 = model(1, 32, 0.1, Potential::zero());
        let z0 = GridFunction::zeros(m0.grid);
        assert!(minmax_upper(&m0, &z0, &z0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn iteration_cap_reports_history() {
        let mut m = model(1, 32, 0.1, Potential::cosine(0.5));
        m.solver.max_hj_iterations = 2;
        let z = GridFunction::zeros(m.grid);
        match solve_hj(&m, &z, &z) {
            Err(MfgError::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn minmax_dominates_alpha(seed in 0u64..10_000) {
            let m = model(1, 32, 0.1, Potential::cosine(0.5));
            let z = GridFunction::zeros(m.grid);
            let s = solve_hj(&m, &z, &z).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let phi = GridFunction::from_fn(m.grid, |x| {
                c[0] * (TWO_PI * x[0]).cos() + c[1] * (TWO_PI * x[0]).sin() + c[2] * (2.0 * TWO_PI * x[0]).cos()
            });
            prop_assert!(minmax_upper(&m, &z, &phi).unwrap() >= s.alpha - 1e-8);
        }
    }
}
