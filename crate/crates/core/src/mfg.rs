//! The coupled discrete MFG system
//!
//! ```text
//! u = L_tau u - tau F(., m) - tau rho,     m = T_V m,
//! ```
//!
//! solved by damped fixed-point iteration on the density, plus the
//! structural diagnostics: monotonicity pairing, weak-solution pairing and
//! the variational identity of the logarithmic coupling.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::GridFunction;
use crate::hj::{coupled_bracket, solve_hj};
use crate::kernel::HeatKernel;
use crate::lax::{h_from_lax, lax, ControlField};
use crate::measure::{free_space_bound, push_smooth, stationary, Density};
use crate::models::{Coupling, ModelSpec, Schedule};

/// Densities are clipped here before the logarithm is taken.
pub const LOG_FLOOR: f64 = 1e-12;

const HISTORY: usize = 256;

/// A converged solution `(rho, u, m, V)` with its diagnostics.
#[derive(Clone, Debug)]
pub struct DiscreteSolution {
    pub rho: f64,
    pub u: GridFunction,
    pub m: Density,
    pub v: ControlField,
    /// `int (L(x, V(x)) + F(x, m)) m(x) dx`.
    pub energy: f64,
    pub iterations: usize,
    /// Outer residuals `|m* - m_j|_1 + |rho_j - rho_{j-1}|`.
    pub history: Vec<f64>,
    /// `sup |L_tau u - u - tau F(m) - tau rho|`.
    pub hj_residual: f64,
    /// `|T_V m - m|_1`.
    pub measure_residual: f64,
    /// Final damping weight.
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check { name, value, tolerance, pass: value <= tolerance }
    }
}

impl DiscreteSolution {
    /// `(lo, hi)` bracket for `-rho`.
    pub fn bracket(&self, model: &ModelSpec) -> (f64, f64) {
        coupled_bracket(model)
    }

    /// The solution invariants: HJ and measure residuals, energy identity,
    /// bracket membership, unit mass and positivity.
    pub fn invariants(&self, model: &ModelSpec) -> Vec<Check> {
        let tol = model.tolerances.mfg;
        let (lo, hi) = self.bracket(model);
        let outside = (lo - (-self.rho)).max(-self.rho - hi).max(0.0);
        vec![
            Check::at_most("hj_residual", self.hj_residual, tol),
            Check::at_most("measure_residual", self.measure_residual, tol),
            Check::at_most("energy_identity", (self.energy + self.rho).abs(), 10.0 * tol),
            Check::at_most("bracket", outside, 1e-12),
            Check::at_most("mass", (self.m.integrate() - 1.0).abs(), 1e-10),
            Check { name: "positivity", value: self.m.min(), tolerance: 0.0, pass: self.m.min() > 0.0 },
        ]
    }

    pub fn all_pass(&self, model: &ModelSpec) -> bool {
        self.invariants(model).iter().all(|c| c.pass)
    }

    /// `max m - (4 pi tau)^{-d/2}` and the torus kernel peak `eta^tau(0)`.
    pub fn density_bounds(&self, model: &ModelSpec) -> Result<(f64, f64)> {
        let peak = HeatKernel::new(model.tau, model.grid)?.peak();
        Ok((free_space_bound(model.tau, model.dim()), peak))
    }
}

/// Coupling field, with the positivity floor for the logarithm.
fn coupling_field(model: &ModelSpec, m: &GridFunction) -> Result<GridFunction> {
    match model.coupling {
        Coupling::Log => model.coupling.field(&m.map(|v| v.max(LOG_FLOOR))),
        _ => model.coupling.field(m),
    }
}

/// Initial data for the outer iteration.
#[derive(Clone, Debug)]
pub struct Start {
    pub m: GridFunction,
    pub u: GridFunction,
}

impl Start {
    pub fn uniform(model: &ModelSpec) -> Self {
        Start { m: GridFunction::constant(model.grid, 1.0), u: GridFunction::zeros(model.grid) }
    }
}

/// Solve the discrete MFG system from the uniform density.
pub fn solve_mfg(model: &ModelSpec) -> Result<DiscreteSolution> {
    solve_mfg_from(model, &Start::uniform(model))
}

/// Solve the discrete MFG system from the given start.
pub fn solve_mfg_from(model: &ModelSpec, start: &Start) -> Result<DiscreteSolution> {
    model.validate()?;
    for w in model.warnings() {
        log::warn!("{w}");
    }
    let start_m = Density::normalized(start.m.clone())?;
    let tol = model.tolerances.mfg;
    let cap = model.solver.max_mfg_iterations;
    let mut lambda = model.solver.damping;
    let mut m = start_m.into_function();
    let mut u = start.u.clone();
    let mut rho_prev = f64::NAN;
    let mut history: Vec<f64> = Vec::new();
    let mut rises = 0;
    for j in 0..cap {
        let g = coupling_field(model, &m)?;
        let hj = solve_hj(model, &g, &u)?;
        let rho = hj.alpha;
        let target = stationary(model, &hj.v, &m)?;
        let dm = target.zip_map(&m, |a, b| a - b).norm_l1();
        let drho = if rho_prev.is_nan() { f64::INFINITY } else { (rho - rho_prev).abs() };
        let res = dm + drho;
        log::debug!("outer {j}: |m* - m|_1 = {dm:e}, |drho| = {drho:e}, lambda = {lambda}");
        if let Some(&last) = history.last() {
            if res > last && res.is_finite() {
                rises += 1;
                if rises >= 2 && model.solver.schedule == Schedule::Picard {
                    lambda = (0.5 * lambda).max(1e-3);
                    rises = 0;
                }
            } else {
                rises = 0;
            }
        }
        history.push(res);
        if history.len() > HISTORY {
            history.remove(0);
        }
        u = hj.u;
        rho_prev = rho;
        if res < tol {
            return finish(model, target.into_function(), u, j + 1, history, lambda);
        }
        let w = match model.solver.schedule {
            Schedule::Picard => lambda,
            Schedule::FictitiousPlay => 1.0 / (j as f64 + 2.0),
        };
        m = m.zip_map(&target, |a, b| (1.0 - w) * a + w * b);
    }
    Err(MfgError::NonConvergence {
        solver: "MFG fixed point",
        iterations: cap,
        detail: format!(
            "outer residual {:e} above {tol:e}; final damping {lambda}. {}Try a smaller damping.",
            history.last().copied().unwrap_or(f64::NAN),
            if oscillating(&history) { "The residual oscillates. " } else { "" }
        ),
        history,
    })
}

fn oscillating(h: &[f64]) -> bool {
    let tail = &h[h.len().saturating_sub(10)..];
    tail.windows(2).filter(|w| w[1] > w[0]).count() >= 3
}

/// Final pass: one more HJ solve against the converged density and the
/// stationary density of its control; invariants are measured on the result.
fn finish(
    model: &ModelSpec,
    m_conv: GridFunction,
    u_warm: GridFunction,
    iterations: usize,
    history: Vec<f64>,
    damping: f64,
) -> Result<DiscreteSolution> {
    let g = coupling_field(model, &m_conv)?;
    let hj = solve_hj(model, &g, &u_warm)?;
    let m = stationary(model, &hj.v, &m_conv)?;
    if matches!(model.coupling, Coupling::Log) {
        if let Some(i) = m.values().iter().position(|&v| v <= LOG_FLOOR) {
            return Err(MfgError::Domain {
                what: format!("density {:e} at the positivity floor after convergence", m.values()[i]),
                node: i,
            });
        }
    }
    let f = model.coupling.field(&m)?;
    let r = lax(model, &hj.u)?;
    let tau = model.tau;
    let hj_residual = (0..m.len())
        .map(|i| (r.lu.values()[i] - hj.u.values()[i] - tau * f.values()[i] - tau * hj.alpha).abs())
        .fold(0.0, f64::max);
    let measure_residual = push_smooth(model, &r.v, &m)?.zip_map(&m, |a, b| a - b).norm_l1();
    let energy = energy(model, &r.v, &m, &f);
    Ok(DiscreteSolution {
        rho: hj.alpha,
        u: hj.u,
        m,
        v: r.v,
        energy,
        iterations,
        history,
        hj_residual,
        measure_residual,
        damping,
    })
}

/// `int (L(x, V(x)) + F(x)) m(x) dx`.
fn energy(model: &ModelSpec, v: &ControlField, m: &GridFunction, f: &GridFunction) -> f64 {
    let g = model.grid;
    let d = g.dim();
    (0..g.len())
        .map(|i| {
            let q = v.get(i);
            let l = model.eval_l(g.coords(i), &q[..d]);
            (l + f.values()[i]) * m.values()[i]
        })
        .sum::<f64>()
        * g.cell_volume()
}

/// `int exp((L_tau phi - phi)/tau) dx`.
pub fn log_functional(model: &ModelSpec, phi: &GridFunction) -> Result<f64> {
    let r = lax(model, phi)?;
    let h = h_from_lax(model.tau, phi, &r.lu);
    Ok(h.map(f64::exp).integrate())
}

/// `(int exp((L_tau u - u)/tau) dx, e^rho)` for a log-coupling solution.
pub fn log_coupling_identity(model: &ModelSpec, sol: &DiscreteSolution) -> Result<(f64, f64)> {
    if !matches!(model.coupling, Coupling::Log) {
        return Err(MfgError::Usage(format!(
            "log coupling identity needs a log coupling, model has {}",
            model.coupling.name()
        )));
    }
    Ok((log_functional(model, &sol.u)?, sol.rho.exp()))
}

/// A candidate `(rho, u, m)` together with the control of `L_tau u` and
/// the values of `H_tau u`.
#[derive(Clone, Debug)]
pub struct State {
    pub rho: f64,
    pub u: GridFunction,
    pub m: GridFunction,
    pub v: ControlField,
    pub h: GridFunction,
}

impl State {
    pub fn new(model: &ModelSpec, rho: f64, u: GridFunction, m: GridFunction) -> Result<Self> {
        let r = lax(model, &u)?;
        let h = h_from_lax(model.tau, &u, &r.lu);
        Ok(State { rho, u, m, v: r.v, h })
    }

    pub fn from_solution(model: &ModelSpec, sol: &DiscreteSolution) -> Result<Self> {
        State::new(model, sol.rho, sol.u.clone(), sol.m.as_function().clone())
    }
}

/// `zeta_V w (x) = ((eta^tau * w)(x + tau V(x)) - w(x)) / tau`.
pub fn zeta(model: &ModelSpec, v: &ControlField, w: &GridFunction) -> Result<GridFunction> {
    let k = HeatKernel::new(model.tau, model.grid)?;
    let ev = k.smoothed_evaluator(w);
    let g = model.grid;
    let tau = model.tau;
    Ok(GridFunction::from_vec_unchecked(
        g,
        (0..g.len())
            .map(|i| {
                let x = g.coords(i);
                let q = v.get(i);
                (ev.eval([x[0] + tau * q[0], x[1] + tau * q[1]]) - w.values()[i]) / tau
            })
            .collect(),
    ))
}

/// The three terms of the monotonicity pairing: the two Hamiltonian
/// brackets and the coupling term. Their sum is [`monotonicity_gap`].
pub fn monotonicity_terms(model: &ModelSpec, s1: &State, s2: &State) -> Result<[f64; 3]> {
    let d12 = s1.u.zip_map(&s2.u, |a, b| a - b);
    let d21 = d12.scale(-1.0);
    let z1 = zeta(model, &s1.v, &d12)?;
    let z2 = zeta(model, &s2.v, &d21)?;
    let b1 = GridFunction::from_vec_unchecked(
        model.grid,
        (0..d12.len()).map(|i| s2.h.values()[i] - s1.h.values()[i] + z1.values()[i]).collect(),
    );
    let b2 = GridFunction::from_vec_unchecked(
        model.grid,
        (0..d12.len()).map(|i| s1.h.values()[i] - s2.h.values()[i] + z2.values()[i]).collect(),
    );
    let f1 = coupling_field(model, &s1.m)?;
    let f2 = coupling_field(model, &s2.m)?;
    let cf = f1.zip_map(&f2, |a, b| a - b).dot(&s1.m.zip_map(&s2.m, |a, b| a - b));
    Ok([b1.dot(&s1.m), b2.dot(&s2.m), cf])
}

/// The monotonicity pairing `<A(s1) - A(s2), s1 - s2>`.
pub fn monotonicity_gap(model: &ModelSpec, s1: &State, s2: &State) -> Result<f64> {
    Ok(monotonicity_terms(model, s1, s2)?.iter().sum())
}

/// `<A(lambda, phi, m_t), (lambda - rho, phi - u, m_t - m)>`, non-negative
/// at a solution for every admissible test triple.
pub fn weak_solution_residual(
    model: &ModelSpec,
    sol: &DiscreteSolution,
    lambda: f64,
    phi: &GridFunction,
    m_test: &GridFunction,
) -> Result<f64> {
    let t = State::new(model, lambda, phi.clone(), m_test.clone())?;
    let du = phi.zip_map(&sol.u, |a, b| a - b);
    let first = (1.0 - m_test.integrate()) * (lambda - sol.rho);
    let second = zeta(model, &t.v, &du)?.dot(m_test);
    let f = coupling_field(model, m_test)?;
    let a3 = GridFunction::from_vec_unchecked(
        model.grid,
        (0..phi.len()).map(|i| -t.h.values()[i] + f.values()[i] + lambda).collect(),
    );
    let third = a3.dot(&m_test.zip_map(sol.m.as_function(), |a, b| a - b));
    Ok(first + second + third)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::lax::semiconvexity_modulus;
    use crate::measure::holonomic_residual;
    use crate::models::{KernelMode, NonlocalKernel, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn spec(n: usize, tau: f64, pot: Potential, c: Coupling) -> ModelSpec {
        ModelSpec::new(Grid::new(1, n).unwrap(), tau, pot, c).unwrap()
    }

    fn psi() -> Coupling {
        Coupling::Nonlocal(NonlocalKernel::new(1.0, vec![KernelMode { k: [1, 0], amplitude: 0.5 }]).unwrap())
    }

    fn smooth_random(g: Grid, rng: &mut ChaCha8Rng, amp: f64) -> GridFunction {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-amp..amp)).collect();
        GridFunction::from_fn(g, |x| {
            c[0] * (TWO_PI * x[0]).cos()
                + c[1] * (TWO_PI * x[0]).sin()
                + c[2] * (2.0 * TWO_PI * x[0]).cos()
                + c[3] * (3.0 * TWO_PI * x[0]).sin()
        })
    }

    fn random_density(g: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
        let f = smooth_random(g, rng, 0.2).add_scalar(1.0);
        f.scale(1.0 / f.integrate())
    }

    #[test]
    fn trivial_power_equilibrium() {
        let m = spec(32, 0.1, Potential::zero(), Coupling::power(0.5).unwrap());
        let s = solve_mfg(&m).unwrap();
        assert!((s.rho + 1.0).abs() < 1e-8);
        assert!(s.m.add_scalar(-1.0).sup_norm() < 1e-8);
        assert!(s.v.max_norm() < 1e-8);
        assert!(s.u.osc() < 1e-8);
        assert!(s.all_pass(&m), "{:?}", s.invariants(&m));
    }

    #[test]
    fn trivial_log_equilibrium() {
        let m = spec(32, 0.1, Potential::zero(), Coupling::Log);
        let s = solve_mfg(&m).unwrap();
        assert!(s.rho.abs() < 1e-8);
        let (lhs, rhs) = log_coupling_identity(&m, &s).unwrap();
        assert!((lhs - 1.0).abs() < 1e-8 && (rhs - 1.0).abs() < 1e-8);
    }

    #[test]
    fn benchmark_log_solution() {
        let m = spec(64, 0.1, Potential::cosine(0.5), Coupling::Log);
        let s = solve_mfg(&m).unwrap();
        assert!(s.all_pass(&m), "{:?}", s.invariants(&m));
        let (lhs, rhs) = log_coupling_identity(&m, &s).unwrap();
        assert!((lhs - rhs).abs() <= 1e-6, "{lhs} vs {rhs}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let phi = s.u.zip_map(&smooth_random(m.grid, &mut rng, 0.3), |a, b| a + b);
            assert!(log_functional(&m, &phi).unwrap() >= rhs - 1e-8);
            let f = smooth_random(m.grid, &mut rng, 1.0);
            assert!(holonomic_residual(&m, &s.v, &s.m, &f).unwrap().abs() <= 10.0 * m.tolerances.mfg);
        }
        assert!(log_coupling_identity(&spec(16, 0.1, Potential::zero(), psi()), &s).is_err());
    }

    #[test]
    fn independent_starts_agree() {
        let m = spec(64, 0.1, Potential::cosine(0.5), Coupling::power(0.5).unwrap());
        let a = solve_mfg(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = Start { m: random_density(m.grid, &mut rng), u: smooth_random(m.grid, &mut rng, 1.0) };
        let b = solve_mfg_from(&m, &start).unwrap();
        assert!((a.rho - b.rho).abs() <= 1e-6);
        assert!(a.m.zip_map(&b.m, |x, y| x - y).norm_l1() <= 1e-6);
        assert!(a.u.zip_map(&b.u, |x, y| x - y).osc() <= 1e-6);
    }

    #[test]
    fn monotonicity_pairing() {
        let m = spec(32, 0.1, Potential::cosine(0.5), Coupling::Log);
        let s = solve_mfg(&m).unwrap();
        let base = State::from_solution(&m, &s).unwrap();
        assert!(monotonicity_gap(&m, &base, &base).unwrap().abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mk = |rng: &mut ChaCha8Rng| {
                let u = s.u.zip_map(&smooth_random(m.grid, rng, 0.3), |a, b| a + b);
                let dm = random_density(m.grid, rng);
                let mm = s.m.zip_map(&dm, |a, b| 0.5 * a + 0.5 * b);
                State::new(&m, s.rho + rng.random_range(-0.1..0.1), u, mm).unwrap()
            };
            let s1 = mk(&mut rng);
            let s2 = mk(&mut rng);
            assert!(monotonicity_gap(&m, &s1, &s2).unwrap() >= -1e-8);
            // shared density: each bracket is non-negative on its own
            let s3 = State::new(&m, s2.rho, s2.u.clone(), s1.m.clone()).unwrap();
            let t = monotonicity_terms(&m, &s1, &s3).unwrap();
            assert!(t[0] >= -1e-8 && t[1] >= -1e-8 && t[2].abs() < 1e-14);
        }
    }

    #[test]
    fn weak_pairing() {
        let m = spec(32, 0.1, Potential::zero(), Coupling::power(0.5).unwrap());
        let s = solve_mfg(&m).unwrap();
        let me = s.m.as_function().clone();
        assert!(weak_solution_residual(&m, &s, s.rho, &s.u, &me).unwrap().abs() < 1e-12);
        assert!(weak_solution_residual(&m, &s, s.rho + 0.7, &s.u, &me).unwrap().abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let phi = smooth_random(m.grid, &mut rng, 0.5);
            let mt = random_density(m.grid, &mut rng);
            let lam = s.rho + rng.random_range(-1.0..1.0);
            assert!(weak_solution_residual(&m, &s, lam, &phi, &mt).unwrap() >= -1e-8);
        }
    }

    #[test]
    fn nonlocal_solution_semiconvexity() {
        let m = spec(64, 0.1, Potential::cosine(0.5), psi());
        let s = solve_mfg(&m).unwrap();
        assert!(s.all_pass(&m), "{:?}", s.invariants(&m));
        assert_eq!(s.u.values()[0], 0.0);
        assert!(semiconvexity_modulus(&s.u) >= -m.semiconvexity_bound(1.0));
    }

    #[test]
    fn fictitious_play_converges() {
        let mut m = spec(32, 0.2, Potential::zero(), Coupling::Log);
        m.solver.schedule = Schedule::FictitiousPlay;
        let s = solve_mfg(&m).unwrap();
        assert!(s.rho.abs() < 1e-8);
    }

    #[test]
    fn outer_cap_reports_history() {
        let mut m = spec(32, 0.1, Potential::cosine(0.5), Coupling::Log);
        m.solver.max_mfg_iterations = 2;
        match solve_mfg(&m) {
            Err(MfgError::NonConvergence { solver, history, .. }) => {
                assert_eq!(solver, "MFG fixed point");
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
