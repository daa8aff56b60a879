//! One-dimensional reference solver for the stationary continuum system
//!
//! ```text
//! v'' + |v'|^2/2 + U = rho + F(x, m),    m'' - (m v')' = 0,    int m = 1,
//! ```
//!
//! used as the oracle for the small-`tau` limit. For the quadratic
//! Hamiltonian the Fokker-Planck equation is solved by `m = e^v / int e^v`,
//! which leaves one scalar equation in `(v, rho)`. It is discretized
//! spectrally and solved by damped Newton with a dense Jacobian, with
//! `int v = 0` closing the system.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{second_derivative, Grid, GridFunction};
use crate::mfg::{solve_mfg, DiscreteSolution};
use crate::models::{Coupling, ModelSpec, Potential, PotentialMode};

const TWO_PI: f64 = 2.0 * PI;
const MAX_NEWTON: usize = 100;

#[derive(Clone, Debug)]
pub struct ContinuumSolution {
    pub rho: f64,
    /// Value function with `int v = 0`.
    pub v: GridFunction,
    pub m: GridFunction,
    pub newton_iters: usize,
    /// `sup |v'' + |v'|^2/2 + U - rho - F(m)|`.
    pub residual: f64,
    /// `sup |m'' - (m v')'|`.
    pub fp_residual: f64,
}

fn derivative_matrices(grid: Grid) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = grid.n();
    let mut d1 = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let f = GridFunction::new(grid, e).expect("unit vector");
        let g = &f.gradient()[0];
        let s = second_derivative(&f, 0);
        for i in 0..n {
            d1[(i, j)] = g.values()[i];
            d2[(i, j)] = s.values()[i];
        }
    }
    (d1, d2)
}

struct Eval {
    res: DVector<f64>,
    m: Vec<f64>,
    dv: Vec<f64>,
}

struct Problem {
    grid: Grid,
    coupling: Coupling,
    u: Vec<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    /// `h psi(x_i - x_j)` for nonlocal couplings.
    conv: Option<DMatrix<f64>>,
}

impl Problem {
    fn new(model: &ModelSpec) -> Result<Self> {
        if model.dim() != 1 {
            return Err(MfgError::Parameter("the continuum reference is one-dimensional".into()));
        }
        let grid = model.grid;
        let (d1, d2) = derivative_matrices(grid);
        let conv = match &model.coupling {
            Coupling::Nonlocal(psi) => {
                let n = grid.n();
                let h = grid.h();
                Some(DMatrix::from_fn(n, n, |i, j| h * psi.eval([(i as f64 - j as f64) * h, 0.0])))
            }
            _ => None,
        };
        Ok(Problem {
            grid,
            coupling: model.coupling.clone(),
            u: model.potential_on_grid().into_values(),
            d1,
            d2,
            conv,
        })
    }

    fn eval(&self, x: &DVector<f64>) -> Eval {
        let n = self.grid.n();
        let h = self.grid.h();
        let v = x.rows(0, n).into_owned();
        let rho = x[n];
        let vmax = v.max();
        let w: Vec<f64> = v.iter().map(|&a| (a - vmax).exp()).collect();
        let z: f64 = w.iter().sum::<f64>() * h;
        let m: Vec<f64> = w.iter().map(|a| a / z).collect();
        let f: Vec<f64> = match (&self.coupling, &self.conv) {
            (Coupling::Log, _) => v.iter().map(|&a| a - vmax - z.ln()).collect(),
            (Coupling::Nonlocal(_), Some(c)) => (c * DVector::from_column_slice(&m)).iter().copied().collect(),
            (Coupling::Power { .. }, _) => m.iter().map(|&a| self.coupling.local_value(a)).collect(),
            _ => unreachable!("nonlocal coupling without convolution matrix"),
        };
        let dv = &self.d1 * &v;
        let d2v = &self.d2 * &v;
        let mut res = DVector::zeros(n + 1);
        for i in 0..n {
            res[i] = d2v[i] + 0.5 * dv[i] * dv[i] + self.u[i] - rho - f[i];
        }
        res[n] = v.sum() * h;
        Eval { res, m, dv: dv.iter().copied().collect() }
    }

    fn jacobian(&self, e: &Eval) -> DMatrix<f64> {
        let n = self.grid.n();
        let h = self.grid.h();
        let mut j = DMatrix::zeros(n + 1, n + 1);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = self.d2[(r, c)] + e.dv[r] * self.d1[(r, c)];
            }
            j[(r, n)] = -1.0;
        }
        // dm_l / dv_c = m_l (delta_lc - h m_c)
        match (&self.coupling, &self.conv) {
            (Coupling::Nonlocal(_), Some(conv)) => {
                for r in 0..n {
                    let cm: f64 = (0..n).map(|l| conv[(r, l)] * e.m[l]).sum();
                    for c in 0..n {
                        j[(r, c)] -= conv[(r, c)] * e.m[c] - cm * h * e.m[c];
                    }
                }
            }
            _ => {
                for r in 0..n {
                    let fp = match self.coupling {
                        Coupling::Log => 1.0 / e.m[r],
                        _ => self.coupling.local_derivative(e.m[r]),
                    };
                    for c in 0..n {
                        let dm = e.m[r] * (if r == c { 1.0 } else { 0.0 } - h * e.m[c]);
                        j[(r, c)] -= fp * dm;
                    }
                }
            }
        }
        for c in 0..n {
            j[(n, c)] = h;
        }
        j
    }
}

fn sup(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Solve the continuum system for a one-dimensional model.
pub fn solve_continuum(model: &ModelSpec) -> Result<ContinuumSolution> {
    let p = Problem::new(model)?;
    let n = p.grid.n();
    let tol = model.tolerances.reference;
    let mut x = DVector::zeros(n + 1);
    let mut e = p.eval(&x);
    let mut norm = sup(&e.res);
    let mut trace = vec![norm];
    let mut iters = 0;
    while norm > tol {
        if iters >= MAX_NEWTON {
            return Err(MfgError::NonConvergence {
                solver: "continuum Newton",
                iterations: iters,
                detail: format!("residual {norm:e} above {tol:e}; history holds residual norms"),
                history: trace,
            });
        }
        iters += 1;
        let jac = p.jacobian(&e);
        let step = jac.lu().solve(&(-&e.res)).ok_or_else(|| MfgError::NonConvergence {
            solver: "continuum Newton",
            iterations: iters,
            detail: "singular Jacobian".into(),
            history: trace.clone(),
        })?;
        let mut t = 1.0;
        loop {
            let cand = &x + t * &step;
            let ec = p.eval(&cand);
            let nc = sup(&ec.res);
            if nc < norm || t < 1e-8 {
                x = cand;
                e = ec;
                norm = nc;
                break;
            }
            t *= 0.5;
        }
        trace.push(norm);
        log::debug!("continuum Newton {iters}: residual {norm:e}, damping {t}");
        if t < 1e-8 && iters > 5 && trace[trace.len() - 2] <= norm {
            return Err(MfgError::NonConvergence {
                solver: "continuum Newton",
                iterations: iters,
                detail: "line search stalled; history holds residual norms".into(),
                history: trace,
            });
        }
    }
    let v = GridFunction::new(p.grid, x.rows(0, n).iter().copied().collect())?;
    let m = GridFunction::new(p.grid, e.m.clone())?;
    let flux = m.zip_map(&v.gradient()[0], |a, b| a * b);
    let fp = m.laplacian().zip_map(&flux.gradient()[0], |a, b| a - b).sup_norm();
    Ok(ContinuumSolution { rho: x[n], v, m, newton_iters: iters, residual: norm, fp_residual: fp })
}

/// `int (phi'' + phi' v') m dx`, zero for the holonomic measure of `(m, v')`.
pub fn continuum_holonomic_residual(sol: &ContinuumSolution, phi: &GridFunction) -> f64 {
    let d = &phi.gradient()[0];
    let dv = &sol.v.gradient()[0];
    let lap = phi.laplacian();
    let integrand = lap.zip_map(&d.zip_map(dv, |a, b| a * b), |a, b| a + b);
    integrand.dot(&sol.m)
}

/// Exact solution built by choosing `v* = A cos(2 pi x)`, `rho* = 0`,
/// `F = log` and solving for the potential.
#[derive(Clone, Debug)]
pub struct Manufactured {
    pub amplitude: f64,
    pub potential: Potential,
    pub log_z: f64,
}

impl Manufactured {
    pub fn new(amplitude: f64) -> Self {
        // Z = int exp(A cos 2 pi x), by the periodic trapezoid rule
        let nz = 4096;
        let z: f64 = (0..nz).map(|i| (amplitude * (TWO_PI * i as f64 / nz as f64).cos()).exp()).sum::<f64>()
            / nz as f64;
        let log_z = z.ln();
        let a = amplitude;
        let p2 = PI * PI * a * a;
        let potential = Potential {
            constant: -p2 - log_z,
            modes: vec![
                PotentialMode { k: [1, 0], cos: a + 4.0 * PI * PI * a, sin: 0.0 },
                PotentialMode { k: [2, 0], cos: p2, sin: 0.0 },
            ],
        };
        Manufactured { amplitude, potential, log_z }
    }

    pub fn v(&self, x: f64) -> f64 {
        self.amplitude * (TWO_PI * x).cos()
    }

    pub fn m(&self, x: f64) -> f64 {
        (self.v(x) - self.log_z).exp()
    }

    pub fn model(&self, n: usize) -> Result<ModelSpec> {
        ModelSpec::new(Grid::new(1, n)?, 0.1, self.potential.clone(), Coupling::Log)
    }
}

/// One row of a discrete-versus-continuum comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub rho_err: f64,
    pub u_err: f64,
    pub m_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub reference_rho: f64,
    pub reference_residual: f64,
    /// `"sup"` for nonlocal couplings, `"weak"` for local ones.
    pub u_metric: &'static str,
}

impl ConvergenceReport {
    /// Whether each error column is strictly decreasing; `None` with fewer
    /// than two rows.
    pub fn strictly_decreasing(&self) -> Option<[bool; 3]> {
        if self.rows.len() < 2 {
            return None;
        }
        let dec = |f: fn(&ConvergenceRow) -> f64| self.rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
        Some([dec(|r| r.rho_err), dec(|r| r.u_err), dec(|r| r.m_err)])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,rho_err,u_err,m_err")?;
        for r in &self.rows {
            writeln!(w, "{:e},{:e},{:e},{:e}", r.tau, r.rho_err, r.u_err, r.m_err)?;
        }
        Ok(())
    }
}

/// The fixed smooth weights of the weak `u` comparison.
pub fn weak_test_functions(grid: Grid) -> Vec<GridFunction> {
    vec![
        GridFunction::constant(grid, 1.0),
        GridFunction::from_fn(grid, |x| 1.0 + (TWO_PI * x[0]).cos()),
        GridFunction::from_fn(grid, |x| (TWO_PI * x[0]).sin().exp()),
        GridFunction::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * TWO_PI * x[0]).cos() + 0.3 * (TWO_PI * x[0]).sin()),
        GridFunction::from_fn(grid, |x| (PI * x[0]).sin().powi(2)),
    ]
}

/// Errors of one discrete solution against the continuum solution.
pub fn compare(model: &ModelSpec, disc: &DiscreteSolution, cont: &ContinuumSolution) -> ConvergenceRow {
    let rho_err = (disc.rho - cont.rho).abs();
    let m_err = disc.m.zip_map(&cont.m, |a, b| a - b).norm_l1();
    let u_err = if model.coupling.is_local() {
        let v = cont.v.add_scalar(-cont.v.max());
        let d = disc.u.zip_map(&v, |a, b| a - b);
        weak_test_functions(model.grid).iter().map(|g| d.dot(g).abs()).fold(0.0, f64::max)
    } else {
        let node = match model.normalization {
            crate::models::Normalization::Point { node } => node,
            crate::models::Normalization::MaxSmooth => 0,
        };
        let d = disc.u.zip_map(&cont.v, |a, b| a - b);
        d.add_scalar(-d.values()[node]).sup_norm()
    };
    ConvergenceRow { tau: model.tau, rho_err, u_err, m_err }
}

/// Solve the continuum problem once and the discrete one for each `tau`.
pub fn convergence_report(model: &ModelSpec, taus: &[f64]) -> Result<ConvergenceReport> {
    let cont = solve_continuum(model)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let m = model.with_tau(tau)?;
        let disc = solve_mfg(&m)?;
        rows.push(compare(&m, &disc, &cont));
    }
    Ok(ConvergenceReport {
        rows,
        reference_rho: cont.rho,
        reference_residual: cont.residual,
        u_metric: if model.coupling.is_local() { "weak" } else { "sup" },
    })
}
