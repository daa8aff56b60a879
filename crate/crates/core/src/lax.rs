//! The discrete Lax operator
//! `L_tau u(x) = max_q (eta^tau * u)(x + tau q) - tau L(x, q)`,
//! its kinetic-only part `N_tau`, the normalized operator
//! `H_tau u = (L_tau u - u) / tau`, and the optimal control field.
//!
//! Each node is an independent concave-near-the-optimum maximization.
//! Seeds are the grid nodes `y = x + z` with `|z| <= tau R_max`; there the
//! objective is known exactly from grid values. The lattice local maxima
//! that could still hold the global maximum are then refined by damped
//! Newton in `y = x + tau q` with exact spectral derivatives.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{MfgError, Result};
use crate::grid::{read_table, second_derivative, Grid, GridFunction, Point, TrigEvaluator};
use crate::kernel::HeatKernel;
use crate::models::ModelSpec;

/// Most Newton starts per node.
const MAX_STARTS: usize = 8;
/// Most lattice seeds enumerated per node before the seed lattice is thinned.
const MAX_SEEDS: usize = 20_000;
const MAX_NEWTON: usize = 100;
/// Maxima closer than this in value are ties, resolved by smallest `|q|`.
const TIE_TOL: f64 = 1e-12;

/// A velocity `q(x)` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    grid: Grid,
    q: Vec<[f64; 2]>,
}

impl ControlField {
    pub fn new(grid: Grid, q: Vec<[f64; 2]>) -> Result<Self> {
        if q.len() != grid.len() {
            return Err(MfgError::InvalidGrid(format!(
                "control field has {} entries for a grid of {}",
                q.len(),
                grid.len()
            )));
        }
        Ok(ControlField { grid, q })
    }

    pub fn zeros(grid: Grid) -> Self {
        ControlField { grid, q: vec![[0.0; 2]; grid.len()] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn get(&self, idx: usize) -> [f64; 2] {
        self.q[idx]
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.q
    }

    /// `max_x |q(x)|`.
    pub fn max_norm(&self) -> f64 {
        self.q.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max)
    }

    /// One component as a grid function.
    pub fn component(&self, axis: usize) -> GridFunction {
        GridFunction::from_vec_unchecked(self.grid, self.q.iter().map(|q| q[axis]).collect())
    }

    /// CSV with `d` columns per row, rows in node order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# dim={} n={}", self.grid.dim(), self.grid.n())?;
        for q in &self.q {
            if self.grid.dim() == 1 {
                writeln!(w, "{:e}", q[0])?;
            } else {
                writeln!(w, "{:e},{:e}", q[0], q[1])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (grid, rows) = read_table(r, 0)?;
        let q = rows
            .into_iter()
            .map(|row| [row[0], if grid.dim() == 2 { row[1] } else { 0.0 }])
            .collect();
        ControlField::new(grid, q)
    }
}

/// Output of [`lax`].
#[derive(Clone, Debug)]
pub struct LaxResult {
    pub lu: GridFunction,
    pub v: ControlField,
    pub newton_iters: Vec<u32>,
    /// `max_x |D(eta^tau * u)(x + tau V(x)) - V(x)|`.
    pub optimality_residual: f64,
    /// Nodes that needed the derivative-free fallback.
    pub fallback_nodes: Vec<usize>,
}

struct NodeOpt {
    value: f64,
    q: [f64; 2],
    iters: u32,
    residual: f64,
    fallback: bool,
}

/// Maximization of `y -> W(y) - |y - x|^2 / (2 tau)` at every node, where
/// `W` is a trigonometric polynomial whose node values are `nodes`.
struct KineticProblem<'a> {
    grid: Grid,
    ev: &'a TrigEvaluator,
    nodes: &'a [f64],
    tau: f64,
    r_max: f64,
    opt_tol: f64,
    curvature: f64,
}

impl KineticProblem<'_> {
    fn objective(&self, x: Point, y: Point) -> f64 {
        let d2 = self.dist2(x, y);
        self.ev.eval(y) - d2 / (2.0 * self.tau)
    }

    fn dist2(&self, x: Point, y: Point) -> f64 {
        let a = y[0] - x[0];
        let b = if self.grid.dim() == 2 { y[1] - x[1] } else { 0.0 };
        a * a + b * b
    }

    /// `sup |grad W(y) - q|` with `q = (y - x)/tau`.
    fn residual(&self, x: Point, y: Point) -> f64 {
        let g = self.ev.gradient(y);
        let mut r = 0.0f64;
        for a in 0..self.grid.dim() {
            r = r.max((g[a] - (y[a] - x[a]) / self.tau).abs());
        }
        r
    }

    fn seeds(&self, node: usize) -> Vec<[i64; 2]> {
        let g = self.grid;
        let h = g.h();
        let rad = self.tau * self.r_max / h;
        let r = rad.floor() as i64;
        let dim = g.dim();
        let per_axis = 2 * r + 1;
        let total = if dim == 1 { per_axis } else { per_axis * per_axis };
        let stride = if (total as usize) <= MAX_SEEDS {
            1
        } else {
            let s = (total as f64 / MAX_SEEDS as f64).powf(1.0 / dim as f64).ceil() as i64;
            s.max(2)
        };
        let score = |o: [i64; 2]| -> f64 {
            let d2 = ((o[0] * o[0] + o[1] * o[1]) as f64) * h * h;
            self.nodes[g.shifted(node, o)] - d2 / (2.0 * self.tau)
        };
        let inside = |o: [i64; 2]| ((o[0] * o[0] + o[1] * o[1]) as f64) <= rad * rad;
        let range1 = if dim == 2 { -r..=r } else { 0..=0 };
        let mut cand: Vec<([i64; 2], f64)> = Vec::new();
        for a in -r..=r {
            if a % stride != 0 {
                continue;
            }
            for b in range1.clone() {
                if b % stride != 0 {
                    continue;
                }
                let o = [a, b];
                if !inside(o) {
                    continue;
                }
                let v = score(o);
                // keep lattice local maxima (neighbours outside the ball do not count)
                let mut is_max = true;
                for ax in 0..dim {
                    for s in [-stride, stride] {
                        let mut nb = o;
                        nb[ax] += s;
                        if inside(nb) && score(nb) > v {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    cand.push((o, v));
                }
            }
        }
        if cand.is_empty() {
            cand.push(([0, 0], score([0, 0])));
        }
        cand.sort_by(|p, q| {
            q.1.total_cmp(&p.1).then_with(|| {
                let np = p.0[0] * p.0[0] + p.0[1] * p.0[1];
                let nq = q.0[0] * q.0[0] + q.0[1] * q.0[1];
                np.cmp(&nq)
            })
        });
        let best = cand[0].1;
        let sh = stride as f64 * h;
        let margin = 0.5 * self.curvature * sh * sh * dim as f64;
        cand.into_iter()
            .filter(|c| c.1 >= best - margin)
            .take(MAX_STARTS)
            .map(|c| c.0)
            .collect()
    }

    fn newton(&self, x: Point, y0: Point) -> (Point, u32) {
        let dim = self.grid.dim();
        let mut y = y0;
        let mut f = self.objective(x, y);
        let target = self.opt_tol * 1e-2;
        let mut iters = 0;
        for it in 0..MAX_NEWTON {
            iters = it as u32 + 1;
            let jet = self.ev.jet(y);
            let mut g = [0.0; 2];
            for a in 0..dim {
                g[a] = jet.grad[a] - (y[a] - x[a]) / self.tau;
            }
            if g[0].abs().max(g[1].abs()) <= target {
                break;
            }
            let inv = 1.0 / self.tau;
            let step = if dim == 1 {
                let h = jet.hess[0][0] - inv;
                if h < 0.0 {
                    [-g[0] / h, 0.0]
                } else {
                    [g[0] / self.curvature, 0.0]
                }
            } else {
                let (a, b, c) = (jet.hess[0][0] - inv, jet.hess[0][1], jet.hess[1][1] - inv);
                let det = a * c - b * b;
                if a < 0.0 && det > 0.0 {
                    [-(c * g[0] - b * g[1]) / det, -(-b * g[0] + a * g[1]) / det]
                } else {
                    [g[0] / self.curvature, g[1] / self.curvature]
                }
            };
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand = [y[0] + t * step[0], y[1] + t * step[1]];
                let fc = self.objective(x, cand);
                if fc >= f - 1e-15 * f.abs().max(1.0) {
                    y = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let moved = t * (step[0].abs() + step[1].abs());
            if !accepted || moved < 1e-16 {
                break;
            }
        }
        (y, iters)
    }

    /// Compass search with shrinking step, used when Newton stalls.
    fn fallback(&self, x: Point, y0: Point) -> Point {
        let dim = self.grid.dim();
        let mut y = y0;
        let mut f = self.objective(x, y);
        let mut step = self.grid.h();
        let dirs: &[[f64; 2]] = if dim == 1 {
            &[[1.0, 0.0], [-1.0, 0.0]]
        } else {
            &[
                [1.0, 0.0],
                [-1.0, 0.0],
                [0.0, 1.0],
                [0.0, -1.0],
                [1.0, 1.0],
                [1.0, -1.0],
                [-1.0, 1.0],
                [-1.0, -1.0],
            ]
        };
        while step > 1e-14 {
            let mut improved = false;
            for d in dirs {
                let cand = [y[0] + step * d[0], y[1] + step * d[1]];
                let fc = self.objective(x, cand);
                if fc > f {
                    y = cand;
                    f = fc;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        y
    }

    fn solve_node(&self, node: usize) -> Result<NodeOpt> {
        let g = self.grid;
        let h = g.h();
        let x = g.coords(node);
        let mut best: Option<(f64, Point, u32)> = None;
        let mut total_iters = 0;
        for o in self.seeds(node) {
            let y0 = [x[0] + o[0] as f64 * h, x[1] + o[1] as f64 * h];
            let (y, it) = self.newton(x, y0);
            total_iters += it;
            let v = self.objective(x, y);
            let better = match best {
                None => true,
                Some((bv, by, _)) => {
                    v > bv + TIE_TOL || (v >= bv - TIE_TOL && self.dist2(x, y) < self.dist2(x, by))
                }
            };
            if better {
                best = Some((v, y, it));
            }
        }
        let (mut value, mut y, _) = best.expect("at least one seed");
        let mut residual = self.residual(x, y);
        let mut fallback = false;
        if residual > self.opt_tol {
            let yf = self.fallback(x, y);
            let vf = self.objective(x, yf);
            if vf >= value {
                y = yf;
                value = vf;
                residual = self.residual(x, y);
            }
            fallback = true;
        }
        let q = [(y[0] - x[0]) / self.tau, if g.dim() == 2 { (y[1] - x[1]) / self.tau } else { 0.0 }];
        let qn = q[0].hypot(q[1]);
        if qn >= self.r_max * (1.0 - 1e-9) {
            return Err(MfgError::SearchRadius { node, q_norm: qn, r_max: self.r_max });
        }
        Ok(NodeOpt { value, q, iters: total_iters, residual, fallback })
    }

    fn solve_all(&self) -> Result<Vec<NodeOpt>> {
        (0..self.grid.len()).into_par_iter().map(|i| self.solve_node(i)).collect()
    }
}

/// `R_max = max(2 (1 + Lip W), sqrt(c1 (max|L(., 0)| + 2 osc(u)/tau) + c2))`.
fn search_radius(lip: f64, osc: f64, tau: f64, max_abs_l0: f64, c2: f64) -> f64 {
    let c1 = 2.0;
    (2.0 * (1.0 + lip)).max((c1 * (max_abs_l0 + 2.0 * osc / tau) + c2).sqrt())
}

fn assemble(grid: Grid, opts: Vec<NodeOpt>, offset: impl Fn(usize) -> f64) -> LaxResult {
    let mut lu = Vec::with_capacity(opts.len());
    let mut q = Vec::with_capacity(opts.len());
    let mut iters = Vec::with_capacity(opts.len());
    let mut fallback_nodes = Vec::new();
    let mut residual = 0.0f64;
    for (i, o) in opts.into_iter().enumerate() {
        lu.push(o.value + offset(i));
        q.push(o.q);
        iters.push(o.iters);
        residual = residual.max(o.residual);
        if o.fallback {
            fallback_nodes.push(i);
        }
    }
    if !fallback_nodes.is_empty() {
        log::warn!(
            "Newton did not reach the optimality tolerance at {} node(s); used compass search (residual {:e})",
            fallback_nodes.len(),
            residual
        );
    }
    LaxResult {
        lu: GridFunction::from_vec_unchecked(grid, lu),
        v: ControlField { grid, q },
        newton_iters: iters,
        optimality_residual: residual,
        fallback_nodes,
    }
}

fn check_grid(model: &ModelSpec, u: &GridFunction) -> Result<()> {
    if u.grid() != model.grid {
        return Err(MfgError::InvalidGrid("function grid differs from the model grid".into()));
    }
    Ok(())
}

/// `L_tau u` together with the optimal control.
pub fn lax(model: &ModelSpec, u: &GridFunction) -> Result<LaxResult> {
    check_grid(model, u)?;
    let tau = model.tau;
    let kernel = HeatKernel::new(tau, model.grid)?;
    let ev = kernel.smoothed_evaluator(u);
    let smoothed = kernel.smooth(u);
    let pot = model.potential_on_grid();
    let umax_abs = pot.sup_norm();
    let c2 = (2.0 * pot.max()).max(0.0);
    let prob = KineticProblem {
        grid: model.grid,
        ev: &ev,
        nodes: smoothed.values(),
        tau,
        r_max: search_radius(ev.lipschitz_bound(), u.osc(), tau, umax_abs, c2),
        opt_tol: model.tolerances.opt,
        curvature: ev.curvature_bound() + 1.0 / tau,
    };
    let opts = prob.solve_all()?;
    let pv = pot.values();
    Ok(assemble(model.grid, opts, |i| tau * pv[i]))
}

/// `N_tau w(x) = max_v w(x + tau v) - tau |v|^2 / 2` over the interpolant of `w`.
pub fn n_tau(model: &ModelSpec, w: &GridFunction) -> Result<GridFunction> {
    Ok(n_tau_full(model, w)?.lu)
}

/// [`n_tau`] with the maximizers.
pub fn n_tau_full(model: &ModelSpec, w: &GridFunction) -> Result<LaxResult> {
    check_grid(model, w)?;
    let tau = model.tau;
    let ev = w.to_spectral().evaluator();
    let prob = KineticProblem {
        grid: model.grid,
        ev: &ev,
        nodes: w.values(),
        tau,
        r_max: search_radius(ev.lipschitz_bound(), w.osc(), tau, 0.0, 0.0),
        opt_tol: model.tolerances.opt,
        curvature: ev.curvature_bound() + 1.0 / tau,
    };
    let opts = prob.solve_all()?;
    Ok(assemble(model.grid, opts, |_| 0.0))
}

/// `H_tau u = (L_tau u - u) / tau`.
pub fn h_tau(model: &ModelSpec, u: &GridFunction) -> Result<GridFunction> {
    let r = lax(model, u)?;
    Ok(h_from_lax(model.tau, u, &r.lu))
}

pub(crate) fn h_from_lax(tau: f64, u: &GridFunction, lu: &GridFunction) -> GridFunction {
    lu.zip_map(u, |a, b| (a - b) / tau)
}

/// `sup_x |(L_tau phi - phi)/tau - Delta phi - H(x, D phi)|`.
pub fn consistency_error(model: &ModelSpec, phi: &GridFunction) -> Result<f64> {
    let r = lax(model, phi)?;
    let h = h_from_lax(model.tau, phi, &r.lu);
    let lap = phi.laplacian();
    let grad = phi.gradient();
    let pot = model.potential_on_grid();
    let mut err = 0.0f64;
    for i in 0..model.grid.len() {
        let p2: f64 = grad.iter().map(|g| g.values()[i].powi(2)).sum();
        let ham = 0.5 * p2 + pot.values()[i];
        err = err.max((h.values()[i] - lap.values()[i] - ham).abs());
    }
    Ok(err)
}

/// Defect of the first-order expansion at the computed maximizer,
/// `(L_tau phi - phi)/tau - (Delta phi + <D phi, q> - L(x, q))`, together
/// with the Taylor bound
/// `tau (|D^2 Delta phi| / 2 + |q| |D Delta phi| + |q|^2 |D^2 phi| / 2)`.
pub fn inner_consistency(model: &ModelSpec, phi: &GridFunction) -> Result<(f64, f64)> {
    let tau = model.tau;
    let r = lax(model, phi)?;
    let h = h_from_lax(tau, phi, &r.lu);
    let lap = phi.laplacian();
    let grad = phi.gradient();
    let pot = model.potential_on_grid();
    let mut defect = 0.0f64;
    for i in 0..model.grid.len() {
        let q = r.v.get(i);
        let dot: f64 = grad.iter().enumerate().map(|(a, g)| g.values()[i] * q[a]).sum();
        let l = 0.5 * (q[0] * q[0] + q[1] * q[1]) - pot.values()[i];
        defect = defect.max((h.values()[i] - (lap.values()[i] + dot - l)).abs());
    }
    let qmax = r.v.max_norm();
    let lap_ev = lap.to_spectral().evaluator();
    let phi_ev = phi.to_spectral().evaluator();
    let bound = tau
        * (0.5 * lap_ev.curvature_bound()
            + qmax * lap_ev.lipschitz_bound()
            + 0.5 * qmax * qmax * phi_ev.curvature_bound());
    Ok((defect, bound))
}

/// Smallest second difference `(u(x+h) - 2u(x) + u(x-h)) / |h|^2` over nodes,
/// step sizes `h, 2h, 4h` and the axis (and, in 2D, diagonal) directions.
pub fn semiconvexity_modulus(u: &GridFunction) -> f64 {
    let g = u.grid();
    let dirs: Vec<[i64; 2]> =
        if g.dim() == 1 { vec![[1, 0]] } else { vec![[1, 0], [0, 1], [1, 1], [1, -1]] };
    let v = u.values();
    let mut best = f64::INFINITY;
    for s in [1i64, 2, 4] {
        for d in &dirs {
            let o = [d[0] * s, d[1] * s];
            let len2 = ((o[0] * o[0] + o[1] * o[1]) as f64) * g.h() * g.h();
            for i in 0..g.len() {
                let p = v[g.shifted(i, o)];
                let m = v[g.shifted(i, [-o[0], -o[1]])];
                best = best.min((p - 2.0 * v[i] + m) / len2);
            }
        }
    }
    best
}

/// Largest second derivative of a band-limited function along the axes,
/// from the spectral second derivatives.
pub fn spectral_curvature(u: &GridFunction) -> f64 {
    (0..u.grid().dim()).map(|a| second_derivative(u, a).max()).fold(f64::NEG_INFINITY, f64::max)
}
