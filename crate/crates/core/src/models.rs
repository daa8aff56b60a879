//! Lagrangians, Hamiltonians and couplings, plus the full problem
//! description [`ModelSpec`].
//!
//! The built-in Lagrangian is separable and quadratic,
//! `L(x, q) = |q|^2 / 2 - U(x)`, with `U` a finite trigonometric polynomial.
//! Its Legendre dual is `H(x, p) = |p|^2 / 2 + U(x)` and `D_p H(x, p) = p`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{Grid, GridFunction, Point};

const TWO_PI: f64 = 2.0 * PI;

/// One Fourier term `cos * cos(2 pi k.x) + sin * sin(2 pi k.x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PotentialMode {
    pub k: [i64; 2],
    pub cos: f64,
    pub sin: f64,
}

/// The potential `U`, a finite trigonometric polynomial.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Potential {
    pub constant: f64,
    pub modes: Vec<PotentialMode>,
}

impl Potential {
    pub fn zero() -> Self {
        Potential::default()
    }

    /// `amplitude * cos(2 pi x_0)`.
    pub fn cosine(amplitude: f64) -> Self {
        Potential {
            constant: 0.0,
            modes: vec![PotentialMode { k: [1, 0], cos: amplitude, sin: 0.0 }],
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.constant
            + self
                .modes
                .iter()
                .map(|m| {
                    let ph = TWO_PI * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1]);
                    m.cos * ph.cos() + m.sin * ph.sin()
                })
                .sum::<f64>()
    }

    pub fn gradient(&self, x: Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let ph = TWO_PI * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1]);
            let d = TWO_PI * (-m.cos * ph.sin() + m.sin * ph.cos());
            g[0] += d * m.k[0] as f64;
            g[1] += d * m.k[1] as f64;
        }
        g
    }

    pub fn on_grid(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Bound on the second derivatives, `sum_k |(a_k, b_k)| |2 pi k|^2`.
    pub fn curvature_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k2 = (m.k[0] * m.k[0] + m.k[1] * m.k[1]) as f64;
                m.cos.hypot(m.sin) * TWO_PI * TWO_PI * k2
            })
            .sum()
    }

    /// Continuum `(min U, max U)`.
    pub fn extrema(&self, dim: usize) -> (f64, f64) {
        let lo = -extremum(dim, |x| -self.eval(x), |x| neg(self.gradient(x)));
        let hi = extremum(dim, |x| self.eval(x), |x| self.gradient(x));
        (lo, hi)
    }

    fn max_wavenumber(&self) -> i64 {
        self.modes.iter().map(|m| m.k[0].abs().max(m.k[1].abs())).max().unwrap_or(0)
    }
}

fn neg(g: [f64; 2]) -> [f64; 2] {
    [-g[0], -g[1]]
}

/// Maximum of a smooth periodic function: dense sampling followed by
/// gradient ascent with step halving from the best samples.
fn extremum(dim: usize, f: impl Fn(Point) -> f64, grad: impl Fn(Point) -> [f64; 2]) -> f64 {
    let n = if dim == 1 { 2048 } else { 128 };
    let mut samples: Vec<(f64, Point)> = Vec::new();
    for i in 0..n {
        if dim == 1 {
            let x = [i as f64 / n as f64, 0.0];
            samples.push((f(x), x));
        } else {
            for j in 0..n {
                let x = [i as f64 / n as f64, j as f64 / n as f64];
                samples.push((f(x), x));
            }
        }
    }
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = samples[0].0;
    for &(v0, x0) in samples.iter().take(4) {
        let (mut x, mut v) = (x0, v0);
        let mut step = 1e-3;
        for _ in 0..2000 {
            let g = grad(x);
            let gn = g[0].hypot(if dim == 2 { g[1] } else { 0.0 });
            if gn < 1e-14 || step < 1e-16 {
                break;
            }
            let cand = if dim == 1 {
                [x[0] + step * g[0] / gn, 0.0]
            } else {
                [x[0] + step * g[0] / gn, x[1] + step * g[1] / gn]
            };
            let fc = f(cand);
            if fc > v {
                x = cand;
                v = fc;
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        best = best.max(v);
    }
    best
}

/// Separable quadratic Lagrangian `L(x, q) = |q|^2/2 - U(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lagrangian {
    pub potential: Potential,
}

impl Lagrangian {
    pub fn new(potential: Potential) -> Self {
        Lagrangian { potential }
    }

    pub fn kinetic(q: &[f64]) -> f64 {
        0.5 * q.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn eval(&self, x: Point, q: &[f64]) -> f64 {
        Self::kinetic(q) - self.potential.eval(x)
    }

    /// `D_q L(x, q) = q`.
    pub fn d_q(&self, _x: Point, q: &[f64]) -> [f64; 2] {
        [q[0], if q.len() > 1 { q[1] } else { 0.0 }]
    }

    /// Uniform convexity constant of `D_qq L` (identity).
    pub fn c0(&self) -> f64 {
        1.0
    }

    /// Coercivity constants `(c1, c2)` of `|q|^2 <= c1 L + c2`.
    pub fn coercivity(&self, dim: usize) -> (f64, f64) {
        let (_, umax) = self.potential.extrema(dim);
        (2.0, (2.0 * umax).max(0.0))
    }

    /// Semiconcavity constants `(k1, k2)` of the second difference of `L`.
    pub fn semiconcavity(&self) -> (f64, f64) {
        (self.potential.curvature_bound(), 1.0)
    }

    /// `min_{x,q} L = -max U`.
    pub fn min_value(&self, dim: usize) -> f64 {
        -self.potential.extrema(dim).1
    }

    /// `max_x L(x, 0) = -min U`.
    pub fn max_at_rest(&self, dim: usize) -> f64 {
        -self.potential.extrema(dim).0
    }

    pub fn hamiltonian(&self) -> Hamiltonian {
        Hamiltonian { potential: self.potential.clone() }
    }
}

/// `H(x, p) = |p|^2/2 + U(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian {
    pub potential: Potential,
}

impl Hamiltonian {
    pub fn eval(&self, x: Point, p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + self.potential.eval(x)
    }

    /// `D_p H(x, p) = p`.
    pub fn d_p(&self, _x: Point, p: &[f64]) -> [f64; 2] {
        [p[0], if p.len() > 1 { p[1] } else { 0.0 }]
    }
}

/// One cosine term `amplitude * cos(2 pi k.x)` of a nonlocal kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelMode {
    pub k: [i64; 2],
    pub amplitude: f64,
}

/// Positive-definite convolution kernel `psi(x) = constant + sum a_k cos(2 pi k.x)`
/// with every `a_k > 0` and `constant > 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonlocalKernel {
    pub constant: f64,
    pub modes: Vec<KernelMode>,
}

impl NonlocalKernel {
    pub fn new(constant: f64, modes: Vec<KernelMode>) -> Result<Self> {
        if constant <= 0.0 {
            return Err(MfgError::Parameter(
                "nonlocal kernel constant term must be positive".into(),
            ));
        }
        if let Some(m) = modes.iter().find(|m| m.amplitude <= 0.0 || m.k == [0, 0]) {
            return Err(MfgError::Parameter(format!(
                "nonlocal kernel modes need k != 0 and positive amplitude, got k={:?} a={}",
                m.k, m.amplitude
            )));
        }
        Ok(NonlocalKernel { constant, modes })
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.constant
            + self
                .modes
                .iter()
                .map(|m| {
                    m.amplitude
                        * (TWO_PI * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1])).cos()
                })
                .sum::<f64>()
    }

    fn gradient(&self, x: Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let s = -m.amplitude
                * TWO_PI
                * (TWO_PI * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1])).sin();
            g[0] += s * m.k[0] as f64;
            g[1] += s * m.k[1] as f64;
        }
        g
    }

    /// Fourier coefficient `psi_hat(k)`.
    pub fn fourier(&self, k: [i64; 2]) -> f64 {
        if k == [0, 0] {
            return self.constant;
        }
        self.modes
            .iter()
            .filter(|m| m.k == k || m.k == [-k[0], -k[1]])
            .map(|m| 0.5 * m.amplitude)
            .sum()
    }

    /// `(psi * m)` on the grid.
    pub fn convolve(&self, m: &GridFunction) -> GridFunction {
        m.to_spectral().multiply(|k| Complex64::new(self.fourier(k), 0.0)).to_grid()
    }

    /// `(min psi, max psi)`.
    pub fn extrema(&self, dim: usize) -> (f64, f64) {
        let lo = -extremum(dim, |x| -self.eval(x), |x| neg(self.gradient(x)));
        (lo, self.constant + self.modes.iter().map(|m| m.amplitude).sum::<f64>())
    }

    /// Second-difference constant for unit mass, `sum_k a_k |2 pi k|^2`.
    pub fn curvature_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.amplitude * TWO_PI * TWO_PI * (m.k[0] * m.k[0] + m.k[1] * m.k[1]) as f64)
            .sum()
    }
}

/// The coupling `F(x, m)` through which players feel the population.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// `F(m) = m^a`, `0 < a < 1`.
    Power { exponent: f64 },
    /// `F(m) = log m`.
    Log,
    /// `F(x, m) = (psi * m)(x)`.
    Nonlocal(NonlocalKernel),
}

impl Coupling {
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(MfgError::Parameter(format!(
                "power coupling exponent must lie in (0, 1), got {exponent}"
            )));
        }
        Ok(Coupling::Power { exponent })
    }

    pub fn is_local(&self) -> bool {
        !matches!(self, Coupling::Nonlocal(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Coupling::Power { .. } => "power",
            Coupling::Log => "log",
            Coupling::Nonlocal(_) => "nonlocal",
        }
    }

    /// Pointwise local coupling `F(m)`.
    pub fn local_value(&self, m: f64) -> f64 {
        match self {
            Coupling::Power { exponent } => m.max(0.0).powf(*exponent),
            Coupling::Log => m.ln(),
            Coupling::Nonlocal(_) => panic!("local_value called on a nonlocal coupling"),
        }
    }

    /// `F'(m)` for local couplings.
    pub fn local_derivative(&self, m: f64) -> f64 {
        match self {
            Coupling::Power { exponent } => exponent * m.max(0.0).powf(exponent - 1.0),
            Coupling::Log => 1.0 / m,
            Coupling::Nonlocal(_) => panic!("local_derivative called on a nonlocal coupling"),
        }
    }

    /// The field `x -> F(x, m)` on the grid.
    pub fn field(&self, m: &GridFunction) -> Result<GridFunction> {
        match self {
            Coupling::Log => {
                if let Some(i) = m.values().iter().position(|&v| v <= 0.0) {
                    return Err(MfgError::Domain {
                        what: format!("log coupling needs m > 0, found m = {:e}", m.values()[i]),
                        node: i,
                    });
                }
                Ok(m.map(f64::ln))
            }
            Coupling::Power { exponent } => Ok(m.map(|v| v.max(0.0).powf(*exponent))),
            Coupling::Nonlocal(psi) => Ok(psi.convolve(m)),
        }
    }

    /// `F(x, m)` at an arbitrary point, through the interpolant of `m`.
    pub fn eval_at(&self, x: Point, m: &GridFunction) -> Result<f64> {
        match self {
            Coupling::Nonlocal(psi) => Ok(psi.convolve(m).to_spectral().eval_offgrid(x)),
            _ => {
                let mx = m.to_spectral().eval_offgrid(x);
                if matches!(self, Coupling::Log) && mx <= 0.0 {
                    return Err(MfgError::Domain {
                        what: format!("log coupling needs m > 0, interpolant is {mx:e}"),
                        node: 0,
                    });
                }
                Ok(self.local_value(mx))
            }
        }
    }

    /// `(a_F, b_F)`: lower and upper bounds of the coupling over the
    /// relevant densities.
    pub fn bounds(&self, dim: usize) -> (f64, f64) {
        match self {
            Coupling::Power { .. } => (0.0, 1.0),
            Coupling::Log => (0.0, 0.0),
            Coupling::Nonlocal(psi) => psi.extrema(dim),
        }
    }

    /// Second-difference constant `k0` (zero for local couplings).
    pub fn k0(&self) -> f64 {
        match self {
            Coupling::Nonlocal(psi) => psi.curvature_bound(),
            _ => 0.0,
        }
    }
}

/// `int (F(m1) - F(m2)) d(m1 - m2)`.
pub fn monotonicity_selfcheck(
    coupling: &Coupling,
    m1: &GridFunction,
    m2: &GridFunction,
) -> Result<f64> {
    let f1 = coupling.field(m1)?;
    let f2 = coupling.field(m2)?;
    let df = f1.zip_map(&f2, |a, b| a - b);
    let dm = m1.zip_map(m2, |a, b| a - b);
    Ok(df.dot(&dm))
}

/// How the additive constant of `u` is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// `u(x0) = 0` at the given node.
    Point { node: usize },
    /// `max (eta^tau * u) = 0`.
    MaxSmooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub hj: f64,
    pub fp: f64,
    pub mfg: f64,
    pub opt: f64,
    pub reference: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { hj: 1e-9, fp: 1e-10, mfg: 1e-7, opt: 1e-8, reference: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Constant damping with halving when the residual oscillates.
    Picard,
    /// Weights `1/(j+1)`.
    FictitiousPlay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverSettings {
    pub damping: f64,
    pub schedule: Schedule,
    pub max_hj_iterations: usize,
    pub max_fp_iterations: usize,
    pub max_mfg_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            damping: 0.5,
            schedule: Schedule::Picard,
            max_hj_iterations: 100_000,
            max_fp_iterations: 100_000,
            max_mfg_iterations: 5_000,
        }
    }
}

/// Full problem description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSpec {
    pub grid: Grid,
    pub tau: f64,
    pub lagrangian: Lagrangian,
    pub coupling: Coupling,
    pub normalization: Normalization,
    pub tolerances: Tolerances,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl ModelSpec {
    /// Model with default tolerances and the customary normalization for the
    /// coupling kind (max-smooth for local, `u(0) = 0` for nonlocal).
    pub fn new(grid: Grid, tau: f64, potential: Potential, coupling: Coupling) -> Result<Self> {
        let normalization = if coupling.is_local() {
            Normalization::MaxSmooth
        } else {
            Normalization::Point { node: 0 }
        };
        let spec = ModelSpec {
            grid,
            tau,
            lagrangian: Lagrangian::new(potential),
            coupling,
            normalization,
            tolerances: Tolerances::default(),
            solver: SolverSettings::default(),
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        let mut s = self.clone();
        s.tau = tau;
        s.validate()?;
        Ok(s)
    }

    pub fn with_grid(&self, grid: Grid) -> Result<Self> {
        let mut s = self.clone();
        s.grid = grid;
        if let Normalization::Point { node } = s.normalization {
            if node >= grid.len() {
                s.normalization = Normalization::Point { node: 0 };
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(MfgError::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        let band = (self.grid.n() / 2) as i64 - 1;
        if self.lagrangian.potential.max_wavenumber() > band {
            return Err(MfgError::Parameter(format!(
                "potential has modes beyond the grid band |k| <= {band}"
            )));
        }
        if let Coupling::Nonlocal(psi) = &self.coupling {
            if psi.modes.iter().any(|m| m.k[0].abs().max(m.k[1].abs()) > band) {
                return Err(MfgError::Parameter(format!(
                    "nonlocal kernel has modes beyond the grid band |k| <= {band}"
                )));
            }
        }
        if self.grid.dim() == 1 {
            let stray = self.lagrangian.potential.modes.iter().any(|m| m.k[1] != 0)
                || matches!(&self.coupling, Coupling::Nonlocal(p) if p.modes.iter().any(|m| m.k[1] != 0));
            if stray {
                return Err(MfgError::Parameter("second wavenumber component in 1D model".into()));
            }
        }
        if let Normalization::Point { node } = self.normalization {
            if node >= self.grid.len() {
                return Err(MfgError::Parameter(format!("normalization node {node} out of range")));
            }
        }
        let d = self.solver.damping;
        if !(d > 0.0 && d <= 1.0) {
            return Err(MfgError::Parameter(format!("damping must lie in (0, 1], got {d}")));
        }
        Ok(())
    }

    /// Non-fatal hypothesis violations worth reporting.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if matches!(self.coupling, Coupling::Log) {
            let (c1, _) = self.lagrangian.coercivity(self.grid.dim());
            if self.tau >= 2.0 / c1 {
                w.push(format!(
                    "log coupling with tau = {} >= 2/c1 = {}: existence hypothesis violated",
                    self.tau,
                    2.0 / c1
                ));
            }
        }
        w
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn potential(&self) -> &Potential {
        &self.lagrangian.potential
    }

    pub fn potential_on_grid(&self) -> GridFunction {
        self.lagrangian.potential.on_grid(self.grid)
    }

    /// `L(x, q)`.
    pub fn eval_l(&self, x: Point, q: &[f64]) -> f64 {
        self.lagrangian.eval(x, q)
    }

    /// `F(x, m)`.
    pub fn eval_f(&self, x: Point, m: &GridFunction) -> Result<f64> {
        self.coupling.eval_at(x, m)
    }

    /// `(a_F, b_F)`.
    pub fn coupling_bounds(&self) -> (f64, f64) {
        self.coupling.bounds(self.dim())
    }

    /// Uniform semiconvexity modulus
    /// `Lambda(t) = ((k1+k0) t + sqrt((k1+k0)^2 t^2 + 4 k1 k2)) / 2`.
    pub fn semiconvexity_bound(&self, t: f64) -> f64 {
        let (k1, k2) = self.lagrangian.semiconcavity();
        let k = k1 + self.coupling.k0();
        (k * t + (k * k * t * t + 4.0 * k1 * k2).sqrt()) / 2.0
    }
}
