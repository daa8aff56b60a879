//! Uniform periodic grids on the flat torus `T^d = [0,1)^d`, sampled
//! functions, and the spectral machinery built on them: forward and inverse
//! FFTs, exact off-grid evaluation of the trigonometric interpolant,
//! quadrature and spectral derivatives.
//!
//! Layout is row-major: node `(i0, i1)` lives at index `i0 * n + i1` and has
//! coordinates `(i0 h, i1 h)`. In one dimension the second axis is absent.
//!
//! Fourier coefficients follow the normalization
//! `c_k = N^{-1} sum_j f_j exp(-2 pi i k . x_j)`, so `f(x) = sum_k c_k exp(2 pi i k . x)`.
//! The Nyquist index `n/2` is split symmetrically into `+n/2` and `-n/2` with
//! weight 1/2 each, which makes the interpolant real and keeps evaluation and
//! its adjoint (used when depositing mass) consistent.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// A point of `T^d`. The second component is ignored in one dimension.
pub type Point = [f64; 2];

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(MfgError::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        Ok(Grid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a single node, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn index(&self, mi: [usize; 2]) -> usize {
        if self.dim == 1 {
            mi[0] % self.n
        } else {
            (mi[0] % self.n) * self.n + (mi[1] % self.n)
        }
    }

    /// Index of the node shifted by an integer offset, wrapping periodically.
    pub fn shifted(&self, idx: usize, offset: [i64; 2]) -> usize {
        let mi = self.multi_index(idx);
        let n = self.n as i64;
        let a = (mi[0] as i64 + offset[0]).rem_euclid(n) as usize;
        let b = (mi[1] as i64 + offset[1]).rem_euclid(n) as usize;
        self.index([a, b])
    }

    pub fn coords(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let h = self.h();
        if self.dim == 1 {
            [mi[0] as f64 * h, 0.0]
        } else {
            [mi[0] as f64 * h, mi[1] as f64 * h]
        }
    }

    /// Signed wavenumber of FFT index `j` along one axis; the Nyquist index
    /// maps to `+n/2`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// FFT index of a signed wavenumber, `|k| <= n/2`.
    pub fn fft_index(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    fn check_same(&self, other: &Grid) {
        assert_eq!(self, other, "grid mismatch");
    }
}

/// Reduce a coordinate into `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Smallest periodic displacement, in `[-1/2, 1/2)`.
pub fn periodic_delta(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

// ---------------------------------------------------------------------------
// Sampled functions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::Domain { what: "non-finite value".into(), node: i });
        }
        Ok(GridFunction { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        self.grid.check_same(&other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        GridFunction { grid: self.grid, values }
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Oscillation `max - min`.
    pub fn osc(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    /// Rectangle-rule integral `h^d sum f_j`, exact for the trigonometric interpolant.
    pub fn integrate(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn norm_l1(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_lr(&self, r: f64) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.abs().powf(r)).sum::<f64>())
            .powf(1.0 / r)
    }

    /// `int f g`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        self.grid.check_same(&other.grid);
        self.grid.cell_volume()
            * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn to_spectral(&self) -> SpectralField {
        to_spectral(self)
    }

    pub fn gradient(&self) -> Vec<GridFunction> {
        gradient(self)
    }

    pub fn laplacian(&self) -> GridFunction {
        laplacian(self)
    }

    /// Serialize as CSV: a `# dim=<d> n=<n>` header, then one value per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# dim={} n={}", self.grid.dim, self.grid.n)?;
        for v in &self.values {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (grid, rows) = read_table(r, 1)?;
        GridFunction::new(grid, rows.into_iter().map(|row| row[0]).collect())
    }
}

/// Parse the shared CSV layout: header line, then `cols` comma-separated
/// values per node (`cols = 0` means one per dimension).
pub(crate) fn read_table<R: BufRead>(r: R, cols: usize) -> Result<(Grid, Vec<Vec<f64>>)> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| MfgError::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let grid = parse_header(&header)?;
    let cols = if cols == 0 { grid.dim() } else { cols };
    let mut rows = Vec::with_capacity(grid.len());
    for (lineno, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            trimmed.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| MfgError::Parse { line: lineno + 1, msg: e.to_string() })?;
        if row.len() != cols {
            return Err(MfgError::Parse {
                line: lineno + 1,
                msg: format!("expected {cols} columns, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.len() != grid.len() {
        return Err(MfgError::Parse {
            line: rows.len() + 1,
            msg: format!("expected {} rows, found {}", grid.len(), rows.len()),
        });
    }
    Ok((grid, rows))
}

fn parse_header(header: &str) -> Result<Grid> {
    let bad = |msg: &str| MfgError::Parse { line: 1, msg: msg.to_string() };
    let body = header.trim().strip_prefix('#').ok_or_else(|| bad("missing '#' header"))?;
    let mut dim = None;
    let mut n = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = Some(v.parse::<usize>().map_err(|_| bad("bad dim"))?);
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| bad("bad n"))?);
        }
    }
    Grid::new(dim.ok_or_else(|| bad("missing dim"))?, n.ok_or_else(|| bad("missing n"))?)
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalized in-place transform along every axis.
fn fft_in_place(grid: Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let fft = plan(n, inverse);
    if grid.dim() == 1 {
        fft.process(data);
        return;
    }
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Spectral fields
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

pub fn to_spectral(f: &GridFunction) -> SpectralField {
    let grid = f.grid();
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(grid, &mut data, false);
    let scale = 1.0 / grid.len() as f64;
    for c in &mut data {
        *c *= scale;
    }
    SpectralField { grid, coeffs: data }
}

impl SpectralField {
    pub fn from_coeffs(grid: Grid, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), grid.len());
        SpectralField { grid, coeffs }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Coefficients in FFT layout.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of the signed wavevector `k` (second component ignored in 1D).
    pub fn coeff(&self, k: [i64; 2]) -> Complex64 {
        let g = self.grid;
        let idx = if g.dim() == 1 {
            g.fft_index(k[0])
        } else {
            g.fft_index(k[0]) * g.n() + g.fft_index(k[1])
        };
        self.coeffs[idx]
    }

    /// Signed wavevector of an FFT-layout index.
    pub fn wavevector(&self, idx: usize) -> [i64; 2] {
        let mi = self.grid.multi_index(idx);
        if self.grid.dim() == 1 {
            [self.grid.wavenumber(mi[0]), 0]
        } else {
            [self.grid.wavenumber(mi[0]), self.grid.wavenumber(mi[1])]
        }
    }

    /// Multiply every coefficient by `mult(k)`.
    pub fn multiply(&self, mult: impl Fn([i64; 2]) -> Complex64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * mult(self.wavevector(i)))
            .collect();
        SpectralField { grid: self.grid, coeffs }
    }

    pub fn to_grid(&self) -> GridFunction {
        let mut data = self.coeffs.clone();
        fft_in_place(self.grid, &mut data, true);
        GridFunction::from_vec_unchecked(self.grid, data.into_iter().map(|c| c.re).collect())
    }

    /// `sum_k a_k conj(b_k)`, equal to `int f g` by Parseval.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re).sum()
    }

    /// Exact value of the trigonometric interpolant at `y` (reduced mod 1).
    pub fn eval_offgrid(&self, y: Point) -> f64 {
        self.evaluator().eval(y)
    }

    /// Evaluator over every mode.
    pub fn evaluator(&self) -> TrigEvaluator {
        TrigEvaluator::build(self, |_| 1.0, 0.0)
    }

    /// Evaluator for the field filtered by an isotropic multiplier
    /// `mult(|k|^2)`; modes whose multiplier falls below `cutoff` are dropped.
    pub fn filtered_evaluator(&self, mult: impl Fn(f64) -> f64, cutoff: f64) -> TrigEvaluator {
        TrigEvaluator::build(self, mult, cutoff)
    }

    /// Evaluator with modes whose coefficient magnitude is below
    /// `rel * max|c|` removed.
    pub fn pruned_evaluator(&self, rel: f64) -> TrigEvaluator {
        let cmax = self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let mut ev = self.evaluator();
        ev.modes.retain(|m| m.c.norm() > rel * cmax);
        ev.recompute_kmax();
        ev
    }
}

/// Spectral gradient: multiply by `2 pi i k` per axis, Nyquist set to zero.
pub fn gradient(f: &GridFunction) -> Vec<GridFunction> {
    let s = f.to_spectral();
    let g = f.grid();
    let half = (g.n() / 2) as i64;
    (0..g.dim())
        .map(|axis| {
            s.multiply(|k| {
                let ka = k[axis];
                if ka == half {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, TWO_PI * ka as f64)
                }
            })
            .to_grid()
        })
        .collect()
}

/// Spectral Laplacian: multiply by `-|2 pi k|^2`.
pub fn laplacian(f: &GridFunction) -> GridFunction {
    f.to_spectral()
        .multiply(|k| {
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            Complex64::new(-TWO_PI * TWO_PI * k2, 0.0)
        })
        .to_grid()
}

/// Spectral second derivative along one axis.
pub fn second_derivative(f: &GridFunction, axis: usize) -> GridFunction {
    f.to_spectral()
        .multiply(|k| {
            let ka = k[axis] as f64;
            Complex64::new(-TWO_PI * TWO_PI * ka * ka, 0.0)
        })
        .to_grid()
}

/// `int f` computed from the spectral side (the k = 0 coefficient).
pub fn integrate(f: &GridFunction) -> f64 {
    f.integrate()
}

// ---------------------------------------------------------------------------
// Off-grid evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub(crate) struct EvalMode {
    pub(crate) k: [i32; 2],
    pub(crate) c: Complex64,
}

/// Value, gradient and Hessian of a trigonometric polynomial at one point.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// A trigonometric polynomial `sum_k c_k exp(2 pi i k . y)` stored as a flat
/// mode list, ready for repeated evaluation at arbitrary points.
#[derive(Clone, Debug)]
pub struct TrigEvaluator {
    dim: usize,
    kmax: [usize; 2],
    pub(crate) modes: Vec<EvalMode>,
}

impl TrigEvaluator {
    fn build(s: &SpectralField, mult: impl Fn(f64) -> f64, cutoff: f64) -> Self {
        let g = s.grid();
        let n = g.n();
        let half = (n / 2) as i64;
        let axis_options = |j: usize| -> Vec<(i64, f64)> {
            let k = g.wavenumber(j);
            if k == half {
                vec![(half, 0.5), (-half, 0.5)]
            } else {
                vec![(k, 1.0)]
            }
        };
        let mut modes = Vec::new();
        for (idx, &c) in s.coeffs().iter().enumerate() {
            let mi = g.multi_index(idx);
            let opts0 = axis_options(mi[0]);
            let opts1 = if g.dim() == 2 { axis_options(mi[1]) } else { vec![(0, 1.0)] };
            let k0 = g.wavenumber(mi[0]);
            let k1 = if g.dim() == 2 { g.wavenumber(mi[1]) } else { 0 };
            let m = mult((k0 * k0 + k1 * k1) as f64);
            if m < cutoff || m == 0.0 {
                continue;
            }
            for &(a, wa) in &opts0 {
                for &(b, wb) in &opts1 {
                    modes.push(EvalMode { k: [a as i32, b as i32], c: c * (m * wa * wb) });
                }
            }
        }
        let mut ev = TrigEvaluator { dim: g.dim(), kmax: [0, 0], modes };
        ev.recompute_kmax();
        ev
    }

    fn recompute_kmax(&mut self) {
        let mut kmax = [0usize; 2];
        for m in &self.modes {
            kmax[0] = kmax[0].max(m.k[0].unsigned_abs() as usize);
            kmax[1] = kmax[1].max(m.k[1].unsigned_abs() as usize);
        }
        self.kmax = kmax;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Largest retained wavenumber per axis.
    pub fn kmax(&self) -> [usize; 2] {
        self.kmax
    }

    /// `exp(2 pi i k y)` for `k = -kmax..=kmax`, by powers of one root.
    fn table(kmax: usize, y: f64) -> Vec<Complex64> {
        let y = wrap(y);
        let mut t = vec![Complex64::new(1.0, 0.0); 2 * kmax + 1];
        let (s1, c1) = (TWO_PI * y).sin_cos();
        let root = Complex64::new(c1, s1);
        for k in 1..=kmax {
            // re-anchor periodically to keep the recurrence error small
            let e = if k % 16 == 1 {
                let (s, c) = (TWO_PI * k as f64 * y).sin_cos();
                Complex64::new(c, s)
            } else {
                t[kmax + k - 1] * root
            };
            t[kmax + k] = e;
            t[kmax - k] = e.conj();
        }
        t
    }

    #[inline]
    fn for_each_term(&self, y: Point, mut f: impl FnMut(&EvalMode, Complex64)) {
        let t0 = Self::table(self.kmax[0], y[0]);
        let t1 = if self.dim == 2 {
            Self::table(self.kmax[1], y[1])
        } else {
            vec![Complex64::new(1.0, 0.0)]
        };
        let o0 = self.kmax[0] as i32;
        let o1 = if self.dim == 2 { self.kmax[1] as i32 } else { 0 };
        for m in &self.modes {
            let e = t0[(m.k[0] + o0) as usize] * t1[(m.k[1] + o1) as usize];
            f(m, m.c * e);
        }
    }

    pub fn eval(&self, y: Point) -> f64 {
        let mut acc = 0.0;
        self.for_each_term(y, |_, t| acc += t.re);
        acc
    }

    pub fn gradient(&self, y: Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        self.for_each_term(y, |m, t| {
            g[0] -= TWO_PI * m.k[0] as f64 * t.im;
            g[1] -= TWO_PI * m.k[1] as f64 * t.im;
        });
        g
    }

    pub fn jet(&self, y: Point) -> Jet {
        let mut j = Jet::default();
        let c2 = TWO_PI * TWO_PI;
        self.for_each_term(y, |m, t| {
            let k = [m.k[0] as f64, m.k[1] as f64];
            j.value += t.re;
            j.grad[0] -= TWO_PI * k[0] * t.im;
            j.grad[1] -= TWO_PI * k[1] * t.im;
            j.hess[0][0] -= c2 * k[0] * k[0] * t.re;
            j.hess[0][1] -= c2 * k[0] * k[1] * t.re;
            j.hess[1][1] -= c2 * k[1] * k[1] * t.re;
        });
        j.hess[1][0] = j.hess[0][1];
        j
    }

    /// Upper bound on the Lipschitz constant, `sum_k |2 pi k| |c_k|`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k = ((m.k[0] as f64).powi(2) + (m.k[1] as f64).powi(2)).sqrt();
                TWO_PI * k * m.c.norm()
            })
            .sum()
    }

    /// Upper bound on the second derivatives, `sum_k |2 pi k|^2 |c_k|`.
    pub fn curvature_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k2 = (m.k[0] as f64).powi(2) + (m.k[1] as f64).powi(2);
                TWO_PI * TWO_PI * k2 * m.c.norm()
            })
            .sum()
    }

    /// Refine a local maximum of the interpolant by Newton's method started
    /// at `start`; returns the improved `(value, point)`.
    pub fn refine_max(&self, start: Point) -> (f64, Point) {
        let mut y = start;
        let mut best = self.eval(y);
        for _ in 0..50 {
            let j = self.jet(y);
            let step = if self.dim == 1 {
                if j.hess[0][0] < 0.0 {
                    [-j.grad[0] / j.hess[0][0], 0.0]
                } else {
                    [0.0, 0.0]
                }
            } else {
                let det = j.hess[0][0] * j.hess[1][1] - j.hess[0][1] * j.hess[1][0];
                if j.hess[0][0] < 0.0 && det > 0.0 {
                    [
                        -(j.hess[1][1] * j.grad[0] - j.hess[0][1] * j.grad[1]) / det,
                        -(-j.hess[1][0] * j.grad[0] + j.hess[0][0] * j.grad[1]) / det,
                    ]
                } else {
                    [0.0, 0.0]
                }
            };
            if step[0].abs() + step[1].abs() < 1e-15 {
                break;
            }
            let cand = [y[0] + step[0], y[1] + step[1]];
            let v = self.eval(cand);
            if v < best {
                break;
            }
            best = v;
            y = cand;
        }
        (best, y)
    }
}
