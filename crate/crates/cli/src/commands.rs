//! The four subcommands.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use taumfg::chain::{simulate, ChainConfig, ChainSummary};
use taumfg::continuum::convergence_report;
use taumfg::hj::coupled_bracket;
use taumfg::lax::{consistency_error, semiconvexity_modulus};
use taumfg::mfg::{log_coupling_identity, log_functional, monotonicity_gap, weak_solution_residual, State};
use taumfg::models::monotonicity_selfcheck;
use taumfg::probe::{smooth_density, smooth_function};
use taumfg::{solve_mfg, Config, Coupling, DiscreteSolution, MfgError, ModelSpec};

use crate::report::{any_failed, Output, Verdict, SCHEMA};

/// Random pairs drawn by `diagnose`.
const PAIRS: usize = 20;
/// Largest occupation-vs-density gap accepted by `simulate`.
const OCCUPATION_TOL: f64 = 0.02;

#[derive(Debug)]
pub enum Failure {
    /// Some invariant check failed; outputs were written.
    Invariant,
    Solver(MfgError),
}

impl From<MfgError> for Failure {
    fn from(e: MfgError) -> Self {
        Failure::Solver(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(MfgError::Io(e))
    }
}

pub type Outcome = std::result::Result<(), Failure>;

type Column = fn(&taumfg::continuum::ConvergenceRow) -> f64;

fn finish(out: Output, cmd: &str, config: &Path, model: &ModelSpec, verdicts: &[Verdict]) -> Outcome {
    out.finish(cmd, config, model, verdicts)?;
    if any_failed(verdicts) {
        Err(Failure::Invariant)
    } else {
        Ok(())
    }
}

#[derive(Serialize)]
struct Residuals {
    hj: f64,
    measure: f64,
}

#[derive(Serialize)]
struct IdentityGaps {
    /// `|int exp((L u - u)/tau) - e^rho|`, log couplings only.
    log_coupling: Option<f64>,
}

#[derive(Serialize)]
struct DensityInfo {
    max: f64,
    min: f64,
    free_space_bound: f64,
    torus_kernel_peak: f64,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    schema: &'a str,
    rho: f64,
    iterations: usize,
    final_damping: f64,
    residuals: Residuals,
    bracket: (f64, f64),
    energy_gap: f64,
    identity_gaps: IdentityGaps,
    density: DensityInfo,
    verdicts: &'a [Verdict],
    warnings: Vec<String>,
}

fn solution_verdicts(model: &ModelSpec, sol: &DiscreteSolution) -> Vec<Verdict> {
    sol.invariants(model)
        .into_iter()
        .map(|c| {
            if c.name == "positivity" {
                Verdict::check(c.name, c.pass, c.value, c.tolerance)
            } else {
                Verdict::at_most(c.name, c.value, c.tolerance)
            }
        })
        .collect()
}

fn log_gap(model: &ModelSpec, sol: &DiscreteSolution) -> taumfg::Result<Option<f64>> {
    if !matches!(model.coupling, Coupling::Log) {
        return Ok(None);
    }
    let (lhs, rhs) = log_coupling_identity(model, sol)?;
    Ok(Some((lhs - rhs).abs()))
}

pub fn solve(config: &Path, cfg: &Config, out: &mut Option<Output>) -> Outcome {
    let model = &cfg.model;
    let sol = solve_mfg(model)?;
    let verdicts = solution_verdicts(model, &sol);
    let (free, peak) = sol.density_bounds(model)?;
    let summary = SolveSummary {
        schema: SCHEMA,
        rho: sol.rho,
        iterations: sol.iterations,
        final_damping: sol.damping,
        residuals: Residuals { hj: sol.hj_residual, measure: sol.measure_residual },
        bracket: coupled_bracket(model),
        energy_gap: (sol.energy + sol.rho).abs(),
        identity_gaps: IdentityGaps { log_coupling: log_gap(model, &sol)? },
        density: DensityInfo { max: sol.m.max(), min: sol.m.min(), free_space_bound: free, torus_kernel_peak: peak },
        verdicts: &verdicts,
        warnings: model.warnings(),
    };
    let mut o = out.take().expect("output directory");
    o.write_with("u.csv", |w| sol.u.write_csv(w))?;
    o.write_with("m.csv", |w| sol.m.write_csv(w))?;
    o.write_with("V.csv", |w| sol.v.write_csv(w))?;
    o.write_json("summary.json", &summary)?;
    finish(o, "solve", config, model, &verdicts)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema: &'a str,
    taus: &'a [f64],
    reference_rho: f64,
    reference_residual: f64,
    u_metric: &'a str,
    verdicts: &'a [Verdict],
    warnings: Vec<String>,
}

pub fn sweep(config: &Path, cfg: &Config, taus: &[f64], out: &mut Option<Output>) -> Outcome {
    let model = &cfg.model;
    if model.dim() != 1 {
        return Err(MfgError::Usage("sweep compares against the continuum solver, which needs dim = 1".into()).into());
    }
    let rep = convergence_report(model, taus)?;
    let tol = 10.0 * model.tolerances.mfg;
    let mut verdicts = vec![Verdict::at_most("reference_residual", rep.reference_residual, model.tolerances.reference)];
    let cols: [(&str, Column); 3] =
        [("rho_err", |r| r.rho_err), ("u_err", |r| r.u_err), ("m_err", |r| r.m_err)];
    match rep.strictly_decreasing() {
        None => {
            for (name, _) in cols {
                verdicts.push(Verdict::skip(&format!("{name}_decreasing"), "a single tau value gives no monotonicity check"));
            }
        }
        Some(dec) => {
            for ((name, f), dec) in cols.iter().zip(dec) {
                let worst = rep.rows.iter().map(f).fold(0.0, f64::max);
                let name = format!("{name}_decreasing");
                verdicts.push(if dec {
                    Verdict { tolerance: None, ..Verdict::check(&name, true, worst, tol) }.with_reason("strictly decreasing")
                } else if worst <= tol {
                    Verdict::check(&name, true, worst, tol).with_reason("all errors at solver tolerance")
                } else {
                    Verdict::check(&name, false, worst, tol).with_reason("column not strictly decreasing")
                });
            }
        }
    }
    let summary = SweepSummary {
        schema: SCHEMA,
        taus,
        reference_rho: rep.reference_rho,
        reference_residual: rep.reference_residual,
        u_metric: rep.u_metric,
        verdicts: &verdicts,
        warnings: taus
            .iter()
            .filter_map(|&t| model.with_tau(t).ok())
            .flat_map(|m| m.warnings())
            .collect(),
    };
    let mut o = out.take().expect("output directory");
    o.write_with("convergence.csv", |w| rep.write_csv(w))?;
    o.write_json("sweep.json", &summary)?;
    finish(o, "sweep", config, model, &verdicts)
}

#[derive(Serialize)]
struct DiagnoseSummary<'a> {
    schema: &'a str,
    rho: f64,
    pairs: usize,
    verdicts: &'a [Verdict],
    warnings: Vec<String>,
}

pub fn diagnose(config: &Path, cfg: &Config, out: &mut Option<Output>) -> Outcome {
    let model = &cfg.model;
    let g = model.grid;
    let sol = solve_mfg(model)?;
    let mut verdicts = solution_verdicts(model, &sol);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);

    let mut coupling_min = f64::INFINITY;
    let mut gap_min = f64::INFINITY;
    let mut weak_min = f64::INFINITY;
    let base = State::from_solution(model, &sol)?;
    for _ in 0..PAIRS {
        let m1 = smooth_density(g, &mut rng);
        let m2 = smooth_density(g, &mut rng);
        coupling_min = coupling_min.min(monotonicity_selfcheck(&model.coupling, &m1, &m2)?);
        let state = |m: &taumfg::GridFunction, rng: &mut ChaCha8Rng| {
            let u = base.u.zip_map(&smooth_function(g, rng, 0.3), |a, b| a + b);
            let mm = base.m.zip_map(m, |a, b| 0.5 * (a + b));
            State::new(model, sol.rho + rand::Rng::random_range(rng, -0.1..0.1), u, mm)
        };
        let s1 = state(&m1, &mut rng)?;
        let s2 = state(&m2, &mut rng)?;
        gap_min = gap_min.min(monotonicity_gap(model, &s1, &s2)?);
        let phi = smooth_function(g, &mut rng, 0.5);
        let lam = sol.rho + rand::Rng::random_range(&mut rng, -1.0..1.0);
        weak_min = weak_min.min(weak_solution_residual(model, &sol, lam, &phi, &m1)?);
    }
    verdicts.push(Verdict::at_least("coupling_monotonicity", coupling_min, 0.0));
    verdicts.push(Verdict::at_least("monotonicity_gap", gap_min, -1e-8));
    verdicts.push(Verdict::at_least("weak_solution_residual", weak_min, -1e-8));

    match log_gap(model, &sol)? {
        Some(gap) => {
            verdicts.push(Verdict::at_most("log_coupling_identity", gap, 1e-6));
            let target = sol.rho.exp();
            let mut worst = f64::INFINITY;
            for _ in 0..PAIRS {
                let phi = sol.u.zip_map(&smooth_function(g, &mut rng, 0.3), |a, b| a + b);
                worst = worst.min(log_functional(model, &phi)? - target);
            }
            verdicts.push(Verdict::at_least("log_functional_minimality", worst, -1e-8));
        }
        None => {
            verdicts.push(Verdict::skip("log_coupling_identity", "coupling is not logarithmic"));
            verdicts.push(Verdict::skip("log_functional_minimality", "coupling is not logarithmic"));
        }
    }

    if model.coupling.is_local() {
        verdicts.push(Verdict::skip("semiconvexity", "uniform modulus applies to nonlocal couplings"));
    } else if model.tau > 1.0 {
        verdicts.push(Verdict::skip("semiconvexity", "uniform modulus applies for tau <= 1"));
    } else {
        let lam = model.semiconvexity_bound(1.0);
        verdicts.push(Verdict::at_least("semiconvexity", semiconvexity_modulus(&sol.u), -lam));
    }

    let phi = smooth_function(g, &mut rng, 0.5);
    let e1 = consistency_error(model, &phi)?;
    let e2 = consistency_error(&model.with_tau(0.5 * model.tau)?, &phi)?;
    verdicts.push(
        Verdict::check("consistency_halving", e2 < e1, e2, e1).with_reason("defect at tau/2 compared with defect at tau"),
    );

    let summary = DiagnoseSummary { schema: SCHEMA, rho: sol.rho, pairs: PAIRS, verdicts: &verdicts, warnings: model.warnings() };
    let mut o = out.take().expect("output directory");
    o.write_json("diagnose.json", &summary)?;
    finish(o, "diagnose", config, model, &verdicts)
}

#[derive(Serialize)]
struct RhoCheck {
    target: f64,
    difference: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    schema: &'a str,
    steps: u64,
    burn_in: u64,
    seed: u64,
    #[serde(flatten)]
    chain: ChainSummary,
    rho_check: RhoCheck,
    occupation_l1_gap: f64,
    verdicts: &'a [Verdict],
}

pub fn simulate_cmd(config: &Path, cfg: &Config, out: &mut Option<Output>) -> Outcome {
    let model = &cfg.model;
    let sol = solve_mfg(model)?;
    let cc = ChainConfig {
        model: model.clone(),
        v: sol.v.clone(),
        m: sol.m.as_function().clone(),
        steps: cfg.chain.steps,
        burn_in: cfg.chain.burn_in,
        seed: model.seed,
        batches: cfg.chain.batches,
        x0: cfg.chain.x0,
    };
    let r = simulate(&cc)?;
    let target = -sol.rho;
    let diff = (r.avg_cost - target).abs();
    // rho itself is only known to the solver tolerance
    let tol = 3.0 * r.stderr + model.tolerances.mfg;
    let gap = r.occupation.zip_map(&sol.m, |a, b| a - b).norm_l1();
    let nv = (r.noise_variance - 2.0 * model.tau).abs();
    let verdicts = vec![
        Verdict::at_most("rho_check", diff, tol),
        Verdict::at_most("occupation_l1_gap", gap, OCCUPATION_TOL),
        Verdict::at_most("noise_variance", nv, 3.0 * r.noise_variance_stderr),
    ];
    let report = SimulateReport {
        schema: SCHEMA,
        steps: cc.steps,
        burn_in: cc.burn_in,
        seed: cc.seed,
        chain: r.summary(model.tau),
        rho_check: RhoCheck { target, difference: diff, tolerance: tol, pass: diff <= tol },
        occupation_l1_gap: gap,
        verdicts: &verdicts,
    };
    let mut o = out.take().expect("output directory");
    o.write_with("occupation.csv", |w| r.occupation.write_csv(w))?;
    o.write_json("simulate.json", &report)?;
    finish(o, "simulate", config, model, &verdicts)
}
