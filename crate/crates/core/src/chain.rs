//! Monte Carlo simulation of the controlled chain
//! `x_{i+1} = x_i + tau V(x_i) + nu_i (mod 1)`, `nu_i ~ N(0, 2 tau I)`,
//! whose long-run average of `L(x, V(x)) + F(x, m)` should equal `-rho`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{wrap, GridFunction, TrigEvaluator};
use crate::lax::ControlField;
use crate::measure::Density;
use crate::models::{Coupling, ModelSpec};

/// Relative size below which interpolant modes are dropped.
const PRUNE: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub model: ModelSpec,
    pub v: ControlField,
    /// Population density entering the coupling cost.
    pub m: GridFunction,
    pub steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub batches: usize,
    pub x0: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct ChainReport {
    pub avg_cost: f64,
    /// Batch-means standard error of `avg_cost`.
    pub stderr: f64,
    /// Histogram of post-burn-in states, one cell per node.
    pub occupation: Density,
    /// Empirical per-coordinate variance of the noise increments.
    pub noise_variance: f64,
    /// Standard error of `noise_variance` under Gaussian noise.
    pub noise_variance_stderr: f64,
    pub final_state: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainSummary {
    pub avg_cost: f64,
    pub stderr: f64,
    pub noise_variance: f64,
    pub noise_variance_expected: f64,
    pub noise_variance_stderr: f64,
}

impl ChainReport {
    pub fn summary(&self, tau: f64) -> ChainSummary {
        ChainSummary {
            avg_cost: self.avg_cost,
            stderr: self.stderr,
            noise_variance: self.noise_variance,
            noise_variance_expected: 2.0 * tau,
            noise_variance_stderr: self.noise_variance_stderr,
        }
    }
}

pub fn simulate(cfg: &ChainConfig) -> Result<ChainReport> {
    if cfg.steps <= cfg.burn_in {
        return Err(MfgError::Parameter("chain needs steps > burn_in".into()));
    }
    let kept = cfg.steps - cfg.burn_in;
    if cfg.batches == 0 || kept < cfg.batches as u64 {
        return Err(MfgError::Parameter("chain needs 0 < batches <= steps - burn_in".into()));
    }
    let model = &cfg.model;
    let grid = model.grid;
    let dim = grid.dim();
    let tau = model.tau;
    let vel: Vec<TrigEvaluator> =
        (0..dim).map(|a| cfg.v.component(a).to_spectral().pruned_evaluator(PRUNE)).collect();
    let m_ev = cfg.m.to_spectral().pruned_evaluator(PRUNE);
    let nonlocal = match &model.coupling {
        Coupling::Nonlocal(psi) => Some(psi.convolve(&cfg.m).to_spectral().pruned_evaluator(PRUNE)),
        _ => None,
    };
    let coupling_at = |x: [f64; 2]| -> f64 {
        match &nonlocal {
            Some(ev) => ev.eval(x),
            None => {
                let mx = m_ev.eval(x);
                match model.coupling {
                    Coupling::Log => mx.max(crate::mfg::LOG_FLOOR).ln(),
                    _ => model.coupling.local_value(mx),
                }
            }
        }
    };
    let normal = Normal::new(0.0, (2.0 * tau).sqrt())
        .map_err(|e| MfgError::Parameter(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = [wrap(cfg.x0[0]), if dim == 2 { wrap(cfg.x0[1]) } else { 0.0 }];
    let per_batch = kept / cfg.batches as u64;
    let mut batch_sums = vec![0.0; cfg.batches];
    let mut counts = vec![0u64; grid.len()];
    let (mut nsum, mut nsq, mut ncount) = (0.0f64, 0.0f64, 0u64);
    let n = grid.n() as f64;
    let cell = |v: f64| ((v * n).round() as usize) % grid.n();
    for step in 0..cfg.steps {
        let mut q = [0.0; 2];
        for a in 0..dim {
            q[a] = vel[a].eval(x);
        }
        if step >= cfg.burn_in {
            let k = step - cfg.burn_in;
            let b = ((k / per_batch) as usize).min(cfg.batches - 1);
            let cost = model.eval_l(x, &q[..dim]) + coupling_at(x);
            batch_sums[b] += cost;
            let idx = if dim == 1 { cell(x[0]) } else { grid.index([cell(x[0]), cell(x[1])]) };
            counts[idx] += 1;
        }
        for a in 0..dim {
            let nu = normal.sample(&mut rng);
            nsum += nu;
            nsq += nu * nu;
            ncount += 1;
            x[a] = wrap(x[a] + tau * q[a] + nu);
        }
    }
    let sizes: Vec<f64> = (0..cfg.batches)
        .map(|b| if b + 1 == cfg.batches { (kept - per_batch * (cfg.batches as u64 - 1)) as f64 } else { per_batch as f64 })
        .collect();
    let means: Vec<f64> = batch_sums.iter().zip(&sizes).map(|(s, c)| s / c).collect();
    let avg_cost = batch_sums.iter().sum::<f64>() / kept as f64;
    let nb = cfg.batches as f64;
    let var_b = if cfg.batches > 1 {
        means.iter().map(|m| (m - avg_cost).powi(2)).sum::<f64>() / (nb - 1.0)
    } else {
        f64::NAN
    };
    let stderr = (var_b / nb).sqrt();
    let total: u64 = counts.iter().sum();
    let occ = GridFunction::new(
        grid,
        counts.iter().map(|&c| c as f64 / (total as f64 * grid.cell_volume())).collect(),
    )?;
    let mean_nu = nsum / ncount as f64;
    let noise_variance = nsq / ncount as f64 - mean_nu * mean_nu;
    Ok(ChainReport {
        avg_cost,
        stderr,
        occupation: Density::normalized(occ)?,
        noise_variance,
        noise_variance_stderr: 2.0 * tau * (2.0 / ncount as f64).sqrt(),
        final_state: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::models::Potential;

    fn trivial(seed: u64, steps: u64) -> ChainConfig {
        let g = Grid::new(1, 32).unwrap();
        let model = ModelSpec::new(g, 0.1, Potential::zero(), Coupling::power(0.5).unwrap()).unwrap();
        ChainConfig {
            model,
            v: ControlField::zeros(g),
            m: GridFunction::constant(g, 1.0),
            steps,
            burn_in: 100,
            seed,
            batches: 100,
            x0: [0.3, 0.0],
        }
    }

    #[test]
    fn trivial_cost_is_exact() {
        let r = simulate(&trivial(1, 20_000)).unwrap();
        assert!((r.avg_cost - 1.0).abs() < 1e-12);
        assert!((r.occupation.integrate() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn occupation_near_uniform_and_noise_calibrated() {
        let r = simulate(&trivial(2, 200_000)).unwrap();
        let l1 = r.occupation.add_scalar(-1.0).norm_l1();
        // multinomial noise level: sqrt(2/pi) sum_b sqrt(p_b / N)
        let expected = (2.0 / std::f64::consts::PI).sqrt() * 32.0 * (1.0 / 32.0 / 199_900.0f64).sqrt();
        assert!(l1 <= 3.0 * expected, "{l1} vs {expected}");
        assert!((r.noise_variance - 0.2).abs() <= 3.0 * r.noise_variance_stderr);
    }

    #[test]
    fn reproducible_for_equal_seeds() {
        let a = simulate(&trivial(7, 5_000)).unwrap();
        let b = simulate(&trivial(7, 5_000)).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.occupation, b.occupation);
        let c = simulate(&trivial(8, 5_000)).unwrap();
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn rejects_bad_lengths() {
        let mut c = trivial(1, 50);
        assert!(simulate(&c).is_err());
        c.steps = 150;
        c.batches = 0;
        assert!(simulate(&c).is_err());
    }
}
