//! TOML problem configuration.
//!
//! ```toml
//! dim = 1
//! n = 128
//! tau = 0.05
//! seed = 7
//!
//! [potential]
//! constant = 0.0
//! modes = [{ k = [1], cos = 0.5 }]
//!
//! [coupling]
//! kind = "nonlocal"
//! constant = 1.0
//! modes = [{ k = [1], amplitude = 0.5 }]
//!
//! [normalization]
//! kind = "point"
//! x0 = [0.0]
//!
//! [tolerances]
//! hj = 1e-9
//!
//! [solver]
//! damping = 0.5
//! schedule = "picard"
//!
//! [chain]
//! steps = 200000
//! ```
//!
//! Every section except `[coupling]` is optional; unknown keys are rejected.

use serde::Deserialize;

use crate::error::{MfgError, Result};
use crate::grid::Grid;
use crate::models::{
    Coupling, KernelMode, ModelSpec, NonlocalKernel, Normalization, Potential, PotentialMode,
    Schedule, SolverSettings, Tolerances,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dim: usize,
    n: usize,
    tau: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    potential: RawPotential,
    coupling: RawCoupling,
    normalization: Option<RawNormalization>,
    #[serde(default)]
    tolerances: RawTolerances,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    chain: RawChain,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    #[serde(default)]
    constant: f64,
    #[serde(default)]
    modes: Vec<RawPotentialMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotentialMode {
    k: Vec<i64>,
    #[serde(default)]
    cos: f64,
    #[serde(default)]
    sin: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    kind: String,
    exponent: Option<f64>,
    constant: Option<f64>,
    modes: Option<Vec<RawKernelMode>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernelMode {
    k: Vec<i64>,
    amplitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNormalization {
    kind: String,
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    hj: Option<f64>,
    fp: Option<f64>,
    mfg: Option<f64>,
    opt: Option<f64>,
    reference: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    damping: Option<f64>,
    schedule: Option<String>,
    max_hj_iterations: Option<usize>,
    max_fp_iterations: Option<usize>,
    max_mfg_iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    steps: Option<u64>,
    burn_in: Option<u64>,
    batches: Option<usize>,
    x0: Option<Vec<f64>>,
}

/// Chain-simulation settings read from the optional `[chain]` section.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSettings {
    pub steps: u64,
    pub burn_in: u64,
    pub batches: usize,
    pub x0: [f64; 2],
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings { steps: 200_000, burn_in: 1_000, batches: 100, x0: [0.0, 0.0] }
    }
}

/// A parsed configuration file.
#[derive(Clone, Debug)]
pub struct Config {
    pub model: ModelSpec,
    pub chain: ChainSettings,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of the first `key =` assignment in `section` (or at top level when
/// `section` is empty), used to attach semantic errors to a line.
fn line_of_key(src: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    if section.is_empty() {
        return 1;
    }
    src.lines()
        .position(|l| l.trim().trim_matches(|c| c == '[' || c == ']').trim() == section)
        .map_or(1, |i| i + 1)
}

fn wavevector(src: &str, section: &str, dim: usize, k: &[i64]) -> Result<[i64; 2]> {
    if k.len() != dim {
        return Err(MfgError::Parse {
            line: line_of_key(src, section, "modes"),
            msg: format!("wavevector {k:?} must have {dim} component(s)"),
        });
    }
    Ok([k[0], if dim == 2 { k[1] } else { 0 }])
}

fn point(src: &str, section: &str, dim: usize, x: &[f64]) -> Result<[f64; 2]> {
    if x.len() != dim {
        return Err(MfgError::Parse {
            line: line_of_key(src, section, "x0"),
            msg: format!("x0 must have {dim} component(s)"),
        });
    }
    Ok([x[0], if dim == 2 { x[1] } else { 0.0 }])
}

fn nearest_node(grid: Grid, x: [f64; 2]) -> usize {
    let n = grid.n() as f64;
    let snap = |v: f64| ((crate::grid::wrap(v) * n).round() as usize) % grid.n();
    if grid.dim() == 1 {
        snap(x[0])
    } else {
        grid.index([snap(x[0]), snap(x[1])])
    }
}

impl Config {
    pub fn from_toml(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| MfgError::Parse {
            line: e.span().map_or(1, |s| line_of(src, s.start)),
            msg: e.message().to_string(),
        })?;
        let at = |section: &str, key: &str, msg: String| MfgError::Parse {
            line: line_of_key(src, section, key),
            msg,
        };

        let grid = Grid::new(raw.dim, raw.n).map_err(|e| at("", "n", e.to_string()))?;
        let dim = raw.dim;

        let mut modes = Vec::new();
        for m in &raw.potential.modes {
            modes.push(PotentialMode {
                k: wavevector(src, "potential", dim, &m.k)?,
                cos: m.cos,
                sin: m.sin,
            });
        }
        let potential = Potential { constant: raw.potential.constant, modes };

        let c = &raw.coupling;
        let reject = |key: &str, present: bool| -> Result<()> {
            if present {
                Err(at("coupling", key, format!("key `{key}` not allowed for {} coupling", c.kind)))
            } else {
                Ok(())
            }
        };
        let coupling = match c.kind.as_str() {
            "power" => {
                reject("constant", c.constant.is_some())?;
                reject("modes", c.modes.is_some())?;
                let a = c.exponent.ok_or_else(|| {
                    at("coupling", "kind", "power coupling needs `exponent`".into())
                })?;
                Coupling::power(a).map_err(|e| at("coupling", "exponent", e.to_string()))?
            }
            "log" => {
                reject("exponent", c.exponent.is_some())?;
                reject("constant", c.constant.is_some())?;
                reject("modes", c.modes.is_some())?;
                Coupling::Log
            }
            "nonlocal" => {
                reject("exponent", c.exponent.is_some())?;
                let mut km = Vec::new();
                for m in c.modes.as_deref().unwrap_or_default() {
                    km.push(KernelMode {
                        k: wavevector(src, "coupling", dim, &m.k)?,
                        amplitude: m.amplitude,
                    });
                }
                let psi = NonlocalKernel::new(c.constant.unwrap_or(1.0), km)
                    .map_err(|e| at("coupling", "modes", e.to_string()))?;
                Coupling::Nonlocal(psi)
            }
            other => {
                return Err(at(
                    "coupling",
                    "kind",
                    format!("unknown coupling kind `{other}` (expected power, log or nonlocal)"),
                ))
            }
        };

        let mut model = ModelSpec::new(grid, 1.0, potential, coupling)
            .map_err(|e| at("potential", "modes", e.to_string()))?;
        if !(raw.tau > 0.0 && raw.tau.is_finite()) {
            return Err(at("", "tau", format!("tau must be positive, got {}", raw.tau)));
        }
        model.tau = raw.tau;
        model.seed = raw.seed;

        if let Some(norm) = &raw.normalization {
            model.normalization = match norm.kind.as_str() {
                "max_smooth" => {
                    if norm.x0.is_some() {
                        return Err(at("normalization", "x0", "x0 only applies to point normalization".into()));
                    }
                    Normalization::MaxSmooth
                }
                "point" => {
                    let x0 = point(src, "normalization", dim, norm.x0.as_deref().unwrap_or(&[0.0; 2][..dim]))?;
                    Normalization::Point { node: nearest_node(grid, x0) }
                }
                other => {
                    return Err(at(
                        "normalization",
                        "kind",
                        format!("unknown normalization `{other}` (expected point or max_smooth)"),
                    ))
                }
            };
        }

        let d = Tolerances::default();
        let t = &raw.tolerances;
        model.tolerances = Tolerances {
            hj: t.hj.unwrap_or(d.hj),
            fp: t.fp.unwrap_or(d.fp),
            mfg: t.mfg.unwrap_or(d.mfg),
            opt: t.opt.unwrap_or(d.opt),
            reference: t.reference.unwrap_or(d.reference),
        };
        for (key, v) in [
            ("hj", model.tolerances.hj),
            ("fp", model.tolerances.fp),
            ("mfg", model.tolerances.mfg),
            ("opt", model.tolerances.opt),
            ("reference", model.tolerances.reference),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(at("tolerances", key, format!("tolerance `{key}` must be positive")));
            }
        }

        let s = SolverSettings::default();
        let r = &raw.solver;
        model.solver = SolverSettings {
            damping: r.damping.unwrap_or(s.damping),
            schedule: match r.schedule.as_deref() {
                None | Some("picard") => Schedule::Picard,
                Some("fictitious_play") => Schedule::FictitiousPlay,
                Some(other) => {
                    return Err(at(
                        "solver",
                        "schedule",
                        format!("unknown schedule `{other}` (expected picard or fictitious_play)"),
                    ))
                }
            },
            max_hj_iterations: r.max_hj_iterations.unwrap_or(s.max_hj_iterations),
            max_fp_iterations: r.max_fp_iterations.unwrap_or(s.max_fp_iterations),
            max_mfg_iterations: r.max_mfg_iterations.unwrap_or(s.max_mfg_iterations),
        };
        model.validate().map_err(|e| at("solver", "damping", e.to_string()))?;

        let cd = ChainSettings::default();
        let ch = &raw.chain;
        let chain = ChainSettings {
            steps: ch.steps.unwrap_or(cd.steps),
            burn_in: ch.burn_in.unwrap_or(cd.burn_in),
            batches: ch.batches.unwrap_or(cd.batches),
            x0: match &ch.x0 {
                Some(x) => point(src, "chain", dim, x)?,
                None => cd.x0,
            },
        };
        if chain.batches == 0 || chain.steps < chain.batches as u64 {
            return Err(at("chain", "batches", "need 0 < batches <= steps".into()));
        }
        Ok(Config { model, chain })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| MfgError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
dim = 1
n = 32
tau = 0.1

[potential]
modes = [{ k = [1], cos = 0.5 }]

[coupling]
kind = "power"
exponent = 0.5
"#;

    #[test]
    fn parses_defaults() {
        let c = Config::from_toml(BASIC).unwrap();
        assert_eq!(c.model.grid.n(), 32);
        assert_eq!(c.model.tolerances, Tolerances::default());
        assert_eq!(c.model.normalization, Normalization::MaxSmooth);
        assert_eq!(c.model.potential().modes[0].k, [1, 0]);
        assert_eq!(c.chain, ChainSettings::default());
    }

    #[test]
    fn unknown_key_reports_line() {
        let src = BASIC.replace("exponent = 0.5", "exponent = 0.5\nbogus = 1");
        match Config::from_toml(&src) {
            Err(MfgError::Parse { line, msg }) => {
                assert_eq!(line, 12, "{msg}");
                assert!(msg.contains("bogus"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_report_line() {
        let src = BASIC.replace("exponent = 0.5", "exponent = 1.5");
        match Config::from_toml(&src) {
            Err(MfgError::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("expected parse error, got {other:?}"),
        }
        let src = BASIC.replace("n = 32", "n = 12");
        assert!(matches!(Config::from_toml(&src), Err(MfgError::Parse { line: 3, .. })));
        let src = BASIC.replace("k = [1]", "k = [1, 0]");
        assert!(matches!(Config::from_toml(&src), Err(MfgError::Parse { .. })));
    }

    #[test]
    fn nonlocal_and_point_normalization() {
        let src = r#"
dim = 2
n = 16
tau = 0.05
seed = 11

[coupling]
kind = "nonlocal"
constant = 1.0
modes = [{ k = [1, 0], amplitude = 0.5 }, { k = [0, 1], amplitude = 0.25 }]

[normalization]
kind = "point"
x0 = [0.25, 0.5]

[tolerances]
hj = 1e-8

[solver]
schedule = "fictitious_play"
"#;
        let c = Config::from_toml(src).unwrap();
        let g = c.model.grid;
        assert_eq!(c.model.normalization, Normalization::Point { node: g.index([4, 8]) });
        assert_eq!(c.model.tolerances.hj, 1e-8);
        assert_eq!(c.model.solver.schedule, Schedule::FictitiousPlay);
        assert_eq!(c.model.seed, 11);
        assert!(matches!(c.model.coupling, Coupling::Nonlocal(_)));
    }

    #[test]
    fn log_coupling_rejects_extra_keys() {
        let src = BASIC.replace("\"power\"", "\"log\"");
        assert!(Config::from_toml(&src).is_err());
        let src = BASIC.replace("kind = \"power\"\nexponent = 0.5", "kind = \"log\"");
        assert!(Config::from_toml(&src).is_ok());
    }
}
