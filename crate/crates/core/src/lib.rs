//! Stationary mean-field games on the flat torus, discretized in time with a
//! heat-kernel smoothed Lax operator.

pub mod chain;
pub mod config;
pub mod continuum;
pub mod error;
pub mod grid;
pub mod hj;
pub mod kernel;
pub mod lax;
pub mod measure;
pub mod mfg;
pub mod models;
pub mod probe;

pub use chain::{simulate, ChainConfig, ChainReport};
pub use config::{ChainSettings, Config};
pub use continuum::{convergence_report, solve_continuum, ContinuumSolution, ConvergenceReport};
pub use error::{MfgError, Result};
pub use grid::{Grid, GridFunction, Point, SpectralField, TrigEvaluator};
pub use hj::{solve_hj, ErgodicHJSolution};
pub use kernel::HeatKernel;
pub use lax::{lax, ControlField, LaxResult};
pub use measure::{push_smooth, stationary, Density};
pub use mfg::{solve_mfg, DiscreteSolution};
pub use models::{Coupling, Lagrangian, ModelSpec, NonlocalKernel, Normalization, Potential};
