//! Configuration, scenario runners, result tables and the invariant suite.

pub mod config;
pub mod scenarios;
pub mod table;
pub mod validate;

pub use config::{load_config, parse_config, ExperimentConfig, SweepAxis};
pub use scenarios::{compare_optimizers, optimize, resolve, run_scenario, SCENARIOS};
pub use table::{Cell, ResultTable};
pub use validate::{run_validation, Check};
