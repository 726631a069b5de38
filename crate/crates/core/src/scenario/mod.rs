//! Scenario layer: configuration parsing, the simulation driver, and output
//! writers.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, ScenarioConfig, TemperatureSpec};
pub use output::{write_snapshot, write_timeseries, CSV_HEADER};
pub use runner::{lake_level_conversion, run_scenario, ScenarioOutcome, TimeSeriesRow};
