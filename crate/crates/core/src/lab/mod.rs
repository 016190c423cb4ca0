//! Scenario presets, run configuration and the end-to-end verification
//! pipeline behind the `lab` binary.

pub mod config;
pub mod pipeline;
pub mod registry;

pub use config::{Checks, GridConfig, McConfig, PayoffSpec, Resolved, ScenarioConfig, ScenarioRef, Tolerances};
pub use pipeline::{roundtrip_report, run_resolved, run_scenario, CheckOutcome, Mechanism, Roundtrip, RunReport, StageError, SweepRow};
pub use registry::{Oracle, Payoff, PresetInfo, Registry, Scenario};
