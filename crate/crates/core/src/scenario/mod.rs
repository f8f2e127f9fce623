//! Scenario files, runs, reports and the instantiation profiler.

pub mod build;
pub mod profile;
pub mod report;
pub mod spec;

pub use build::{build, run_scenario, BuiltScenario, Layout};
pub use profile::{canonical_datacenter, profile_instantiation};
pub use report::{emit_reports, Format, ProfileRow, RunReport};
pub use spec::{load_scenario, ScenarioSpec};
