//! Command-line experiments, reports and tensor files for `sole-core`.

pub mod cli;
pub mod experiments;
pub mod report;
pub mod tensor;

/// JSON Schema that every emitted run report validates against.
pub const RUN_REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");
