//! Experiment harness for policy mirror descent: run configs, the NPG step-size
//! comparison, the lower-bound check, sweeps and SVG plots.

pub mod config;
pub mod experiments;
pub mod output;
pub mod svg;

pub use config::{parse_schedule, EstimatorSpec, InitialPolicy, MdpSource, OutputPaths, RunConfig};
pub use experiments::{
    check_lower_bound, reproduce_appendix_e, run_config, sweep, AppendixERun, LowerBoundEntry,
    LowerBoundReport, RunOutcome, SweepOutcome, Variant,
};
pub use output::write_atomic;
pub use svg::{emit_svg, Reference};
