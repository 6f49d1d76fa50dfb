//! Config files, bundled presets and the runner behind the `dbarlab` binary.
//!
//! A run validates its config, executes one experiment on a thread pool of the
//! requested size and writes `report.json` (with `schema_version`) plus any
//! CSV tables atomically into the output directory. Reports carry no timings,
//! so identical configs give byte-identical files.

mod config;
mod data;
mod presets;
mod run;
pub mod validate;

pub use config::{
    ConfigFormat, DataConfig, DataKind, ExperimentConfig, ExperimentKind, Geometry, GridSpec,
    Overrides, WeightConfig,
};
pub use data::{manufacture, source_field};
pub use presets::{find as find_preset, Preset, PRESETS};
pub use run::{
    exit_code, run, write_atomic, Outcome, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO, EXIT_OK,
    EXIT_SOLVER, SCHEMA_VERSION,
};
