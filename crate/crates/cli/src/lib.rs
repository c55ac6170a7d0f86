//! Batch pipeline over claim corpora: prompts, traces, patch plans, per-layer
//! decoding, temporal graphs, layer similarity, clustering and metrics.

pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

pub use config::{ModelChoice, RunConfig};
pub use error::{CliError, CliResult};
pub use workspace::{StageManifest, StageOutcome, Workspace};
