//! Evaluation harness for event-based frame interpolation backends.

pub mod backend;
pub mod error;
pub mod protocol;
pub mod runner;
pub mod synth;

pub use backend::{resolve_backend, Backend, Builtin, ExternalBackend, RunOptions};
pub use error::{BenchError, Result};
pub use protocol::{EventsMode, Stage};
pub use runner::{BenchConfig, BenchOutcome};
