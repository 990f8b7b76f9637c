//! Building blocks for event-based video frame interpolation.
//!
//! The crate covers the deterministic half of an event-based interpolation
//! pipeline: the event data model and its file formats, voxel-grid
//! tensorization, a contrast-threshold event simulator, dense backward
//! warping, attention blending, image-quality metrics, and loading of
//! synchronized event + frame recordings into skip-N benchmark jobs.

pub mod blend;
pub mod dataset;
pub mod error;
pub mod esim;
pub mod events;
pub mod flow;
pub mod frame;
pub mod metrics;
pub mod voxel;
pub mod warp;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use error::{Error, Result};
pub use events::{Event, EventStream, Polarity};
pub use flow::FlowField;
pub use frame::{FloatImage, Frame};
pub use voxel::VoxelGrid;
