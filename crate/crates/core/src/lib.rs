//! Overlapping spatio-temporal cube proposals for activity detection in
//! untrimmed video.
//!
//! Tracked object detections seed fixed-box cube proposals on a dense,
//! overlapping temporal grid. Proposals are filtered by foreground content,
//! labeled against references, scored, deduplicated into non-overlapping
//! activity instances and evaluated with DET curves and tube mAP.

pub mod dedup;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod proposals;
pub mod scoring;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{BBox, Cube, Frame, TrackId, Tube};
pub use ingest::PipelineConfig;
