//! Vehicle attribute inference grouped by licence plate.
//!
//! Images sharing a plate are treated as views of one vehicle: per-image
//! predictions from any detector backend are combined by majority vote, and
//! the resulting per-plate attributes are indexed for search.

pub mod aggregation;
pub mod backend;
pub mod curation;
pub mod domain;
pub mod evaluation;
pub mod ingestion;
pub mod jsonl;
pub mod par;
pub mod store;

pub use aggregation::{run_mvi, run_svi, tally_votes};
pub use domain::{
    BoundingBox, Detection, GeoPoint, GroundTruth, ImageRecord, Label, Partition, PlateId, Prediction,
    RankedLabel, SplitManifest, Task, Taxonomy, VoteTally, NO_DETECTION,
};
pub use store::{Query, Store};
