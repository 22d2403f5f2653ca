//! Building attribute mapping from crowdsourced street photos: OSM footprint
//! ingestion, photo filtering, sight-line matching and scene-text
//! post-processing.

pub mod content;
pub mod error;
pub mod fixture;
pub mod geo;
pub mod jsonl;
pub mod mapper;
pub mod osm;
pub mod photo;
pub mod report;
pub mod strpost;
pub mod synth;
