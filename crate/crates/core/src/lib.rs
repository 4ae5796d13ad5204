//! Hierarchical representation and predictive clustering of AIS vessel tracks.
//!
//! The pipeline turns raw fixes into three views of each voyage (positions,
//! behavior-labelled slices, port-matched label points), encodes them with a
//! recurrent network, and clusters every time step jointly with a label
//! predictor so cluster membership can change as a voyage unfolds.

pub mod cluster;
pub mod encoder;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod io;
pub mod kmeans;
pub mod labelseq;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
