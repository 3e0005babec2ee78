//! Grid representation of tables: labels, matching and losses,
//! reconstruction, evaluation metrics and a synthetic data generator.

pub mod annotation_ingest;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod grid_model;
pub mod io;
pub mod label_gen;
pub mod match_loss;
pub mod metrics;
pub mod reconstruct;
pub mod synth;

pub use error::{Axis, Error, Result};
pub use geometry::{BBox, Point, Quad};
pub use grid_model::{Cell, GridDims, GridLabel, GridPrediction, Lattice, LogicalTable};
