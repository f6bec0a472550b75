//! Hierarchical graph convolutional networks for semi-supervised node classification.

pub mod autodiff;
pub mod coarsen;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
