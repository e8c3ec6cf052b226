//! Self-attentive chart parsing of UCCA semantic graphs.

pub mod conversion;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod label;
pub mod model;
pub mod nn;
pub mod remote;
pub mod synthetic;
pub mod training;
pub mod tree;

pub use error::{Error, Result};
