//! Scene graph generation by iterative message passing between a node
//! (object) channel and an edge (relationship) channel, built on a small
//! reverse-mode autodiff tape.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
