//! Landmark-only micro-expression recognition with graph networks.
//!
//! The pipeline turns three key frames (onset, apex, offset) of 68-point
//! facial landmarks into a 14-node geometric movement graph, runs it through
//! spatial GCN + temporal convolution modules (single- or two-stream), and
//! trains with cross-entropy plus an adaptive multi-layer AU loss.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Adam, Tensor};
