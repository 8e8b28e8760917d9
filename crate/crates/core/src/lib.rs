//! Hierarchy-wise supernet partitioning for neural architecture search at
//! desk scale, with an exhaustive standalone-training oracle.

#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod grouping;
pub mod cli;
pub mod numerics;
pub mod oracle;
pub mod partition_search;
pub mod rng;
pub mod searchspace;
pub mod supernet;

pub use error::{Error, Result};
