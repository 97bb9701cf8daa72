//! Fluorescence grid based aggregation (FGBA) of the chemical master
//! equation for a phase-varying gene and its fluorescent reporter.
//!
//! The crate builds the protein-count CME of a five-phase gene, aggregates
//! it onto the bins of a flow-cytometry fluorescence grid so that the
//! unknown per-protein fluorescence and group sizes drop out, and solves
//! the resulting fluorescence-domain CME to obtain theoretical histograms.
//! A Gillespie simulator and an error harness against the full chain serve
//! as oracles.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cme;
pub mod config;
pub mod error;
pub mod error_bound;
pub mod experiment;
pub mod grid;
pub mod output;
pub mod phase;
pub mod solver;
pub mod sparse;
pub mod ssa;

pub use aggregation::AggregationPlan;
pub use cme::{Axis, BinRepresentative, Partition, StateSpace};
pub use config::{ExperimentConfig, ReplicationScheme, TimeSpec};
pub use error::{FgbaError, Result};
pub use grid::FluorescenceGrid;
pub use phase::{Phase, RateSet};
pub use solver::{Method, ProbabilityVector, SolveOptions};
pub use sparse::{SparseGenerator, SparseMatrix};
pub use ssa::{CellState, ReplicationMode};
