//! Incremental fusion of uncertain evidence reports into tracks.
//!
//! Reports are simple support functions over a closed frame of targets.
//! Partitioning them into tracks is cast as minimizing inter-report
//! conflict, solved by a Potts mean-field annealer in which permanently
//! assigned reports are clamped. A three-tier memory bounds the work per
//! arrival: a short-term tier that is reclustered on every report, a
//! long-term tier whose assignments are frozen, and an unbounded history
//! used only for evaluation.
//!
//! The [`harness`] module reproduces the memory-size study: 210 splits of a
//! 100-report evaluation window, 10 synthetic datasets each, with conflict
//! weight converted to a classification error rate.

pub mod annealer;
pub mod evidence;
pub mod harness;
pub mod memory;
mod seed;
pub mod tracker;

pub use annealer::{AnnealOutcome, SolverConfig, SpinState, TrackCoupling};
pub use evidence::{CouplingMatrix, FocalSet, Frame, Partition, Report};
pub use memory::{MemoryConfig, MemoryState};
pub use tracker::{Engine, EngineConfig, TrackView};
