//! Hybrid rotation averaging.
//!
//! The crate is organised bottom-up:
//!
//! * [`so3`]: rotation primitives (exp/log, distances, projection, sampling).
//! * [`view_graph`]: the relative-rotation graph, its text format, spanning
//!   trees, connected components and the block connection matrix.
//! * [`vgf`]: fast view-graph filtering by loop consistency of weak triplets.
//! * [`global_solver`]: block-coordinate minimisation of the rank-3 factorised
//!   semidefinite relaxation with incremental neighbour caches.
//! * [`local_refine`]: robust IRLS refinement in the Lie algebra.
//! * [`pipeline`]: the hybrid filter → global → refine pipeline, synthetic
//!   problem generation, evaluation and the benchmark harness.
//! * [`ba`]: a small rotation-regularised bundle adjuster.

pub mod error;
pub mod graph_io;
pub mod so3;
pub mod view_graph;
pub mod vgf;
pub mod global_solver;
pub mod local_refine;
pub mod pipeline;
pub mod ba;

pub use error::{Error, Result};
