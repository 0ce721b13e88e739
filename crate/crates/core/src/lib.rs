//! Finite rooted real trees and three stochastic processes on them: root
//! growth with re-grafting, the Aldous–Broder chain, and the Rayleigh
//! piecewise-deterministic process.
//!
//! The crate also carries rooted Gromov–Hausdorff machinery (correspondences,
//! δ-nets, quartet reconstruction, trimming) and a small statistical harness
//! that checks the closed-form laws against simulation.

pub mod aldous_broder;
pub mod harness;
pub mod metric;
pub mod rayleigh;
pub mod rgr;
pub mod rng;
pub mod serial;
pub mod stats;
pub mod tree;

pub use tree::{build_tree, RootedTree, TreeError, TreePoint, VertexId, TOL};
