//! Hierarchical approximate-inverse solver for the nodal network equations
//! of electromagnetic-transient simulation.
//!
//! The conductance matrix is partitioned into a binary tree of bus groups.
//! Leaves are inverted directly; sibling groups are coupled through rank-`k`
//! factors built from the cut lines, so a solve becomes a tree-structured
//! matrix-vector product. Topology changes (faults) patch the inverse along
//! the tree paths they touch instead of rebuilding it.

pub mod bench;
pub mod dense;
pub mod error;
pub mod flops;
pub mod hinv;
pub mod network;
pub mod partition;
pub mod reference;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
