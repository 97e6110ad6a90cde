//! Permutations acting on code units, automorphism groups of dependence
//! graphs, and sampling of legal instruction reorderings.
//!
//! Because every dependence edge points forward in source order, an
//! automorphism always keeps each edge pointing forward after it is applied:
//! automorphisms are a subset of the linear extensions the sampler draws from.

mod automorphism;
mod permutation;
mod reorder;

pub use automorphism::{
    automorphisms, automorphisms_bounded, is_automorphism, AutomorphismGroup, DEFAULT_ELEMENT_CAP,
    DEFAULT_NODE_CAP,
};
pub use permutation::{apply, permutation_matrix, BlockPermutation, Permutation};
pub use reorder::{is_linear_extension, kahn_layers, sample_reordering};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymmetryError {
    #[error("{map:?} is not a bijection")]
    NotABijection { map: Vec<usize> },
    #[error("permutation has {found} elements, expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("graph has {nodes} nodes, above the exhaustive-search cap of {cap}; use sampling instead")]
    TooLarge { nodes: usize, cap: usize },
    #[error("automorphism group exceeds {cap} elements; use sampling instead")]
    GroupTooLarge { cap: usize },
    #[error("group axiom `{axiom}` violated: {detail}")]
    GroupAxiom { axiom: &'static str, detail: String },
    #[error("dependence relation has a cycle through {witness:?}")]
    Cycle { witness: Vec<usize> },
    #[error("permutation percentage {0} is outside 0..=100")]
    Percent(u32),
}
