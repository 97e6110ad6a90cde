//! Symmetry-preserving code representations.
//!
//! The crate builds program dependence graphs for a small three-address
//! language ([`ir`], [`pdg`]), materialises their automorphism groups and legal
//! instruction reorderings ([`symmetry`]), and implements a self-attention
//! encoder biased by dependence-graph distances ([`model`]) whose equivariance
//! to those symmetries is checked by the [`audit`] suites.

pub mod audit;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod ir;
pub mod metrics;
pub mod model;
pub mod pdg;
pub mod symmetry;
pub mod vocab;
