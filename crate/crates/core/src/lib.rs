//! Correlation laboratory for a pair of polarization experiments: the
//! standard two-photon EPRB arrangement and its single-photon counterpart
//! (SEPRB) in which one photon meets the two polarizing cubes in sequence.
//!
//! The crate provides exact predictions ([`model`]), spacetime diagrams and
//! the transform that carries one layout onto the other ([`geometry`]),
//! pluggable hidden-state ontologies with locality and independence audits
//! ([`ontology`], [`bell`]), CHSH and local-polytope machinery ([`bell`]),
//! and seeded Monte Carlo estimation plus derived analyses ([`analysis`]).

pub mod analysis;
pub mod bell;
pub mod geometry;
pub mod model;
pub mod ontology;
mod simplex;
pub mod stream;
