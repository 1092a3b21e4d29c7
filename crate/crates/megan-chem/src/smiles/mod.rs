//! SMILES reading and writing.
//!
//! The dialect is standard daylight-style SMILES with two deliberate
//! simplifications suited to the reaction-edit pipeline:
//!
//! * Bracket hydrogen counts are stored as *explicit* hydrogens and suppress
//!   implicit completion; atoms written without an H count get implicit
//!   hydrogens from the valence rules whether or not they were bracketed
//!   (so `[C:1]` with one bond is a mapped methyl carbon, not a bare C).
//! * Tetrahedral (`@`/`@@`) and double-bond (Z/E) stereochemistry is kept as
//!   opaque labels: parsing and writing are mutually consistent inside this
//!   crate's canonical space, with no claim about CIP assignments.
//!
//! Isotope annotations are accepted and dropped with a warning. Wildcards,
//! quadruple bonds and extended chirality classes are rejected.

mod canon;
mod parse;
mod write;

pub use canon::{canonical_ranks, canonical_smiles};
pub use parse::{parse_smiles, parse_smiles_full, ParseWarning};
pub use write::{write_smiles, WriteOptions};

/// Errors raised while reading SMILES text or validating the resulting graph.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at byte {index}: {message}")]
    Syntax { index: usize, message: String },
    #[error("unsupported SMILES feature at byte {index}: {message}")]
    Unsupported { index: usize, message: String },
    #[error("valence error: {0}")]
    Valence(#[from] crate::graph::GraphError),
}

impl SmilesError {
    pub(crate) fn syntax(index: usize, message: impl Into<String>) -> Self {
        SmilesError::Syntax { index, message: message.into() }
    }

    pub(crate) fn unsupported(index: usize, message: impl Into<String>) -> Self {
        SmilesError::Unsupported { index, message: message.into() }
    }
}
