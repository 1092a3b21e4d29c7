//! Chemistry layer for graph-edit reaction prediction: molecular graphs,
//! SMILES round-tripping, the edit action vocabulary, ground-truth edit
//! sequences and tensor featurization.

pub mod action;
pub mod element;
pub mod featurize;
pub mod graph;
pub mod oracle;
pub mod reaction;
pub mod smiles;

pub use action::{
    action_space_layout, apply_action, ActionLayout, ActionTarget, ActionVocab, AddAtomParams,
    ApplyError, ApplyOutcome, AtomEditParams, BondEditParams, EditAction, VocabCounts, VocabError,
};
pub use featurize::{
    featurize, featurize_marked, fit_config, FeatureConfig, FeatureConfigError, FitOptions,
    GraphTensors,
};
pub use graph::{AtomNode, BondEdge, BondStereo, BondType, Chirality, GraphError, MolGraph};
pub use oracle::{
    build_vocab, diff_reaction, generate_sequence, GenState, GeneratedSequence, OracleError,
    OrderingPolicy, OrderingStrategy, PendingEditSet, Step,
};
pub use reaction::{Direction, Reaction, ReactionError};
pub use smiles::{
    canonical_ranks, canonical_smiles, parse_smiles, parse_smiles_full, write_smiles,
    ParseWarning, SmilesError, WriteOptions,
};
