//! Fragment-graph state space: actions, transitions, canonical forms and
//! exhaustive enumeration for small libraries.

mod canonical;
mod fragment;
mod state;

pub use canonical::{canonical_form, CanonicalForm};
pub use fragment::{Fragment, FragmentLibrary, MAX_ATTACHMENT_POINTS};
pub use state::{
    adjacency_matrix, AttachSite, LigandAction, LigandEdge, LigandEnv, LigandNode, LigandState, DEFAULT_MAX_NODES,
    ENUMERATION_MAX_FRAGMENTS, ENUMERATION_MAX_NODES,
};
