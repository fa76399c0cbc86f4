//! Bounded-treewidth Bayesian networks over categorical data.
//!
//! The pipeline is: score candidate parent sets ([`scoring`]), search for a
//! high-scoring DAG whose moral graph fits inside a k-tree ([`learners`]),
//! parameterize it and answer exact queries over the k-tree's clique tree
//! ([`inference`]). [`sem`] wraps the whole loop in structural EM to learn
//! from and impute incomplete data; [`eval`] holds file formats, synthetic
//! networks and evaluation metrics.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod exactlearn;
pub mod inference;
pub mod ktree;
pub mod learners;
pub mod scoring;
pub mod sem;

pub use dataset::{counts, inject_mcar, CategoricalDataset, ContingencyTable, MissingMask, State, Variable, MISSING};
pub use error::{Error, Result};
pub use inference::{estimate_parameters, BayesNet, Evidence, JunctionTree};
pub use ktree::{exact_treewidth, is_moral_subgraph, moral_graph, Dag, KTree, UndirectedGraph};
pub use learners::{learn, Algorithm, LearnResult, LearnerConfig};
pub use scoring::{bic_family, build_cache, CacheConfig, FamilyScore, ParentSetCache};
pub use sem::{sem_run, ImputationMode, SemConfig, SemResult};

/// Mixes a base seed with a stream index (SplitMix64 finalizer), giving
/// independent, reproducible RNG streams for restarts, workers and phases.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
