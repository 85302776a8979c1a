//! Protein pocket ingestion, KNN graph construction and the frozen geometric encoder.

mod encoder;
mod features;
mod graph;
mod io;

pub use encoder::{PocketEmbedding, PocketEncoder, PocketEncoderConfig};
pub use features::{
    edge_scalar_features, node_features, pseudo_dihedral, NodeFeatures, EDGE_RBF_BINS, EDGE_SCALAR_FEATURES,
    RBF_MAX, RBF_WIDTH, SCALAR_FEATURES, VECTOR_FEATURES,
};
pub use graph::{
    build_knn_graph, pairwise_distance_matrix, validate_residues, KnnEdge, PocketGraph, Residue,
    BACKBONE_SEP_CLIP, DEFAULT_K, NUM_RESIDUE_TYPES,
};
pub use io::{load_pocket_jsonl, parse_pocket_jsonl, write_pocket_jsonl};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::Result;
use crate::geom;
use crate::trioformer::protein_distance_features;

/// Everything the policy needs about one pocket, computed once.
#[derive(Clone, Debug)]
pub struct Pocket {
    pub id: String,
    pub graph: PocketGraph,
    pub features: NodeFeatures,
    pub embedding: PocketEmbedding,
    /// RBF expansion of the distance matrix, `n_P × n_P × bins`.
    pub distance_features: Tensor,
}

impl Pocket {
    pub fn new(id: impl Into<String>, residues: &[Residue], k: usize, encoder: &PocketEncoder, store: &ParamStore) -> Result<Self> {
        let graph = build_knn_graph(residues, k)?;
        let features = node_features(residues, &graph);
        let embedding = encoder.encode(store, &graph, &features);
        let distance_features = protein_distance_features(&graph.dist_matrix);
        Ok(Pocket {
            id: id.into(),
            graph,
            features,
            embedding,
            distance_features,
        })
    }

    pub fn residues(&self) -> &[Residue] {
        &self.graph.residues
    }

    pub fn radius_of_gyration(&self) -> f64 {
        geom::radius_of_gyration(&self.graph.coords())
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

/// A helical chain of `n` residues with random types and jitter; `radius` scales its extent.
pub fn synthetic_residues(n: usize, radius: f64, seed: u64) -> Vec<Residue> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = i as f64 * 1.7;
            let mut jitter = || rng.gen_range(-0.3..0.3);
            let ca = [
                radius * t.cos() + jitter(),
                radius * t.sin() + jitter(),
                0.5 * radius * i as f64 + jitter(),
            ];
            Residue {
                index: i,
                residue_type: rng.gen_range(0..NUM_RESIDUE_TYPES),
                ca,
            }
        })
        .collect()
}
