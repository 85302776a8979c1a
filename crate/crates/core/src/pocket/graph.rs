use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub const NUM_RESIDUE_TYPES: usize = 20;
pub const DEFAULT_K: usize = 8;
/// Backbone separation is clipped here and scaled by it when used as a feature.
pub const BACKBONE_SEP_CLIP: usize = 32;

/// One pocket residue, reduced to its Cα atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub index: usize,
    #[serde(rename = "res")]
    pub residue_type: usize,
    pub ca: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnEdge {
    pub src: usize,
    pub dst: usize,
    /// Euclidean Cα distance in Å.
    pub distance: f64,
    /// `|index_src − index_dst|` along the backbone.
    pub backbone_sep: usize,
    /// Unit vector from `src` to `dst`; zero for coincident atoms.
    pub direction: Vec3,
}

/// KNN graph over pocket residues. Edges are grouped by source, nearest first.
#[derive(Clone, Debug)]
pub struct PocketGraph {
    pub residues: Vec<Residue>,
    pub k: usize,
    pub edges: Vec<KnnEdge>,
    pub dist_matrix: Tensor,
}

impl PocketGraph {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Out-degree of every node: `min(K, n − 1)`.
    pub fn degree(&self) -> usize {
        self.k.min(self.len() - 1)
    }

    pub fn neighbors(&self, i: usize) -> &[KnnEdge] {
        let d = self.degree();
        &self.edges[i * d..(i + 1) * d]
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.residues.iter().map(|r| r.ca).collect()
    }
}

/// Checks types, finiteness and that backbone indices form one contiguous run.
pub fn validate_residues(residues: &[Residue]) -> Result<()> {
    for r in residues {
        if r.residue_type >= NUM_RESIDUE_TYPES {
            return Err(Error::Pocket(format!(
                "residue {} has type {} outside [0, {NUM_RESIDUE_TYPES})",
                r.index, r.residue_type
            )));
        }
        if r.ca.iter().any(|c| !c.is_finite()) {
            return Err(Error::Pocket(format!("residue {} has non-finite coordinates", r.index)));
        }
    }
    let mut idx: Vec<usize> = residues.iter().map(|r| r.index).collect();
    idx.sort_unstable();
    for w in idx.windows(2) {
        if w[1] == w[0] {
            return Err(Error::Pocket(format!("duplicate residue index {}", w[0])));
        }
        if w[1] != w[0] + 1 {
            return Err(Error::Pocket(format!(
                "residue indices are not contiguous: {} is followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

pub fn pairwise_distance_matrix(coords: &[Vec3]) -> Tensor {
    let n = coords.len();
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let d = geom::dist(coords[i], coords[j]);
            t.data[i * n + j] = d;
            t.data[j * n + i] = d;
        }
    }
    t
}

/// Connects every residue to its `k` nearest others by Cα distance.
/// Ties go to the lower backbone index.
pub fn build_knn_graph(residues: &[Residue], k: usize) -> Result<PocketGraph> {
    if residues.len() < 2 {
        return Err(Error::Pocket(format!(
            "a pocket graph needs at least 2 residues, got {}",
            residues.len()
        )));
    }
    if k == 0 {
        return Err(Error::Pocket("K must be at least 1".into()));
    }
    validate_residues(residues)?;
    let coords: Vec<Vec3> = residues.iter().map(|r| r.ca).collect();
    let dist_matrix = pairwise_distance_matrix(&coords);
    let n = residues.len();
    let degree = k.min(n - 1);
    let mut edges = Vec::with_capacity(n * degree);
    for i in 0..n {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cand.sort_by(|&a, &b| {
            dist_matrix
                .at2(i, a)
                .total_cmp(&dist_matrix.at2(i, b))
                .then(residues[a].index.cmp(&residues[b].index))
        });
        for &j in &cand[..degree] {
            edges.push(KnnEdge {
                src: i,
                dst: j,
                distance: dist_matrix.at2(i, j),
                backbone_sep: residues[i].index.abs_diff(residues[j].index),
                direction: geom::unit(geom::sub(coords[j], coords[i])),
            });
        }
    }
    Ok(PocketGraph {
        residues: residues.to_vec(),
        k,
        edges,
        dist_matrix,
    })
}
