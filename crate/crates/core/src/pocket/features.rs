use std::collections::HashMap;

use super::graph::{PocketGraph, Residue, BACKBONE_SEP_CLIP, NUM_RESIDUE_TYPES};
use crate::autodiff::Tensor;
use crate::geom::{self, Vec3};

/// One-hot residue type plus sin/cos of the pseudo-dihedral.
pub const SCALAR_FEATURES: usize = NUM_RESIDUE_TYPES + 2;
/// Forward and backward chain directions.
pub const VECTOR_FEATURES: usize = 2;

pub const EDGE_RBF_BINS: usize = 16;
pub const EDGE_SCALAR_FEATURES: usize = EDGE_RBF_BINS + 1;
pub const RBF_MAX: f64 = 20.0;
pub const RBF_WIDTH: f64 = 1.25;

#[derive(Clone, Debug)]
pub struct NodeFeatures {
    /// `n × SCALAR_FEATURES`; invariant under rigid motion.
    pub scalars: Tensor,
    /// Per node: unit vectors to the next and previous Cα along the chain (zero at ends).
    pub vectors: Vec<[Vec3; VECTOR_FEATURES]>,
}

/// Dihedral angle of four points as `(sin, cos)`, or `None` when degenerate.
pub fn pseudo_dihedral(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3) -> Option<(f64, f64)> {
    let b1 = geom::sub(p1, p0);
    let b2 = geom::sub(p2, p1);
    let b3 = geom::sub(p3, p2);
    let n1 = geom::cross(b1, b2);
    let n2 = geom::cross(b2, b3);
    let b2n = geom::norm(b2);
    if b2n == 0.0 {
        return None;
    }
    let m1 = geom::cross(n1, geom::scale(b2, 1.0 / b2n));
    let x = geom::dot(n1, n2);
    let y = geom::dot(m1, n2);
    let r = x.hypot(y);
    if r < 1e-12 {
        return None;
    }
    Some((y / r, x / r))
}

pub fn node_features(residues: &[Residue], _graph: &PocketGraph) -> NodeFeatures {
    let n = residues.len();
    let by_index: HashMap<usize, usize> = residues.iter().enumerate().map(|(p, r)| (r.index, p)).collect();
    let at = |index: Option<usize>| index.and_then(|i| by_index.get(&i)).map(|&p| residues[p].ca);

    let mut scalars = Tensor::zeros(&[n, SCALAR_FEATURES]);
    let mut vectors = Vec::with_capacity(n);
    for (p, r) in residues.iter().enumerate() {
        let row = &mut scalars.data[p * SCALAR_FEATURES..(p + 1) * SCALAR_FEATURES];
        row[r.residue_type] = 1.0;
        let prev = at(r.index.checked_sub(1));
        let next = at(Some(r.index + 1));
        let next2 = at(Some(r.index + 2));
        if let (Some(a), Some(c), Some(d)) = (prev, next, next2) {
            if let Some((s, co)) = pseudo_dihedral(a, r.ca, c, d) {
                row[NUM_RESIDUE_TYPES] = s;
                row[NUM_RESIDUE_TYPES + 1] = co;
            }
        }
        let fwd = next.map_or([0.0; 3], |c| geom::unit(geom::sub(c, r.ca)));
        let bwd = prev.map_or([0.0; 3], |a| geom::unit(geom::sub(a, r.ca)));
        vectors.push([fwd, bwd]);
    }
    NodeFeatures { scalars, vectors }
}

/// Scalar edge features: RBF of the distance and the clipped backbone separation.
pub fn edge_scalar_features(distance: f64, backbone_sep: usize) -> Vec<f64> {
    let mut f = geom::gaussian_rbf(distance, EDGE_RBF_BINS, 0.0, RBF_MAX, RBF_WIDTH);
    f.push(backbone_sep.min(BACKBONE_SEP_CLIP) as f64 / BACKBONE_SEP_CLIP as f64);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pocket::graph::build_knn_graph;

    fn chain(points: &[Vec3]) -> Vec<Residue> {
        points
            .iter()
            .enumerate()
            .map(|(i, &ca)| Residue {
                index: i,
                residue_type: i % NUM_RESIDUE_TYPES,
                ca,
            })
            .collect()
    }

    #[test]
    fn coplanar_dihedral_has_zero_sine() {
        let r = chain(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 1.5, 0.0]]);
        let g = build_knn_graph(&r, 2).unwrap();
        let f = node_features(&r, &g);
        let s = f.scalars.at2(1, NUM_RESIDUE_TYPES);
        let c = f.scalars.at2(1, NUM_RESIDUE_TYPES + 1);
        assert!(s.abs() < 1e-9);
        assert!((c.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chain_ends_have_zero_dihedral() {
        let r = chain(&[[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [1.3, 1.0, 0.4], [2.0, 1.5, 1.0], [2.5, 0.5, 1.5]]);
        let g = build_knn_graph(&r, 2).unwrap();
        let f = node_features(&r, &g);
        for p in [0, 3, 4] {
            assert_eq!(f.scalars.at2(p, NUM_RESIDUE_TYPES), 0.0);
            assert_eq!(f.scalars.at2(p, NUM_RESIDUE_TYPES + 1), 0.0);
        }
        assert_eq!(f.vectors[0][1], [0.0; 3]);
        assert_eq!(f.vectors[4][0], [0.0; 3]);
        assert!((geom::norm(f.vectors[2][0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_type() {
        let r = chain(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let g = build_knn_graph(&r, 1).unwrap();
        let f = node_features(&r, &g);
        assert_eq!(f.scalars.row(1)[..NUM_RESIDUE_TYPES].iter().sum::<f64>(), 1.0);
        assert_eq!(f.scalars.at2(1, 1), 1.0);
    }
}
