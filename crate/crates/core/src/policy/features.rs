use crate::autodiff::Tensor;
use crate::ligand::{FragmentLibrary, LigandState};

/// Dense inputs for the graph transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    /// `n × (n_frag + 1)`; the last slot marks the start token of an empty ligand.
    pub node_features: Tensor,
    /// `n × n × edge_dim`, zero where nodes are not connected.
    pub edge_features: Tensor,
    /// Row-major `n × n`: may node `i` attend to node `j`.
    pub attend: Vec<bool>,
    /// Number of ligand (non-virtual) nodes; they come first.
    pub ligand_nodes: usize,
    /// Undirected ligand bonds.
    pub edges: Vec<(usize, usize)>,
    pub has_virtual: bool,
}

impl GraphInput {
    pub fn len(&self) -> usize {
        self.node_features.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source-ap one-hot, target-ap one-hot, virtual flag, self flag.
pub fn edge_feature_dim(max_aps: usize) -> usize {
    2 * max_aps + 2
}

pub fn node_feature_dim(library: &FragmentLibrary) -> usize {
    library.len() + 1
}

/// One-hot node and edge features. An empty ligand becomes a single start-token node.
pub fn featurize(s: &LigandState, library: &FragmentLibrary) -> GraphInput {
    let nf = node_feature_dim(library);
    let max_aps = library.max_aps();
    let ed = edge_feature_dim(max_aps);
    let n = s.len().max(1);
    let mut node_features = Tensor::zeros(&[n, nf]);
    if s.is_empty() {
        node_features.data[nf - 1] = 1.0;
    }
    for (i, node) in s.nodes.iter().enumerate() {
        node_features.data[i * nf + node.fragment] = 1.0;
    }
    let mut edge_features = Tensor::zeros(&[n, n, ed]);
    let mut attend = vec![false; n * n];
    for i in 0..n {
        attend[i * n + i] = true;
        edge_features.data[(i * n + i) * ed + ed - 1] = 1.0;
    }
    let mut edges = Vec::with_capacity(s.edges.len());
    for e in &s.edges {
        for (src, sap, dst, dap) in [(e.a, e.ap_a, e.b, e.ap_b), (e.b, e.ap_b, e.a, e.ap_a)] {
            let base = (src * n + dst) * ed;
            edge_features.data[base + sap] = 1.0;
            edge_features.data[base + max_aps + dap] = 1.0;
            attend[src * n + dst] = true;
        }
        edges.push((e.a, e.b));
    }
    GraphInput {
        node_features,
        edge_features,
        attend,
        ligand_nodes: n,
        edges,
        has_virtual: false,
    }
}

/// Appends a virtual node (last index) connected to every ligand node in both directions.
/// Its feature row is left zero; the caller supplies its embedding from the pocket.
pub fn with_virtual_node(g: &GraphInput) -> GraphInput {
    let n = g.len();
    let m = n + 1;
    let nf = g.node_features.shape[1];
    let ed = g.edge_features.shape[2];
    let mut node_features = Tensor::zeros(&[m, nf]);
    node_features.data[..n * nf].copy_from_slice(&g.node_features.data);
    let mut edge_features = Tensor::zeros(&[m, m, ed]);
    let mut attend = vec![false; m * m];
    for i in 0..n {
        for j in 0..n {
            let src = (i * n + j) * ed;
            let dst = (i * m + j) * ed;
            edge_features.data[dst..dst + ed].copy_from_slice(&g.edge_features.data[src..src + ed]);
            attend[i * m + j] = g.attend[i * n + j];
        }
    }
    let v = n;
    for i in 0..n {
        edge_features.data[(i * m + v) * ed + ed - 2] = 1.0;
        edge_features.data[(v * m + i) * ed + ed - 2] = 1.0;
        attend[i * m + v] = true;
        attend[v * m + i] = true;
    }
    edge_features.data[(v * m + v) * ed + ed - 1] = 1.0;
    attend[v * m + v] = true;
    GraphInput {
        node_features,
        edge_features,
        attend,
        ligand_nodes: g.ligand_nodes,
        edges: g.edges.clone(),
        has_virtual: true,
    }
}
