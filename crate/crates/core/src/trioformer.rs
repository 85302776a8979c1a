//! Geometry-aware conditioning on protein–ligand pair embeddings.
//!
//! The pair tensor is laid out `n_P × n_L × c_pair`. Each layer refreshes the
//! pair tensor from the node tracks, runs a triangle update along the protein
//! axis (biased by intra-protein distances) and then along the ligand axis
//! (biased by ligand adjacency), applies a position-wise transition, and
//! finally lets both node tracks attend to each other with the pair tensor as
//! a per-head attention bias.

use serde::{Deserialize, Serialize};

use crate::autodiff::{LayerNorm, Linear, Mlp, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::gaussian_rbf;

pub const PROTEIN_RBF_BINS: usize = 16;
pub const PROTEIN_RBF_MAX: f64 = 20.0;
pub const PROTEIN_RBF_WIDTH: f64 = 1.25;
pub const LIGAND_DISTANCE_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrioformerConfig {
    /// Node-track width; must equal `heads * head_dim`.
    pub width: usize,
    pub pair_width: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
}

impl Default for TrioformerConfig {
    fn default() -> Self {
        TrioformerConfig {
            width: 64,
            pair_width: 32,
            heads: 4,
            head_dim: 16,
            layers: 2,
        }
    }
}

impl TrioformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads * self.head_dim != self.width {
            return Err(Error::config(
                "trioformer.width",
                format!("heads·head_dim = {}·{} must equal width {}", self.heads, self.head_dim, self.width),
            ));
        }
        if self.pair_width == 0 || self.heads == 0 {
            return Err(Error::config("trioformer", "pair_width and heads must be positive"));
        }
        Ok(())
    }
}

/// A raw distance to be embedded.
#[derive(Clone, Copy, Debug)]
pub enum Distance {
    /// Cα distance in Å.
    Protein(f64),
    /// Ligand adjacency bit (0 = not bonded, 1 = bonded).
    LigandAdjacency(u8),
}

/// Protein: 16 Gaussian RBFs on 0–20 Å (width 1.25 Å). Ligand: one-hot over {non-neighbour, neighbour}.
pub fn distance_embedding(d: Distance) -> Vec<f64> {
    match d {
        Distance::Protein(x) => gaussian_rbf(x, PROTEIN_RBF_BINS, 0.0, PROTEIN_RBF_MAX, PROTEIN_RBF_WIDTH),
        Distance::LigandAdjacency(0) => vec![1.0, 0.0],
        Distance::LigandAdjacency(_) => vec![0.0, 1.0],
    }
}

/// `n × n` distances → `n × n × 16` RBF features.
pub fn protein_distance_features(dist: &Tensor) -> Tensor {
    let n = dist.shape[0];
    let mut data = Vec::with_capacity(n * n * PROTEIN_RBF_BINS);
    for &d in &dist.data {
        data.extend(distance_embedding(Distance::Protein(d)));
    }
    Tensor {
        shape: vec![n, n, PROTEIN_RBF_BINS],
        data,
    }
}

/// `n × n` adjacency → `n × n × 2` one-hot features.
pub fn ligand_distance_features(adjacency: &Tensor) -> Tensor {
    let n = adjacency.shape[0];
    let mut data = Vec::with_capacity(n * n * LIGAND_DISTANCE_CLASSES);
    for &a in &adjacency.data {
        data.extend(distance_embedding(Distance::LigandAdjacency(u8::from(a != 0.0))));
    }
    Tensor {
        shape: vec![n, n, LIGAND_DISTANCE_CLASSES],
        data,
    }
}

/// `h_ij = Linear_P(h_P[i]) + Linear_L(h_L[j])`.
#[derive(Clone, Debug)]
pub struct PairInit {
    pub from_protein: Linear,
    pub from_ligand: Linear,
}

impl PairInit {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, pair_width: usize) -> Result<Self> {
        Ok(PairInit {
            from_protein: Linear::new(store, &format!("{name}.from_p"), width, pair_width, true)?,
            from_ligand: Linear::new(store, &format!("{name}.from_l"), width, pair_width, false)?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, h_p: Var<'t>, h_l: Var<'t>) -> Result<Var<'t>> {
        let (np, nl) = (h_p.shape()[0], h_l.shape()[0]);
        if np == 0 || nl == 0 {
            return Err(Error::Dim(format!("pair init needs nonempty node sets, got n_P={np}, n_L={nl}")));
        }
        let cp = self.from_protein.out_dim;
        let a = self.from_protein.forward(tape, store, h_p)?.reshape(&[np, 1, cp])?;
        let b = self.from_ligand.forward(tape, store, h_l)?.reshape(&[1, nl, cp])?;
        a.add(b)
    }
}

/// Which node set the triangle update attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Protein,
    Ligand,
}

/// Distance-biased attention over one axis of the pair tensor.
///
/// For `Axis::Protein`, the row `(p, l)` attends over `p'` with logits
/// `(q_{p,l}·k_{p',l} + b_{p',l} + t_{p,p'}) / √c`; `Axis::Ligand` is the
/// mirror image over `l'` with `t_{l,l'}` from ligand adjacency.
#[derive(Clone, Debug)]
pub struct TriangleAttention {
    pub axis: Axis,
    pub heads: usize,
    pub head_dim: usize,
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Pair row → per-head scalar bias.
    pub pair_bias: Linear,
    /// Distance features → per-head scalar bias.
    pub dist_bias: Linear,
    pub out: Linear,
}

impl TriangleAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        axis: Axis,
        cfg: &TrioformerConfig,
        dist_features: usize,
    ) -> Result<Self> {
        let cp = cfg.pair_width;
        let hc = cfg.heads * cfg.head_dim;
        Ok(TriangleAttention {
            axis,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            norm: LayerNorm::new(store, &format!("{name}.norm"), cp)?,
            query: Linear::new(store, &format!("{name}.q"), cp, hc, false)?,
            key: Linear::new(store, &format!("{name}.k"), cp, hc, false)?,
            value: Linear::new(store, &format!("{name}.v"), cp, hc, false)?,
            pair_bias: Linear::new(store, &format!("{name}.b"), cp, cfg.heads, false)?,
            dist_bias: Linear::new(store, &format!("{name}.t"), dist_features, cfg.heads, false)?,
            out: Linear::new(store, &format!("{name}.o"), hc, cp, true)?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, pair: Var<'t>, dist_features: Var<'t>) -> Result<Var<'t>> {
        let ps = pair.shape();
        if ps.len() != 3 {
            return Err(Error::Dim(format!("pair tensor must be rank 3, got {ps:?}")));
        }
        let x = match self.axis {
            Axis::Protein => pair.permute(&[1, 0, 2])?,
            Axis::Ligand => pair,
        };
        let xs = x.shape();
        let (outer, att, cp) = (xs[0], xs[1], xs[2]);
        let ds = dist_features.shape();
        if ds.len() != 3 || ds[0] != att || ds[1] != att {
            return Err(Error::Shape {
                op: "triangle_update distance features",
                lhs: ps,
                rhs: ds,
            });
        }
        let (h, c) = (self.heads, self.head_dim);
        let xn = self.norm.forward(tape, store, x)?;
        let split = |lin: &Linear| -> Result<Var<'t>> {
            lin.forward(tape, store, xn)?.reshape(&[outer, att, h, c])?.permute(&[0, 2, 1, 3])
        };
        let (q, k, v) = (split(&self.query)?, split(&self.key)?, split(&self.value)?);
        let b = self
            .pair_bias
            .forward(tape, store, xn)?
            .permute(&[0, 2, 1])?
            .reshape(&[outer, h, 1, att])?;
        let t = self
            .dist_bias
            .forward(tape, store, dist_features)?
            .permute(&[2, 0, 1])?
            .reshape(&[1, h, att, att])?;
        let logits = q.matmul_t(k)?.add(b)?.add(t)?.scale(1.0 / (c as f64).sqrt());
        let attn = logits.softmax(None)?;
        let o = attn
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[outer, att, h * c])?;
        let o = self.out.forward(tape, store, o)?;
        debug_assert_eq!(o.shape(), vec![outer, att, cp]);
        let y = x.add(o)?;
        match self.axis {
            Axis::Protein => y.permute(&[1, 0, 2]),
            Axis::Ligand => Ok(y),
        }
    }
}

/// Position-wise MLP with residual: `pair + MLP(LN(pair))`.
#[derive(Clone, Debug)]
pub struct PairTransition {
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

impl PairTransition {
    pub fn new(store: &mut ParamStore, name: &str, pair_width: usize) -> Result<Self> {
        Ok(PairTransition {
            norm: LayerNorm::new(store, &format!("{name}.norm"), pair_width)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[pair_width, 2 * pair_width, pair_width])?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, pair: Var<'t>) -> Result<Var<'t>> {
        let y = self.mlp.forward(tape, store, self.norm.forward(tape, store, pair)?)?;
        pair.add(y)
    }
}

/// Query/key/value/output projections for one direction of cross attention.
#[derive(Clone, Debug)]
pub struct AttentionProjections {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl AttentionProjections {
    fn new(store: &mut ParamStore, name: &str, width: usize, hc: usize) -> Result<Self> {
        Ok(AttentionProjections {
            query: Linear::new(store, &format!("{name}.q"), width, hc, false)?,
            key: Linear::new(store, &format!("{name}.k"), width, hc, false)?,
            value: Linear::new(store, &format!("{name}.v"), width, hc, false)?,
            out: Linear::new(store, &format!("{name}.o"), hc, width, true)?,
        })
    }
}

/// Multi-head attention between the node tracks with the pair tensor as bias.
#[derive(Clone, Debug)]
pub struct BiasedCrossAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub norm_protein: LayerNorm,
    pub norm_ligand: LayerNorm,
    pub norm_pair: LayerNorm,
    /// Ligand queries over protein keys.
    pub ligand: AttentionProjections,
    /// Protein queries over ligand keys.
    pub protein: AttentionProjections,
    pub ligand_bias: Linear,
    pub protein_bias: Linear,
}

impl BiasedCrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &TrioformerConfig) -> Result<Self> {
        let hc = cfg.heads * cfg.head_dim;
        Ok(BiasedCrossAttention {
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            norm_protein: LayerNorm::new(store, &format!("{name}.norm_p"), cfg.width)?,
            norm_ligand: LayerNorm::new(store, &format!("{name}.norm_l"), cfg.width)?,
            norm_pair: LayerNorm::new(store, &format!("{name}.norm_pair"), cfg.pair_width)?,
            ligand: AttentionProjections::new(store, &format!("{name}.lig"), cfg.width, hc)?,
            protein: AttentionProjections::new(store, &format!("{name}.prot"), cfg.width, hc)?,
            ligand_bias: Linear::new(store, &format!("{name}.lig_bias"), cfg.pair_width, cfg.heads, false)?,
            protein_bias: Linear::new(store, &format!("{name}.prot_bias"), cfg.pair_width, cfg.heads, false)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn attend<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        proj: &AttentionProjections,
        queries: Var<'t>,
        keys: Var<'t>,
        bias: Var<'t>,
        residual: Var<'t>,
    ) -> Result<Var<'t>> {
        let (h, c) = (self.heads, self.head_dim);
        let (nq, nk) = (queries.shape()[0], keys.shape()[0]);
        let split = |lin: &Linear, x: Var<'t>, n: usize| -> Result<Var<'t>> {
            lin.forward(tape, store, x)?.reshape(&[n, h, c])?.permute(&[1, 0, 2])
        };
        let q = split(&proj.query, queries, nq)?;
        let k = split(&proj.key, keys, nk)?;
        let v = split(&proj.value, keys, nk)?;
        let logits = q.matmul_t(k)?.scale(1.0 / (c as f64).sqrt()).add(bias)?;
        let o = logits
            .softmax(None)?
            .matmul(v)?
            .permute(&[1, 0, 2])?
            .reshape(&[nq, h * c])?;
        residual.add(proj.out.forward(tape, store, o)?)
    }

    /// Returns updated `(h_P, h_L)`; both directions read the same input tracks.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h_p: Var<'t>,
        h_l: Var<'t>,
        pair: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (np, nl) = (h_p.shape()[0], h_l.shape()[0]);
        let ps = pair.shape();
        if ps.len() != 3 || ps[0] != np || ps[1] != nl {
            return Err(Error::Shape {
                op: "biased_cross_attention",
                lhs: vec![np, nl],
                rhs: ps,
            });
        }
        let lp = self.norm_protein.forward(tape, store, h_p)?;
        let ll = self.norm_ligand.forward(tape, store, h_l)?;
        let pn = self.norm_pair.forward(tape, store, pair)?;
        // [n_P, n_L, H] → [H, n_L, n_P] and [H, n_P, n_L]
        let lig_bias = self.ligand_bias.forward(tape, store, pn)?.permute(&[2, 1, 0])?;
        let prot_bias = self.protein_bias.forward(tape, store, pn)?.permute(&[2, 0, 1])?;
        let new_l = self.attend(tape, store, &self.ligand, ll, lp, lig_bias, h_l)?;
        let new_p = self.attend(tape, store, &self.protein, lp, ll, prot_bias, h_p)?;
        Ok((new_p, new_l))
    }
}

#[derive(Clone, Debug)]
pub struct TrioformerLayer {
    /// Builds the pair tensor in layer 0 and adds a refresh from the node tracks afterwards.
    pub pair_update: PairInit,
    pub protein_triangle: TriangleAttention,
    pub ligand_triangle: TriangleAttention,
    pub transition: PairTransition,
    pub cross: BiasedCrossAttention,
}

#[derive(Clone, Debug)]
pub struct Trioformer {
    pub config: TrioformerConfig,
    pub layers: Vec<TrioformerLayer>,
}

/// Outputs of the stack; `ligand` is `h_i^{L(N)}`.
#[derive(Clone, Copy, Debug)]
pub struct TrioformerOutput<'t> {
    pub protein: Var<'t>,
    pub ligand: Var<'t>,
    pub pair: Option<Var<'t>>,
}

impl Trioformer {
    pub fn new(store: &mut ParamStore, name: &str, config: TrioformerConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                Ok(TrioformerLayer {
                    pair_update: PairInit::new(store, &format!("{p}.pair"), config.width, config.pair_width)?,
                    protein_triangle: TriangleAttention::new(
                        store,
                        &format!("{p}.tri_p"),
                        Axis::Protein,
                        &config,
                        PROTEIN_RBF_BINS,
                    )?,
                    ligand_triangle: TriangleAttention::new(
                        store,
                        &format!("{p}.tri_l"),
                        Axis::Ligand,
                        &config,
                        LIGAND_DISTANCE_CLASSES,
                    )?,
                    transition: PairTransition::new(store, &format!("{p}.transition"), config.pair_width)?,
                    cross: BiasedCrossAttention::new(store, &format!("{p}.cross"), &config)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Trioformer { config, layers })
    }

    /// Runs every layer. `protein_dist` is `n_P × n_P × 16`, `ligand_dist` is `n_L × n_L × 2`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h_p: Var<'t>,
        h_l: Var<'t>,
        protein_dist: Var<'t>,
        ligand_dist: Var<'t>,
    ) -> Result<TrioformerOutput<'t>> {
        let (np, nl) = (h_p.shape()[0], h_l.shape()[0]);
        if np == 0 || nl == 0 {
            return Err(Error::Dim(format!("trioformer needs nonempty node sets, got n_P={np}, n_L={nl}")));
        }
        let mut out = TrioformerOutput {
            protein: h_p,
            ligand: h_l,
            pair: None,
        };
        for layer in &self.layers {
            let fresh = layer.pair_update.forward(tape, store, out.protein, out.ligand)?;
            let mut pair = match out.pair {
                Some(p) => p.add(fresh)?,
                None => fresh,
            };
            pair = layer.protein_triangle.forward(tape, store, pair, protein_dist)?;
            pair = layer.ligand_triangle.forward(tape, store, pair, ligand_dist)?;
            pair = layer.transition.forward(tape, store, pair)?;
            let (p, l) = layer.cross.forward(tape, store, out.protein, out.ligand, pair)?;
            out = TrioformerOutput {
                protein: p,
                ligand: l,
                pair: Some(pair),
            };
        }
        Ok(out)
    }
}

/// Graph-level embedding: mean of node rows, `[1, width]`.
pub fn pool_graph_embedding<'t>(h: Var<'t>) -> Result<Var<'t>> {
    if h.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Dim("cannot pool an empty node set".into()));
    }
    h.mean_axis(0)
}

/// `e_ij = h_i + h_j`.
pub fn edge_embedding<'t>(h_i: Var<'t>, h_j: Var<'t>) -> Result<Var<'t>> {
    if h_i.shape() != h_j.shape() {
        return Err(Error::Shape {
            op: "edge_embedding",
            lhs: h_i.shape(),
            rhs: h_j.shape(),
        });
    }
    h_i.add(h_j)
}

/// Edge embeddings for every listed `(i, j)`, stacked as `[E, width]`.
pub fn edge_embeddings<'t>(h: Var<'t>, edges: &[(usize, usize)]) -> Result<Option<Var<'t>>> {
    if edges.is_empty() {
        return Ok(None);
    }
    let (is, js): (Vec<usize>, Vec<usize>) = edges.iter().copied().unzip();
    Ok(Some(edge_embedding(h.index_select(&is)?, h.index_select(&js)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_peaks_at_centers() {
        let e = distance_embedding(Distance::Protein(4.0));
        assert_eq!(e[3], 1.0);
        assert!(e[2] < 1.0 && e[4] < 1.0);
        assert_eq!(distance_embedding(Distance::LigandAdjacency(0)), vec![1.0, 0.0]);
        assert_eq!(distance_embedding(Distance::LigandAdjacency(1)), vec![0.0, 1.0]);
    }

    #[test]
    fn rbf_decreases_away_from_center() {
        let center = 8.0;
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let v = distance_embedding(Distance::Protein(center + 0.3 * step as f64))[6];
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn config_requires_consistent_heads() {
        let mut c = TrioformerConfig::default();
        assert!(c.validate().is_ok());
        c.head_dim = 10;
        assert!(c.validate().is_err());
    }
}
