use crate::autodiff::{LayerNorm, Linear, Mlp, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Pre-norm transformer layer with attention restricted to graph neighbours
/// and a per-head logit bias read from edge features.
#[derive(Clone, Debug)]
pub struct GraphTransformerLayer {
    pub heads: usize,
    pub norm_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub edge_bias: Linear,
    pub norm_ffn: LayerNorm,
    pub ffn: Mlp,
}

impl GraphTransformerLayer {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, edge_dim: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config("model.heads", format!("{heads} heads do not divide width {width}")));
        }
        Ok(GraphTransformerLayer {
            heads,
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width)?,
            query: Linear::new(store, &format!("{name}.q"), width, width, false)?,
            key: Linear::new(store, &format!("{name}.k"), width, width, false)?,
            value: Linear::new(store, &format!("{name}.v"), width, width, false)?,
            out: Linear::new(store, &format!("{name}.o"), width, width, true)?,
            edge_bias: Linear::new(store, &format!("{name}.edge_bias"), edge_dim, heads, false)?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[width, 2 * width, width])?,
        })
    }

    /// `h`: `n × width`; `edge_features`: `n × n × edge_dim`; `attend`: `n × n`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h: Var<'t>,
        edge_features: Var<'t>,
        attend: &[bool],
    ) -> Result<Var<'t>> {
        let s = h.shape();
        let (n, width) = (s[0], s[1]);
        let (nh, c) = (self.heads, width / self.heads);
        let x = self.norm_attn.forward(tape, store, h)?;
        let split = |lin: &Linear| -> Result<Var<'t>> {
            lin.forward(tape, store, x)?.reshape(&[n, nh, c])?.permute(&[1, 0, 2])
        };
        let (q, k, v) = (split(&self.query)?, split(&self.key)?, split(&self.value)?);
        let bias = self.edge_bias.forward(tape, store, edge_features)?.permute(&[2, 0, 1])?;
        let logits = q.matmul_t(k)?.scale(1.0 / (c as f64).sqrt()).add(bias)?;
        let mask: Vec<bool> = attend.iter().copied().cycle().take(nh * n * n).collect();
        let o = logits
            .softmax(Some(&mask))?
            .matmul(v)?
            .permute(&[1, 0, 2])?
            .reshape(&[n, width])?;
        let h = h.add(self.out.forward(tape, store, o)?)?;
        let y = self.ffn.forward(tape, store, self.norm_ffn.forward(tape, store, h)?)?;
        h.add(y)
    }
}

#[derive(Clone, Debug)]
pub struct GraphTransformer {
    pub layers: Vec<GraphTransformerLayer>,
}

impl GraphTransformer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        edge_dim: usize,
        layers: usize,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| GraphTransformerLayer::new(store, &format!("{name}.layer{l}"), width, heads, edge_dim))
            .collect::<Result<_>>()?;
        Ok(GraphTransformer { layers })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h: Var<'t>,
        edge_features: &Tensor,
        attend: &[bool],
    ) -> Result<Var<'t>> {
        let n = h.shape()[0];
        if attend.len() != n * n || edge_features.shape[..2] != [n, n] {
            return Err(Error::Shape {
                op: "graph_transformer",
                lhs: h.shape(),
                rhs: edge_features.shape.clone(),
            });
        }
        let e = tape.constant(edge_features.clone());
        let mut h = h;
        for layer in &self.layers {
            h = layer.forward(tape, store, h, e, attend)?;
        }
        Ok(h)
    }
}
