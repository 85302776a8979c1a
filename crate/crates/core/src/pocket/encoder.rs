//! Two-track (scalar / vector) message passing over the pocket KNN graph.
//!
//! Vector channels are only ever combined linearly across channels and scaled
//! by scalar gates, so they rotate with the input. They reach the scalar track
//! through their norms alone, which makes every scalar output invariant to
//! rotation and translation of the Cα coordinates.

use serde::{Deserialize, Serialize};

use super::features::{edge_scalar_features, NodeFeatures, EDGE_SCALAR_FEATURES, SCALAR_FEATURES, VECTOR_FEATURES};
use super::graph::PocketGraph;
use crate::autodiff::{Init, ParamId, ParamStore, Tensor};
use crate::error::Result;
use crate::geom::{self, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocketEncoderConfig {
    pub width: usize,
    pub vector_channels: usize,
    pub layers: usize,
}

impl Default for PocketEncoderConfig {
    fn default() -> Self {
        PocketEncoderConfig {
            width: 64,
            vector_channels: 8,
            layers: 3,
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    vec_mix: ParamId,    // [c_v, c_v + 1]
    msg_w: ParamId,      // [2c + edge + c_v, c]
    msg_b: ParamId,      // [c]
    gate_w: ParamId,     // [c, c_v]
    gate_b: ParamId,     // [c_v]
    vec_out: ParamId,    // [c_v, c_v]
}

#[derive(Clone, Debug)]
pub struct PocketEncoder {
    pub config: PocketEncoderConfig,
    in_w: ParamId,
    in_b: ParamId,
    in_vec: ParamId,
    layers: Vec<EncoderLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PocketEmbedding {
    /// `n_P × width`
    pub node_embeddings: Tensor,
    /// Mean of the node rows.
    pub pooled: Vec<f64>,
}

fn dense(x: &[f64], w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    let mut y = b.map_or_else(|| vec![0.0; out], |b| b.to_vec());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yj, wj) in y.iter_mut().zip(&w[i * out..(i + 1) * out]) {
            *yj += xi * wj;
        }
    }
    y
}

/// `out[a] = Σ_b mix[a][b] · v[b]` over vector channels.
fn mix_vectors(mix: &[f64], v: &[Vec3], out_channels: usize) -> Vec<Vec3> {
    let inc = v.len();
    (0..out_channels)
        .map(|a| {
            v.iter()
                .enumerate()
                .fold([0.0; 3], |acc, (b, &vb)| geom::add(acc, geom::scale(vb, mix[a * inc + b])))
        })
        .collect()
}

fn normalize_row(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let s = 1.0 / (var + crate::autodiff::LAYER_NORM_EPS).sqrt();
    row.iter_mut().for_each(|x| *x = (*x - mean) * s);
}

impl PocketEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: PocketEncoderConfig) -> Result<Self> {
        let c = config.width;
        let cv = config.vector_channels;
        let in_w = store.add(&format!("{name}.in.w"), &[SCALAR_FEATURES, c], Init::Uniform { fan_in: SCALAR_FEATURES })?;
        let in_b = store.add(&format!("{name}.in.b"), &[c], Init::Uniform { fan_in: SCALAR_FEATURES })?;
        let in_vec = store.add(&format!("{name}.in.vec"), &[cv, VECTOR_FEATURES], Init::Uniform { fan_in: VECTOR_FEATURES })?;
        let msg_in = 2 * c + EDGE_SCALAR_FEATURES + cv;
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                Ok(EncoderLayer {
                    vec_mix: store.add(&format!("{p}.vec_mix"), &[cv, cv + 1], Init::Uniform { fan_in: cv + 1 })?,
                    msg_w: store.add(&format!("{p}.msg.w"), &[msg_in, c], Init::Uniform { fan_in: msg_in })?,
                    msg_b: store.add(&format!("{p}.msg.b"), &[c], Init::Uniform { fan_in: msg_in })?,
                    gate_w: store.add(&format!("{p}.gate.w"), &[c, cv], Init::Uniform { fan_in: c })?,
                    gate_b: store.add(&format!("{p}.gate.b"), &[cv], Init::Uniform { fan_in: c })?,
                    vec_out: store.add(&format!("{p}.vec_out"), &[cv, cv], Init::Uniform { fan_in: cv })?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PocketEncoder {
            config,
            in_w,
            in_b,
            in_vec,
            layers,
        })
    }

    /// Runs all configured layers.
    pub fn encode(&self, store: &ParamStore, graph: &PocketGraph, features: &NodeFeatures) -> PocketEmbedding {
        self.encode_layers(store, graph, features, self.layers.len())
    }

    /// Runs the first `n_layers` message-passing layers (0 = input projection only).
    pub fn encode_layers(
        &self,
        store: &ParamStore,
        graph: &PocketGraph,
        features: &NodeFeatures,
        n_layers: usize,
    ) -> PocketEmbedding {
        let c = self.config.width;
        let cv = self.config.vector_channels;
        let n = graph.len();
        let mut s: Vec<Vec<f64>> = (0..n)
            .map(|i| dense(features.scalars.row(i), store.data(self.in_w), Some(store.data(self.in_b)), c))
            .collect();
        let mut v: Vec<Vec<Vec3>> = features
            .vectors
            .iter()
            .map(|vf| mix_vectors(store.data(self.in_vec), vf, cv))
            .collect();

        for layer in self.layers.iter().take(n_layers) {
            let mut s_new = s.clone();
            let mut v_new = v.clone();
            for i in 0..n {
                let nbrs = graph.neighbors(i);
                let inv = 1.0 / nbrs.len() as f64;
                let mut m_acc = vec![0.0; c];
                let mut v_acc = vec![[0.0; 3]; cv];
                for e in nbrs {
                    let j = e.dst;
                    let mut vin = v[j].clone();
                    vin.push(e.direction);
                    let vh = mix_vectors(store.data(layer.vec_mix), &vin, cv);
                    let mut x = Vec::with_capacity(2 * c + EDGE_SCALAR_FEATURES + cv);
                    x.extend_from_slice(&s[i]);
                    x.extend_from_slice(&s[j]);
                    x.extend(edge_scalar_features(e.distance, e.backbone_sep));
                    x.extend(vh.iter().map(|&u| geom::norm(u)));
                    let m: Vec<f64> = dense(&x, store.data(layer.msg_w), Some(store.data(layer.msg_b)), c)
                        .into_iter()
                        .map(|z| z.max(0.0))
                        .collect();
                    let gate = dense(&m, store.data(layer.gate_w), Some(store.data(layer.gate_b)), cv);
                    let vo = mix_vectors(store.data(layer.vec_out), &vh, cv);
                    for a in 0..cv {
                        let g = 1.0 / (1.0 + (-gate[a]).exp());
                        v_acc[a] = geom::add(v_acc[a], geom::scale(vo[a], g * inv));
                    }
                    for (acc, mv) in m_acc.iter_mut().zip(&m) {
                        *acc += mv * inv;
                    }
                }
                for (sv, mv) in s_new[i].iter_mut().zip(&m_acc) {
                    *sv += mv;
                }
                normalize_row(&mut s_new[i]);
                for a in 0..cv {
                    v_new[i][a] = geom::add(v_new[i][a], v_acc[a]);
                }
            }
            s = s_new;
            v = v_new;
        }

        let mut pooled = vec![0.0; c];
        for row in &s {
            for (p, x) in pooled.iter_mut().zip(row) {
                *p += x / n as f64;
            }
        }
        let node_embeddings = Tensor {
            shape: vec![n, c],
            data: s.into_iter().flatten().collect(),
        };
        PocketEmbedding {
            node_embeddings,
            pooled,
        }
    }
}
