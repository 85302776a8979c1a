//! Parameterized building blocks recorded on a tape.

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x W + b` applied over the last axis of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let init = Init::Uniform { fan_in: in_dim };
        let weight = store.add(&format!("{name}.w"), &[in_dim, out_dim], init)?;
        let bias = if bias {
            Some(store.add(&format!("{name}.b"), &[1, out_dim], init)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let last = *shape.last().unwrap_or(&0);
        if last != self.in_dim {
            return Err(Error::Dim(format!(
                "linear expects last axis {}, got shape {:?}",
                self.in_dim, shape
            )));
        }
        let rows = x.shape().iter().product::<usize>() / last.max(1);
        let flat = if shape.len() == 2 { x } else { x.reshape(&[rows, last])? };
        let mut y = flat.matmul(tape.param(store, self.weight))?;
        if let Some(b) = self.bias {
            y = y.add(tape.param(store, b))?;
        }
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = self.out_dim;
            y.reshape(&out_shape)
        }
    }
}

/// Affine layers separated by ReLU; no activation after the last layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Dim("mlp needs at least input and output widths".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        mlp_apply(tape, store, x, &self.layers)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

pub fn mlp_apply<'t>(tape: &'t Tape, store: &ParamStore, x: Var<'t>, layers: &[Linear]) -> Result<Var<'t>> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(tape, store, h)?;
        if i + 1 < layers.len() {
            h = h.relu();
        }
    }
    Ok(h)
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(&format!("{name}.gain"), &[dim], Init::Ones)?,
            shift: store.add(&format!("{name}.shift"), &[dim], Init::Zeros)?,
            dim,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let mut bshape = vec![1; shape.len()];
        *bshape.last_mut().ok_or_else(|| Error::Dim("layer norm of rank-0".into()))? = self.dim;
        let g = tape.param(store, self.gain).reshape(&bshape)?;
        let s = tape.param(store, self.shift).reshape(&bshape)?;
        x.layer_norm(LAYER_NORM_EPS)?.mul(g)?.add(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::new(3);
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2]).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.data_mut(id).iter_mut().for_each(|x| *x = 0.0);
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = mlp.forward(&tape, &store, x).unwrap();
        assert!(y.value().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut store = ParamStore::new(4);
        let mlp = Mlp::new(&mut store, "m", &[2, 3]).unwrap();
        let w = store.tensor(mlp.layers[0].weight);
        let b = store.tensor(mlp.layers[0].bias.unwrap());
        let tape = Tape::new();
        let xs = [0.5, -1.5];
        let x = tape.constant(Tensor::new(vec![1, 2], xs.to_vec()).unwrap());
        let y = mlp.forward(&tape, &store, x).unwrap().value();
        for j in 0..3 {
            let expect = xs[0] * w.at2(0, j) + xs[1] * w.at2(1, j) + b.data[j];
            assert!((y.data[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_errors() {
        let mut store = ParamStore::new(4);
        let mlp = Mlp::new(&mut store, "m", &[4, 3]).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(mlp.forward(&tape, &store, x).is_err());
    }

    #[test]
    fn linear_on_rank3_input() {
        let mut store = ParamStore::new(5);
        let lin = Linear::new(&mut store, "l", 3, 2, true).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[2, 4, 3], 0.5));
        assert_eq!(lin.forward(&tape, &store, x).unwrap().shape(), vec![2, 4, 2]);
    }
}
