//! Parameterized building blocks.
//!
//! Each layer only holds [`ParamId`]s; values live in the [`ParamStore`]
//! and a forward pass records onto a [`Graph`].

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Square orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &cols {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        cols.push(v);
    }
    Tensor::from_fn(n, n, |r, c| cols[c][r])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_fan_in(in_dim, out_dim, in_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_fan_in(1, out_dim, in_dim, rng)));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.in_dim {
            return Err(Error::Dimension {
                layer: "linear",
                detail: format!("expected {} input features, got {:?}", self.in_dim, g.shape(x)),
            });
        }
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Gated recurrent unit cell (gate order: reset, update, candidate).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), uniform_fan_in(in_dim, 3 * hidden, hidden, rng));
        let mut rec = Tensor::zeros(hidden, 3 * hidden);
        for gate in 0..3 {
            let q = orthogonal(hidden, rng);
            for r in 0..hidden {
                rec.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(q.row(r));
            }
        }
        let w_hh = store.add(format!("{name}.w_hh"), rec);
        let b_ih = store.add(format!("{name}.b_ih"), uniform_fan_in(1, 3 * hidden, hidden, rng));
        let b_hh = store.add(format!("{name}.b_hh"), uniform_fan_in(1, 3 * hidden, hidden, rng));
        Self { w_ih, w_hh, b_ih, b_hh, in_dim, hidden }
    }

    /// `x W_ih + b_ih`; may be computed for many time steps at once.
    pub fn input_projection(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.in_dim {
            return Err(Error::Dimension {
                layer: "gru_cell",
                detail: format!("expected {} input features, got {:?}", self.in_dim, g.shape(x)),
            });
        }
        let w = g.param(self.w_ih);
        let b = g.param(self.b_ih);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// One recurrence given the projected input `gi` (`n × 3h`) and state `h` (`n × h`).
    pub fn step(&self, g: &mut Graph<'_>, gi: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        if g.shape(gi) != [g.shape(h)[0], 3 * hd] || g.shape(h)[1] != hd {
            return Err(Error::Dimension {
                layer: "gru_cell",
                detail: format!("projected input {:?}, state {:?}", g.shape(gi), g.shape(h)),
            });
        }
        let w = g.param(self.w_hh);
        let b = g.param(self.b_hh);
        let gh = g.matmul(h, w)?;
        let gh = g.add_row(gh, b)?;
        let gi_rz = g.slice_cols(gi, 0..2 * hd)?;
        let gh_rz = g.slice_cols(gh, 0..2 * hd)?;
        let rz = g.add(gi_rz, gh_rz)?;
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0..hd)?;
        let z = g.slice_cols(rz, hd..2 * hd)?;
        let gi_n = g.slice_cols(gi, 2 * hd..3 * hd)?;
        let gh_n = g.slice_cols(gh, 2 * hd..3 * hd)?;
        let rn = g.mul(r, gh_n)?;
        let n = g.add(gi_n, rn)?;
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, h: Var) -> Result<Var> {
        let gi = self.input_projection(g, x)?;
        self.step(g, gi, h)
    }
}

/// Row-wise layer normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(1, dim));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head attention with query, key, value and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{name}: width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        })
    }

    /// Projects key/value sources once so they can be gathered per query segment.
    pub fn project_kv(&self, g: &mut Graph<'_>, kv_src: Var) -> Result<(Var, Var)> {
        Ok((self.key.forward(g, kv_src)?, self.value.forward(g, kv_src)?))
    }

    /// Attention with already projected keys and values.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        q_src: Var,
        keys: Var,
        values: Var,
        q_segs: Vec<Range<usize>>,
        k_segs: Vec<Range<usize>>,
    ) -> Result<Var> {
        let q = self.query.forward(g, q_src)?;
        let o = g.attention(q, keys, values, self.heads, q_segs, k_segs)?;
        self.output.forward(g, o)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        q_src: Var,
        kv_src: Var,
        q_segs: Vec<Range<usize>>,
        k_segs: Vec<Range<usize>>,
    ) -> Result<Var> {
        let (k, v) = self.project_kv(g, kv_src)?;
        self.attend(g, q_src, k, v, q_segs, k_segs)
    }
}

/// Temporal convolution over packed fixed-length sequences.
#[derive(Debug, Clone)]
pub struct Conv1dTemporal {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1dTemporal {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * in_dim;
        let weight = store.add(format!("{name}.weight"), uniform_fan_in(fan_in, out_dim, fan_in, rng));
        let bias = store.add(format!("{name}.bias"), uniform_fan_in(1, out_dim, fan_in, rng));
        Self { weight, bias, kernel }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, seq_len: usize) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv1d(x, w, b, seq_len, self.kernel)
    }
}

/// Position-wise `d → m·d → d` block.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, mult: usize, rng: &mut R) -> Self {
        Self {
            expand: Linear::new(store, &format!("{name}.expand"), dim, dim * mult, true, rng),
            contract: Linear::new(store, &format!("{name}.contract"), dim * mult, dim, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.expand.forward(g, x)?;
        let h = g.gelu(h);
        self.contract.forward(g, h)
    }
}
