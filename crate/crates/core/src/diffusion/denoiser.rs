use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;

use super::schedule::NoiseSchedule;
use super::token::{step_sinusoid, temporal_encoding, token_matrix, BehaviorToken, TOKEN_FEATURES};
use crate::encoder::Encoded;
use crate::error::{bail, Error, Result};
use crate::ndiff::{Activation, Conv1dTemporal, FeedForward, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
struct Block {
    conv: Conv1dTemporal,
    norm1: LayerNorm,
    cross: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

/// Noise predictor: temporal convolution and cross-attention over the
/// condition tokens per block, then a trajectory self-attention decoder.
#[derive(Debug, Clone)]
pub struct Denoiser {
    input: Linear,
    step_mlp: Mlp,
    token_mlp: Mlp,
    blocks: Vec<Block>,
    final_attn: MultiHeadAttention,
    final_norm: LayerNorm,
    output: Linear,
    positional: Tensor,
    /// `ᾱ_0..=ᾱ_T` when the output layer estimates the clean trajectory.
    clean_head: Option<Vec<f64>>,
    width: usize,
    horizon: usize,
    scale: f64,
}

/// Per-sample conditioning of one denoiser call.
#[derive(Debug, Clone, Copy)]
pub struct SampleConditions<'a> {
    /// Diffusion step of each sample.
    pub steps: &'a [usize],
    pub tokens: &'a [BehaviorToken],
    /// Index into the encoded batch of each sample's scenario.
    pub scene_of: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// Predicted noise, `samples·horizon × 2`.
    pub eps: Var,
    /// Final hidden features, `samples·horizon × width`.
    pub features: Var,
    pub sample_segs: Vec<Range<usize>>,
}

impl Denoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        width: usize,
        heads: usize,
        blocks: usize,
        ff_mult: usize,
        kernel: usize,
        horizon: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            bail!(Config, "denoiser kernel must be odd, got {kernel}");
        }
        let input = Linear::new(store, "den.input", 2, width, true, rng);
        let step_mlp = Mlp::new(store, "den.step_mlp", &[width, width, width], Activation::Gelu, rng);
        let token_mlp = Mlp::new(store, "den.token_mlp", &[TOKEN_FEATURES, width, width], Activation::Gelu, rng);
        let mut bs = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let name = format!("den.block{b}");
            bs.push(Block {
                conv: Conv1dTemporal::new(store, &format!("{name}.conv"), width, width, kernel, rng),
                norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
                cross: MultiHeadAttention::new(store, &format!("{name}.cross"), width, heads, rng)?,
                norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
                ff: FeedForward::new(store, &format!("{name}.ff"), width, ff_mult, rng),
                norm3: LayerNorm::new(store, &format!("{name}.norm3"), width),
            });
        }
        let final_attn = MultiHeadAttention::new(store, "den.final_attn", width, heads, rng)?;
        let final_norm = LayerNorm::new(store, "den.final_norm", width);
        let output = Linear::new(store, "den.output", width, 2, true, rng);
        Ok(Self {
            input,
            step_mlp,
            token_mlp,
            blocks: bs,
            final_attn,
            final_norm,
            output,
            positional: temporal_encoding(horizon, width),
            clean_head: None,
            width,
            horizon,
            scale,
        })
    }

    /// Makes the output layer estimate `x0`, turned into the noise estimate
    /// `(x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)` so `x_t` reaches the output exactly.
    pub fn with_clean_head(mut self, schedule: &NoiseSchedule) -> Self {
        self.clean_head = Some((0..=schedule.steps()).map(|t| schedule.alpha_bar(t)).collect());
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Predicts the noise in `x_t` (`samples·horizon × 2`, normalized units).
    pub fn forward(&self, g: &mut Graph<'_>, enc: &Encoded, x_t: Var, cond: SampleConditions<'_>) -> Result<DenoiserOutput> {
        let h_len = self.horizon;
        let [rows, cols] = g.shape(x_t);
        if cols != 2 || rows % h_len != 0 || rows == 0 {
            return Err(Error::Dimension { layer: "denoiser", detail: format!("noisy trajectory {rows}x{cols}, horizon {h_len}") });
        }
        let s = rows / h_len;
        if cond.steps.len() != s {
            bail!(Assembly, "{} step embeddings for {s} samples", cond.steps.len());
        }
        if cond.tokens.len() != s || cond.scene_of.len() != s {
            bail!(Assembly, "{} tokens and {} scene indices for {s} samples", cond.tokens.len(), cond.scene_of.len());
        }
        if let Some(&c) = cond.scene_of.iter().find(|&&c| c >= enc.batch()) {
            bail!(Assembly, "sample refers to scenario {c} of an encoded batch of {}", enc.batch());
        }

        let se = g.constant(step_sinusoid(cond.steps, self.width));
        let se = self.step_mlp.forward(g, se)?;
        let te = g.constant(token_matrix(cond.tokens, self.scale));
        let te = self.token_mlp.forward(g, te)?;

        let per_row: Vec<usize> = (0..s).flat_map(|i| core::iter::repeat(i).take(h_len)).collect();
        let cond_sum = g.add(se, te)?;
        let cond_rows = g.gather_rows(cond_sum, per_row)?;
        let mut pos = Tensor::zeros(rows, self.width);
        for i in 0..s {
            pos.data_mut()[i * h_len * self.width..(i + 1) * h_len * self.width].copy_from_slice(self.positional.data());
        }
        let pos = g.constant(pos);
        let h = self.input.forward(g, x_t)?;
        let h = g.add(h, pos)?;
        let mut h = g.add(h, cond_rows)?;

        // Context rows: agents, lanes, then one token row and one step row per sample.
        let n_agents = g.shape(enc.agents)[0];
        let mut parts = Vec::from([enc.agents]);
        let n_lanes = match enc.lanes {
            Some(l) => {
                parts.push(l);
                g.shape(l)[0]
            }
            None => 0,
        };
        parts.push(te);
        parts.push(se);
        let ctx = g.concat_rows(&parts)?;
        let mut gather = Vec::new();
        let mut k_segs = Vec::with_capacity(s);
        for (i, &c) in cond.scene_of.iter().enumerate() {
            let start = gather.len();
            gather.extend(enc.agent_segs[c].clone());
            if let Some(ls) = enc.lane_segs.get(c) {
                gather.extend(ls.clone().map(|r| n_agents + r));
            }
            gather.push(n_agents + n_lanes + i);
            gather.push(n_agents + n_lanes + s + i);
            k_segs.push(start..gather.len());
        }
        let q_segs: Vec<Range<usize>> = (0..s).map(|i| i * h_len..(i + 1) * h_len).collect();

        for b in &self.blocks {
            let c = b.conv.forward(g, h, h_len)?;
            let c = g.gelu(c);
            let x = g.add(h, c)?;
            h = b.norm1.forward(g, x)?;

            let (k, v) = b.cross.project_kv(g, ctx)?;
            let k = g.gather_rows(k, gather.clone())?;
            let v = g.gather_rows(v, gather.clone())?;
            let a = b.cross.attend(g, h, k, v, q_segs.clone(), k_segs.clone())?;
            let x = g.add(h, a)?;
            h = b.norm2.forward(g, x)?;

            let f = b.ff.forward(g, h)?;
            let x = g.add(h, f)?;
            h = b.norm3.forward(g, x)?;
        }
        let a = self.final_attn.forward(g, h, h, q_segs.clone(), q_segs.clone())?;
        let x = g.add(h, a)?;
        let features = self.final_norm.forward(g, x)?;
        let out = self.output.forward(g, features)?;
        let eps = match &self.clean_head {
            None => out,
            Some(alpha_bar) => {
                let mut a = Vec::with_capacity(rows);
                let mut b = Vec::with_capacity(rows);
                for &t in cond.steps {
                    let Some(&ab) = alpha_bar.get(t).filter(|_| t > 0) else {
                        bail!(Usage, "diffusion step {t} outside 1..={}", alpha_bar.len() - 1);
                    };
                    let n = (1.0 - ab).sqrt();
                    a.extend(core::iter::repeat(1.0 / n).take(h_len));
                    b.extend(core::iter::repeat(-ab.sqrt() / n).take(h_len));
                }
                let a = g.constant(Tensor::from_vec(rows, 1, a)?);
                let b = g.constant(Tensor::from_vec(rows, 1, b)?);
                let skip = g.mul_col(x_t, a)?;
                let est = g.mul_col(out, b)?;
                g.add(skip, est)?
            }
        };
        Ok(DenoiserOutput { eps, features, sample_segs: q_segs })
    }
}
