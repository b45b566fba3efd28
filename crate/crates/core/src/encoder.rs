//! Agent and lane encoders plus the agent/lane cross-attention fusion that
//! together produce the condition set.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::{bail, Result};
use crate::ndiff::{Activation, FeedForward, Graph, GruCell, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamStore, Tensor, Var};
use crate::scene::{AgentHistory, LanePolyline, Scenario, HISTORY_LEN};

pub const AGENT_FEATURES: usize = 6;
pub const LANE_FEATURES: usize = 4;
/// Displacements are divided by this many meters per step.
const DISPLACEMENT_SCALE: f64 = 3.0;
const MIN_MOTION: f64 = 1e-6;

/// Per-step agent features `[x/s, y/s, dx/3, dy/3, sin h, cos h]` packed
/// step-major: row `t * n_agents + a`. Returns the features and the
/// matching `0/1` validity column.
///
/// Invalid steps and steps whose predecessor is invalid contribute no
/// displacement; heading is `(0, 0)` when the agent does not move.
pub fn agent_features(agents: &[&AgentHistory], scale: f64) -> (Tensor, Tensor) {
    let n = agents.len();
    let mut feats = Tensor::zeros(HISTORY_LEN * n, AGENT_FEATURES);
    let mut mask = Tensor::zeros(HISTORY_LEN * n, 1);
    for (a, agent) in agents.iter().enumerate() {
        for t in 0..HISTORY_LEN {
            if !agent.mask[t] {
                continue;
            }
            let row = t * n + a;
            mask.set(row, 0, 1.0);
            let p = agent.positions[t];
            let f = feats.row_mut(row);
            f[0] = p[0] / scale;
            f[1] = p[1] / scale;
            if t > 0 && agent.mask[t - 1] {
                let q = agent.positions[t - 1];
                let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                f[2] = dx / DISPLACEMENT_SCALE;
                f[3] = dy / DISPLACEMENT_SCALE;
                let len = dx.hypot(dy);
                if len > MIN_MOTION {
                    f[4] = dy / len;
                    f[5] = dx / len;
                }
            }
        }
    }
    (feats, mask)
}

/// Per-point lane features `[x/s, y/s, dir_x, dir_y]` with the direction of
/// the outgoing segment (incoming for the last point).
pub fn lane_features(lanes: &[&LanePolyline], scale: f64) -> Result<(Tensor, Vec<Range<usize>>)> {
    let total: usize = lanes.iter().map(|l| l.points.len()).sum();
    let mut feats = Tensor::zeros(total, LANE_FEATURES);
    let mut segs = Vec::with_capacity(lanes.len());
    let mut row = 0;
    for (i, lane) in lanes.iter().enumerate() {
        let pts = &lane.points;
        if pts.len() < 2 {
            bail!(Input, "lane {i} has {} points, need at least 2", pts.len());
        }
        let start = row;
        for j in 0..pts.len() {
            let (a, b) = if j + 1 < pts.len() { (pts[j], pts[j + 1]) } else { (pts[j - 1], pts[j]) };
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if !(len > MIN_MOTION) {
                bail!(Input, "lane {i} has coincident points at index {j}");
            }
            let f = feats.row_mut(row);
            f[0] = pts[j][0] / scale;
            f[1] = pts[j][1] / scale;
            f[2] = dx / len;
            f[3] = dy / len;
            row += 1;
        }
        segs.push(start..row);
    }
    Ok((feats, segs))
}

/// Encoded tokens of a batch of scenarios on a graph.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Fused agent tokens, all scenarios stacked, focal first per scenario.
    pub agents: Var,
    pub agent_segs: Vec<Range<usize>>,
    /// Fused lane tokens; `None` without map input.
    pub lanes: Option<Var>,
    pub lane_segs: Vec<Range<usize>>,
    /// Pre-fusion GRU state of each focal agent (`batch × width`).
    pub focal_history: Var,
}

impl Encoded {
    pub fn batch(&self) -> usize {
        self.agent_segs.len()
    }
}

#[derive(Debug, Clone)]
struct Fusion {
    attn: MultiHeadAttention,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct LaneEncoder {
    input: Linear,
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    agent_mlp: Mlp,
    gru: GruCell,
    /// Absent without map input.
    lane: Option<LaneEncoder>,
    /// A-L, L-A, A-L.
    fusion: Vec<Fusion>,
    width: usize,
    scale: f64,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        width: usize,
        heads: usize,
        ff_mult: usize,
        scale: f64,
        use_map: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let agent_mlp = Mlp::new(store, "enc.agent_mlp", &[AGENT_FEATURES, width, width], Activation::Gelu, rng);
        let gru = GruCell::new(store, "enc.gru", width, width, rng);
        let mut lane = None;
        let mut fusion = Vec::new();
        if use_map {
            lane = Some(LaneEncoder {
                input: Linear::new(store, "enc.lane_in", LANE_FEATURES, width, true, rng),
                attn: MultiHeadAttention::new(store, "enc.lane_attn", width, heads, rng)?,
                norm1: LayerNorm::new(store, "enc.lane_norm1", width),
                ff: FeedForward::new(store, "enc.lane_ff", width, ff_mult, rng),
                norm2: LayerNorm::new(store, "enc.lane_norm2", width),
            });
            for name in ["a2l_0", "l2a", "a2l_1"] {
                fusion.push(Fusion {
                    attn: MultiHeadAttention::new(store, &format!("enc.{name}"), width, heads, rng)?,
                    norm: LayerNorm::new(store, &format!("enc.{name}_norm"), width),
                });
            }
        }
        Ok(Self { agent_mlp, gru, lane, fusion, width, scale })
    }

    pub fn uses_map(&self) -> bool {
        self.lane.is_some()
    }

    /// Final GRU state per agent; masked steps leave the state untouched.
    pub fn encode_agents(&self, g: &mut Graph<'_>, agents: &[&AgentHistory]) -> Result<Var> {
        if agents.is_empty() {
            bail!(Input, "no agents to encode");
        }
        for a in agents {
            a.validate()?;
        }
        let n = agents.len();
        let (feats, mask) = agent_features(agents, self.scale);
        let x = g.constant(feats);
        let e = self.agent_mlp.forward(g, x)?;
        let gi_all = self.gru.input_projection(g, e)?;
        let mut h = g.constant(Tensor::zeros(n, self.width));
        for t in 0..HISTORY_LEN {
            let rows = t * n..(t + 1) * n;
            let m = &mask.data()[rows.clone()];
            if m.iter().all(|&v| v == 0.0) {
                continue;
            }
            let gi = g.slice_rows(gi_all, rows)?;
            let h_new = self.gru.step(g, gi, h)?;
            h = if m.iter().all(|&v| v == 1.0) {
                h_new
            } else {
                let mc = g.constant(Tensor::from_vec(n, 1, m.to_vec())?);
                let d = g.sub(h_new, h)?;
                let md = g.mul_col(d, mc)?;
                g.add(h, md)?
            };
        }
        Ok(h)
    }

    /// Mean-pooled self-attended point features, one token per lane.
    pub fn encode_lanes(&self, g: &mut Graph<'_>, lanes: &[&LanePolyline]) -> Result<Var> {
        let Some(enc) = &self.lane else {
            bail!(Config, "encoder was built without map input");
        };
        let (feats, segs) = lane_features(lanes, self.scale)?;
        let x = g.constant(feats);
        let h = enc.input.forward(g, x)?;
        let a = enc.attn.forward(g, h, h, segs.clone(), segs.clone())?;
        let h = g.add(h, a)?;
        let h = enc.norm1.forward(g, h)?;
        let f = enc.ff.forward(g, h)?;
        let h = g.add(h, f)?;
        let h = enc.norm2.forward(g, h)?;
        g.segment_mean(h, segs)
    }

    fn fuse_step(
        &self,
        g: &mut Graph<'_>,
        i: usize,
        q: Var,
        kv: Var,
        q_segs: &[Range<usize>],
        k_segs: &[Range<usize>],
    ) -> Result<Var> {
        let f = &self.fusion[i];
        let a = f.attn.forward(g, q, kv, q_segs.to_vec(), k_segs.to_vec())?;
        let h = g.add(q, a)?;
        f.norm.forward(g, h)
    }

    /// A-L then L-A then A-L cross-attention with residual connections.
    pub fn fuse(
        &self,
        g: &mut Graph<'_>,
        agents: Var,
        agent_segs: &[Range<usize>],
        lanes: Var,
        lane_segs: &[Range<usize>],
    ) -> Result<(Var, Var)> {
        let a = self.fuse_step(g, 0, agents, lanes, agent_segs, lane_segs)?;
        let l = self.fuse_step(g, 1, lanes, a, lane_segs, agent_segs)?;
        let a = self.fuse_step(g, 2, a, l, agent_segs, lane_segs)?;
        Ok((a, l))
    }

    /// Encodes a batch of scenarios into stacked, fused tokens.
    pub fn encode(&self, g: &mut Graph<'_>, scenes: &[&Scenario]) -> Result<Encoded> {
        if scenes.is_empty() {
            bail!(Input, "empty scenario batch");
        }
        let mut agents = Vec::new();
        let mut agent_segs = Vec::with_capacity(scenes.len());
        let mut focal_rows = Vec::with_capacity(scenes.len());
        for s in scenes {
            if s.agents.is_empty() {
                bail!(Input, "scenario {} has no agents", s.id);
            }
            focal_rows.push(agents.len());
            agent_segs.push(agents.len()..agents.len() + s.agents.len());
            agents.extend(s.agents.iter());
        }
        let agent_tokens = self.encode_agents(g, &agents)?;
        let focal_history = g.gather_rows(agent_tokens, focal_rows)?;
        if !self.uses_map() {
            return Ok(Encoded { agents: agent_tokens, agent_segs, lanes: None, lane_segs: Vec::new(), focal_history });
        }
        let mut lanes = Vec::new();
        let mut lane_segs = Vec::with_capacity(scenes.len());
        for s in scenes {
            if s.lanes.is_empty() {
                bail!(Input, "scenario {} has no lanes but the model uses map input", s.id);
            }
            lane_segs.push(lanes.len()..lanes.len() + s.lanes.len());
            lanes.extend(s.lanes.iter());
        }
        let lane_tokens = self.encode_lanes(g, &lanes)?;
        let (a, l) = self.fuse(g, agent_tokens, &agent_segs, lane_tokens, &lane_segs)?;
        Ok(Encoded { agents: a, agent_segs, lanes: Some(l), lane_segs, focal_history })
    }
}
