use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::SampleConditions;
use super::token::{behavior_tokens, endpoint_source, BehaviorToken};
use crate::encoder::Encoded;
use crate::error::{bail, Result};
use crate::heads::{final_score, ModeProbs};
use crate::model::{Model, Variant};
use crate::ndiff::{Graph, Tensor};
use crate::scene::{Point, Scenario};

/// Default endpoint noise (meters) of the emulated endpoint predictor.
pub const DEFAULT_SIGMA_EP: f64 = 0.5;

/// Token policy at inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplingMode {
    Baseline,
    /// Two tokens per mode at intersections, otherwise K copies of the
    /// classifier's most likely mode.
    BehaviorControlled,
    EndpointControlled { sigma_ep: f64 },
}

impl SamplingMode {
    pub fn for_variant(variant: Variant, sigma_ep: f64) -> Self {
        match variant {
            Variant::Baseline => SamplingMode::Baseline,
            Variant::BehaviorControlled | Variant::NoMap => SamplingMode::BehaviorControlled,
            Variant::EndpointControlled => SamplingMode::EndpointControlled { sigma_ep },
        }
    }

    /// Errors unless a model trained as `variant` supports this policy.
    pub fn check(&self, variant: Variant) -> Result<()> {
        let ok = matches!(
            (self, variant),
            (SamplingMode::Baseline, Variant::Baseline)
                | (SamplingMode::BehaviorControlled, Variant::BehaviorControlled | Variant::NoMap)
                | (SamplingMode::EndpointControlled { .. }, Variant::EndpointControlled)
        );
        if !ok {
            bail!(Config, "sampling mode {self:?} does not match a {} checkpoint", variant.as_str());
        }
        Ok(())
    }
}

/// K sampled futures of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub id: String,
    /// K × horizon positions, meters, focal frame.
    pub samples: Vec<Vec<Point>>,
    /// Classifier probability of the sample's mode times the decoder score.
    pub confidences: Vec<f64>,
    pub decoder_scores: Vec<f64>,
    pub mode_probs: ModeProbs,
    pub tokens: Vec<BehaviorToken>,
}

impl PredictionSet {
    /// Sample indices by descending confidence; lower index wins ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.sort_by(|&a, &b| self.confidences[b].total_cmp(&self.confidences[a]).then(a.cmp(&b)));
        idx
    }
}

/// Encoder outputs detached from their graph so each denoising step can
/// reuse them without re-running the encoder.
#[derive(Debug, Clone)]
pub struct FrozenConditions {
    agents: Tensor,
    agent_segs: Vec<Range<usize>>,
    lanes: Option<Tensor>,
    lane_segs: Vec<Range<usize>>,
    focal_history: Tensor,
}

impl FrozenConditions {
    pub fn freeze(g: &Graph<'_>, enc: &Encoded) -> Self {
        Self {
            agents: g.value(enc.agents).clone(),
            agent_segs: enc.agent_segs.clone(),
            lanes: enc.lanes.map(|l| g.value(l).clone()),
            lane_segs: enc.lane_segs.clone(),
            focal_history: g.value(enc.focal_history).clone(),
        }
    }

    pub fn attach(&self, g: &mut Graph<'_>) -> Encoded {
        Encoded {
            agents: g.constant(self.agents.clone()),
            agent_segs: self.agent_segs.clone(),
            lanes: self.lanes.as_ref().map(|l| g.constant(l.clone())),
            lane_segs: self.lane_segs.clone(),
            focal_history: g.constant(self.focal_history.clone()),
        }
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs the full reverse chain for `k` samples per scenario.
///
/// `rngs[i]` drives every random draw of scenario `i`, so results do not
/// depend on how scenarios are batched.
pub fn sample<R: Rng>(
    model: &Model,
    scenes: &[&Scenario],
    k: usize,
    mode: SamplingMode,
    rngs: &mut [R],
) -> Result<Vec<PredictionSet>> {
    if !model.is_ready() {
        bail!(State, "model weights are not loaded");
    }
    mode.check(model.variant)?;
    if k == 0 {
        bail!(Usage, "need at least one sample per scenario");
    }
    if rngs.len() != scenes.len() {
        bail!(Usage, "{} rng streams for {} scenarios", rngs.len(), scenes.len());
    }
    if scenes.is_empty() {
        return Ok(Vec::new());
    }
    let horizon = model.config.horizon;
    let per_sample = horizon * 2;
    let n_samples = scenes.len() * k;

    let mut g = Graph::inference(&model.store);
    let enc = model.encode(&mut g, scenes)?;
    let logits = model.classify(&mut g, &enc)?;
    let frozen = FrozenConditions::freeze(&g, &enc);
    let probs: Vec<ModeProbs> = (0..scenes.len()).map(|i| ModeProbs::from_logits(g.value(logits).row(i))).collect();
    drop(g);

    let mut tokens = Vec::with_capacity(n_samples);
    for (i, s) in scenes.iter().enumerate() {
        match mode {
            SamplingMode::Baseline => tokens.extend(vec![BehaviorToken::None; k]),
            SamplingMode::BehaviorControlled => tokens.extend(behavior_tokens(s.is_intersection, probs[i].argmax(), k)),
            SamplingMode::EndpointControlled { sigma_ep } => {
                let ep = endpoint_source(s, sigma_ep, &mut rngs[i])?;
                tokens.extend(vec![BehaviorToken::Endpoint(ep); k]);
            }
        }
    }
    let scene_of: Vec<usize> = (0..n_samples).map(|j| j / k).collect();
    let mut x: Vec<f64> = Vec::with_capacity(n_samples * per_sample);
    for rng in rngs.iter_mut() {
        x.extend(normal_vec(rng, k * per_sample));
    }

    let mut decoder_scores = vec![0.0; n_samples];
    for t in (1..=model.schedule.steps()).rev() {
        let mut g = Graph::inference(&model.store);
        let enc = frozen.attach(&mut g);
        let xv = g.constant(Tensor::from_vec(n_samples * horizon, 2, x.clone())?);
        let steps = vec![t; n_samples];
        let out = model.denoise(&mut g, &enc, xv, SampleConditions { steps: &steps, tokens: &tokens, scene_of: &scene_of })?;
        let z = if t > 1 {
            let mut z = Vec::with_capacity(x.len());
            for rng in rngs.iter_mut() {
                z.extend(normal_vec(rng, k * per_sample));
            }
            z
        } else {
            let conf = model.confidence(&mut g, &out)?;
            decoder_scores.copy_from_slice(g.value(conf).data());
            Vec::new()
        };
        let eps_hat = g.value(out.eps).data();
        x = if model.config.clip_x0 > 0.0 {
            model.schedule.p_sample_step_clipped(&x, t, eps_hat, &z, model.config.clip_x0)?
        } else {
            model.schedule.p_sample_step(&x, t, eps_hat, &z)?
        };
    }

    let scale = model.config.scale;
    let mut out = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let mut samples = Vec::with_capacity(k);
        let mut confidences = Vec::with_capacity(k);
        for j in i * k..(i + 1) * k {
            let v = &x[j * per_sample..(j + 1) * per_sample];
            samples.push(v.chunks(2).map(|p| [p[0] * scale, p[1] * scale]).collect());
            let mode_prob = probs[i].prob(tokens[j].mode().unwrap_or_else(|| probs[i].argmax()));
            confidences.push(final_score(mode_prob, decoder_scores[j]));
        }
        out.push(PredictionSet {
            id: s.id.clone(),
            samples,
            confidences,
            decoder_scores: decoder_scores[i * k..(i + 1) * k].to_vec(),
            mode_probs: probs[i],
            tokens: tokens[i * k..(i + 1) * k].to_vec(),
        });
    }
    Ok(out)
}
