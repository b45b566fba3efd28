//! The full trajectory model: encoder, denoiser, heads and noise schedule
//! over one parameter store.

use alloc::format;
use alloc::string::String;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::denoiser::{Denoiser, DenoiserOutput, SampleConditions};
use crate::diffusion::schedule::{NoiseSchedule, ScheduleKind};
use crate::encoder::{Encoded, Encoder};
use crate::error::{bail, Result};
use crate::heads::{ConfidenceDecoder, ModeClassifier};
use crate::ndiff::{Graph, ParamStore, Tensor, Var};
use crate::scene::{Scenario, FUTURE_LEN};

/// Experiment variant: which token the model is trained with and whether
/// it sees the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    /// No behavior token.
    #[default]
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "behavior")]
    BehaviorControlled,
    #[serde(rename = "endpoint")]
    EndpointControlled,
    /// Behavior tokens without map tokens.
    #[serde(rename = "nomap")]
    NoMap,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::BehaviorControlled, Variant::EndpointControlled, Variant::NoMap];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BehaviorControlled => "behavior",
            Variant::EndpointControlled => "endpoint",
            Variant::NoMap => "nomap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn uses_map(self) -> bool {
        self != Variant::NoMap
    }
}

/// What the denoiser's last layer estimates; the denoiser always returns `ε̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsHead {
    /// The layer outputs `ε̂` directly.
    Direct,
    /// The layer outputs `x̂0`, mapped to `ε̂` in closed form.
    #[default]
    Clean,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    pub kernel: usize,
    pub horizon: usize,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub eps_head: EpsHead,
    /// Meters per normalized unit.
    pub scale: f64,
    /// Bound on the clean-sample estimate during sampling, normalized units;
    /// 0 samples with the plain ancestral step.
    pub clip_x0: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 6,
            ff_mult: 4,
            kernel: 3,
            horizon: FUTURE_LEN,
            diffusion_steps: 20,
            schedule: ScheduleKind::Linear,
            eps_head: EpsHead::Clean,
            scale: 30.0,
            clip_x0: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            bail!(Config, "width {} must be a positive multiple of heads {}", self.width, self.heads);
        }
        if self.ff_mult == 0 || self.horizon == 0 || self.diffusion_steps == 0 {
            bail!(Config, "ff_mult, horizon and diffusion_steps must be positive");
        }
        if self.kernel % 2 == 0 {
            bail!(Config, "kernel must be odd, got {}", self.kernel);
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            bail!(Config, "scale must be positive, got {}", self.scale);
        }
        if !(self.clip_x0 >= 0.0) {
            bail!(Config, "clip_x0 must be non-negative, got {}", self.clip_x0);
        }
        Ok(())
    }
}

/// Call counters used to verify the sampling cost contract.
#[derive(Debug, Default)]
pub struct CallCounters {
    encoder: AtomicU64,
    denoiser: AtomicU64,
}

impl CallCounters {
    /// Scenarios passed through the encoder.
    pub fn encoder(&self) -> u64 {
        self.encoder.load(Ordering::Relaxed)
    }

    /// Per-sample denoiser evaluations.
    pub fn denoiser(&self) -> u64 {
        self.denoiser.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.encoder.store(0, Ordering::Relaxed);
        self.denoiser.store(0, Ordering::Relaxed);
    }
}

impl Clone for CallCounters {
    fn clone(&self) -> Self {
        Self { encoder: AtomicU64::new(self.encoder()), denoiser: AtomicU64::new(self.denoiser()) }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub variant: Variant,
    pub store: ParamStore,
    pub schedule: NoiseSchedule,
    encoder: Encoder,
    denoiser: Denoiser,
    classifier: ModeClassifier,
    confidence: ConfidenceDecoder,
    ready: bool,
    pub calls: CallCounters,
}

impl Model {
    /// Freshly initialized weights; deterministic in `seed`.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = Encoder::new(&mut store, c.width, c.heads, c.ff_mult, c.scale, variant.uses_map(), &mut rng)?;
        let schedule = NoiseSchedule::build(c.diffusion_steps, c.schedule)?;
        let mut denoiser =
            Denoiser::new(&mut store, c.width, c.heads, c.blocks, c.ff_mult, c.kernel, c.horizon, c.scale, &mut rng)?;
        if c.eps_head == EpsHead::Clean {
            denoiser = denoiser.with_clean_head(&schedule);
        }
        let classifier = ModeClassifier::new(&mut store, c.width, c.heads, &mut rng)?;
        let confidence = ConfidenceDecoder::new(&mut store, c.width, &mut rng);
        Ok(Self {
            config,
            variant,
            store,
            schedule,
            encoder,
            denoiser,
            classifier,
            confidence,
            ready: false,
            calls: CallCounters::default(),
        })
    }

    /// Whether the weights came from training or a checkpoint.
    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn mark_ready(&mut self) {
        self.ready = true;
    }

    /// Overwrites one parameter by name, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let Some(id) = self.store.find(name) else {
            bail!(Input, "checkpoint parameter {name} does not exist in this model");
        };
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            bail!(Input, "parameter {name}: shape {:?} in checkpoint, {:?} in model", value.shape(), p.value.shape());
        }
        p.value = value;
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph<'_>, scenes: &[&Scenario]) -> Result<Encoded> {
        self.calls.encoder.fetch_add(scenes.len() as u64, Ordering::Relaxed);
        self.encoder.encode(g, scenes)
    }

    pub fn denoise(&self, g: &mut Graph<'_>, enc: &Encoded, x_t: Var, cond: SampleConditions<'_>) -> Result<DenoiserOutput> {
        self.calls.denoiser.fetch_add(cond.steps.len() as u64, Ordering::Relaxed);
        self.denoiser.forward(g, enc, x_t, cond)
    }

    /// Mode logits, `batch × 3`.
    pub fn classify(&self, g: &mut Graph<'_>, enc: &Encoded) -> Result<Var> {
        self.classifier.forward(g, enc)
    }

    /// Decoder confidence per sample, `samples × 1`.
    pub fn confidence(&self, g: &mut Graph<'_>, out: &DenoiserOutput) -> Result<Var> {
        self.confidence.forward(g, out.features, &out.sample_segs)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn describe(&self) -> String {
        format!(
            "{} model: width {}, {} blocks, {} heads, T = {}, {} weights",
            self.variant.as_str(),
            self.config.width,
            self.config.blocks,
            self.config.heads,
            self.config.diffusion_steps,
            self.store.numel()
        )
    }
}
