use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, fnv1a, EvalConfig};
use super::loss::{classification_loss, confidence_loss, grad_norm, regression_loss, total_loss, LossValues, LossWeights};
use crate::diffusion::{denormalize, endpoint_source, normalize, BehaviorToken, SampleConditions, SamplingMode};
use crate::error::{bail, Result};
use crate::heads::confidence_target;
use crate::model::{Model, ModelConfig, Variant};
use crate::ndiff::{AdamW, Graph, LrSchedule, Tensor};
use crate::scene::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Diffusion steps T; overrides `model.diffusion_steps`.
    pub diffusion_steps: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Endpoint noise (meters) for endpoint tokens in training and sampling.
    pub sigma_ep: f64,
    /// Independent (t, ε) draws per scenario and step; the encoder runs once.
    pub noise_draws: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Fraction of scenarios (by id hash) held out for validation.
    pub val_fraction: f64,
    /// Validate every this many epochs (and after the last); 0 only at the end.
    pub eval_every: usize,
    /// At most this many validation scenarios are sampled.
    pub eval_limit: usize,
    pub eval_k: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 140,
            batch_size: 64,
            base_lr: 5e-4,
            warmup_steps: 1500,
            weight_decay: 1e-2,
            gamma1: 1.0,
            gamma2: 0.5,
            diffusion_steps: 20,
            variant: Variant::Baseline,
            seed: 0,
            sigma_ep: crate::diffusion::DEFAULT_SIGMA_EP,
            noise_draws: 1,
            grad_clip: 1.0,
            val_fraction: 0.1,
            eval_every: 10,
            eval_limit: 64,
            eval_k: 6,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.noise_draws == 0 || self.diffusion_steps == 0 || self.eval_k == 0 {
            bail!(Config, "epochs, batch_size, noise_draws, diffusion_steps and eval_k must be positive");
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            bail!(Config, "base_lr must be positive, got {}", self.base_lr);
        }
        if !(self.gamma1 >= 0.0) || !(self.gamma2 >= 0.0) {
            bail!(Config, "loss weights must be non-negative");
        }
        if !(self.weight_decay >= 0.0) || !(self.sigma_ep >= 0.0) || !(self.grad_clip >= 0.0) {
            bail!(Config, "weight_decay, sigma_ep and grad_clip must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            bail!(Config, "val_fraction must lie in [0, 1), got {}", self.val_fraction);
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { diffusion_steps: self.diffusion_steps, ..self.model.clone() }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { gamma1: self.gamma1, gamma2: self.gamma2 }
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        SamplingMode::for_variant(self.variant, self.sigma_ep)
    }
}

/// Deterministic train/validation split by scenario id hash.
pub fn split_by_id(data: &[Scenario], val_fraction: f64) -> (Vec<&Scenario>, Vec<&Scenario>) {
    let cut = (val_fraction * 1000.0).round() as u64;
    data.iter().partition(|s| fnv1a(s.id.as_bytes()) % 1000 >= cut)
}

/// Token the model is conditioned on during training.
pub fn train_token<R: Rng + ?Sized>(variant: Variant, scene: &Scenario, sigma_ep: f64, rng: &mut R) -> Result<BehaviorToken> {
    Ok(match variant {
        Variant::Baseline => BehaviorToken::None,
        Variant::BehaviorControlled | Variant::NoMap => BehaviorToken::Mode(scene.label),
        Variant::EndpointControlled => BehaviorToken::Endpoint(endpoint_source(scene, sigma_ep, rng)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossValues,
    pub lr: f64,
    pub val_min_ade: Option<f64>,
}

/// Owns the model being trained, its optimizer state and the random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub schedule: LrSchedule,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, n_train: usize) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model_config(), cfg.variant, cfg.seed)?;
        Ok(Self::resume(cfg, model, AdamW::new(cfg.weight_decay), n_train))
    }

    /// Continues from an existing model and optimizer state.
    pub fn resume(cfg: &TrainConfig, model: Model, optimizer: AdamW, n_train: usize) -> Self {
        let per_epoch = n_train.div_ceil(cfg.batch_size).max(1) as u64;
        let schedule = LrSchedule::new(cfg.base_lr, cfg.warmup_steps, per_epoch * cfg.epochs as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(optimizer.step.wrapping_add(1));
        Self { model, optimizer, schedule, cfg: cfg.clone(), rng }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Evaluates the objective on a batch without updating weights.
    pub fn loss(&mut self, batch: &[&Scenario]) -> Result<LossValues> {
        self.forward_backward(batch, false)
    }

    /// One optimizer update on a batch.
    pub fn train_step(&mut self, batch: &[&Scenario]) -> Result<LossValues> {
        let values = self.forward_backward(batch, true)?;
        if self.cfg.grad_clip > 0.0 {
            let norm = grad_norm(self.model.store.iter().map(|(_, p)| &p.grad));
            if !norm.is_finite() {
                self.model.store.zero_grad();
                bail!(Numeric, "gradient norm is {norm}");
            }
            if norm > self.cfg.grad_clip {
                let s = self.cfg.grad_clip / norm;
                self.model.store.iter_mut().for_each(|p| p.grad.data_mut().iter_mut().for_each(|g| *g *= s));
            }
        }
        let lr = self.schedule.lr_at(self.optimizer.step);
        self.optimizer.step(&mut self.model.store, lr)?;
        self.model.mark_ready();
        Ok(values)
    }

    fn forward_backward(&mut self, batch: &[&Scenario], update: bool) -> Result<LossValues> {
        if batch.is_empty() {
            bail!(Input, "empty training batch");
        }
        let model = &self.model;
        let cfg = &self.cfg;
        let b = batch.len();
        let horizon = model.config.horizon;
        let scale = model.config.scale;
        let steps_total = model.schedule.steps();

        let draws = cfg.noise_draws;
        let n = b * draws;
        let mut tokens = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);
        let mut scene_of = Vec::with_capacity(n);
        let mut x_t = Vec::with_capacity(n * horizon * 2);
        let mut eps = Vec::with_capacity(n * horizon * 2);
        for (i, s) in batch.iter().enumerate() {
            if s.future.len() != horizon {
                bail!(Input, "scenario {} has {} future steps, model horizon is {horizon}", s.id, s.future.len());
            }
            let x0 = normalize(&s.future, scale);
            for _ in 0..draws {
                tokens.push(train_token(cfg.variant, s, cfg.sigma_ep, &mut self.rng)?);
                let t = self.rng.random_range(1..=steps_total);
                let e: Vec<f64> = (0..horizon * 2).map(|_| self.rng.sample(StandardNormal)).collect();
                x_t.extend(model.schedule.q_sample(&x0, t, &e)?);
                eps.extend(e);
                steps.push(t);
                scene_of.push(i);
            }
        }

        let mut g = if update { Graph::new(&model.store) } else { Graph::inference(&model.store) };
        let enc = model.encode(&mut g, batch)?;
        let xv = g.constant(Tensor::from_vec(n * horizon, 2, x_t.clone())?);
        let out = model.denoise(&mut g, &enc, xv, SampleConditions { steps: &steps, tokens: &tokens, scene_of: &scene_of })?;
        let ev = g.constant(Tensor::from_vec(n * horizon, 2, eps)?);
        let reg = regression_loss(&mut g, out.eps, ev, &out.sample_segs)?;

        let logits = model.classify(&mut g, &enc)?;
        let labels: Vec<_> = batch.iter().map(|s| s.label).collect();
        let class = classification_loss(&mut g, logits, &labels)?;

        let eps_hat = g.value(out.eps).data().to_vec();
        let mut targets = Vec::with_capacity(n);
        for j in 0..n {
            let r = j * horizon * 2..(j + 1) * horizon * 2;
            let x0 = model.schedule.predict_x0(&x_t[r.clone()], steps[j], &eps_hat[r])?;
            targets.push(confidence_target(&denormalize(&x0, scale), &batch[scene_of[j]].future)?);
        }
        let scores = model.confidence(&mut g, &out)?;
        let conf = confidence_loss(&mut g, scores, &targets)?;

        let terms = total_loss(&mut g, reg, class, conf, cfg.weights())?;
        let values = terms.values(&g);
        if update {
            let grads = g.backward(terms.total)?;
            drop(g);
            self.model.store.accumulate(&grads);
        }
        Ok(values)
    }

    /// One pass over `train` in a seeded random order.
    pub fn epoch(&mut self, epoch: usize, train: &[&Scenario]) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut acc = LossValues::default();
        let mut n = 0.0;
        let lr = self.schedule.lr_at(self.optimizer.step);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Scenario> = chunk.iter().map(|&i| train[i]).collect();
            let v = self.train_step(&batch)?;
            let w = batch.len() as f64;
            acc.reg += v.reg * w;
            acc.class += v.class * w;
            acc.conf += v.conf * w;
            acc.total += v.total * w;
            n += w;
        }
        acc.reg /= n;
        acc.class /= n;
        acc.conf /= n;
        acc.total /= n;
        Ok(EpochLog { epoch, loss: acc, lr, val_min_ade: None })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights, or the last good ones if training diverged.
    pub model: Model,
    pub optimizer: AdamW,
    /// Weights with the lowest validation minADE and that value.
    pub best: Option<(Model, f64)>,
    pub log: Vec<EpochLog>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub divergence: Option<String>,
}

pub fn train(cfg: &TrainConfig, data: &[Scenario]) -> Result<TrainOutcome> {
    train_with(cfg, data, |_| {})
}

/// Trains on the non-validation split, validating periodically; `observe`
/// sees every epoch log as it is produced.
pub fn train_with(cfg: &TrainConfig, data: &[Scenario], mut observe: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let (train_set, val_set) = split_by_id(data, cfg.val_fraction);
    if train_set.is_empty() {
        bail!(Input, "training split is empty ({} scenarios in total)", data.len());
    }
    let mut trainer = Trainer::new(cfg, train_set.len())?;
    let eval_cfg = EvalConfig { k: cfg.eval_k, ..EvalConfig::new(cfg.sampling_mode(), cfg.seed) };
    let val: Vec<&Scenario> = val_set.into_iter().take(cfg.eval_limit).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, f64)> = None;
    let mut last_good = (trainer.model.clone(), trainer.optimizer.clone());
    let mut divergence = None;
    for epoch in 1..=cfg.epochs {
        let mut entry = match trainer.epoch(epoch, &train_set) {
            Ok(e) => e,
            Err(crate::Error::Numeric(msg)) => {
                divergence = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        if due && !val.is_empty() {
            let ade = evaluate(&trainer.model, &val, &eval_cfg)?.report.min_ade;
            entry.val_min_ade = Some(ade);
            if best.as_ref().map_or(true, |(_, b)| ade < *b) {
                best = Some((trainer.model.clone(), ade));
            }
        }
        observe(&entry);
        log.push(entry);
        last_good = (trainer.model.clone(), trainer.optimizer.clone());
    }
    let (model, optimizer) = if divergence.is_some() { last_good } else { (trainer.model, trainer.optimizer) };
    Ok(TrainOutcome { model, optimizer, best, log, divergence })
}
