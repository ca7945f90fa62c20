//! Minimizing the masked negative log-likelihood with an RMS-scaled step.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::context::SceneContext;
use super::model::TrainableDenoiser;
use crate::codebook::{Codebook, TokenTrajectory};
use crate::diffusion::{
    reverse_generate, sample_training_mask, Condition, DiffusionConfig, MaskSchedule, NoisySequence, Step,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Independent mask draws per training item in every epoch.
    pub draws_per_item: usize,
    /// Probability of replacing the context by the null context.
    pub cfg_dropout: f64,
    /// Probability of showing the true endpoint as the goal.
    pub goal_prob: f64,
    /// Decay of the running mean of squared gradients.
    pub rms_decay: f64,
    pub eps: f64,
    /// Mask draws per item for the fixed evaluation set behind the loss curve.
    pub eval_draws: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr: 1e-3,
            batch_size: 16,
            draws_per_item: 48,
            cfg_dropout: 0.1,
            goal_prob: 0.5,
            rms_decay: 0.99,
            eps: 1e-8,
            eval_draws: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.batch_size == 0 || self.draws_per_item == 0 || self.eval_draws == 0 {
            return Err(Error::InvalidArgument("batch size and draw counts must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidArgument("learning rate and eps must be positive".into()));
        }
        if !(unit(self.cfg_dropout) && unit(self.goal_prob) && unit(self.rms_decay) && self.rms_decay < 1.0) {
            return Err(Error::InvalidArgument("probabilities and decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One clean trajectory with its context, with and without the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub clean: TokenTrajectory,
    pub context: SceneContext,
    pub goal_context: SceneContext,
}

impl TrainingItem {
    /// Uses the quantized reference as the target and its final waypoint as
    /// the goal.
    pub fn from_scene(scene: &Scene, cb: &Codebook) -> Result<Self> {
        let clean = scene.reference_trajectory.quantize(cb)?;
        let end = clean.pair(clean.horizon() - 1);
        let goal = Vec2::new(cb.dequantize(end.x)?, cb.dequantize(end.y)?);
        Ok(Self {
            clean,
            context: SceneContext::encode(scene, None),
            goal_context: SceneContext::encode(scene, Some(goal)),
        })
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    /// Evaluation loss at initialization followed by one entry per epoch.
    pub loss_curve: Vec<f64>,
    /// Mean training loss seen during each epoch.
    pub train_loss: Vec<f64>,
    pub rms: Vec<f64>,
    pub updates: u64,
}

impl TrainState {
    pub fn new(param_count: usize) -> Self {
        Self { epochs_done: 0, loss_curve: Vec::new(), train_loss: Vec::new(), rms: vec![0.0; param_count], updates: 0 }
    }
}

struct Draw {
    noisy: NoisySequence,
    step: Step,
    item: usize,
    context: Context,
}

#[derive(Clone, Copy)]
enum Context {
    Plain,
    Goal,
    Null,
}

fn context_of(item: &TrainingItem, which: Context) -> SceneContext {
    match which {
        Context::Plain => item.context.clone(),
        Context::Goal => item.goal_context.clone(),
        Context::Null => SceneContext::null(),
    }
}

fn draw(
    items: &[TrainingItem],
    index: usize,
    schedule: &MaskSchedule,
    cfg: &TrainConfig,
    rng: &mut rng::StreamRng,
    dropout: bool,
) -> Result<Option<Draw>> {
    let item = &items[index];
    let Some((s, noisy)) = sample_training_mask(item.clean.tokens(), schedule, rng)? else {
        return Ok(None);
    };
    let context = if dropout && rng.random::<f64>() < cfg.cfg_dropout {
        Context::Null
    } else if rng.random::<f64>() < cfg.goal_prob {
        Context::Goal
    } else {
        Context::Plain
    };
    Ok(Some(Draw { noisy, step: Step { s, total: schedule.total_steps }, item: index, context }))
}

/// Mean masked NLL over a fixed set of mask draws (no dropout), so that the
/// values at different epochs are comparable.
pub fn evaluation_loss(
    model: &TrainableDenoiser,
    items: &[TrainingItem],
    schedule: &MaskSchedule,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for index in 0..items.len() {
        let mut rng = rng::stream(rng::derive(cfg.seed, 0xE7A1), index as u64);
        for _ in 0..cfg.eval_draws {
            if let Some(d) = draw(items, index, schedule, cfg, &mut rng, false)? {
                let ctx = context_of(&items[index], d.context);
                let (mean, n) = model.masked_loss(&d.noisy, &ctx, d.step, items[index].clean.tokens(), None)?;
                total += mean * n as f64;
                count += n;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains until `state.epochs_done == cfg.epochs`. Every epoch draws from
/// its own random stream, so a resumed run matches an uninterrupted one.
pub fn train(
    model: &mut TrainableDenoiser,
    state: &mut TrainState,
    items: &[TrainingItem],
    schedule: &MaskSchedule,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    if state.rms.len() != model.param_count() {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    if state.loss_curve.is_empty() {
        let initial = evaluation_loss(model, items, schedule, cfg)?;
        state.loss_curve.push(initial);
    }
    let mut grad = vec![0.0; model.param_count()];
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done + 1;
        let mut rng = rng::stream(cfg.seed, epoch as u64);
        let mut order: Vec<usize> =
            (0..items.len()).flat_map(|i| core::iter::repeat_n(i, cfg.draws_per_item)).collect();
        order.shuffle(&mut rng);

        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let draws: Vec<Draw> = chunk
                .iter()
                .map(|&i| draw(items, i, schedule, cfg, &mut rng, true))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let masked: usize = draws.iter().map(|d| d.noisy.masked_count()).sum();
            if masked == 0 {
                continue;
            }
            grad.fill(0.0);
            let mut batch_sum = 0.0;
            for d in &draws {
                let ctx = context_of(&items[d.item], d.context);
                let n = d.noisy.masked_count();
                // Weight each sequence by its share of the batch's masked slots
                // so the step follows the mean over all masked positions.
                let weight = n as f64 / masked as f64;
                let (mean, _) = model.masked_loss(
                    &d.noisy,
                    &ctx,
                    d.step,
                    items[d.item].clean.tokens(),
                    Some((&mut grad, weight)),
                )?;
                batch_sum += mean * n as f64;
            }
            if !batch_sum.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, state));
            }
            epoch_sum += batch_sum;
            epoch_count += masked;
            rms_step(model.params_mut(), &grad, &mut state.rms, cfg);
            state.updates += 1;
        }
        let eval = evaluation_loss(model, items, schedule, cfg)?;
        if !eval.is_finite() {
            return Err(diverged(epoch, state));
        }
        state.train_loss.push(if epoch_count == 0 { 0.0 } else { epoch_sum / epoch_count as f64 });
        state.loss_curve.push(eval);
        state.epochs_done = epoch;
    }
    Ok(())
}

fn diverged(epoch: usize, state: &TrainState) -> Error {
    Error::Diverged { epoch, losses: state.loss_curve.clone() }
}

fn rms_step(params: &mut [f64], grad: &[f64], rms: &mut [f64], cfg: &TrainConfig) {
    let rho = cfg.rms_decay;
    for ((p, &g), m) in params.iter_mut().zip(grad).zip(rms.iter_mut()) {
        *m = rho * *m + (1.0 - rho) * g * g;
        *p -= cfg.lr * g / (m.sqrt() + cfg.eps);
    }
}

/// Fraction of tokens of greedy unconditioned generations that land within
/// `tolerance` tokens of the quantized reference.
pub fn greedy_token_accuracy(
    model: &TrainableDenoiser,
    scenes: &[Scene],
    cb: &Codebook,
    diffusion: &DiffusionConfig,
    tolerance: u32,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for scene in scenes {
        let target = scene.reference_trajectory.quantize(cb)?;
        let init = NoisySequence::fully_masked(target.len());
        let out = reverse_generate(model, &Condition::new(scene), &init, diffusion, scene.seed)?;
        for (a, b) in out.tokens().iter().zip(target.tokens()) {
            hits += (a.abs_diff(*b) <= tolerance) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
