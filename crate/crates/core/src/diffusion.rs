//! Masked discrete diffusion over token trajectories: forward masking, the
//! masked negative log-likelihood, and parallel reverse decoding with
//! low-confidence remasking. Inpainting is reverse decoding with some slots
//! pinned as anchors.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{Token, TokenTrajectory};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng::{self, StreamRng};
use crate::scene::Scene;

/// Masked fraction as a function of diffusion time `u = s / S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `sin(pi u / 2)`
    #[default]
    Cosine,
    /// `u`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSchedule {
    pub total_steps: usize,
    pub kind: ScheduleKind,
}

impl MaskSchedule {
    pub fn new(total_steps: usize, kind: ScheduleKind) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
        }
        Ok(Self { total_steps, kind })
    }

    pub fn gamma(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            ScheduleKind::Cosine => (FRAC_PI_2 * u).sin(),
            ScheduleKind::Linear => u,
        }
    }

    /// `ceil(free * gamma(s / S))`, with a small guard so that values a hair
    /// above an integer from rounding do not round up.
    pub fn masked_count(&self, s: usize, free: usize) -> usize {
        if s == 0 {
            return 0;
        }
        let x = free as f64 * self.gamma(s as f64 / self.total_steps as f64);
        ((x - 1e-9).ceil().max(0.0) as usize).min(free)
    }
}

/// A token sequence in which some slots are `None` (masked). Anchored slots
/// always hold a token and are never masked or resampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisySequence {
    tokens: Vec<Option<Token>>,
    anchored: Vec<bool>,
}

impl NoisySequence {
    pub fn fully_masked(len: usize) -> Self {
        Self { tokens: vec![None; len], anchored: vec![false; len] }
    }

    /// Everything masked except `anchors`, which are pinned.
    pub fn with_anchors(len: usize, anchors: &[(usize, Token)]) -> Result<Self> {
        let mut seq = Self::fully_masked(len);
        for &(slot, token) in anchors {
            if slot >= len {
                return Err(Error::InvalidArgument(alloc::format!("anchor slot {slot} out of {len}")));
            }
            seq.tokens[slot] = Some(token);
            seq.anchored[slot] = true;
        }
        Ok(seq)
    }

    /// Builds a sequence from explicit parts. Anchored slots must hold tokens.
    pub fn from_parts(tokens: Vec<Option<Token>>, anchored: Vec<bool>) -> Result<Self> {
        if tokens.len() != anchored.len() {
            return Err(Error::Shape(alloc::format!("{} tokens vs {} anchor flags", tokens.len(), anchored.len())));
        }
        if let Some(i) = (0..tokens.len()).find(|&i| anchored[i] && tokens[i].is_none()) {
            return Err(Error::InvalidArgument(alloc::format!("anchored slot {i} is masked")));
        }
        Ok(Self { tokens, anchored })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Option<Token>] {
        &self.tokens
    }

    pub fn token(&self, slot: usize) -> Option<Token> {
        self.tokens[slot]
    }

    pub fn is_masked(&self, slot: usize) -> bool {
        self.tokens[slot].is_none()
    }

    pub fn is_anchored(&self, slot: usize) -> bool {
        self.anchored[slot]
    }

    pub fn mask_flags(&self) -> Vec<bool> {
        self.tokens.iter().map(Option::is_none).collect()
    }

    pub fn anchor_flags(&self) -> &[bool] {
        &self.anchored
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_none()).count()
    }

    pub fn free_count(&self) -> usize {
        self.anchored.iter().filter(|&&a| !a).count()
    }

    fn commit(&mut self, slot: usize, token: Token) {
        debug_assert!(self.tokens[slot].is_none());
        self.tokens[slot] = Some(token);
    }

    /// The decoded sequence, if nothing is masked.
    pub fn to_trajectory(&self, dt: f64) -> Result<TokenTrajectory> {
        let tokens = self
            .tokens
            .iter()
            .enumerate()
            .map(|(slot, t)| t.ok_or_else(|| Error::InvalidArgument(alloc::format!("slot {slot} still masked"))))
            .collect::<Result<Vec<_>>>()?;
        TokenTrajectory::new(tokens, dt)
    }
}

/// Row-major `len x vocab` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    logits: Vec<f64>,
    len: usize,
    vocab: usize,
}

impl DenoiserOutput {
    pub fn new(logits: Vec<f64>, len: usize, vocab: usize) -> Result<Self> {
        if logits.len() != len * vocab {
            return Err(Error::Shape(alloc::format!("{} logits for {len} x {vocab}", logits.len())));
        }
        Ok(Self { logits, len, vocab })
    }

    pub fn zeros(len: usize, vocab: usize) -> Self {
        Self { logits: vec![0.0; len * vocab], len, vocab }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.logits[slot * self.vocab..(slot + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.logits[slot * self.vocab..(slot + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    /// First slot containing a NaN or infinite logit.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.len).find(|&i| self.row(i).iter().any(|v| !v.is_finite()))
    }
}

/// What the denoiser is conditioned on. `null` requests the unconditional
/// branch used by classifier-free guidance.
#[derive(Debug, Clone, Copy)]
pub struct Condition<'a> {
    pub scene: &'a Scene,
    pub goal: Option<Vec2>,
    pub null: bool,
}

impl<'a> Condition<'a> {
    pub fn new(scene: &'a Scene) -> Self {
        Self { scene, goal: None, null: false }
    }

    pub fn with_goal(scene: &'a Scene, goal: Option<Vec2>) -> Self {
        Self { scene, goal, null: false }
    }

    pub fn null(self) -> Self {
        Self { null: true, ..self }
    }
}

/// Reverse-process position `s` out of `total` (1 ..= total).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub s: usize,
    pub total: usize,
}

impl Step {
    pub fn fraction(&self) -> f64 {
        self.s as f64 / self.total.max(1) as f64
    }
}

/// `p(y_i | noisy, condition, s)` for every slot. Implementations must be
/// pure so that generations can run concurrently.
pub trait Denoiser {
    fn vocab_size(&self) -> usize;
    fn denoise(&self, noisy: &NoisySequence, cond: &Condition<'_>, step: Step) -> Result<DenoiserOutput>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn denoise(&self, noisy: &NoisySequence, cond: &Condition<'_>, step: Step) -> Result<DenoiserOutput> {
        (**self).denoise(noisy, cond, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample {
        temperature: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub mode: DecodeMode,
    /// Classifier-free guidance scale; 1.0 uses the conditional logits alone.
    pub cfg_scale: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { steps: 5, schedule: ScheduleKind::Cosine, mode: DecodeMode::Greedy, cfg_scale: 1.0 }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<MaskSchedule> {
        MaskSchedule::new(self.steps, self.schedule)
    }
}

/// `uncond + w (cond - uncond)`; a single conditional pass when `w == 1`.
pub fn guided_logits<D: Denoiser + ?Sized>(
    denoiser: &D,
    noisy: &NoisySequence,
    cond: &Condition<'_>,
    step: Step,
    cfg_scale: f64,
) -> Result<DenoiserOutput> {
    let mut out = denoiser.denoise(noisy, cond, step)?;
    check_shape(&out, noisy.len(), denoiser.vocab_size())?;
    if cfg_scale != 1.0 && !cond.null {
        let uncond = denoiser.denoise(noisy, &cond.null(), step)?;
        check_shape(&uncond, noisy.len(), denoiser.vocab_size())?;
        for (c, u) in out.logits.iter_mut().zip(&uncond.logits) {
            *c = u + cfg_scale * (*c - u);
        }
    }
    if let Some(slot) = out.first_non_finite() {
        return Err(Error::NonFiniteLogits { slot });
    }
    Ok(out)
}

fn check_shape(out: &DenoiserOutput, len: usize, vocab: usize) -> Result<()> {
    if out.len != len || out.vocab != vocab {
        return Err(Error::Shape(alloc::format!(
            "denoiser returned {} x {}, expected {len} x {vocab}",
            out.len,
            out.vocab
        )));
    }
    Ok(())
}

/// Numerically stable softmax of one row into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log softmax(row)[index]`.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}

/// Masks exactly `masked_count(s)` of the non-anchored slots of `clean`,
/// chosen uniformly without replacement.
pub fn forward_mask(
    clean: &[Token],
    anchored: &[bool],
    s: usize,
    schedule: &MaskSchedule,
    seed: u64,
) -> Result<NoisySequence> {
    let mut rng = rng::from_seed(seed);
    forward_mask_with(clean, anchored, s, schedule, &mut rng)
}

pub fn forward_mask_with(
    clean: &[Token],
    anchored: &[bool],
    s: usize,
    schedule: &MaskSchedule,
    rng: &mut StreamRng,
) -> Result<NoisySequence> {
    if clean.len() != anchored.len() {
        return Err(Error::Shape(alloc::format!("{} tokens vs {} anchor flags", clean.len(), anchored.len())));
    }
    if s > schedule.total_steps {
        return Err(Error::InvalidArgument(alloc::format!("step {s} beyond {}", schedule.total_steps)));
    }
    let free: Vec<usize> = (0..clean.len()).filter(|&i| !anchored[i]).collect();
    let count = schedule.masked_count(s, free.len());
    let mut tokens: Vec<Option<Token>> = clean.iter().copied().map(Some).collect();
    for k in rand::seq::index::sample(rng, free.len(), count) {
        tokens[free[k]] = None;
    }
    Ok(NoisySequence { tokens, anchored: anchored.to_vec() })
}

/// Sum of `-log p(clean_i)` over masked slots, and how many slots that was.
pub fn masked_nll(out: &DenoiserOutput, noisy: &NoisySequence, clean: &[Token]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &c) in clean.iter().enumerate() {
        if noisy.is_masked(i) {
            sum -= log_softmax_at(out.row(i), c as usize);
            count += 1;
        }
    }
    (sum, count)
}

/// Draws the diffusion step and mask for one training item: `s` uniform in
/// `1..=S`; if nothing ends up masked, `s` is redrawn once. `None` means the
/// item contributes nothing.
pub fn sample_training_mask(
    clean: &[Token],
    schedule: &MaskSchedule,
    rng: &mut StreamRng,
) -> Result<Option<(usize, NoisySequence)>> {
    let anchored = vec![false; clean.len()];
    for _ in 0..2 {
        let s = rng.random_range(1..=schedule.total_steps);
        let noisy = forward_mask_with(clean, &anchored, s, schedule, rng)?;
        if noisy.masked_count() > 0 {
            return Ok(Some((s, noisy)));
        }
    }
    Ok(None)
}

/// Mean masked negative log-likelihood over a batch of clean sequences and
/// their conditions.
pub fn training_loss<D: Denoiser + ?Sized>(
    batch: &[(TokenTrajectory, Condition<'_>)],
    denoiser: &D,
    schedule: &MaskSchedule,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (index, (clean, cond)) in batch.iter().enumerate() {
        let mut rng = rng::stream(seed, index as u64);
        let Some((s, noisy)) = sample_training_mask(clean.tokens(), schedule, &mut rng)? else {
            continue;
        };
        let step = Step { s, total: schedule.total_steps };
        let out = denoiser.denoise(&noisy, cond, step)?;
        check_shape(&out, noisy.len(), denoiser.vocab_size())?;
        let (sum, n) = masked_nll(&out, &noisy, clean.tokens());
        total += sum;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One committed prediction considered during a reverse step.
#[derive(Debug, Clone, Copy)]
struct Pick {
    slot: usize,
    token: Token,
    confidence: f64,
}

fn pick_token(row: &[f64], mode: DecodeMode, rng: &mut StreamRng, probs: &mut [f64]) -> (Token, f64) {
    softmax_into(row, probs);
    let token = match mode {
        DecodeMode::Greedy => argmax(probs),
        DecodeMode::Sample { temperature } if temperature <= 0.0 => argmax(probs),
        DecodeMode::Sample { temperature } => {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = row.iter().map(|&v| ((v - max) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        }
    };
    (token as Token, probs[token])
}

/// Lowest index among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Parallel decoding from `init` (anchors set, everything else masked).
/// Each step predicts every masked slot, commits the most confident picks and
/// leaves exactly `masked_count(s - 1)` slots masked. `observer` sees the
/// sequence after every step.
pub fn reverse_generate_observed<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Condition<'_>,
    init: &NoisySequence,
    cfg: &DiffusionConfig,
    seed: u64,
    observer: &mut dyn FnMut(usize, &NoisySequence),
) -> Result<TokenTrajectory> {
    let schedule = cfg.schedule()?;
    let mut seq = init.clone();
    for i in 0..seq.len() {
        if !seq.anchored[i] {
            seq.tokens[i] = None;
        }
    }
    let free = seq.free_count();
    let vocab = denoiser.vocab_size();
    let mut rng = rng::from_seed(seed);
    let mut probs = vec![0.0; vocab];
    if free > 0 {
        for s in (1..=schedule.total_steps).rev() {
            let out = guided_logits(denoiser, &seq, cond, Step { s, total: schedule.total_steps }, cfg.cfg_scale)?;
            let mut picks: Vec<Pick> = (0..seq.len())
                .filter(|&i| seq.is_masked(i))
                .map(|slot| {
                    let (token, confidence) = pick_token(out.row(slot), cfg.mode, &mut rng, &mut probs);
                    Pick { slot, token, confidence }
                })
                .collect();
            let keep_masked = schedule.masked_count(s - 1, free);
            let commit = picks.len().saturating_sub(keep_masked);
            picks.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.slot.cmp(&b.slot)));
            for p in &picks[..commit] {
                seq.commit(p.slot, p.token);
            }
            observer(s, &seq);
        }
    }
    seq.to_trajectory(cond.scene.dt)
}

pub fn reverse_generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Condition<'_>,
    init: &NoisySequence,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<TokenTrajectory> {
    reverse_generate_observed(denoiser, cond, init, cfg, seed, &mut |_, _| {})
}

/// Regenerates every slot of `base` except `fixed_slots`, which are kept.
pub fn inpaint<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Condition<'_>,
    base: &TokenTrajectory,
    fixed_slots: &[usize],
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<TokenTrajectory> {
    inpaint_observed(denoiser, cond, base, fixed_slots, cfg, seed, &mut |_, _| {})
}

pub fn inpaint_observed<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Condition<'_>,
    base: &TokenTrajectory,
    fixed_slots: &[usize],
    cfg: &DiffusionConfig,
    seed: u64,
    observer: &mut dyn FnMut(usize, &NoisySequence),
) -> Result<TokenTrajectory> {
    let anchors: Vec<(usize, Token)> = fixed_slots
        .iter()
        .map(|&i| {
            base.tokens()
                .get(i)
                .map(|&t| (i, t))
                .ok_or_else(|| Error::InvalidArgument(alloc::format!("fixed slot {i} out of {}", base.len())))
        })
        .collect::<Result<_>>()?;
    let init = NoisySequence::with_anchors(base.len(), &anchors)?;
    reverse_generate_observed(denoiser, cond, &init, cfg, seed, observer)
}

#[cfg(test)]
#[path = "diffusion_tests.rs"]
mod tests;
