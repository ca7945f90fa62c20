//! Two-stage reflective planning: diverse goal proposals with best-of-K
//! selection, then anchor search and re-inpainting at the first unsafe
//! waypoint until the plan is safe or the budget runs out.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, Token, TokenPair, TokenTrajectory};
use crate::diffusion::{
    guided_logits, inpaint, reverse_generate, softmax_into, Condition, Denoiser, DiffusionConfig, NoisySequence, Step,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng;
use crate::scene::Scene;
use crate::scoring::{global_score, safety_report, LocalScorer, ScoreBreakdown, ScoringConfig, ViolationKind};

/// Largest Manhattan radius the stall rule may grow to.
pub const MAX_DELTA: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectConfig {
    /// Number of goals kept after suppression.
    pub k: usize,
    /// Tokens per axis considered when forming joint goal candidates.
    pub k_prime: usize,
    /// Minimum distance between kept goals, meters.
    pub d_nms: f64,
    /// Manhattan radius of the anchor search, in tokens.
    pub delta: u32,
    pub max_iterations: usize,
    pub goal_stage: bool,
    pub safety_stage: bool,
}

impl Default for ReflectConfig {
    fn default() -> Self {
        Self { k: 3, k_prime: 64, d_nms: 0.9, delta: 5, max_iterations: 10, goal_stage: true, safety_stage: true }
    }
}

impl ReflectConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.k == 0 || self.k_prime == 0 || self.k_prime > vocab {
            return Err(Error::InvalidArgument(alloc::format!(
                "need 1 <= K and 1 <= K' <= {vocab}, got K={} K'={}",
                self.k,
                self.k_prime
            )));
        }
        if !(self.d_nms >= 0.0 && self.d_nms.is_finite()) {
            return Err(Error::InvalidArgument("d_nms must be finite and non-negative".into()));
        }
        if self.delta == 0 {
            return Err(Error::InvalidArgument("delta must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub tokens: TokenPair,
    pub position: Vec2,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    /// Sorted by non-increasing probability.
    pub goals: Vec<Goal>,
    pub k: usize,
    pub k_prime: usize,
    pub d_nms: f64,
}

/// Greedy suppression: walk candidates by non-increasing probability (stable
/// for ties) and keep each one that is at least `d_nms` from every kept goal.
pub fn nms(candidates: &[Goal], k: usize, d_nms: f64) -> Vec<Goal> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| by_probability(&candidates[a], &candidates[b]));
    let mut kept: Vec<Goal> = Vec::with_capacity(k);
    for i in order {
        if kept.len() == k {
            break;
        }
        let c = candidates[i];
        if kept.iter().all(|g| g.position.distance(c.position) >= d_nms) {
            kept.push(c);
        }
    }
    kept
}

fn by_probability(a: &Goal, b: &Goal) -> Ordering {
    b.probability.partial_cmp(&a.probability).unwrap_or(Ordering::Equal)
}

/// Indices of the `k` largest entries, ties to the smaller index.
fn top_indices(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// One denoiser pass over the fully masked sequence; joint goal candidates
/// are products of the final-waypoint marginals over the top `K'` tokens of
/// each axis.
pub fn propose_goals<D: Denoiser + ?Sized>(
    denoiser: &D,
    scene: &Scene,
    cb: &Codebook,
    diffusion: &DiffusionConfig,
    cfg: &ReflectConfig,
) -> Result<GoalSet> {
    cfg.validate(denoiser.vocab_size())?;
    let len = 2 * scene.horizon_n;
    if len == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let seq = NoisySequence::fully_masked(len);
    let step = Step { s: diffusion.steps, total: diffusion.steps };
    let logits = guided_logits(denoiser, &seq, &Condition::new(scene), step, diffusion.cfg_scale)?;
    let vocab = denoiser.vocab_size();
    let mut px = vec![0.0; vocab];
    let mut py = vec![0.0; vocab];
    softmax_into(logits.row(len - 2), &mut px);
    softmax_into(logits.row(len - 1), &mut py);

    let mut candidates = Vec::with_capacity(cfg.k_prime * cfg.k_prime);
    for &ax in &top_indices(&px, cfg.k_prime) {
        for &ay in &top_indices(&py, cfg.k_prime) {
            let tokens = TokenPair { x: ax as Token, y: ay as Token };
            candidates.push(Goal {
                tokens,
                position: Vec2::new(cb.dequantize(tokens.x)?, cb.dequantize(tokens.y)?),
                probability: px[ax] * py[ay],
            });
        }
    }
    // Lexicographic token order first so equal probabilities resolve the same
    // way regardless of how the marginals were ranked.
    candidates.sort_by_key(|g| (g.tokens.x, g.tokens.y));
    Ok(GoalSet { goals: nms(&candidates, cfg.k, cfg.d_nms), k: cfg.k, k_prime: cfg.k_prime, d_nms: cfg.d_nms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub goal: Goal,
    pub trajectory: TokenTrajectory,
    pub breakdown: ScoreBreakdown,
}

fn goal_slots(len: usize) -> [usize; 2] {
    [len - 2, len - 1]
}

/// Inpaints one full trajectory per goal with the goal fixed on the final
/// token pair. Candidate `k` decodes with its own seed derived from `seed`.
pub fn goal_conditioned_generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    scene: &Scene,
    goals: &GoalSet,
    cb: &Codebook,
    diffusion: &DiffusionConfig,
    scoring: &ScoringConfig,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if goals.goals.is_empty() {
        return Err(Error::InvalidArgument("no goals to condition on".into()));
    }
    let len = 2 * scene.horizon_n;
    let mut base = TokenTrajectory::new(vec![cb.center_token(); len], scene.dt)?;
    goals
        .goals
        .iter()
        .enumerate()
        .map(|(k, goal)| {
            base.set_pair(scene.horizon_n - 1, goal.tokens);
            let cond = Condition::with_goal(scene, Some(goal.position));
            let trajectory = inpaint(denoiser, &cond, &base, &goal_slots(len), diffusion, rng::derive(seed, k as u64))?;
            let breakdown = global_score(&trajectory.dequantize(cb)?, scene, scoring)?;
            Ok(Candidate { goal: *goal, trajectory, breakdown })
        })
        .collect()
}

/// Index of the highest total; ties go to the higher progress, then to the
/// earlier candidate.
pub fn select_best(scores: &[ScoreBreakdown]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let t = &scores[b];
                s.total > t.total || (s.total == t.total && s.m_ep > t.m_ep)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorChoice {
    pub pair: TokenPair,
    pub score: f64,
    pub original_score: f64,
    /// Lattice points inside the vocabulary that were scored.
    pub candidates: usize,
}

/// Exhaustive search of the Manhattan ball of radius `delta` around the
/// pair at `t_star` for the best local score.
pub fn search_anchor(
    traj: &TokenTrajectory,
    t_star: usize,
    delta: u32,
    scene: &Scene,
    cb: &Codebook,
    scoring: &ScoringConfig,
) -> Result<AnchorChoice> {
    if t_star >= traj.horizon() {
        return Err(Error::InvalidArgument(alloc::format!("waypoint {t_star} out of {}", traj.horizon())));
    }
    if delta == 0 {
        return Err(Error::InvalidArgument("delta must be at least 1".into()));
    }
    let scorer = LocalScorer::new(traj, scene, cb, scoring)?;
    let origin = traj.pair(t_star);
    let original_score = scorer.score(origin, t_star)?;
    let top = cb.vocab_size() as i64 - 1;
    let d = delta as i64;

    let mut best = (origin, original_score);
    let mut count = 0;
    // Lexicographic enumeration, so keeping the first of equal keys settles
    // the final tie.
    for dx in -d..=d {
        let x = origin.x as i64 + dx;
        if x < 0 || x > top {
            continue;
        }
        let rest = d - dx.abs();
        for dy in -rest..=rest {
            let y = origin.y as i64 + dy;
            if y < 0 || y > top {
                continue;
            }
            count += 1;
            let pair = TokenPair { x: x as Token, y: y as Token };
            let score = if pair == origin { original_score } else { scorer.score(pair, t_star)? };
            let (bp, bs) = best;
            let closer = (pair.manhattan(origin), pair.x, pair.y) < (bp.manhattan(origin), bp.x, bp.y);
            if score > bs || (score == bs && closer) {
                best = (pair, score);
            }
        }
    }
    Ok(AnchorChoice { pair: best.0, score: best.1, original_score, candidates: count })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Safe,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// First sub-threshold waypoint of the trajectory entering this iteration.
    pub t_star: usize,
    pub violation: Option<ViolationKind>,
    /// `None` when `t_star` carries a goal anchor that may not move.
    pub anchor: Option<AnchorChoice>,
    pub delta: u32,
    /// Trajectory after re-inpainting and its score.
    pub trajectory: TokenTrajectory,
    pub breakdown: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    pub initial: TokenTrajectory,
    pub initial_breakdown: ScoreBreakdown,
    pub iterations: Vec<Iteration>,
    pub terminal_status: TerminalStatus,
    pub total_iterations: usize,
    /// Slots fixed during the final inpainting, ascending.
    pub anchored_slots: Vec<usize>,
}

impl ReflectionTrace {
    /// Iterations needed before the hard score reached 1, if it ever did.
    pub fn iterations_to_hard_safe(&self) -> Option<usize> {
        if self.initial_breakdown.hard == 1.0 {
            return Some(0);
        }
        self.iterations.iter().position(|it| it.breakdown.hard == 1.0).map(|i| i + 1)
    }
}

/// Repairs `traj` in place of the first unsafe waypoint until the windowed
/// safety report is clean or `max_iterations` repairs were spent. Chosen
/// anchors stay fixed for the rest of the loop. With `goal_locked` the final
/// token pair is fixed from the start.
#[allow(clippy::too_many_arguments)]
pub fn regenerate_safe<D: Denoiser + ?Sized>(
    denoiser: &D,
    scene: &Scene,
    cond: &Condition<'_>,
    traj: TokenTrajectory,
    goal_locked: bool,
    cb: &Codebook,
    diffusion: &DiffusionConfig,
    scoring: &ScoringConfig,
    cfg: &ReflectConfig,
    seed: u64,
) -> Result<(TokenTrajectory, ReflectionTrace)> {
    if cfg.delta == 0 {
        return Err(Error::InvalidArgument("delta must be at least 1".into()));
    }
    let len = traj.len();
    let mut anchored: BTreeSet<usize> = BTreeSet::new();
    if goal_locked {
        anchored.extend(goal_slots(len));
    }
    let initial_breakdown = global_score(&traj.dequantize(cb)?, scene, scoring)?;
    let initial = traj.clone();
    let mut current = traj;
    let mut delta = cfg.delta;
    let mut iterations: Vec<Iteration> = Vec::new();

    let status = loop {
        let report = safety_report(&current.dequantize(cb)?, scene, scoring);
        let Some(t_star) = report.first_violation_index else {
            break TerminalStatus::Safe;
        };
        if iterations.len() >= cfg.max_iterations {
            break TerminalStatus::BudgetExhausted;
        }
        let stalled = iterations
            .last()
            .is_some_and(|prev| prev.t_star == t_star && prev.anchor.is_some_and(|a| a.pair == current.pair(t_star)));
        if stalled {
            delta = (delta * 2).min(MAX_DELTA.max(cfg.delta));
        }
        let slots = [2 * t_star, 2 * t_star + 1];
        let locked = goal_locked && t_star + 1 == current.horizon();
        let anchor = if locked {
            None
        } else {
            let choice = search_anchor(&current, t_star, delta, scene, cb, scoring)?;
            current.set_pair(t_star, choice.pair);
            anchored.extend(slots);
            Some(choice)
        };
        let fixed: Vec<usize> = anchored.iter().copied().collect();
        let k = iterations.len() as u64;
        current = inpaint(denoiser, cond, &current, &fixed, diffusion, rng::derive(seed, k))?;
        let breakdown = global_score(&current.dequantize(cb)?, scene, scoring)?;
        iterations.push(Iteration {
            t_star,
            violation: report.violation_kind,
            anchor,
            delta,
            trajectory: current.clone(),
            breakdown,
        });
    };

    let total_iterations = iterations.len();
    let trace = ReflectionTrace {
        initial,
        initial_breakdown,
        iterations,
        terminal_status: status,
        total_iterations,
        anchored_slots: anchored.into_iter().collect(),
    };
    Ok((current, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanConfig {
    pub codebook: Codebook,
    pub diffusion: DiffusionConfig,
    pub scoring: ScoringConfig,
    pub reflect: ReflectConfig,
}

/// Stage boundaries reported to a [`plan_observed`] observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Goals,
    Generation,
    Selection,
    Regeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub trajectory: TokenTrajectory,
    pub breakdown: ScoreBreakdown,
    pub goals: Option<GoalSet>,
    pub candidates: Vec<Candidate>,
    pub selected: Option<usize>,
    pub trace: Option<ReflectionTrace>,
}

/// Goal proposal, goal-conditioned generation and selection, then safety
/// repair. With the goal stage off a single unconditioned generation is
/// used; with the safety stage off it is returned as is.
pub fn plan<D: Denoiser + ?Sized>(denoiser: &D, scene: &Scene, cfg: &PlanConfig, seed: u64) -> Result<PlanOutcome> {
    plan_observed(denoiser, scene, cfg, seed, &mut |_| {})
}

/// [`plan`] that announces each stage before running it.
pub fn plan_observed<D: Denoiser + ?Sized>(
    denoiser: &D,
    scene: &Scene,
    cfg: &PlanConfig,
    seed: u64,
    on_stage: &mut dyn FnMut(Stage),
) -> Result<PlanOutcome> {
    let cb = &cfg.codebook;
    let rc = &cfg.reflect;
    rc.validate(denoiser.vocab_size())?;

    let (trajectory, goals, candidates, selected) = if rc.goal_stage {
        on_stage(Stage::Goals);
        let goals = propose_goals(denoiser, scene, cb, &cfg.diffusion, rc)?;
        on_stage(Stage::Generation);
        let candidates =
            goal_conditioned_generate(denoiser, scene, &goals, cb, &cfg.diffusion, &cfg.scoring, rng::derive(seed, 1))?;
        on_stage(Stage::Selection);
        let scores: Vec<ScoreBreakdown> = candidates.iter().map(|c| c.breakdown).collect();
        let best = select_best(&scores).ok_or_else(|| Error::InvalidArgument("no candidates".into()))?;
        (candidates[best].trajectory.clone(), Some(goals), candidates, Some(best))
    } else {
        on_stage(Stage::Generation);
        let init = NoisySequence::fully_masked(2 * scene.horizon_n);
        let traj = reverse_generate(denoiser, &Condition::new(scene), &init, &cfg.diffusion, rng::derive(seed, 0))?;
        (traj, None, Vec::new(), None)
    };

    let (trajectory, trace) = if rc.safety_stage {
        on_stage(Stage::Regeneration);
        // Repairs keep the conditioning of the selected candidate.
        let goal = selected.map(|i| candidates[i].goal.position);
        let cond = Condition::with_goal(scene, goal);
        let (t, trace) = regenerate_safe(
            denoiser,
            scene,
            &cond,
            trajectory,
            rc.goal_stage,
            cb,
            &cfg.diffusion,
            &cfg.scoring,
            rc,
            rng::derive(seed, 2),
        )?;
        (t, Some(trace))
    } else {
        (trajectory, None)
    };
    let breakdown = match &trace {
        Some(tr) => tr.iterations.last().map_or(tr.initial_breakdown, |it| it.breakdown),
        None => global_score(&trajectory.dequantize(cb)?, scene, &cfg.scoring)?,
    };
    Ok(PlanOutcome { trajectory, breakdown, goals, candidates, selected, trace })
}

#[cfg(test)]
#[path = "reflect_tests.rs"]
mod tests;
