//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails or runs over its time limit.

mod micro;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anchorplan::harness::{ablate, evaluate, train_suite, AnyDenoiser};
use anchorplan::suite::generate_suite;
use anchorplan::RunConfig;
use anchorplan_core::denoiser::{greedy_token_accuracy, ModelConfig, OracleDenoiser, SceneContext, TrainableDenoiser};
use anchorplan_core::diffusion::{
    forward_mask, inpaint_observed, reverse_generate, training_loss, Condition, DecodeMode, Denoiser, DenoiserOutput,
    DiffusionConfig, NoisySequence, Step,
};
use anchorplan_core::reflect::{nms, regenerate_safe, search_anchor, Goal, ReflectConfig};
use anchorplan_core::scoring::{local_score, ScoringConfig};
use anchorplan_core::{rng, Codebook, ScenarioKind, Scene, TokenPair, TokenTrajectory, Vec2};
use rand::Rng;

type Outcome = Result<String, String>;

/// Name, time limit in seconds and check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn suite(kinds: &[ScenarioKind], count: usize, seed: u64) -> Vec<Scene> {
    let cfg = RunConfig::default();
    generate_suite(kinds, count, seed, &cfg.generation().unwrap()).unwrap()
}

fn quantization() -> Outcome {
    let cb = Codebook::default();
    let mut rng = rng::from_seed(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let v = rng.random_range(-100.0..=100.0);
        let back = cb.dequantize(cb.quantize(v).map_err(err)?).map_err(err)?;
        worst = worst.max((back - v).abs());
    }
    ensure(worst <= 0.25, || format!("max error {worst}"))?;
    let mut prev = 0;
    for i in 0..=20_000 {
        let v = -100.0 + i as f64 * 0.01;
        let t = cb.quantize(v).map_err(err)?;
        ensure(t >= prev, || format!("quantize not monotone at {v}"))?;
        prev = t;
    }
    for t in 1..cb.vocab_size() as u32 {
        ensure(cb.dequantize(t).map_err(err)? > cb.dequantize(t - 1).map_err(err)?, || {
            format!("dequantize not increasing at {t}")
        })?;
    }
    Ok(format!("max |dequantize(quantize(v)) - v| = {worst:.4} m"))
}

struct Uniform;

impl Denoiser for Uniform {
    fn vocab_size(&self) -> usize {
        401
    }

    fn denoise(&self, noisy: &NoisySequence, _: &Condition<'_>, _: Step) -> anchorplan_core::Result<DenoiserOutput> {
        Ok(DenoiserOutput::zeros(noisy.len(), 401))
    }
}

fn loss_and_gradients() -> Outcome {
    let cb = Codebook::default();
    let scenes = suite(&ScenarioKind::ALL, 14, 3);
    let schedule = DiffusionConfig::default().schedule().map_err(err)?;
    let batch: Vec<(TokenTrajectory, Condition<'_>)> =
        scenes.iter().map(|s| (s.reference_trajectory.quantize(&cb).unwrap(), Condition::new(s))).collect();
    let loss = training_loss(&batch, &Uniform, &schedule, 5).map_err(err)?;
    let ln = 401f64.ln();
    ensure((loss - ln).abs() <= 1e-6, || format!("uniform loss {loss} vs ln 401 = {ln}"))?;

    let mut model =
        TrainableDenoiser::new(ModelConfig { output_init_std: 0.3, ..ModelConfig::default() }, 9).map_err(err)?;
    let scene = &scenes[4];
    let clean = scene.reference_trajectory.quantize(&cb).map_err(err)?;
    let noisy = forward_mask(clean.tokens(), &[false; 32], 3, &schedule, 2).map_err(err)?;
    let ctx = SceneContext::encode(scene, Some(Vec2::new(30.0, 1.0)));
    let step = Step { s: 3, total: 5 };
    let mut grad = vec![0.0; model.param_count()];
    model.masked_loss(&noisy, &ctx, step, clean.tokens(), Some((&mut grad, 1.0))).map_err(err)?;

    let mut rng = rng::from_seed(17);
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for info in model.tensor_infos() {
        let candidates: Vec<usize> =
            model.tensor_range(&info.name).unwrap().filter(|&i| grad[i].abs() > 1e-5).collect();
        for _ in 0..2.min(candidates.len()) {
            let i = candidates[rng.random_range(0..candidates.len())];
            let eps = 1e-5;
            let orig = model.params()[i];
            model.params_mut()[i] = orig + eps;
            let up = model.masked_loss(&noisy, &ctx, step, clean.tokens(), None).map_err(err)?.0;
            model.params_mut()[i] = orig - eps;
            let down = model.masked_loss(&noisy, &ctx, step, clean.tokens(), None).map_err(err)?.0;
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs());
            worst = worst.max(rel);
            probes += 1;
        }
    }
    ensure(probes >= 10, || format!("only {probes} probes"))?;
    ensure(worst <= 1e-4, || format!("worst relative gradient error {worst:e}"))?;
    Ok(format!("uniform loss {loss:.9}; {probes} probes, worst relative error {worst:.1e}"))
}

fn training() -> Outcome {
    let cfg = RunConfig::default();
    let train_set = suite(&ScenarioKind::ALL, 200, 0);
    let held_out = suite(&ScenarioKind::ALL, 70, 1);
    let ckpt = train_suite(&train_set, &cfg, None).map_err(err)?;
    let curve = &ckpt.state.loss_curve;
    ensure(curve.len() == 4, || format!("loss curve {curve:?}"))?;
    ensure(curve[3] <= 0.5 * curve[0], || format!("loss curve {curve:?}"))?;
    let model = ckpt.to_model().map_err(err)?;
    let greedy = DiffusionConfig { mode: DecodeMode::Greedy, ..cfg.diffusion() };
    let acc = greedy_token_accuracy(&model, &held_out, &cfg.codebook().map_err(err)?, &greedy, 2).map_err(err)?;
    ensure(acc >= 0.7, || format!("held-out accuracy {acc:.3}, loss curve {curve:?}"))?;
    Ok(format!("loss {:.3} -> {:.3}; held-out accuracy within 2 tokens {acc:.3}", curve[0], curve[3]))
}

fn inpainting() -> Outcome {
    let cb = Codebook::default();
    let oracle = OracleDenoiser::new(cb, 1.0).map_err(err)?;
    let scenes = suite(&ScenarioKind::ALL, 21, 4);
    let mut rng = rng::from_seed(44);
    let mut anchored_total = 0;
    for trial in 0..1000u64 {
        let scene = &scenes[trial as usize % scenes.len()];
        let base_tokens: Vec<u32> = (0..32).map(|_| rng.random_range(0..401)).collect();
        let base = TokenTrajectory::new(base_tokens, scene.dt).map_err(err)?;
        let p = rng.random_range(0.0..1.0);
        let fixed: Vec<usize> = (0..32).filter(|_| rng.random_bool(p)).collect();
        anchored_total += fixed.len();
        let diffusion = if trial % 2 == 0 {
            DiffusionConfig::default()
        } else {
            DiffusionConfig {
                mode: DecodeMode::Sample { temperature: 1.0 },
                cfg_scale: 1.5,
                ..DiffusionConfig::default()
            }
        };
        let schedule = diffusion.schedule().map_err(err)?;
        let free = 32 - fixed.len();
        let mut prev: Option<NoisySequence> = None;
        let mut violation = None;
        let out = inpaint_observed(&oracle, &Condition::new(scene), &base, &fixed, &diffusion, trial, &mut |s, seq| {
            if seq.masked_count() != schedule.masked_count(s - 1, free) {
                violation.get_or_insert(format!("step {s}: {} masked", seq.masked_count()));
            }
            for &i in &fixed {
                if seq.token(i) != Some(base.tokens()[i]) || !seq.is_anchored(i) {
                    violation.get_or_insert(format!("step {s}: anchor {i} lost"));
                }
            }
            if let Some(p) = &prev {
                for i in 0..32 {
                    if let Some(t) = p.token(i) {
                        if seq.token(i) != Some(t) {
                            violation.get_or_insert(format!("step {s}: slot {i} changed after commit"));
                        }
                    }
                }
            }
            prev = Some(seq.clone());
        })
        .map_err(err)?;
        if let Some(v) = violation {
            return Err(format!("trial {trial}: {v}"));
        }
        for &i in &fixed {
            ensure(out.tokens()[i] == base.tokens()[i], || format!("trial {trial}: output lost anchor {i}"))?;
        }
    }
    Ok(format!("1000 calls, {anchored_total} anchored slots preserved"))
}

/// Reference suppression: scan by probability, earliest first among ties.
fn brute_nms(candidates: &[Goal], k: usize, d: f64) -> Vec<Goal> {
    let mut used = vec![false; candidates.len()];
    let mut kept: Vec<Goal> = Vec::new();
    while kept.len() < k {
        let mut best: Option<usize> = None;
        for (i, c) in candidates.iter().enumerate() {
            if !used[i] && best.is_none_or(|b| c.probability > candidates[b].probability) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        used[b] = true;
        let c = candidates[b];
        if kept
            .iter()
            .all(|g| ((g.position.x - c.position.x).powi(2) + (g.position.y - c.position.y).powi(2)).sqrt() >= d)
        {
            kept.push(c);
        }
    }
    kept
}

fn nms_oracle() -> Outcome {
    let mut rng = rng::from_seed(5);
    let mut kept_total = 0;
    for trial in 0..1000 {
        let n = rng.random_range(0..120);
        let lattice = trial % 2 == 0;
        let candidates: Vec<Goal> = (0..n)
            .map(|i| {
                let (x, y) = if lattice {
                    (rng.random_range(-6..=6) as f64 * 0.45, rng.random_range(-6..=6) as f64 * 0.45)
                } else {
                    (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))
                };
                let probability =
                    if lattice { rng.random_range(0..8) as f64 / 8.0 } else { rng.random_range(0.0..1.0) };
                Goal { tokens: TokenPair { x: i, y: i }, position: Vec2::new(x, y), probability }
            })
            .collect();
        let k = rng.random_range(1..=8);
        let got = nms(&candidates, k, 0.9);
        let want = brute_nms(&candidates, k, 0.9);
        ensure(got == want, || format!("trial {trial}: {} kept vs {} expected", got.len(), want.len()))?;
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                ensure(a.position.distance(b.position) >= 0.9, || format!("trial {trial}: kept goals too close"))?;
            }
        }
        kept_total += got.len();
    }
    Ok(format!("1000 sets match, {kept_total} goals kept"))
}

fn local_search() -> Outcome {
    let cb = Codebook::default();
    let scoring = ScoringConfig::default();
    let oracle = OracleDenoiser::new(cb, 0.4).map_err(err)?;
    let sampling = DiffusionConfig { mode: DecodeMode::Sample { temperature: 1.0 }, ..DiffusionConfig::default() };
    let scenes = suite(&ScenarioKind::ALL, 35, 6);

    let straight = &scenes[0];
    let interior = TokenTrajectory::new(vec![200; 32], straight.dt).map_err(err)?;
    for delta in 1..=10u32 {
        let choice = search_anchor(&interior, 7, delta, straight, &cb, &scoring).map_err(err)?;
        let want = (2 * delta * delta + 2 * delta + 1) as usize;
        ensure(choice.candidates == want, || {
            format!("delta {delta}: {} candidates, expected {want}", choice.candidates)
        })?;
    }

    let trajectories: Vec<TokenTrajectory> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            reverse_generate(&oracle, &Condition::new(s), &NoisySequence::fully_masked(32), &sampling, i as u64)
        })
        .collect::<anchorplan_core::Result<_>>()
        .map_err(err)?;
    let mut rng = rng::from_seed(66);
    let mut improved = 0;
    for trial in 0..1000 {
        let i = rng.random_range(0..scenes.len());
        let (scene, traj) = (&scenes[i], &trajectories[i]);
        let t = rng.random_range(0..16);
        let delta = rng.random_range(1..=10u32);
        let choice = search_anchor(traj, t, delta, scene, &cb, &scoring).map_err(err)?;
        let origin = traj.pair(t);
        let original = local_score(origin, t, traj, scene, &cb, &scoring).map_err(err)?;
        ensure(choice.original_score == original, || format!("trial {trial}: original score mismatch"))?;
        ensure(choice.score >= original, || format!("trial {trial}: chosen {} < original {original}", choice.score))?;
        ensure(choice.pair.manhattan(origin) <= delta, || format!("trial {trial}: pair outside the ball"))?;
        improved += (choice.score > original) as usize;
    }
    Ok(format!("counts 2d^2+2d+1 for d=1..10 (221 at 10); 1000 trials never worse, {improved} strictly better"))
}

fn reflection() -> Outcome {
    let cfg = RunConfig::default();
    let cb = cfg.codebook().map_err(err)?;
    let oracle = OracleDenoiser::new(cb, 0.4).map_err(err)?;
    let diffusion = DiffusionConfig { mode: DecodeMode::Sample { temperature: 1.0 }, ..DiffusionConfig::default() };
    let scoring = ScoringConfig::default();
    let reflect = ReflectConfig { max_iterations: 10, ..ReflectConfig::default() };
    let scenes = suite(&[ScenarioKind::NarrowCorridor, ScenarioKind::LeadVehicle], 100, 7);
    let mut unsafe_count = 0;
    let mut fixed = Vec::new();
    for scene in &scenes {
        let cond = Condition::new(scene);
        let init =
            reverse_generate(&oracle, &cond, &NoisySequence::fully_masked(32), &diffusion, scene.seed).map_err(err)?;
        let (_, trace) = regenerate_safe(
            &oracle,
            scene,
            &cond,
            init,
            false,
            &cb,
            &diffusion,
            &scoring,
            &reflect,
            rng::derive(scene.seed, 2),
        )
        .map_err(err)?;
        if trace.initial_breakdown.hard < 1.0 {
            unsafe_count += 1;
            if let Some(n) = trace.iterations_to_hard_safe() {
                fixed.push(n);
            }
        }
    }
    fixed.sort_unstable();
    let share_unsafe = unsafe_count as f64 / scenes.len() as f64;
    let share_fixed = if unsafe_count == 0 { 0.0 } else { fixed.len() as f64 / unsafe_count as f64 };
    let median = if fixed.is_empty() { f64::INFINITY } else { fixed[(fixed.len() - 1) / 2] as f64 };
    let detail = format!(
        "{unsafe_count}/100 initially unsafe, {}/{unsafe_count} reach H=1, median {median} iterations",
        fixed.len()
    );
    ensure(share_unsafe >= 0.5 && share_fixed >= 0.9 && median <= 3.0, || detail.clone())?;
    Ok(detail)
}

fn ablation() -> Outcome {
    let cfg = RunConfig::default();
    let scenes = suite(&ScenarioKind::ALL, 100, 8);
    let denoiser = AnyDenoiser::from_config(&cfg, std::path::Path::new("")).map_err(err)?;
    let (table, _) = ablate(&scenes, &cfg, &denoiser).map_err(err)?;
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "{}: EP {:.4} DAC {:.2} total {:.3}",
                r.label, r.aggregate.mean_ep, r.aggregate.mean_dac, r.aggregate.mean_total
            )
        })
        .collect();
    let failed: Vec<String> =
        table.checks.iter().filter(|c| !c.passed).map(|c| format!("{} ({})", c.name, c.detail)).collect();
    ensure(failed.is_empty(), || format!("{}; {}", failed.join(", "), rows.join("; ")))?;
    Ok(rows.join("; "))
}

fn determinism() -> Outcome {
    let cfg = RunConfig::default();
    let scenes = suite(&ScenarioKind::ALL, 100, 10);
    let denoiser = AnyDenoiser::from_config(&cfg, std::path::Path::new("")).map_err(err)?;
    let a = evaluate(&scenes, &cfg, &denoiser).map_err(err)?.without_timing();
    let b = evaluate(&scenes, &cfg, &denoiser).map_err(err)?.without_timing();
    let (ja, jb) = (serde_json::to_string(&a).map_err(err)?, serde_json::to_string(&b).map_err(err)?);
    ensure(ja == jb, || "reports differ".into())?;
    Ok(format!("{} scenes, {} bytes identical", a.scenes.len(), ja.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("quantization", 1, quantization),
        ("loss and gradients", 30, loss_and_gradients),
        ("training", 600, training),
        ("inpainting contract", 60, inpainting),
        ("nms oracle", 10, nms_oracle),
        ("local search", 30, local_search),
        ("reflection effectiveness", 300, reflection),
        ("ablation direction", 600, ablation),
        ("scorer oracle equivalence", 60, micro::scorer_equivalence),
        ("determinism", 600, determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > Duration::from_secs(limit) => Err(format!("{detail}; over the {limit} s limit")),
            r => r,
        };
        let secs = took.as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {id:>2} {name} ({secs:.2} s): {detail}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
