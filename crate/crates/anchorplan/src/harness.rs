//! Batch planning, ablations and training over scenario suites.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anchorplan_core::denoiser::{train, OracleDenoiser, TrainState, TrainableDenoiser, TrainingItem};
use anchorplan_core::diffusion::{Condition, Denoiser, DenoiserOutput, NoisySequence, Step};
use anchorplan_core::reflect::{plan_observed, PlanConfig, Stage};
use anchorplan_core::{rng, Scene};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{DenoiserSection, RunConfig};
use crate::error::{HarnessError, Result};
use crate::report::{
    AblationRow, AblationTable, Aggregate, RunReport, SceneReport, SceneResult, SceneTiming, Timing, ABLATION_LABELS,
    SCHEMA_VERSION,
};

/// Either denoiser, chosen at run time.
#[derive(Debug, Clone)]
pub enum AnyDenoiser {
    Oracle(OracleDenoiser),
    Trained(Box<TrainableDenoiser>),
}

impl AnyDenoiser {
    /// Builds the denoiser named in `cfg`. Relative checkpoint paths resolve
    /// against `base`.
    pub fn from_config(cfg: &RunConfig, base: &Path) -> Result<Self> {
        match &cfg.denoiser {
            DenoiserSection::Oracle { sharpness } => {
                Ok(AnyDenoiser::Oracle(OracleDenoiser::new(cfg.codebook()?, *sharpness)?))
            }
            DenoiserSection::Trained { checkpoint } => {
                let model = Checkpoint::load(&base.join(checkpoint))?.to_model()?;
                cfg.validate_model(model.config())?;
                Ok(AnyDenoiser::Trained(Box::new(model)))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            AnyDenoiser::Oracle(o) => format!("oracle(sharpness={})", o.sharpness()),
            AnyDenoiser::Trained(m) => format!("trained({} parameters)", m.param_count()),
        }
    }
}

impl Denoiser for AnyDenoiser {
    fn vocab_size(&self) -> usize {
        match self {
            AnyDenoiser::Oracle(o) => o.vocab_size(),
            AnyDenoiser::Trained(m) => m.vocab_size(),
        }
    }

    fn denoise(
        &self,
        noisy: &NoisySequence,
        cond: &Condition<'_>,
        step: Step,
    ) -> anchorplan_core::Result<DenoiserOutput> {
        match self {
            AnyDenoiser::Oracle(o) => o.denoise(noisy, cond, step),
            AnyDenoiser::Trained(m) => m.denoise(noisy, cond, step),
        }
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn close(timing: &mut SceneTiming, current: Option<(Stage, Instant)>) {
    if let Some((stage, at)) = current {
        let ms = elapsed_ms(at);
        match stage {
            Stage::Goals => timing.goals_ms += ms,
            Stage::Generation => timing.generation_ms += ms,
            Stage::Selection => timing.selection_ms += ms,
            Stage::Regeneration => timing.regeneration_ms += ms,
        }
    }
}

/// Plans one scene, recording the time spent in each stage.
pub fn run_scene<D: Denoiser + ?Sized>(
    denoiser: &D,
    scene: &Scene,
    cfg: &PlanConfig,
    seed: u64,
) -> (SceneReport, SceneTiming) {
    let start = Instant::now();
    let mut timing = SceneTiming { scene_id: scene.scene_id.clone(), ..SceneTiming::default() };
    let mut current: Option<(Stage, Instant)> = None;
    let outcome = plan_observed(denoiser, scene, cfg, seed, &mut |stage| {
        close(&mut timing, current.take());
        current = Some((stage, Instant::now()));
    });
    close(&mut timing, current);
    timing.total_ms = elapsed_ms(start);

    let (error, result) = match outcome.map_err(HarnessError::from).and_then(|o| SceneResult::new(&o, &cfg.codebook)) {
        Ok(r) => (None, Some(r)),
        Err(e) => (Some(e.to_string()), None),
    };
    (SceneReport { scene_id: scene.scene_id.clone(), kind: scene.kind, error, result }, timing)
}

/// Planning seed of a scene under a run seed.
pub fn scene_seed(run_seed: u64, scene: &Scene) -> u64 {
    rng::derive(run_seed, scene.seed)
}

/// Plans every scene (in parallel) and aggregates. Failed scenes are
/// recorded and skipped by the aggregate.
pub fn evaluate(scenes: &[Scene], cfg: &RunConfig, denoiser: &AnyDenoiser) -> Result<RunReport> {
    let plan_cfg = cfg.plan_config()?;
    let start = Instant::now();
    let results: Vec<(SceneReport, SceneTiming)> =
        scenes.par_iter().map(|scene| run_scene(denoiser, scene, &plan_cfg, scene_seed(cfg.seed, scene))).collect();
    let (reports, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        denoiser: denoiser.describe(),
        aggregate: Aggregate::from_scenes(&reports),
        scenes: reports,
        timing: Timing { generated_at, total_ms: elapsed_ms(start), scenes: timings },
    })
}

/// The four stage combinations with shared seeds.
pub fn ablate(scenes: &[Scene], cfg: &RunConfig, denoiser: &AnyDenoiser) -> Result<(AblationTable, Vec<RunReport>)> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (i, label) in ABLATION_LABELS.iter().enumerate() {
        let (goal_stage, safety_stage) = (i % 2 == 1, i >= 2);
        let mut c = cfg.clone();
        c.reflect.goal_stage = goal_stage;
        c.reflect.safety_stage = safety_stage;
        let report = evaluate(scenes, &c, denoiser)?;
        rows.push(AblationRow {
            label: (*label).into(),
            goal_stage,
            safety_stage,
            aggregate: report.aggregate.clone(),
        });
        reports.push(report);
    }
    Ok((AblationTable::new(rows), reports))
}

/// Trains on the suite references, optionally resuming from a checkpoint.
/// On divergence the error carries the losses seen so far.
pub fn train_suite(scenes: &[Scene], cfg: &RunConfig, resume: Option<Checkpoint>) -> Result<Checkpoint> {
    let cb = cfg.codebook()?;
    let items = scenes.iter().map(|s| TrainingItem::from_scene(s, &cb)).collect::<anchorplan_core::Result<Vec<_>>>()?;
    let schedule = cfg.diffusion().schedule()?;
    let (mut model, mut state) = match resume {
        Some(ckpt) => {
            let model = ckpt.to_model()?;
            cfg.validate_model(model.config())?;
            (model, ckpt.state)
        }
        None => {
            let model = TrainableDenoiser::new(cfg.model_config()?, cfg.train.seed)?;
            let state = TrainState::new(model.param_count());
            (model, state)
        }
    };
    train(&mut model, &mut state, &items, &schedule, &cfg.train)?;
    Ok(Checkpoint::new(&model, cfg.train, state))
}
