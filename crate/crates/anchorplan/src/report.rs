//! Run reports and ablation tables.

use std::collections::BTreeMap;

use anchorplan_core::reflect::{AnchorChoice, Goal, PlanOutcome, ReflectionTrace, TerminalStatus};
use anchorplan_core::scoring::{ScoreBreakdown, ViolationKind};
use anchorplan_core::{Codebook, ScenarioKind, Token, TokenTrajectory, Vec2};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub denoiser: String,
    pub scenes: Vec<SceneReport>,
    pub aggregate: Aggregate,
    /// Wall-clock data; the only part that differs between identical runs.
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneReport {
    pub scene_id: String,
    pub kind: ScenarioKind,
    pub error: Option<String>,
    pub result: Option<SceneResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneResult {
    pub tokens: Vec<Token>,
    pub waypoints: Vec<Vec2>,
    pub breakdown: ScoreBreakdown,
    pub goals: Vec<Goal>,
    pub candidates: Vec<ScoreBreakdown>,
    pub selected: Option<usize>,
    pub trace: Option<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSummary {
    pub terminal_status: TerminalStatus,
    pub total_iterations: usize,
    pub iterations_to_hard_safe: Option<usize>,
    pub anchored_slots: Vec<usize>,
    pub initial: Vec<Vec2>,
    pub initial_breakdown: ScoreBreakdown,
    pub iterations: Vec<IterationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSummary {
    pub t_star: usize,
    pub violation: Option<ViolationKind>,
    pub anchor: Option<AnchorChoice>,
    pub delta: u32,
    pub waypoints: Vec<Vec2>,
    pub breakdown: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub scenes: usize,
    pub failed: usize,
    pub mean_nc: f64,
    pub mean_dac: f64,
    pub mean_ttc: f64,
    pub mean_comfort: f64,
    pub mean_ep: f64,
    /// Mean of the per-scene totals.
    pub mean_total: f64,
    /// Repair iterations used, over scenes that ran the safety stage.
    pub iteration_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
    pub total_ms: f64,
    pub scenes: Vec<SceneTiming>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTiming {
    pub scene_id: String,
    pub goals_ms: f64,
    pub generation_ms: f64,
    pub selection_ms: f64,
    pub regeneration_ms: f64,
    pub total_ms: f64,
}

fn waypoints(t: &TokenTrajectory, cb: &Codebook) -> Result<Vec<Vec2>> {
    Ok(t.dequantize(cb)?.waypoints)
}

impl TraceSummary {
    pub fn new(trace: &ReflectionTrace, cb: &Codebook) -> Result<Self> {
        let iterations = trace
            .iterations
            .iter()
            .map(|it| {
                Ok(IterationSummary {
                    t_star: it.t_star,
                    violation: it.violation,
                    anchor: it.anchor,
                    delta: it.delta,
                    waypoints: waypoints(&it.trajectory, cb)?,
                    breakdown: it.breakdown,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            terminal_status: trace.terminal_status,
            total_iterations: trace.total_iterations,
            iterations_to_hard_safe: trace.iterations_to_hard_safe(),
            anchored_slots: trace.anchored_slots.clone(),
            initial: waypoints(&trace.initial, cb)?,
            initial_breakdown: trace.initial_breakdown,
            iterations,
        })
    }
}

impl SceneResult {
    pub fn new(outcome: &PlanOutcome, cb: &Codebook) -> Result<Self> {
        Ok(Self {
            tokens: outcome.trajectory.tokens().to_vec(),
            waypoints: waypoints(&outcome.trajectory, cb)?,
            breakdown: outcome.breakdown,
            goals: outcome.goals.as_ref().map(|g| g.goals.clone()).unwrap_or_default(),
            candidates: outcome.candidates.iter().map(|c| c.breakdown).collect(),
            selected: outcome.selected,
            trace: outcome.trace.as_ref().map(|t| TraceSummary::new(t, cb)).transpose()?,
        })
    }
}

impl Aggregate {
    /// Arithmetic means over the scenes that completed.
    pub fn from_scenes(scenes: &[SceneReport]) -> Self {
        let done: Vec<&SceneResult> = scenes.iter().filter_map(|s| s.result.as_ref()).collect();
        let n = done.len();
        let mean = |f: fn(&ScoreBreakdown) -> f64| {
            if n == 0 {
                0.0
            } else {
                done.iter().map(|r| f(&r.breakdown)).sum::<f64>() / n as f64
            }
        };
        let mut iteration_histogram = BTreeMap::new();
        for r in &done {
            if let Some(t) = &r.trace {
                *iteration_histogram.entry(t.total_iterations).or_insert(0) += 1;
            }
        }
        Self {
            scenes: scenes.len(),
            failed: scenes.len() - n,
            mean_nc: mean(|b| b.m_nc),
            mean_dac: mean(|b| b.m_dac),
            mean_ttc: mean(|b| b.m_ttc),
            mean_comfort: mean(|b| b.m_comfort),
            mean_ep: mean(|b| b.m_ep),
            mean_total: mean(|b| b.total),
            iteration_histogram,
        }
    }
}

impl RunReport {
    /// The report with its timing block cleared, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self { timing: Timing::default(), ..self.clone() }
    }
}

pub const ABLATION_LABELS: [&str; 4] = ["W/o Both", "W/ Goal-Cond.", "W/ Safety-Guided", "Full Model"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub label: String,
    pub goal_stage: bool,
    pub safety_stage: bool,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationTable {
    pub schema_version: u32,
    pub rows: Vec<AblationRow>,
    pub checks: Vec<DirectionCheck>,
}

impl AblationTable {
    /// Rows in label order: off/off, goal only, safety only, both.
    pub fn new(rows: Vec<AblationRow>) -> Self {
        let a = |i: usize| &rows[i].aggregate;
        let strict = |name: &str, pairs: [(usize, usize); 2], f: fn(&Aggregate) -> f64| {
            let passed = pairs.iter().all(|&(on, off)| f(a(on)) > f(a(off)));
            let detail = pairs
                .iter()
                .map(|&(on, off)| {
                    format!("{}: {:.4} vs {}: {:.4}", rows[on].label, f(a(on)), rows[off].label, f(a(off)))
                })
                .collect::<Vec<_>>()
                .join("; ");
            DirectionCheck { name: name.into(), passed, detail }
        };
        let checks = vec![
            strict("EP rises with the goal stage", [(1, 0), (3, 2)], |g| g.mean_ep),
            strict("DAC rises with the safety stage", [(2, 0), (3, 1)], |g| g.mean_dac),
            DirectionCheck {
                name: "Full Model total is at least W/o Both".into(),
                passed: a(3).mean_total >= a(0).mean_total,
                detail: format!("{:.4} vs {:.4}", a(3).mean_total, a(0).mean_total),
            },
        ];
        Self { schema_version: SCHEMA_VERSION, rows, checks }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| Method | NC | DAC | TTC | Comfort | EP | Total |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let g = &r.aggregate;
            out += &format!(
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                r.label, g.mean_nc, g.mean_dac, g.mean_ttc, g.mean_comfort, g.mean_ep, g.mean_total
            );
        }
        out.push('\n');
        for c in &self.checks {
            out += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}
