//! Scenario suites on disk: one JSON file per scene plus a manifest.

use std::fs;
use std::path::Path;

use anchorplan_core::scene::{generate_scenario_with, GenerationParams};
use anchorplan_core::scoring::{global_score, ScoringConfig};
use anchorplan_core::{AgentFutureMode, ScenarioKind, Scene};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub kinds: Vec<ScenarioKind>,
    pub scene_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub scene: Scene,
}

/// Scene seeds of a suite: kinds take turns and every kind gets its own
/// consecutive seeds, so counts differ by at most one across kinds.
pub fn suite_seeds(kinds: &[ScenarioKind], count: usize, seed: u64) -> Vec<(ScenarioKind, u64)> {
    let mut next = vec![0u64; kinds.len()];
    (0..count)
        .map(|i| {
            let k = i % kinds.len();
            let s = seed.wrapping_mul(100_000).wrapping_add(next[k]);
            next[k] += 1;
            (kinds[k], s)
        })
        .collect()
}

/// Generates the suite and checks that every reference is hard-safe under
/// both agent modes.
pub fn generate_suite(
    kinds: &[ScenarioKind],
    count: usize,
    seed: u64,
    params: &GenerationParams,
) -> Result<Vec<Scene>> {
    if kinds.is_empty() {
        return Err(HarnessError::Validation("no scenario kinds given".into()));
    }
    let scenes = suite_seeds(kinds, count, seed)
        .into_iter()
        .map(|(kind, s)| generate_scenario_with(kind, s, params))
        .collect::<anchorplan_core::Result<Vec<_>>>()?;
    for scene in &scenes {
        validate_scene(scene)?;
    }
    Ok(scenes)
}

pub fn validate_scene(scene: &Scene) -> Result<()> {
    for mode in [AgentFutureMode::ConstantVelocity, AgentFutureMode::ScriptedGroundTruth] {
        let cfg = ScoringConfig { agent_mode: mode, ..ScoringConfig::default() };
        let score = global_score(&scene.reference_trajectory, scene, &cfg)?;
        if score.hard != 1.0 {
            return Err(HarnessError::Validation(format!("{}: reference is not hard-safe", scene.scene_id)));
        }
    }
    Ok(())
}

pub fn write_suite(dir: &Path, scenes: &[Scene], seed: u64, kinds: &[ScenarioKind]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    for scene in scenes {
        let file = ScenarioFile { schema_version: SCHEMA_VERSION, scene: scene.clone() };
        write_json(&dir.join(format!("{}.json", scene.scene_id)), &file)?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed,
        kinds: kinds.to_vec(),
        scene_ids: scenes.iter().map(|s| s.scene_id.clone()).collect(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    check_version(manifest.schema_version, &dir.join(MANIFEST))?;
    Ok(manifest)
}

pub fn read_scene(dir: &Path, scene_id: &str) -> Result<Scene> {
    let path = dir.join(format!("{scene_id}.json"));
    let file: ScenarioFile = read_json(&path)?;
    check_version(file.schema_version, &path)?;
    if file.scene.scene_id != scene_id {
        return Err(HarnessError::Validation(format!("{}: holds scene {}", path.display(), file.scene.scene_id)));
    }
    Ok(file.scene)
}

/// Every scene listed in the manifest, in manifest order.
pub fn read_suite(dir: &Path) -> Result<Vec<Scene>> {
    read_manifest(dir)?.scene_ids.iter().map(|id| read_scene(dir, id)).collect()
}

fn check_version(found: u32, path: &Path) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(HarnessError::Validation(format!(
            "{}: schema version {found}, expected {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(HarnessError::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    serde_json::from_str(&text).map_err(HarnessError::json(path))
}
