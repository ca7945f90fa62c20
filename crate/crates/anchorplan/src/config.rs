//! Run configuration, read from TOML. Every section is optional and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use anchorplan_core::denoiser::{ModelConfig, TrainConfig};
use anchorplan_core::diffusion::{DecodeMode, DiffusionConfig, ScheduleKind};
use anchorplan_core::reflect::{PlanConfig, ReflectConfig};
use anchorplan_core::scene::GenerationParams;
use anchorplan_core::scoring::{ComfortLimits, ScoringConfig};
use anchorplan_core::{AgentFutureMode, Codebook, ScenarioKind, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Mixed with each scene seed to seed planning.
    pub seed: u64,
    pub agents: AgentFutureMode,
    pub codebook: CodebookSection,
    pub horizon: HorizonSection,
    pub diffusion: DiffusionSection,
    pub reflect: ReflectSection,
    pub scoring: ScoringSection,
    pub suite: SuiteSection,
    pub denoiser: DenoiserSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            agents: AgentFutureMode::ConstantVelocity,
            codebook: CodebookSection::default(),
            horizon: HorizonSection::default(),
            diffusion: DiffusionSection::default(),
            reflect: ReflectSection::default(),
            scoring: ScoringSection::default(),
            suite: SuiteSection::default(),
            denoiser: DenoiserSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookSection {
    /// Largest representable coordinate magnitude, meters.
    pub half_range: f64,
    /// Grid spacing, meters.
    pub resolution: f64,
}

impl Default for CodebookSection {
    fn default() -> Self {
        Self { half_range: 100.0, resolution: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSection {
    pub n: usize,
    pub dt: f64,
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self { n: 16, dt: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Greedy,
    #[default]
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub mode: ModeName,
    /// Used by `mode = "sample"` only.
    pub temperature: f64,
    pub cfg_scale: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self { steps: 5, schedule: ScheduleKind::Cosine, mode: ModeName::Sample, temperature: 1.0, cfg_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectSection {
    pub k: usize,
    pub k_prime: usize,
    pub d_nms: f64,
    pub delta: u32,
    pub max_iterations: usize,
    pub window: usize,
    pub safety_threshold: f64,
    pub goal_stage: bool,
    pub safety_stage: bool,
}

impl Default for ReflectSection {
    fn default() -> Self {
        let r = ReflectConfig::default();
        let s = ScoringConfig::default();
        Self {
            k: r.k,
            k_prime: r.k_prime,
            d_nms: r.d_nms,
            delta: r.delta,
            max_iterations: r.max_iterations,
            window: s.window,
            safety_threshold: s.safety_threshold,
            goal_stage: r.goal_stage,
            safety_stage: r.safety_stage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub max_lon_accel: f64,
    pub max_lat_accel: f64,
    pub max_jerk: f64,
    pub ttc_horizon: f64,
    pub ttc_step: f64,
    /// Coherence width of the local scorer, meters.
    pub sigma: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        let s = ScoringConfig::default();
        Self {
            max_lon_accel: s.comfort.max_lon_accel,
            max_lat_accel: s.comfort.max_lat_accel,
            max_jerk: s.comfort.max_jerk,
            ttc_horizon: s.ttc_horizon,
            ttc_step: s.ttc_step,
            sigma: s.coherence_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub kinds: Vec<ScenarioKind>,
    pub count: usize,
    pub seed: u64,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self { kinds: ScenarioKind::ALL.to_vec(), count: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum DenoiserSection {
    Oracle {
        /// Temperature of the oracle logits, meters.
        sharpness: f64,
    },
    Trained {
        checkpoint: PathBuf,
    },
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection::Oracle { sharpness: 0.4 }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Validation(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.codebook()?;
        if self.horizon.n < 2 {
            return Err(invalid("horizon.n must be at least 2"));
        }
        positive("horizon.dt", self.horizon.dt)?;
        self.diffusion().schedule()?;
        positive("diffusion.temperature", self.diffusion.temperature)?;
        if !self.diffusion.cfg_scale.is_finite() {
            return Err(invalid("diffusion.cfg_scale must be finite"));
        }
        let s = &self.scoring;
        for (name, v) in [
            ("scoring.max_lon_accel", s.max_lon_accel),
            ("scoring.max_lat_accel", s.max_lat_accel),
            ("scoring.max_jerk", s.max_jerk),
            ("scoring.ttc_horizon", s.ttc_horizon),
            ("scoring.ttc_step", s.ttc_step),
            ("scoring.sigma", s.sigma),
        ] {
            positive(name, v)?;
        }
        let t = self.reflect.safety_threshold;
        if !(0.0..=1.0).contains(&t) || t == 0.0 {
            return Err(invalid("reflect.safety_threshold must lie in (0, 1]"));
        }
        self.reflect().validate(self.codebook()?.vocab_size())?;
        if self.suite.kinds.is_empty() {
            return Err(invalid("suite.kinds must not be empty"));
        }
        if let DenoiserSection::Oracle { sharpness } = self.denoiser {
            positive("denoiser.sharpness", sharpness)?;
        }
        self.train.validate()?;
        Ok(())
    }

    /// Checks that the model section fits the codebook and horizon.
    pub fn validate_model(&self, model: &ModelConfig) -> Result<()> {
        let vocab = self.codebook()?.vocab_size();
        if model.vocab_size != vocab || model.seq_len != 2 * self.horizon.n {
            return Err(invalid(format!(
                "model expects vocab {} and {} slots; config implies {vocab} and {}",
                model.vocab_size,
                model.seq_len,
                2 * self.horizon.n
            )));
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::new(self.codebook.half_range, self.codebook.resolution).map_err(|e| invalid(e.to_string()))
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        let d = &self.diffusion;
        let mode = match d.mode {
            ModeName::Greedy => DecodeMode::Greedy,
            ModeName::Sample => DecodeMode::Sample { temperature: d.temperature },
        };
        DiffusionConfig { steps: d.steps, schedule: d.schedule, mode, cfg_scale: d.cfg_scale }
    }

    pub fn reflect(&self) -> ReflectConfig {
        let r = &self.reflect;
        ReflectConfig {
            k: r.k,
            k_prime: r.k_prime,
            d_nms: r.d_nms,
            delta: r.delta,
            max_iterations: r.max_iterations,
            goal_stage: r.goal_stage,
            safety_stage: r.safety_stage,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        let s = &self.scoring;
        ScoringConfig {
            comfort: ComfortLimits {
                max_lon_accel: s.max_lon_accel,
                max_lat_accel: s.max_lat_accel,
                max_jerk: s.max_jerk,
            },
            ttc_horizon: s.ttc_horizon,
            ttc_step: s.ttc_step,
            coherence_sigma: s.sigma,
            window: self.reflect.window,
            safety_threshold: self.reflect.safety_threshold,
            agent_mode: self.agents,
        }
    }

    pub fn plan_config(&self) -> Result<PlanConfig> {
        Ok(PlanConfig {
            codebook: self.codebook()?,
            diffusion: self.diffusion(),
            scoring: self.scoring(),
            reflect: self.reflect(),
        })
    }

    pub fn generation(&self) -> Result<GenerationParams> {
        Ok(GenerationParams {
            horizon_n: self.horizon.n,
            dt: self.horizon.dt,
            codebook: self.codebook()?,
            ego_half_extents: Vec2::new(2.4, 1.0),
        })
    }

    /// Model section with the vocabulary and sequence length implied by
    /// the codebook and horizon.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let model =
            ModelConfig { vocab_size: self.codebook()?.vocab_size(), seq_len: 2 * self.horizon.n, ..self.model };
        Ok(model)
    }
}
