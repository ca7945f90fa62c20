use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorplan::checkpoint::Checkpoint;
use anchorplan::config::DenoiserSection;
use anchorplan::harness::{ablate, evaluate, run_scene, scene_seed, train_suite, AnyDenoiser};
use anchorplan::report::{Aggregate, RunReport, SCHEMA_VERSION};
use anchorplan::suite::{self, write_json};
use anchorplan::{svg, HarnessError, Result, RunConfig};
use anchorplan_core::{AgentFutureMode, ScenarioKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anchorplan", version, about = "Diffusion trajectory planning with anchor-based safety repair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded scenario suite.
    GenScenarios {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated scenario kinds.
        #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
        kinds: Vec<ScenarioKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on a suite's reference trajectories.
    Train {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a single scene.
    Plan {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        scene: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write an SVG overlay to this file.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Plan every scene of a suite and write a report.
    Evaluate {
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write one SVG per scene into this directory.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Evaluate all four stage combinations with shared seeds.
    Ablate {
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG overlays from an existing report.
    Plot {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    denoiser: Option<DenoiserArg>,
    /// Checkpoint for `--denoiser trained`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    agents: Option<AgentsArg>,
    #[arg(long, value_enum)]
    toggle_goal: Option<Toggle>,
    #[arg(long, value_enum)]
    toggle_safety: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserArg {
    Oracle,
    Trained,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentsArg {
    Cv,
    Gt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    ScenarioKind::parse(s).ok_or_else(|| {
        let all: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown kind {s:?}; expected one of {}", all.join(", "))
    })
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    match path {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((RunConfig::load(p)?, base))
        }
        None => Ok((RunConfig::default(), PathBuf::new())),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, AnyDenoiser)> {
        let (mut cfg, base) = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(a) = self.agents {
            cfg.agents = match a {
                AgentsArg::Cv => AgentFutureMode::ConstantVelocity,
                AgentsArg::Gt => AgentFutureMode::ScriptedGroundTruth,
            };
        }
        if let Some(t) = self.toggle_goal {
            cfg.reflect.goal_stage = matches!(t, Toggle::On);
        }
        if let Some(t) = self.toggle_safety {
            cfg.reflect.safety_stage = matches!(t, Toggle::On);
        }
        let mut base = base;
        match (self.denoiser, &self.checkpoint) {
            (Some(DenoiserArg::Trained) | None, Some(path)) => {
                cfg.denoiser = DenoiserSection::Trained { checkpoint: path.clone() };
                base = PathBuf::new();
            }
            (Some(DenoiserArg::Trained), None) if !matches!(cfg.denoiser, DenoiserSection::Trained { .. }) => {
                return Err(HarnessError::Validation(
                    "--denoiser trained needs --checkpoint or a trained config".into(),
                ));
            }
            (Some(DenoiserArg::Oracle), _) if !matches!(cfg.denoiser, DenoiserSection::Oracle { .. }) => {
                cfg.denoiser = DenoiserSection::default();
            }
            _ => {}
        }
        cfg.validate()?;
        let denoiser = AnyDenoiser::from_config(&cfg, &base)?;
        Ok((cfg, denoiser))
    }
}

fn print_aggregate(a: &Aggregate) {
    println!(
        "scenes {} (failed {})  NC {:.3}  DAC {:.3}  TTC {:.3}  Comfort {:.3}  EP {:.3}  total {:.3}",
        a.scenes, a.failed, a.mean_nc, a.mean_dac, a.mean_ttc, a.mean_comfort, a.mean_ep, a.mean_total
    );
}

fn write_svgs(dir: &Path, suite_dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    for s in &report.scenes {
        let scene = suite::read_scene(suite_dir, &s.scene_id)?;
        let path = dir.join(format!("{}.svg", s.scene_id));
        fs::write(&path, svg::render(&scene, s.result.as_ref())).map_err(HarnessError::io(&path))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenarios { config, seed, count, kinds, out } => {
            let (mut cfg, _) = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.suite.seed = s;
            }
            if let Some(c) = count {
                cfg.suite.count = c;
            }
            if !kinds.is_empty() {
                cfg.suite.kinds = kinds;
            }
            cfg.validate()?;
            let scenes = suite::generate_suite(&cfg.suite.kinds, cfg.suite.count, cfg.suite.seed, &cfg.generation()?)?;
            let manifest = suite::write_suite(&out, &scenes, cfg.suite.seed, &cfg.suite.kinds)?;
            println!("wrote {} scenes to {}", manifest.scene_ids.len(), out.display());
        }
        Command::Train { suite: dir, config, seed, resume, out } => {
            let (mut cfg, _) = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let scenes = suite::read_suite(&dir)?;
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            let losses_path = out.with_extension("losses.json");
            match train_suite(&scenes, &cfg, resume) {
                Ok(ckpt) => {
                    ckpt.save(&out)?;
                    write_json(&losses_path, &ckpt.state)?;
                    println!("loss curve {:?}", ckpt.state.loss_curve);
                }
                Err(HarnessError::Core(anchorplan_core::Error::Diverged { epoch, losses })) => {
                    write_json(&losses_path, &serde_json::json!({ "diverged_in_epoch": epoch, "loss_curve": losses }))?;
                    return Err(HarnessError::Runtime(format!("training diverged in epoch {epoch}")));
                }
                Err(e) => return Err(e),
            }
        }
        Command::Plan { suite: dir, scene, run, out, svg: svg_path } => {
            let (cfg, denoiser) = run.resolve()?;
            let scene = suite::read_scene(&dir, &scene)?;
            let (report, timing) = run_scene(&denoiser, &scene, &cfg.plan_config()?, scene_seed(cfg.seed, &scene));
            if let Some(e) = &report.error {
                return Err(HarnessError::Runtime(format!("{}: {e}", scene.scene_id)));
            }
            if let Some(r) = &report.result {
                println!("{}: total {:.3} ({:.1} ms)", scene.scene_id, r.breakdown.total, timing.total_ms);
            }
            if let Some(path) = svg_path {
                fs::write(&path, svg::render(&scene, report.result.as_ref())).map_err(HarnessError::io(&path))?;
            }
            if let Some(path) = out {
                let full = RunReport {
                    schema_version: SCHEMA_VERSION,
                    config: cfg.clone(),
                    denoiser: denoiser.describe(),
                    aggregate: Aggregate::from_scenes(std::slice::from_ref(&report)),
                    scenes: vec![report],
                    timing: anchorplan::report::Timing {
                        total_ms: timing.total_ms,
                        scenes: vec![timing],
                        ..Default::default()
                    },
                };
                write_json(&path, &full)?;
            }
        }
        Command::Evaluate { suite: dir, run, out, svg: svg_dir } => {
            let (cfg, denoiser) = run.resolve()?;
            let scenes = suite::read_suite(&dir)?;
            let report = evaluate(&scenes, &cfg, &denoiser)?;
            write_json(&out, &report)?;
            print_aggregate(&report.aggregate);
            if let Some(d) = svg_dir {
                write_svgs(&d, &dir, &report)?;
            }
        }
        Command::Ablate { suite: dir, run, out } => {
            let (cfg, denoiser) = run.resolve()?;
            let scenes = suite::read_suite(&dir)?;
            let (table, _) = ablate(&scenes, &cfg, &denoiser)?;
            write_json(&out, &table)?;
            print!("{}", table.to_markdown());
        }
        Command::Plot { suite: dir, report, out } => {
            let report: RunReport = suite::read_json(&report)?;
            write_svgs(&out, &dir, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
