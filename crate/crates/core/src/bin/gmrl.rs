use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmrl::app::{self, Session};
use gmrl::config::Config;
use gmrl::manifest::{ProbeTarget, RunManifest};
use gmrl::train::{Guidance, Stage, StageJob, TrainOptions};

const OUT_ENV: &str = "GMRL_OUT";

#[derive(Parser)]
#[command(name = "gmrl", version, about = "Train and evaluate preference-conditioned traffic and a robust ego policy")]
struct Cli {
    /// JSON config; defaults are used for omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory for all artifacts.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Threads used by cross-evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage; prerequisites are read from the run directory.
    Train {
        #[arg(value_enum)]
        stage: StageArg,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Evaluate trained checkpoints.
    Eval {
        #[command(subcommand)]
        kind: EvalCommand,
    },
    /// Re-simulate a trace and verify every transition.
    Replay { trace: PathBuf },
    /// Check a config file and print its hash.
    ValidateConfig {
        /// Print the effective config as JSON instead.
        #[arg(long)]
        print: bool,
    },
    /// Regenerate the artifacts described by a manifest into `--out`.
    Rerun { manifest: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    EgoInitial,
    Guiding,
    Meta,
    EgoFinal,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::EgoInitial => Stage::EgoInitial,
            StageArg::Guiding => Stage::Guiding,
            StageArg::Meta => Stage::Meta,
            StageArg::EgoFinal => Stage::EgoFinal,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Train the meta stage without guides (or the ego against such traffic).
    #[arg(long)]
    no_guides: bool,
    /// Stage budget in learning-agent records.
    #[arg(long)]
    budget: Option<u64>,
    /// Multiplies the stage budget and the autoencoder window count.
    #[arg(long, default_value_t = 1.0)]
    budget_scale: f64,
    /// Stop after this many PPO iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Guide weight for the meta stage.
    #[arg(long)]
    reg_weight: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetaArg {
    Meta,
    MetaWog,
}

impl From<MetaArg> for Guidance {
    fn from(m: MetaArg) -> Guidance {
        match m {
            MetaArg::Meta => Guidance::Guided,
            MetaArg::MetaWog => Guidance::Unguided,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    Guiding,
    Meta,
    MetaWog,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// KL divergence between the meta-policy and the nearest guide.
    Kl {
        #[arg(long, value_enum, default_value = "meta")]
        policy: MetaArg,
        /// Directory holding the checkpoints (defaults to `--out`).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Mean social reward across the preference grid.
    Sweep {
        #[arg(long, value_enum, default_value = "meta")]
        policy: MetaArg,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Desired speed at the scripted merge scene.
    Probe {
        #[arg(long, value_enum, default_value = "meta")]
        policy: ProbeArg,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Outcome rates of every ego against every traffic family.
    Cross {
        #[arg(long)]
        run: Option<PathBuf>,
        /// Episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Number of evaluation seeds, counted from `--seed`.
        #[arg(long)]
        seeds: Option<u64>,
        /// Write one JSONL trace per (ego, family, seed).
        #[arg(long)]
        trace: bool,
    },
}

fn load_config(path: Option<&Path>) -> gmrl::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn apply_train_overrides(cfg: &mut Config, stage: Stage, a: &TrainArgs) -> gmrl::Result<()> {
    let settings = match stage {
        Stage::EgoInitial => &mut cfg.stages.ego_initial,
        Stage::Guiding => &mut cfg.stages.guiding,
        Stage::Meta => &mut cfg.stages.meta,
        Stage::EgoFinal => &mut cfg.stages.ego_final,
    };
    if let Some(b) = a.budget {
        settings.budget = b;
    }
    if let Some(lr) = a.lr {
        settings.ppo.lr = Some(lr);
    }
    cfg.validate()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    let seed = cli.seed;
    let workers = cli.workers.max(1);
    let out = cli.out;
    match cli.command {
        Command::ValidateConfig { print } => {
            if print {
                println!("{}", config.to_json());
            } else {
                println!("config ok, hash {}", config.hash());
            }
        }
        Command::Train { stage, opts } => {
            let stage = Stage::from(stage);
            apply_train_overrides(&mut config, stage, &opts)?;
            let job = if opts.no_guides { StageJob::unguided(stage) } else { StageJob::new(stage) };
            let train_opts =
                TrainOptions { budget_scale: opts.budget_scale, max_iterations: opts.iterations, reg_weight: opts.reg_weight };
            let s = Session { config, seed, out, workers };
            let report = app::train(&s, job, &train_opts)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Eval { kind } => {
            let s = Session { config, seed, out, workers };
            let run_dir = |r: Option<PathBuf>| r.unwrap_or_else(|| s.out.clone());
            match kind {
                EvalCommand::Kl { policy, run, samples } => {
                    let n = samples.unwrap_or(s.config.eval.kl_samples);
                    let r = app::eval_kl(&s, &run_dir(run), policy.into(), n)?;
                    for p in &r.points {
                        println!("beta {:>5.2}  anchor {:>5.2}  kl {:.5}  samples {}", p.beta, p.anchor, p.kl, p.samples);
                    }
                }
                EvalCommand::Sweep { policy, run, steps } => {
                    let n = steps.unwrap_or(s.config.eval.sweep_steps);
                    let r = app::eval_sweep(&s, &run_dir(run), policy.into(), n)?;
                    for p in &r.points {
                        println!("beta {:>5.2}  reward {:.5} ± {:.5}", p.beta, p.mean_reward, p.stderr);
                    }
                }
                EvalCommand::Probe { policy, run } => {
                    let target = match policy {
                        ProbeArg::Guiding => ProbeTarget::Guiding,
                        ProbeArg::Meta => ProbeTarget::Meta,
                        ProbeArg::MetaWog => ProbeTarget::MetaWog,
                    };
                    let r = app::eval_probe(&s, &run_dir(run), target)?;
                    for p in &r.points {
                        println!("beta {:>5.2}  desired speed {}", p.beta, p.desired_speed);
                    }
                }
                EvalCommand::Cross { run, episodes, seeds, trace } => {
                    let episodes = episodes.unwrap_or(s.config.eval.cross_episodes);
                    let seeds: Vec<u64> = match seeds {
                        Some(n) => (seed..seed + n).collect(),
                        None => s.config.eval.cross_seeds.clone(),
                    };
                    let r = app::eval_cross(&s, &run_dir(run), episodes, &seeds, trace)?;
                    for c in &r.cells {
                        println!(
                            "{:<9} vs {:<12} success {:.3}  collision {:.3}  timeout {:.3}{}",
                            c.ego,
                            c.family.name(),
                            c.success_rate,
                            c.collision_rate,
                            c.timeout_rate,
                            if c.ood { "  (ood)" } else { "" }
                        );
                    }
                }
            }
        }
        Command::Replay { trace } => {
            let summary = app::replay_trace(&config, &trace).with_context(|| format!("replaying {}", trace.display()))?;
            println!("{} episodes, {} steps verified", summary.episodes, summary.steps_verified);
        }
        Command::Rerun { manifest } => {
            let m = RunManifest::load(&manifest)?;
            app::rerun(&m, &out, workers)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<gmrl::Error>() {
        Some(e @ gmrl::Error::InvalidConfig(_)) => (3, e.class()),
        Some(e @ gmrl::Error::MissingPrerequisite { .. }) => (4, e.class()),
        Some(e) => (1, e.class()),
        None => (1, "other"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, class) = exit_code(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{class}]: {msg}");
            ExitCode::from(code)
        }
    }
}
