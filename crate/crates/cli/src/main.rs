use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use maskgoal::harness::{
    evaluate_objects, load_agent, render_command, run_eval, run_pickup_eval, run_training, AgentPolicy, EvalReport,
    IdlePolicy, Policy, RandomPolicy, RunConfig, ScriptedOracle,
};
use maskgoal::Error;

#[derive(Parser)]
#[command(
    name = "maskgoal",
    version,
    about = "Train and evaluate mask-conditioned reaching agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Synchronous learner; outputs depend only on config and seed.
        #[arg(long)]
        deterministic: bool,
        /// Output directory, overriding run.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds, overriding run.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Environment steps per seed, overriding run.total_steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Per-object reach trials for a checkpoint or a built-in policy.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<BuiltinPolicy>,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        /// Also evaluate the held-out objects.
        #[arg(long)]
        holdout: bool,
        /// Seed selecting the held-out objects for built-in policies.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for trials.csv and objects.csv; defaults to <checkpoint>/eval.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-object pick-up trials for a checkpoint or a built-in policy.
    PickupEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<BuiltinPolicy>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Seed selecting the held-out objects for built-in policies.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump frames, masks and per-family rewards along a scripted approach.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Burn the reward ROI rectangle into the mask images.
        #[arg(long)]
        roi: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinPolicy {
    Scripted,
    NeverClose,
    /// All-zero joint command.
    Idle,
    Random,
}

fn builtin(p: BuiltinPolicy, seed: u64) -> Box<dyn Policy> {
    match p {
        BuiltinPolicy::Scripted => Box::new(ScriptedOracle::default()),
        BuiltinPolicy::NeverClose => Box::new(ScriptedOracle::never_close()),
        BuiltinPolicy::Idle => Box::new(IdlePolicy),
        BuiltinPolicy::Random => Box::new(RandomPolicy::new(seed)),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Io { .. } => 2,
        Error::State(_) | Error::Training { .. } => 3,
    }
}

fn print_report(report: &EvalReport) {
    println!("object,held_out,trials,successes,success_rate,mean_final_distance");
    for r in report.train.iter().chain(&report.holdout) {
        println!(
            "{},{},{},{},{:.4},{:.4}",
            r.object_id,
            r.held_out,
            r.trials,
            r.successes,
            r.success_rate(),
            r.mean_final_distance
        );
    }
    println!("train success {:.4}", report.overall_success(false));
    if !report.holdout.is_empty() {
        println!("holdout success {:.4}", report.overall_success(true));
    }
}

fn default_out(checkpoint: Option<&Path>, name: &str) -> PathBuf {
    checkpoint.map_or_else(|| PathBuf::from(name), |c| c.join(name))
}

fn run(cli: Cli) -> maskgoal::Result<()> {
    match cli.command {
        Command::Train {
            config,
            deterministic,
            out,
            seeds,
            steps,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.run.deterministic |= deterministic;
            if let Some(s) = seeds {
                cfg.run.seeds = s;
            }
            if let Some(n) = steps {
                cfg.run.total_steps = n;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.run.output_dir.clone());
            let outcomes = run_training(&cfg, &out, &mut |line| eprintln!("{line}"))?;
            for o in outcomes {
                println!(
                    "seed {}: {} steps, best success {:.2}, dir {}",
                    o.seed,
                    o.steps,
                    o.best_success(),
                    o.dir.display()
                );
            }
        }
        Command::Eval {
            config,
            checkpoint,
            policy,
            trials,
            holdout,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let report = match (&checkpoint, policy) {
                (Some(c), _) => run_eval(c, &cfg, trials, holdout)?,
                (None, Some(p)) => {
                    let split = cfg.split(seed);
                    let held: &[usize] = if holdout { &split.holdout } else { &[] };
                    evaluate_objects(&cfg, &split.train, held, trials, builtin(p, seed).as_mut())?
                }
                (None, None) => return Err(Error::Input("eval needs --checkpoint or --policy".into())),
            };
            report.write(&out.unwrap_or_else(|| default_out(checkpoint.as_deref(), "eval")))?;
            print_report(&report);
        }
        Command::PickupEval {
            config,
            checkpoint,
            policy,
            trials,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let report = match (&checkpoint, policy) {
                (Some(c), _) => {
                    let (agent, split) = load_agent(c, &cfg)?;
                    run_pickup_eval(&cfg, &split, trials, &mut AgentPolicy::new(&agent))?
                }
                (None, Some(p)) => run_pickup_eval(&cfg, &cfg.split(seed), trials, builtin(p, seed).as_mut())?,
                (None, None) => return Err(Error::Input("pickup-eval needs --checkpoint or --policy".into())),
            };
            report.write(&out.unwrap_or_else(|| default_out(checkpoint.as_deref(), "pickup-eval")))?;
            print_report(&report);
        }
        Command::Render {
            config,
            seed,
            steps,
            out,
            roi,
        } => {
            let cfg = RunConfig::load(&config)?;
            let rows = render_command(&cfg, seed, steps, &out, roi)?;
            println!("wrote {} frames to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
