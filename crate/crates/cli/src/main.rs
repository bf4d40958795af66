use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hlas_cli::config::ExperimentConfig;
use hlas_cli::{run_eval, run_gradcheck, run_plan, run_train, CliResult, RunConfig};

/// Reentry trajectory planning with high-level actions and PPO.
#[derive(Parser, Debug)]
#[command(name = "hlas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy for a step budget.
    Train(Flags),
    /// Evaluate a checkpoint over perturbed initial conditions.
    Eval(Flags),
    /// Plan one trajectory with a checkpoint and write it as CSV.
    Plan(Flags),
    /// Check analytic gradients against finite differences.
    Gradcheck(Flags),
}

/// Unset flags fall back to the config file's `[cli]` table.
#[derive(Args, Debug)]
struct Flags {
    /// Experiment config file.
    #[arg(long, default_value = "configs/experiment.toml")]
    config: PathBuf,
    /// Seed for initialization, sampling and initial conditions.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy checkpoint to evaluate, plan with or resume from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation episodes.
    #[arg(long)]
    n_episodes: Option<usize>,
    /// Multiplier on the initial-condition perturbation widths.
    #[arg(long)]
    ic_scale: Option<f64>,
    /// Problem name from the config.
    #[arg(long)]
    problem: Option<String>,
    /// Variant name from the config.
    #[arg(long)]
    variant: Option<String>,
    /// Environment steps to train for.
    #[arg(long)]
    budget_steps: Option<usize>,
    /// Corrupt the named gradient block (gradcheck only).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

impl Flags {
    fn resolve(self, needs_config: bool) -> CliResult<RunConfig> {
        let mut rc = if needs_config {
            let exp = ExperimentConfig::load(&self.config)?;
            RunConfig::from_defaults(self.config.clone(), &exp)
        } else {
            RunConfig {
                config: self.config.clone(),
                seed: 0,
                out: PathBuf::from("runs"),
                problem: String::new(),
                variant: String::new(),
                checkpoint: None,
                n_episodes: 1,
                ic_scale: 0.0,
                budget_steps: 0,
                inject_fault: None,
            }
        };
        if let Some(v) = self.seed {
            rc.seed = v;
        }
        if let Some(v) = self.out {
            rc.out = v;
        }
        if let Some(v) = self.problem {
            rc.problem = v;
        }
        if let Some(v) = self.variant {
            rc.variant = v;
        }
        if let Some(v) = self.n_episodes {
            rc.n_episodes = v;
        }
        if let Some(v) = self.ic_scale {
            rc.ic_scale = v;
        }
        if let Some(v) = self.budget_steps {
            rc.budget_steps = v;
        }
        rc.checkpoint = self.checkpoint;
        rc.inject_fault = self.inject_fault;
        Ok(rc)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(f) => {
            let rc = f.resolve(true)?;
            let s = run_train(&rc)?;
            println!(
                "trained {} iterations, {} env steps, {} episodes ({} goals)",
                s.iterations, s.env_steps, s.episodes, s.goal_episodes
            );
            println!(
                "first-window avg return {}, final-window avg return {}, best {}",
                fmt_opt(s.first_window_avg),
                fmt_opt(s.final_window_avg),
                fmt_opt(s.best_avg_return)
            );
            println!("artifacts in {}", rc.out.display());
        }
        Command::Eval(f) => {
            let rc = f.resolve(true)?;
            let r = run_eval(&rc)?;
            let a = &r.aggregates;
            println!(
                "{} episodes: avg return {:.4}, terminal misses {}, goals {}, mean final latitude {:.3} deg",
                a.n_episodes, a.avg_return, a.terminal_misses, a.goals, a.mean_final_latitude_deg
            );
            println!(
                "nominal IC: latitude {:.3} deg, cause {}, return {:.4}",
                r.nominal.final_latitude_deg, r.nominal.cause, r.nominal.ret
            );
            println!("policy evaluation {:.2e} s per query (informational)", a.mean_policy_eval_s);
        }
        Command::Plan(f) => {
            let rc = f.resolve(true)?;
            let o = run_plan(&rc)?;
            let per_query = o.policy_eval_seconds.iter().sum::<f64>()
                / o.policy_eval_seconds.len().max(1) as f64;
            println!(
                "plan ended by {} after {} action steps, {:.0} s, return {:.4}, final latitude {:.3} deg",
                o.cause,
                o.action_steps,
                o.flight_time,
                o.total_reward,
                o.final_state.phi.to_degrees()
            );
            println!("policy evaluation {per_query:.2e} s per query (informational)");
        }
        Command::Gradcheck(f) => {
            let rc = f.resolve(false)?;
            let report = run_gradcheck(&rc)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

