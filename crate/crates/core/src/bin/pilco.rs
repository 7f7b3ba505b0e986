use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use pilco::env::{run_episode, success, Controller, EnvSpec};
use pilco::gp::GpModel;
use pilco::harness::{self, ExperimentConfig, GradSubject, OracleSubject};
use pilco::policy::Policy;
use pilco::rollout::{rollout, Setup};
use pilco::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "pilco", version, about = "Model-based policy search with Gaussian-process dynamics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the episodic learning loop for every seed in a config file.
    Learn {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare closed-form moments against Monte Carlo.
    OracleCheck {
        /// moment_match, squash_moments, expected_cost, step or all.
        #[arg(long, default_value = "all")]
        subject: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic derivatives against finite differences.
    GradCheck {
        /// rollout, policy, cost, evidence, inference or all.
        #[arg(long, default_value = "all")]
        subject: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a saved policy on the simulator, or through a saved model with `--model`.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        /// Experiment config providing the environment (defaults to cart-pole).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the trajectory table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn `*.record.json` files in a directory into learning-curve tables.
    Curves {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Verify(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) | Error::Dimension(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

fn subjects<T: std::str::FromStr<Err = Error> + Copy>(s: &str, all: &[T]) -> Result<Vec<T>, Failure> {
    if s == "all" {
        Ok(all.to_vec())
    } else {
        Ok(vec![s.parse()?])
    }
}

fn report_all(reports: Vec<harness::CheckReport>) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed.push(r.subject.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("failed: {}", failed.join(", "))))
    }
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::from(Error::Io(e))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Learn { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
            let records = harness::learn(&cfg, Some(&out))?;
            for r in &records {
                let first = r.first_success().map_or("never".to_string(), |k| format!("episode {k}"));
                println!("seed {}: solved {first}, final success {:.2}", r.seed, r.final_success_rate());
            }
            harness::emit_curves(&records, &out)?;
            info!("results in {}", out.display());
            Ok(())
        }
        Cmd::OracleCheck { subject, trials, samples, seed } => {
            let reports = subjects(&subject, &OracleSubject::ALL)?
                .into_iter()
                .map(|s| harness::oracle_check(s, trials, samples, seed))
                .collect::<Result<Vec<_>, _>>()?;
            report_all(reports)
        }
        Cmd::GradCheck { subject, trials, seed } => {
            let reports = subjects(&subject, &GradSubject::ALL)?
                .into_iter()
                .map(|s| harness::grad_check(s, trials, seed))
                .collect::<Result<Vec<_>, _>>()?;
            report_all(reports)
        }
        Cmd::Rollout { policy, config, model, seed, out } => {
            let policy = Policy::from_json(&std::fs::read_to_string(&policy).map_err(Error::from)?)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::cartpole(),
            };
            let env: &EnvSpec = &cfg.env;
            match model {
                Some(m) => {
                    let model = GpModel::from_json(&std::fs::read_to_string(&m).map_err(Error::from)?)?;
                    let cost = env.state_cost(cfg.ucb_kappa)?;
                    let prop = pilco::rollout::Propagation { method: cfg.inference, uncertainty: cfg.model };
                    let setup = Setup::new(&model, &policy, &cost, prop)?;
                    let r = rollout(&setup, &env.init_belief()?, env.horizon_steps(), false)?;
                    eprintln!("predicted long-term cost {:.6}", r.total_cost);
                    write_or_print(&r.to_tsv(env.dt_control), out.as_deref())
                }
                None => {
                    let ep = run_episode(env, &Controller::Policy(&policy), seed)?;
                    eprintln!("success {}", success(&ep, env));
                    write_or_print(&ep.to_tsv(), out.as_deref())
                }
            }
        }
        Cmd::Curves { dir, out } => {
            let records = harness::load_records(&dir)?;
            for p in harness::emit_curves(&records, out.as_deref().unwrap_or(&dir))? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verify(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Numeric(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
