use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyVariant};
use crate::env::{run_episode_with_rng, success, Controller, Episode};
use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpModel};
use crate::optimizer::{minimize, Termination};
use crate::policy::Policy;
use crate::rollout::{objective, rollout, Propagation, Setup};

/// Independent random stream `stream` of a seed.
fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_POLICY: u64 = 1;
const STREAM_RANDOM_EPISODE: u64 = 2;
const STREAM_REINIT: u64 = 3;
const STREAM_EPISODE_BASE: u64 = 1_000;
const STREAM_TEST_BASE: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Transitions the model was trained on for this episode's policy.
    pub data_points: usize,
    /// Seconds of interaction data behind this episode's policy.
    pub experience_s: f64,
    /// Predicted long-term cost of the optimized policy.
    pub predicted_cost: f64,
    /// Cost accumulated along the applied episode, `Σ_t c(x_t)`.
    pub episode_cost: f64,
    pub successes: usize,
    pub test_rollouts: usize,
    pub success_rate: f64,
    pub optim_iterations: usize,
    pub optim_evaluations: usize,
    pub termination: Termination,
    pub policy_reinits: usize,
    /// Wall-clock time is logged but kept out of the record so records are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRecord {
    pub name: String,
    pub task: String,
    pub propagation: Propagation,
    pub seed: u64,
    pub success_count: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl LearningRecord {
    /// First episode whose policy met the success criterion.
    pub fn first_success(&self) -> Option<usize> {
        self.episodes.iter().find(|e| e.successes >= self.success_count).map(|e| e.episode)
    }

    pub fn solved_within(&self, episodes: usize) -> bool {
        self.first_success().is_some_and(|k| k <= episodes)
    }

    pub fn final_success_rate(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.success_rate)
    }
}

/// Outcome of one seed: the record plus the final artifacts.
pub struct SeedRun {
    pub record: LearningRecord,
    pub policy: Policy,
    pub model: GpModel,
    pub episodes: Vec<Episode>,
}

fn initial_policy(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Policy> {
    let env = &cfg.env;
    match cfg.policy.variant {
        PolicyVariant::Rbf => Policy::random_rbf(
            env.augmentation(),
            cfg.policy.n_basis,
            env.u_max_vector(),
            &env.init_belief()?,
            cfg.policy.target_scale,
            rng,
        ),
        PolicyVariant::Linear => Policy::random_linear(env.augmentation(), env.u_max_vector(), rng),
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return b.clone();
    }
    let mut out = a.clone().resize_vertically(a.nrows() + b.nrows(), 0.0);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

fn log_line(log: &mut Option<&mut dyn Write>, value: serde_json::Value) -> Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{value}")?;
    }
    Ok(())
}

/// The episodic loop for one seed: random episode, then repeatedly fit the model,
/// optimize the policy on predicted rollouts, apply it, and evaluate it.
pub fn learn_seed(cfg: &ExperimentConfig, seed: u64, mut log: Option<&mut dyn Write>) -> Result<SeedRun> {
    cfg.validate()?;
    let env = &cfg.env;
    let cost = env.state_cost(cfg.ucb_kappa)?;
    let init = env.init_belief()?;
    let horizon = env.horizon_steps();
    let propagation = Propagation { method: cfg.inference, uncertainty: cfg.model };

    let mut policy = initial_policy(cfg, &mut stream(seed, STREAM_POLICY))?;
    let mut reinit_rng = stream(seed, STREAM_REINIT);
    let first = run_episode_with_rng(env, &Controller::Random, &mut stream(seed, STREAM_RANDOM_EPISODE), seed)?;
    let (mut inputs, mut targets) = first.transitions();
    let mut episodes = vec![first];
    let mut hyper: Option<Vec<GpHyperparams>> = None;
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut model = None;
    let success_count = cfg.success_count;

    for k in 1..=cfg.episodes {
        let started = Instant::now();
        let fit = cfg.gp_fit.settings(hyper.is_none(), seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let gp = GpModel::fit(inputs.clone(), targets.clone(), hyper.clone(), &fit)?;
        hyper = Some(gp.hyperparams());
        let fit_s = started.elapsed().as_secs_f64();

        let mut reinits = 0;
        let result = loop {
            let setup = Setup::new(&gp, &policy, &cost, propagation)?;
            match objective(&setup, &init, horizon, &policy.theta()) {
                Ok(_) => {}
                Err(Error::Diverged { .. } | Error::NotPsd { .. } | Error::Singular { .. } | Error::NonFinite(_))
                    if reinits < cfg.max_policy_reinits =>
                {
                    reinits += 1;
                    policy = initial_policy(cfg, &mut reinit_rng)?;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let res = minimize(
                |theta| objective(&setup, &init, horizon, theta).unwrap_or_else(|_| (f64::INFINITY, DVector::zeros(theta.len()))),
                &policy.theta(),
                &cfg.policy_optim,
            )?;
            break res;
        };
        policy = policy.with_theta(&result.x)?;
        let optim_s = started.elapsed().as_secs_f64() - fit_s;

        let data_points = gp.len();
        let applied = run_episode_with_rng(env, &Controller::Policy(&policy), &mut stream(seed, STREAM_EPISODE_BASE + k as u64), seed)?;
        let episode_cost = (0..applied.states.nrows()).map(|t| cost.at_state(&applied.state(t))).sum();
        let (x, y) = applied.transitions();
        inputs = stack(&inputs, &x);
        targets = stack(&targets, &y);
        episodes.push(applied);

        let mut successes = 0;
        for i in 0..cfg.test_rollouts {
            let mut rng = stream(seed, STREAM_TEST_BASE + (k * 10_000 + i) as u64);
            if success(&run_episode_with_rng(env, &Controller::Policy(&policy), &mut rng, seed)?, env) {
                successes += 1;
            }
        }
        let rec = EpisodeRecord {
            episode: k,
            data_points,
            experience_s: data_points as f64 * env.dt_control,
            predicted_cost: result.value,
            episode_cost,
            successes,
            test_rollouts: cfg.test_rollouts,
            success_rate: if cfg.test_rollouts > 0 { successes as f64 / cfg.test_rollouts as f64 } else { 0.0 },
            optim_iterations: result.trace.len().saturating_sub(1),
            optim_evaluations: result.evaluations,
            termination: result.termination,
            policy_reinits: reinits,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log_line(
            &mut log,
            serde_json::json!({
                "seed": seed,
                "record": &rec,
                "wall_time_s": rec.wall_time_s,
                "fit_s": fit_s,
                "optim_s": optim_s,
                "objective_first": result.trace.first().map(|t| t.value),
                "objective_last": result.value,
                "noise_var": gp.hyperparams().iter().map(|h| h.noise_var()).collect::<Vec<_>>(),
            }),
        )?;
        let solved = rec.successes >= success_count;
        records.push(rec);
        model = Some(gp);
        if solved && cfg.stop_on_success {
            break;
        }
    }
    let record = LearningRecord {
        name: cfg.name.clone(),
        task: cfg.task().into(),
        propagation,
        seed,
        success_count,
        episodes: records,
    };
    Ok(SeedRun { record, policy, model: model.expect("at least one episode"), episodes })
}

/// Run every seed of the config, writing artifacts under `out` when given.
pub fn learn(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<LearningRecord>> {
    let mut records = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = match out {
            Some(dir) => {
                let seed_dir = dir.join(format!("{}_seed{seed}", cfg.name));
                std::fs::create_dir_all(seed_dir.join("episodes"))?;
                let mut log = std::fs::File::create(seed_dir.join("log.jsonl"))?;
                let run = learn_seed(cfg, seed, Some(&mut log))?;
                write_artifacts(cfg, &run, &seed_dir)?;
                std::fs::write(dir.join(format!("{}_seed{seed}.record.json", cfg.name)), serde_json::to_string_pretty(&run.record)?)?;
                run
            }
            None => learn_seed(cfg, seed, None)?,
        };
        records.push(run.record);
    }
    Ok(records)
}

fn write_artifacts(cfg: &ExperimentConfig, run: &SeedRun, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("policy.json"), run.policy.to_json()?)?;
    std::fs::write(dir.join("model.json"), run.model.to_json()?)?;
    for (i, ep) in run.episodes.iter().enumerate() {
        std::fs::write(dir.join("episodes").join(format!("episode_{i:02}.tsv")), ep.to_tsv())?;
    }
    let cost = cfg.env.state_cost(cfg.ucb_kappa)?;
    let propagation = Propagation { method: cfg.inference, uncertainty: cfg.model };
    let setup = Setup::new(&run.model, &run.policy, &cost, propagation)?;
    if let Ok(pred) = rollout(&setup, &cfg.env.init_belief()?, cfg.env.horizon_steps(), false) {
        std::fs::write(dir.join("predicted_rollout.tsv"), pred.to_tsv(cfg.env.dt_control))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::OptimSettings;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::cartpole();
        cfg.episodes = 1;
        cfg.test_rollouts = 2;
        cfg.success_count = 2;
        cfg.policy.n_basis = 5;
        cfg.env.horizon_seconds = 0.8;
        cfg.policy_optim = OptimSettings { max_iters: 3, ..OptimSettings::default() };
        cfg.gp_fit.restarts_first = 0;
        cfg.gp_fit.optim.max_iters = 20;
        cfg
    }

    #[test]
    fn one_episode_loop_contract_and_determinism() {
        let cfg = tiny();
        let a = learn_seed(&cfg, 11, None).unwrap();
        assert_eq!(a.episodes.len(), 2);
        assert_eq!(a.record.episodes.len(), 1);
        assert_eq!(a.record.episodes[0].data_points, 8);
        assert!((a.record.episodes[0].experience_s - 0.8).abs() < 1e-12);
        let b = learn_seed(&cfg, 11, None).unwrap();
        assert_eq!(serde_json::to_string(&a.record).unwrap(), serde_json::to_string(&b.record).unwrap());
    }

    #[test]
    fn data_grows_by_one_episode_per_iteration() {
        let mut cfg = tiny();
        cfg.episodes = 2;
        let run = learn_seed(&cfg, 12, None).unwrap();
        let pts: Vec<usize> = run.record.episodes.iter().map(|e| e.data_points).collect();
        assert_eq!(pts, vec![8, 16]);
        assert_eq!(run.model.len(), 16);
    }
}
