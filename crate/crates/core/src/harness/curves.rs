use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::learn::LearningRecord;
use crate::error::{Error, Result};
use crate::inference::{InferenceMethod, ModelUncertainty};

/// One row of a learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub experience_s: f64,
    pub mean_success: f64,
    /// Sample standard deviation across seeds divided by `√seeds`; 0 for a single seed.
    pub stderr: f64,
    pub seeds: usize,
}

/// Group key `(task, inference method, model)` used for file names.
pub fn curve_label(r: &LearningRecord) -> String {
    let method = match r.propagation.method {
        InferenceMethod::MomentMatch => "moment_match",
        InferenceMethod::Linearize => "linearize",
    };
    let model = match r.propagation.uncertainty {
        ModelUncertainty::Bayesian => "bayesian",
        ModelUncertainty::DeterministicMean => "deterministic_mean",
    };
    format!("{}_{method}_{model}", r.task)
}

/// Average success rate per episode across records; a seed that stopped early keeps its last
/// success rate for the remaining episodes.
pub fn learning_curve(records: &[&LearningRecord]) -> Vec<CurvePoint> {
    let len = records.iter().map(|r| r.episodes.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let rates: Vec<f64> = records
                .iter()
                .filter_map(|r| r.episodes.get(i).or(r.episodes.last()).map(|e| e.success_rate))
                .collect();
            let experience_s = records
                .iter()
                .filter_map(|r| r.episodes.get(i))
                .map(|e| e.experience_s)
                .next()
                .unwrap_or(f64::NAN);
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let stderr = if rates.len() > 1 {
                (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            CurvePoint { experience_s, mean_success: mean, stderr, seeds: rates.len() }
        })
        .collect()
}

pub fn curve_tsv(points: &[CurvePoint]) -> String {
    let mut out = String::from("experience_s\tmean_success\tstderr\tseeds\n");
    for p in points {
        writeln!(out, "{:.3}\t{:.6}\t{:.6}\t{}", p.experience_s, p.mean_success, p.stderr, p.seeds).unwrap();
    }
    out
}

/// Write one curve file per `(task, inference method, model)` into `dir`.
pub fn emit_curves(records: &[LearningRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Domain("no learning records".into()));
    }
    let mut groups: BTreeMap<String, Vec<&LearningRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(curve_label(r)).or_default().push(r);
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (label, recs) in groups {
        let path = dir.join(format!("curve_{label}.tsv"));
        std::fs::write(&path, curve_tsv(&learning_curve(&recs)))?;
        written.push(path);
    }
    Ok(written)
}

/// Load every `*.record.json` file in `dir`.
pub fn load_records(dir: &Path) -> Result<Vec<LearningRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".record.json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::learn::EpisodeRecord;
    use crate::optimizer::Termination;
    use crate::rollout::Propagation;

    fn record(seed: u64, rates: &[f64]) -> LearningRecord {
        LearningRecord {
            name: "t".into(),
            task: "cartpole".into(),
            propagation: Propagation::default(),
            seed,
            success_count: 18,
            episodes: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| EpisodeRecord {
                    episode: i + 1,
                    data_points: 25 * (i + 1),
                    experience_s: 2.5 * (i + 1) as f64,
                    predicted_cost: 0.0,
                    episode_cost: 0.0,
                    successes: (r * 20.0) as usize,
                    test_rollouts: 20,
                    success_rate: r,
                    optim_iterations: 0,
                    optim_evaluations: 0,
                    termination: Termination::MaxIterations,
                    policy_reinits: 0,
                    wall_time_s: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn single_seed_has_zero_stderr() {
        let r = record(1, &[0.0, 0.5, 1.0]);
        let c = learning_curve(&[&r]);
        assert!(c.iter().all(|p| p.stderr == 0.0));
        assert_eq!(c.iter().map(|p| p.experience_s).collect::<Vec<_>>(), vec![2.5, 5.0, 7.5]);
    }

    #[test]
    fn stderr_is_sample_sd_over_root_n() {
        let rates = [0.1, 0.3, 0.2, 0.9, 1.0, 0.0, 0.5, 0.4];
        let recs: Vec<LearningRecord> = rates.iter().enumerate().map(|(i, &r)| record(i as u64, &[r])).collect();
        let refs: Vec<&LearningRecord> = recs.iter().collect();
        let c = learning_curve(&refs);
        let mean = rates.iter().sum::<f64>() / 8.0;
        let sd = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        assert!((c[0].stderr - sd / 8f64.sqrt()).abs() < 1e-15);
        assert!((c[0].mean_success - mean).abs() < 1e-15);
    }

    #[test]
    fn first_success_and_files() {
        let r = record(1, &[0.0, 0.95, 0.5]);
        assert_eq!(r.first_success(), Some(2));
        assert!(r.solved_within(2) && !r.solved_within(1));
        let dir = std::env::temp_dir().join(format!("pilco_curves_{}", std::process::id()));
        let files = emit_curves(&[r.clone(), record(2, &[0.0, 0.0, 1.0])], &dir).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap().lines().count(), 4);
        std::fs::remove_dir_all(&dir).ok();
    }
}
