use std::process::Command;

fn pilco(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pilco")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pilco(&[]).0, 1);
    assert_eq!(pilco(&["frobnicate"]).0, 1);
    assert_eq!(pilco(&["grad-check", "--subject", "nope"]).0, 1);
    assert_eq!(pilco(&["oracle-check", "--samples", "10"]).0, 1);
    assert_eq!(pilco(&["learn", "/nonexistent/config.toml"]).0, 1);
    assert_eq!(pilco(&["--help"]).0, 0);
}

#[test]
fn grad_check_passes() {
    let (code, out, _) = pilco(&["grad-check", "--subject", "cost", "--trials", "3"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("PASS"));
}

#[test]
fn learn_rollout_and_curves() {
    let dir = scratch("cli_learn");
    let cfg = pilco::harness::ExperimentConfig {
        name: "tiny".into(),
        episodes: 1,
        test_rollouts: 2,
        success_count: 2,
        seeds: vec![4],
        policy: pilco::harness::PolicyConfig { n_basis: 4, ..Default::default() },
        policy_optim: pilco::optimizer::OptimSettings { max_iters: 3, ..Default::default() },
        ..pilco::harness::ExperimentConfig::cartpole()
    };
    let cfg_path = dir.join("tiny.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let out_dir = dir.join("out");
    let (code, out, err) = pilco(&["learn", cfg_path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}{err}");

    let policy = out_dir.join("tiny_seed4/policy.json");
    let model = out_dir.join("tiny_seed4/model.json");
    let (code, out, _) = pilco(&["rollout", "--policy", policy.to_str().unwrap(), "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 1 + 26);
    let (code, out, _) = pilco(&["rollout", "--policy", policy.to_str().unwrap(), "--model", model.to_str().unwrap(), "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.lines().count() >= 26);

    let (code, out, _) = pilco(&["curves", out_dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    let curve = std::fs::read_to_string(out.trim()).unwrap();
    assert!(curve.starts_with("experience_s\tmean_success\tstderr"));
}
