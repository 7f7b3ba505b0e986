//! Print the built-in experiment configs as TOML, or write them into a directory.
//!
//! cargo run --example default_configs -- configs/

use pilco::harness::ExperimentConfig;
use pilco::inference::{InferenceMethod, ModelUncertainty};

fn main() -> pilco::Result<()> {
    let cartpole = ExperimentConfig::cartpole();
    let linearize = ExperimentConfig { name: "cartpole_linearize".into(), inference: InferenceMethod::Linearize, ..cartpole.clone() };
    let deterministic = ExperimentConfig { name: "cartpole_deterministic".into(), model: ModelUncertainty::DeterministicMean, ..cartpole.clone() };
    let configs = [cartpole, linearize, deterministic, ExperimentConfig::double_pendulum()];

    match std::env::args().nth(1) {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            for c in &configs {
                let path = std::path::Path::new(&dir).join(format!("{}.toml", c.name));
                std::fs::write(&path, c.to_toml()?)?;
                println!("{}", path.display());
            }
        }
        None => {
            for c in &configs {
                println!("# {}\n{}", c.name, c.to_toml()?);
            }
        }
    }
    Ok(())
}
