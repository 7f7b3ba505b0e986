//! A short cart-pole learning run with one seed, printing the per-episode record.
//!
//! cargo run --release --example learn_cartpole -- [episodes] [seed]

use pilco::harness::{learn_seed, ExperimentConfig};

fn main() -> pilco::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig { episodes, seeds: vec![seed], ..ExperimentConfig::cartpole() };

    let run = learn_seed(&cfg, seed, None)?;
    println!("{:>3} {:>6} {:>8} {:>10} {:>10} {:>8}", "ep", "data", "exp [s]", "predicted", "actual", "success");
    for e in &run.record.episodes {
        println!(
            "{:>3} {:>6} {:>8.1} {:>10.3} {:>10.3} {:>8.2}",
            e.episode, e.data_points, e.experience_s, e.predicted_cost, e.episode_cost, e.success_rate
        );
    }
    match run.record.first_success() {
        Some(k) => println!("solved after episode {k}"),
        None => println!("not solved in {episodes} episodes"),
    }
    Ok(())
}
