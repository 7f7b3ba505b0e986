//! Aggregate learning records from `pilco learn` runs into mean success curves.
//!
//! cargo run --example learning_curves -- <dir with *.record.json>

use pilco::harness::{curve_label, learning_curve, load_records};

fn main() -> pilco::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "runs".into());
    let records = load_records(std::path::Path::new(&dir))?;
    if records.is_empty() {
        println!("no *.record.json files in {dir}");
        return Ok(());
    }
    let mut labels: Vec<String> = records.iter().map(curve_label).collect();
    labels.sort();
    labels.dedup();
    for label in labels {
        let group: Vec<_> = records.iter().filter(|r| curve_label(r) == label).collect();
        println!("{label} ({} seeds)", group.len());
        for p in learning_curve(&group) {
            println!("  {:>6.1} s  {:.3} ± {:.3}", p.experience_s, p.mean_success, 1.96 * p.stderr);
        }
    }
    Ok(())
}
