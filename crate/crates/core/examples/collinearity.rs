//! Local condition numbers of the kernel-weighted covariate moment matrix
//! and how many locations exceed 30 as the bandwidth grows.
//!
//! ```bash
//! cargo run --release --example collinearity
//! ```

use dgwr::inference::{condition_numbers, COLLINEARITY_WARNING_LEVEL};
use dgwr::sim::{collinearity_counts, generate, replication_rng, ScenarioConfig};
use dgwr::KernelSpec;

pub fn run_example() -> dgwr::Result<()> {
    let bandwidths: Vec<f64> = (1..=9).map(|k| 0.05 * (k + 1) as f64).collect();
    println!("locations with CN > {COLLINEARITY_WARNING_LEVEL}");
    print!("{:>6}", "phi");
    for h in &bandwidths {
        print!("{h:>6.2}");
    }
    println!();
    for phi in [0.2, 0.4, 0.8] {
        let cfg = ScenarioConfig {
            n: 150,
            phi,
            seed: 1,
            ..ScenarioConfig::default()
        };
        print!("{phi:>6}");
        for c in collinearity_counts(&cfg, &bandwidths)? {
            print!("{c:>6}");
        }
        println!();
    }

    // per-location values for one configuration
    let cfg = ScenarioConfig {
        n: 150,
        seed: 1,
        ..ScenarioConfig::default()
    };
    let data = generate(&cfg, &mut replication_rng(cfg.seed, 0))?;
    let cn = condition_numbers(&data.dataset, &KernelSpec::gaussian(0.3)?, false)?;
    let worst = cn.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("h = 0.3: largest local condition number {worst:.1}");
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
