//! Fit local coefficients at a fixed gamma and bandwidth.
//!
//! ```bash
//! cargo run --example basic_fit
//! ```

use dgwr::estimator::fit_all;
use dgwr::sim::{generate, replication_rng, ScenarioConfig};
use dgwr::{FitConfig, KernelSpec};

pub fn run_example() -> dgwr::Result<()> {
    let cfg = ScenarioConfig {
        n: 100,
        omega: 0.05,
        seed: 7,
        ..ScenarioConfig::default()
    };
    let data = generate(&cfg, &mut replication_rng(cfg.seed, 0))?;
    let ds = &data.dataset;

    let config = FitConfig::new(0.2, KernelSpec::gaussian(0.5)?);
    let estimates = fit_all(ds, &config)?;

    println!("{:>5} {:>9} {:>9} {:>9} {:>9} {:>5}", "i", "beta_0", "beta_1", "beta_2", "sigma2", "iter");
    for (i, e) in estimates.iter().enumerate().take(10) {
        println!(
            "{i:>5} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>5}",
            e.beta[0], e.beta[1], e.beta[2], e.sigma2, e.iterations
        );
    }
    let converged = estimates.iter().filter(|e| e.converged).count();
    println!("{converged}/{} locations converged", estimates.len());
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
