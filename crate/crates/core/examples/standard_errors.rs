//! Sandwich standard errors, robust versus classical.
//!
//! ```bash
//! cargo run --example standard_errors
//! ```

use dgwr::estimator::fit_all;
use dgwr::inference::sandwich_covariance;
use dgwr::sim::{generate, replication_rng, ScenarioConfig};
use dgwr::{FitConfig, KernelSpec};

pub fn run_example() -> dgwr::Result<()> {
    let cfg = ScenarioConfig {
        n: 100,
        omega: 0.05,
        seed: 5,
        ..ScenarioConfig::default()
    };
    let data = generate(&cfg, &mut replication_rng(cfg.seed, 0))?;
    let ds = &data.dataset;
    let kernel = KernelSpec::gaussian(0.6)?;

    for gamma in [0.0, 0.3] {
        let config = FitConfig::new(gamma, kernel);
        let estimates = fit_all(ds, &config)?;
        let cov = sandwich_covariance(ds, &estimates, &config)?;
        println!("gamma = {gamma}");
        for (i, se) in cov.std_errors().iter().enumerate().take(5) {
            match se {
                Some(se) => println!(
                    "  i={i} beta_1 = {:.3} (se {:.3})  beta_2 = {:.3} (se {:.3})",
                    estimates[i].beta[1], se[1], estimates[i].beta[2], se[2]
                ),
                None => println!("  i={i} standard errors unavailable"),
            }
        }
    }
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
