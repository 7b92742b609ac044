//! Flag local outliers from the normalized weights `U_i`.
//!
//! ```bash
//! cargo run --example outlier_detection
//! ```

use dgwr::estimator::fit_all;
use dgwr::inference::{diagnose, DEFAULT_OUTLIER_THRESHOLD};
use dgwr::sim::{generate, replication_rng, ScenarioConfig};
use dgwr::{FitConfig, KernelSpec};

pub fn run_example() -> dgwr::Result<()> {
    let cfg = ScenarioConfig {
        n: 100,
        seed: 11,
        ..ScenarioConfig::default()
    };
    let clean = generate(&cfg, &mut replication_rng(cfg.seed, 0))?;

    let planted = [4, 27, 58, 83];
    let mut y = clean.dataset.response().clone();
    for &i in &planted {
        y[i] += 10.0;
    }
    let ds = clean.dataset.with_response(y)?;

    let kernel = KernelSpec::gaussian(0.5)?;
    let gamma = 0.3;
    let estimates = fit_all(&ds, &FitConfig::new(gamma, kernel))?;
    let diag = diagnose(&ds, &estimates, gamma, &kernel, DEFAULT_OUTLIER_THRESHOLD, false)?;

    println!("planted: {planted:?}");
    for (i, (&u, &flag)) in diag.u.iter().zip(&diag.outlier_flags).enumerate() {
        if flag || planted.contains(&i) {
            println!("i={i:<3} U={u:.2e} flagged={flag}");
        }
    }
    let flagged: Vec<usize> = (0..ds.n()).filter(|&i| diag.outlier_flags[i]).collect();
    println!("flagged: {flagged:?}");
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
