//! Compare GWR and robust GWR on contaminated synthetic data.
//!
//! ```bash
//! cargo run --release --example simulation
//! ```

use dgwr::selection::{BandwidthCandidates, TuningGrid};
use dgwr::sim::{run_replications, Method, Scenario, ScenarioConfig};

pub fn run_example() -> dgwr::Result<()> {
    let grid = TuningGrid {
        gammas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
        bandwidths: BandwidthCandidates::MedianFractions { count: 6 },
    };
    for omega in [0.0, 0.1] {
        let cfg = ScenarioConfig {
            n: 60,
            scenario: Scenario::MeanShift,
            omega,
            seed: 2024,
            ..ScenarioConfig::default()
        };
        let report = run_replications(&cfg, 2, &[Method::Gwr, Method::Dgwr], &grid)?;
        println!("omega = {omega}");
        for s in &report.summaries {
            let median = s.mse.as_ref().map_or(f64::NAN, |m| m.median);
            println!(
                "  {:?}: median MSE {median:.3}, mean gamma {:.3}, mean b {:.3}, {} failed",
                s.method,
                s.mean_gamma.unwrap_or(f64::NAN),
                s.mean_bandwidth.unwrap_or(f64::NAN),
                s.failed
            );
        }
    }
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
