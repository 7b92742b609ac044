//! Select gamma with the Hyvärinen score and the bandwidth with robust
//! leave-one-out cross-validation.
//!
//! ```bash
//! cargo run --release --example tuning
//! ```

use dgwr::selection::{select, BandwidthCandidates, TuningGrid};
use dgwr::sim::{generate, replication_rng, Scenario, ScenarioConfig};
use dgwr::{FitConfig, KernelSpec};

pub fn run_example() -> dgwr::Result<()> {
    let cfg = ScenarioConfig {
        n: 80,
        scenario: Scenario::MeanShift,
        omega: 0.1,
        seed: 3,
        ..ScenarioConfig::default()
    };
    let data = generate(&cfg, &mut replication_rng(cfg.seed, 0))?;

    let grid = TuningGrid {
        gammas: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
        bandwidths: BandwidthCandidates::MedianFractions { count: 6 },
    };
    // the base bandwidth is replaced by the smallest candidate
    let base = FitConfig::new(0.0, KernelSpec::gaussian(1.0)?);
    let sel = select(&data.dataset, &grid, &base)?;

    if let Some(m) = sel.grid.median_distance {
        println!("median pairwise distance {m:.4}");
    }
    println!("gamma   H");
    for (g, h) in &sel.hscore_trace {
        println!("{g:<7} {h:.4}");
    }
    println!("b       RCV");
    for (b, v) in &sel.rcv_trace {
        println!("{b:<7.4} {v:.4}");
    }
    for s in &sel.skipped {
        println!("skipped {:?} gamma={} b={:.4}: {}", s.step, s.gamma, s.bandwidth, s.code);
    }
    println!("selected gamma = {}, b = {:.4}", sel.gamma_opt, sel.b_opt);
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
