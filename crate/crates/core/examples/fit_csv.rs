//! Read a CSV file, tune, fit and write the JSON document the `dgwr fit`
//! command produces.
//!
//! ```bash
//! cargo run --example fit_csv
//! ```

use dgwr::cli::main_with_args;
use dgwr::io::OutputDocument;

pub fn run_example() -> dgwr::Result<()> {
    let dir = std::env::temp_dir().join(format!("dgwr-fit-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let input = dir.join("data.csv");
    let output = dir.join("fit.json");

    let mut csv = String::from("east,north,elevation,rain\n");
    for i in 0..40 {
        let (e, n) = ((i % 8) as f64, (i / 8) as f64);
        let elev = ((i * 37) % 11) as f64 / 5.0;
        let rain = 2.0 + 0.3 * e + (1.0 + 0.1 * n) * elev + if i == 13 { 9.0 } else { 0.1 * ((i * 7) % 5) as f64 };
        csv.push_str(&format!("{e},{n},{elev},{rain}\n"));
    }
    std::fs::write(&input, csv)?;

    let args = [
        "dgwr",
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--coords",
        "east,north",
        "--response",
        "rain",
        "--covariates",
        "elevation",
        "--gamma-grid",
        "0,0.1,0.3,0.5",
        "--bandwidth-grid",
        "median:5",
        "--output",
        output.to_str().unwrap(),
    ];
    let status = main_with_args(args);
    if status != 0 {
        return Err(dgwr::Error::Input(format!("dgwr fit exited with {status}")));
    }
    let doc = OutputDocument::from_json(&std::fs::read_to_string(&output)?)?;
    let fit = doc.meta.fit.as_ref().unwrap();
    println!("gamma = {:?}, b = {:?}", fit.gamma, fit.bandwidth);
    for l in doc.locations.iter().filter(|l| l.outlier) {
        println!("outlier at {:?} (U = {:.2e})", l.coords, l.u);
    }
    let l = &doc.locations[13];
    println!("location 13: beta = {:?}, U = {:.3}", l.beta.as_deref().unwrap_or(&[]), l.u);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> dgwr::Result<()> {
    run_example()
}
