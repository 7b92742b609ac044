//! Command-line front end: `fit`, `tune`, `diagnose` and `simulate`.
//!
//! Successful runs exit 0. Failures print a JSON error record
//! `{"error": {"code", "message"}}` on stderr and exit with
//! [`Error::exit_status`]. `DGWR_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::LocalEstimate;
use crate::inference::{diagnose, DEFAULT_OUTLIER_THRESHOLD};
use crate::io::{
    ingest_csv, looks_geographic, ColumnBindings, CommandKind, DataMeta, FitMeta, Ingested, LocationRecord, Meta,
    OutputDocument, Transform, SCHEMA_VERSION,
};
use crate::kernel::{Coordinates, KernelFamily, KernelSpec};
use crate::pipeline::{self, FitRequest, Param};
use crate::selection::{default_gammas, BandwidthCandidates, TuningGrid};
use crate::sim::{run_replications_with_kernel, Method, Scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Bisquare,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Bisquare => KernelFamily::Bisquare,
        }
    }
}

/// Robust geographically weighted regression.
#[derive(Debug, Parser)]
#[command(name = "dgwr", version, about)]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit local coefficients, standard errors and diagnostics from a CSV file.
    Fit(FitArgs),
    /// Select gamma and the bandwidth and report the score traces.
    Tune(FitArgs),
    /// Recompute outlier weights, flags and condition numbers from a fit file.
    Diagnose(DiagnoseArgs),
    /// Run the synthetic contamination experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output path; standard output when omitted (JSON only).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Comma-separated gamma candidates.
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    /// Comma-separated bandwidths, or `median:<L>` for `k b*/L, k = 1..L`.
    #[arg(long, default_value = "median:10")]
    pub bandwidth_grid: String,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelArg,
}

impl GridArgs {
    fn grid(&self) -> Result<TuningGrid> {
        let bandwidths = match self.bandwidth_grid.strip_prefix("median:") {
            Some(k) => BandwidthCandidates::MedianFractions {
                count: k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad bandwidth grid '{}'", self.bandwidth_grid)))?,
            },
            None => BandwidthCandidates::Explicit(
                self.bandwidth_grid
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad bandwidth '{v}'")))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(TuningGrid {
            gammas: self.gamma_grid.clone().unwrap_or_else(default_gammas),
            bandwidths,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Two coordinate columns, e.g. `lon,lat`. Treated as planar.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub coords: Vec<String>,
    #[arg(long)]
    pub response: String,
    /// Comma-separated covariate columns; the intercept is added.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub covariates: Vec<String>,
    /// Standardize covariates to mean 0, sd 1.
    #[arg(long)]
    pub standardize: bool,
    /// `none` or `log1p_per_area:<area column>`.
    #[arg(long, default_value = "none")]
    pub transform: String,
    /// `auto` or a value >= 0.
    #[arg(long, default_value = "auto")]
    pub gamma: String,
    /// `auto` or a positive value.
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD)]
    pub threshold: f64,
    /// Include the intercept in condition numbers.
    #[arg(long)]
    pub cn_intercept: bool,
    /// Warn when coordinates look like raw longitude/latitude over a large extent.
    #[arg(long)]
    pub warn_geographic: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// JSON document written by `fit`.
    #[arg(long)]
    pub input: PathBuf,
    /// Overrides the threshold stored in the fit file.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// 1: variance-inflated outliers, 2: mean-shifted outliers.
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 0.4)]
    pub phi: f64,
    #[arg(long, default_value_t = 0.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Methods to compare.
    #[arg(long, value_delimiter = ',', default_value = "gwr,dgwr")]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn bindings(args: &FitArgs) -> Result<ColumnBindings> {
    if args.coords.len() != 2 {
        return Err(Error::Config(format!(
            "--coords needs exactly two columns, got {}",
            args.coords.len()
        )));
    }
    Ok(ColumnBindings {
        coords: [args.coords[0].clone(), args.coords[1].clone()],
        response: args.response.clone(),
        covariates: args.covariates.iter().filter(|c| !c.is_empty()).cloned().collect(),
    })
}

fn fit_request(args: &FitArgs) -> Result<FitRequest> {
    Ok(FitRequest {
        gamma: args.gamma.parse()?,
        bandwidth: args.bandwidth.parse()?,
        kernel: args.grid.kernel.into(),
        grid: args.grid.grid()?,
        threshold: args.threshold,
        cn_include_intercept: args.cn_intercept,
        ..FitRequest::default()
    })
}

fn load(args: &FitArgs) -> Result<(Ingested, DataMeta, Vec<String>)> {
    let b = bindings(args)?;
    let transform: Transform = args.transform.parse()?;
    let ing = ingest_csv(&args.input, &b, &transform, args.standardize)?;
    let mut warnings = Vec::new();
    if args.warn_geographic && looks_geographic(ing.dataset.coords()) {
        warnings.push(
            "coordinates look like raw longitude/latitude over a large extent; distances are planar".to_string(),
        );
    }
    let meta = DataMeta {
        input: args.input.display().to_string(),
        n: ing.dataset.n(),
        p: ing.dataset.p(),
        bindings: b,
        design_names: ing.design_names.clone(),
        transform,
        standardize: args.standardize,
        standardization: ing.standardization.clone(),
    };
    Ok((ing, meta, warnings))
}

fn fit_meta(req: &FitRequest) -> FitMeta {
    FitMeta {
        gamma_requested: req.gamma,
        bandwidth_requested: req.bandwidth,
        kernel: req.kernel,
        grid: req.grid.clone(),
        gamma: match req.gamma {
            Param::Fixed(g) => Some(g),
            Param::Auto => None,
        },
        bandwidth: match req.bandwidth {
            Param::Fixed(b) => Some(b),
            Param::Auto => None,
        },
        threshold: req.threshold,
        max_iter: req.max_iter,
        tol: req.tol,
        sigma2_floor: req.sigma2_floor,
        min_ess: req.min_ess,
        cn_include_intercept: req.cn_include_intercept,
    }
}

fn run_fit(args: &FitArgs) -> Result<OutputDocument> {
    let (ing, data_meta, warnings) = load(args)?;
    let req = fit_request(args)?;
    let ds = &ing.dataset;
    let outcome = pipeline::fit(ds, &req)?;
    let mut fit = fit_meta(&req);
    fit.gamma = Some(outcome.config.gamma);
    fit.bandwidth = Some(outcome.config.kernel.bandwidth);
    fit.sigma2_floor = outcome.config.sigma2_floor;
    fit.min_ess = outcome.config.min_ess;

    let locations = (0..ds.n())
        .map(|i| {
            let est = &outcome.estimates[i];
            let (se, se_error) = match &outcome.covariance.entries[i] {
                Ok(c) => (Some(c.std_errors.clone()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            LocationRecord {
                index: i,
                coords: ds.coords().points()[i],
                y: Some(ds.response()[i]),
                x: Some(ds.design().row(i).iter().copied().collect()),
                beta: Some(est.beta.clone()),
                sigma2: Some(est.sigma2),
                se,
                se_error,
                converged: Some(est.converged),
                iterations: Some(est.iterations),
                warning: est.warning,
                u: outcome.diagnostics.u[i],
                outlier: outcome.diagnostics.outlier_flags[i],
                cn: outcome.diagnostics.condition_numbers[i],
            }
        })
        .collect();
    Ok(OutputDocument {
        meta: Meta {
            schema_version: SCHEMA_VERSION.into(),
            command: CommandKind::Fit,
            data: Some(data_meta),
            fit: Some(fit),
            source: None,
            warnings,
        },
        selection: outcome.selection,
        locations,
        report: None,
    })
}

fn run_tune(args: &FitArgs) -> Result<OutputDocument> {
    let (ing, data_meta, warnings) = load(args)?;
    let mut req = fit_request(args)?;
    // tuning always selects whatever is not fixed; both fixed is pointless
    if matches!((req.gamma, req.bandwidth), (Param::Fixed(_), Param::Fixed(_))) {
        req.gamma = Param::Auto;
        req.bandwidth = Param::Auto;
    }
    let (config, selection) = pipeline::tune(&ing.dataset, &req)?;
    let config = config.resolve(&ing.dataset)?;
    let mut fit = fit_meta(&req);
    fit.gamma = Some(config.gamma);
    fit.bandwidth = Some(config.kernel.bandwidth);
    fit.sigma2_floor = config.sigma2_floor;
    fit.min_ess = config.min_ess;
    Ok(OutputDocument {
        meta: Meta {
            schema_version: SCHEMA_VERSION.into(),
            command: CommandKind::Tune,
            data: Some(data_meta),
            fit: Some(fit),
            source: None,
            warnings,
        },
        selection,
        locations: vec![],
        report: None,
    })
}

/// Rebuilds the dataset and estimates stored in a fit document.
pub fn dataset_from_fit(doc: &OutputDocument) -> Result<(SpatialDataset, Vec<LocalEstimate>)> {
    if doc.meta.command != CommandKind::Fit {
        return Err(Error::Format("diagnose needs a document produced by 'fit'".into()));
    }
    let missing = |what: &str, i: usize| Error::Format(format!("location {i} has no '{what}'"));
    let n = doc.locations.len();
    let mut pts = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut ests = Vec::with_capacity(n);
    for (i, l) in doc.locations.iter().enumerate() {
        if l.index != i {
            return Err(Error::Format(format!("location records out of order at {i}")));
        }
        pts.push(l.coords);
        ys.push(l.y.ok_or_else(|| missing("y", i))?);
        rows.push(l.x.clone().ok_or_else(|| missing("x", i))?);
        ests.push(LocalEstimate {
            beta: l.beta.clone().ok_or_else(|| missing("beta", i))?,
            sigma2: l.sigma2.ok_or_else(|| missing("sigma2", i))?,
            iterations: l.iterations.unwrap_or(0),
            converged: l.converged.unwrap_or(false),
            final_objective: f64::NAN,
            score_residual: f64::NAN,
            warning: l.warning,
        });
    }
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Format("design rows have inconsistent lengths".into()));
    }
    let design = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
    let ds = SpatialDataset::new(Coordinates::new(pts)?, design, DVector::from_vec(ys))?;
    Ok((ds, ests))
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<OutputDocument> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Error::Io(format!("{}: {e}", args.input.display())))?;
    let doc = OutputDocument::from_json(&text)?;
    let (ds, ests) = dataset_from_fit(&doc)?;
    let mut fit = doc
        .meta
        .fit
        .clone()
        .ok_or_else(|| Error::Format("fit document has no fit settings".into()))?;
    let gamma = fit
        .gamma
        .ok_or_else(|| Error::Format("fit document has no final gamma".into()))?;
    let bandwidth = fit
        .bandwidth
        .ok_or_else(|| Error::Format("fit document has no final bandwidth".into()))?;
    if let Some(t) = args.threshold {
        fit.threshold = t;
    }
    let kernel = KernelSpec::new(fit.kernel, bandwidth)?;
    let diag = diagnose(&ds, &ests, gamma, &kernel, fit.threshold, fit.cn_include_intercept)?;
    let locations = (0..ds.n())
        .map(|i| LocationRecord {
            index: i,
            coords: ds.coords().points()[i],
            y: None,
            x: None,
            beta: None,
            sigma2: None,
            se: None,
            se_error: None,
            converged: None,
            iterations: None,
            warning: None,
            u: diag.u[i],
            outlier: diag.outlier_flags[i],
            cn: diag.condition_numbers[i],
        })
        .collect();
    Ok(OutputDocument {
        meta: Meta {
            schema_version: SCHEMA_VERSION.into(),
            command: CommandKind::Diagnose,
            data: doc.meta.data.clone(),
            fit: Some(fit),
            source: Some(args.input.display().to_string()),
            warnings: doc.meta.warnings.clone(),
        },
        selection: None,
        locations,
        report: None,
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<OutputDocument> {
    let config = ScenarioConfig {
        n: args.n,
        scenario: Scenario::from_number(args.scenario)?,
        omega: args.omega,
        phi: args.phi,
        seed: args.seed,
        ..ScenarioConfig::default()
    };
    let methods = args
        .methods
        .iter()
        .map(|m| match m.to_ascii_lowercase().as_str() {
            "gwr" => Ok(Method::Gwr),
            "dgwr" => Ok(Method::Dgwr),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = args.grid.grid()?;
    let report = run_replications_with_kernel(&config, args.reps, &methods, &grid, args.grid.kernel.into())?;
    Ok(OutputDocument {
        meta: Meta {
            schema_version: SCHEMA_VERSION.into(),
            command: CommandKind::Simulate,
            data: None,
            fit: None,
            source: None,
            warnings: vec![],
        },
        selection: None,
        locations: vec![],
        report: Some(report),
    })
}

fn write_output(doc: &OutputDocument, out: &OutputArgs) -> Result<()> {
    match (out.format, &out.output) {
        (Format::Json, None) => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(doc.to_json()?.as_bytes())?;
        }
        (Format::Json, Some(path)) => std::fs::write(path, doc.to_json()?)?,
        (Format::Csv, None) => {
            return Err(Error::Config("--format csv requires --output".into()));
        }
        (Format::Csv, Some(path)) => {
            doc.write_csv(std::fs::File::create(path)?)?;
            // metadata (and selection traces) go to a JSON sidecar
            let sidecar = OutputDocument {
                locations: vec![],
                report: None,
                ..doc.clone()
            };
            let mut meta_path = path.clone().into_os_string();
            meta_path.push(".meta.json");
            std::fs::write(meta_path, sidecar.to_json()?)?;
        }
    }
    Ok(())
}

/// Executes one parsed invocation.
pub fn run(config: &CliConfig) -> Result<()> {
    let out = match &config.command {
        Command::Fit(a) | Command::Tune(a) => &a.out,
        Command::Diagnose(a) => &a.out,
        Command::Simulate(a) => &a.out,
    };
    if out.format == Format::Csv && out.output.is_none() {
        return Err(Error::Config("--format csv requires --output".into()));
    }
    let (doc, out) = match &config.command {
        Command::Fit(a) => (run_fit(a)?, &a.out),
        Command::Tune(a) => (run_tune(a)?, &a.out),
        Command::Diagnose(a) => (run_diagnose(a)?, &a.out),
        Command::Simulate(a) => (run_simulate(a)?, &a.out),
    };
    for w in &doc.meta.warnings {
        eprintln!("warning: {w}");
    }
    write_output(&doc, out)
}

fn error_record(e: &Error) -> String {
    serde_json::json!({
        "error": {
            "code": e.code(),
            "message": e.to_string(),
        }
    })
    .to_string()
}

fn configure_threads() {
    if let Some(n) = std::env::var("DGWR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists, which is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    configure_threads();
    match run(&config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_status()
        }
    }
}
