//! Synthetic spatial experiments with contaminated errors.
//!
//! Locations are uniform on `[-1, 1] x [0, 2]` outside the ellipse
//! `s1^2 + 0.5 s2^2 <= 0.25`. Two covariates come from unit-variance
//! Gaussian processes with exponential covariance (range `phi`), mixed to
//! correlation `r`. Each of the three coefficient surfaces is an independent
//! zero-mean process with variance `tau2` and range `psi_k`. Errors are
//! normal with probability `1 - omega` and otherwise drawn from a
//! contamination component: variance-inflated `N(0, a^2 sigma2)` or
//! mean-shifted `N(a, sigma2)`.
//!
//! # Random streams
//!
//! Replication `r` of a run with seed `s` draws everything from
//! `ChaCha20Rng::seed_from_u64(s)` switched to stream `r`. Streams are
//! disjoint, so replications are reproducible individually and adding
//! replications never changes earlier ones.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_all, FitConfig};
use crate::inference::{condition_numbers, COLLINEARITY_WARNING_LEVEL};
use crate::kernel::{Coordinates, KernelFamily, KernelSpec};
use crate::selection::{select, select_bandwidth, TuningGrid};

/// RNG for replication `index` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Whether `s` lies in the sampling domain.
pub fn in_domain(s: [f64; 2]) -> bool {
    (-1.0..=1.0).contains(&s[0]) && (0.0..=2.0).contains(&s[1]) && s[0] * s[0] + 0.5 * s[1] * s[1] > 0.25
}

/// `n` locations by rejection sampling from the bounding box.
pub fn sample_domain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Coordinates> {
    if n == 0 {
        return Err(Error::Input("need at least one location".into()));
    }
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let s = [rng.random_range(-1.0..=1.0), rng.random_range(0.0..=2.0)];
        if in_domain(s) {
            pts.push(s);
        }
    }
    Coordinates::new(pts)
}

/// `variance * exp(-d_ij / range)`.
pub fn exponential_covariance(coords: &Coordinates, range: f64, variance: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| variance * (-coords.distance(i, j) / range).exp())
}

/// Factorized exponential-covariance Gaussian process on fixed locations.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GpSampler {
    /// Factorizes the covariance with diagonal jitter `1e-8 * variance`,
    /// escalated tenfold up to three times on failure.
    pub fn new(coords: &Coordinates, range: f64, variance: f64) -> Result<Self> {
        if !(range > 0.0) || !(variance > 0.0) {
            return Err(Error::Config(format!(
                "GP range and variance must be positive, got {range} and {variance}"
            )));
        }
        let cov = exponential_covariance(coords, range, variance);
        let mut jitter = 1e-8 * variance;
        for _ in 0..4 {
            let mut c = cov.clone();
            for i in 0..c.nrows() {
                c[(i, i)] += jitter;
            }
            if let Some(factor) = c.cholesky() {
                return Ok(Self { factor, jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(
            "GP covariance factorization failed after jitter escalation".into(),
        ))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.l_dirty().nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = self.factor.l();
        (l * z).iter().copied().collect()
    }
}

/// One zero-mean Gaussian-process draw on `coords`.
pub fn gp_sample<R: Rng + ?Sized>(coords: &Coordinates, range: f64, variance: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(GpSampler::new(coords, range, variance)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Scenario I: outliers from `N(0, a^2 sigma2)`.
    MixtureVariance,
    /// Scenario II: outliers from `N(a, sigma2)`.
    MeanShift,
}

impl Scenario {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Self::MixtureVariance),
            2 => Ok(Self::MeanShift),
            _ => Err(Error::Config(format!("scenario must be 1 or 2, got {k}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub scenario: Scenario,
    pub omega: f64,
    pub a: f64,
    pub sigma2: f64,
    pub phi: f64,
    pub r: f64,
    pub tau2: f64,
    pub psi: Vec<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Desk-scale defaults (`n = 200`); the remaining values follow the
    /// reference design.
    fn default() -> Self {
        Self {
            n: 200,
            scenario: Scenario::MixtureVariance,
            omega: 0.0,
            a: 10.0,
            sigma2: 1.0,
            phi: 0.4,
            r: 0.75,
            tau2: 2.0,
            psi: vec![1.0, 2.0, 3.0],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if !(0.0..1.0).contains(&self.omega) {
            return bad(format!("omega must lie in [0, 1), got {}", self.omega));
        }
        for (name, v) in [("a", self.a), ("sigma2", self.sigma2), ("phi", self.phi), ("tau2", self.tau2)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(-1.0..=1.0).contains(&self.r) {
            return bad(format!("r must lie in [-1, 1], got {}", self.r));
        }
        if self.psi.len() != 3 || self.psi.iter().any(|v| !(*v > 0.0)) {
            return bad("psi needs three positive ranges".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: SpatialDataset,
    /// `n x 3` true coefficients `(beta_0, beta_1, beta_2)` per location.
    pub true_betas: DMatrix<f64>,
    pub outlier_mask: Vec<bool>,
}

/// Correlated covariates `x1 = z1`, `x2 = r z1 + sqrt(1 - r^2) z2`.
pub fn generate_covariates<R: Rng + ?Sized>(
    coords: &Coordinates,
    phi: f64,
    r: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gp = GpSampler::new(coords, phi, 1.0)?;
    let z1 = gp.sample(rng);
    let z2 = gp.sample(rng);
    let s = (1.0 - r * r).sqrt();
    let x2 = z1.iter().zip(&z2).map(|(a, b)| r * a + s * b).collect();
    Ok((z1, x2))
}

/// Draws one synthetic dataset.
pub fn generate<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = config.n;
    let coords = sample_domain(n, rng)?;
    let (x1, x2) = generate_covariates(&coords, config.phi, config.r, rng)?;
    let mut true_betas = DMatrix::zeros(n, 3);
    for (k, &psi) in config.psi.iter().enumerate() {
        let b = gp_sample(&coords, psi, config.tau2, rng)?;
        true_betas.set_column(k, &DVector::from_vec(b));
    }
    let sd = config.sigma2.sqrt();
    let mut outlier_mask = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let outlier = rng.random::<f64>() < config.omega;
        let z: f64 = rng.sample(StandardNormal);
        let eps = match (outlier, config.scenario) {
            (false, _) => sd * z,
            (true, Scenario::MixtureVariance) => config.a * sd * z,
            (true, Scenario::MeanShift) => config.a + sd * z,
        };
        outlier_mask.push(outlier);
        y.push(true_betas[(i, 0)] + true_betas[(i, 1)] * x1[i] + true_betas[(i, 2)] * x2[i] + eps);
    }
    let dataset = SpatialDataset::with_intercept(coords, &[x1, x2], y)?;
    Ok(SyntheticDataset {
        dataset,
        true_betas,
        outlier_mask,
    })
}

/// `(1 / (n p)) sum_i sum_k (est_ik - truth_ik)^2`.
pub fn mse(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimated.shape() != truth.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            estimated.shape(),
            truth.shape()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::Input("empty coefficient matrices".into()));
    }
    let mut acc = KahanSum::default();
    for (a, b) in estimated.iter().zip(truth.iter()) {
        acc.add((a - b) * (a - b));
    }
    Ok(acc.total() / estimated.len() as f64)
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical GWR, bandwidth by leave-one-out least squares.
    Gwr,
    /// Robust GWR with both tuning parameters selected from data.
    Dgwr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub mse: f64,
    pub gamma: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    /// Absent when generation itself failed.
    pub outlier_fraction: Option<f64>,
    pub outcomes: Vec<MethodOutcome>,
    pub failures: Vec<MethodFailure>,
}

impl ReplicationRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample. Quartiles interpolate linearly between
    /// order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        let mut acc = KahanSum::default();
        values.iter().for_each(|x| acc.add(*x));
        Some(Self {
            mean: acc.total() / values.len() as f64,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub mse: Option<Summary>,
    pub mean_gamma: Option<f64>,
    pub mean_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: ScenarioConfig,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub grid: TuningGrid,
    pub kernel: KernelFamily,
    pub replications: Vec<ReplicationRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl SimReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Successful per-replication values of `f` for `method`.
    pub fn values(&self, method: Method, f: impl Fn(&MethodOutcome) -> f64) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.outcome(method).map(&f))
            .collect()
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut acc = KahanSum::default();
    values.iter().for_each(|x| acc.add(*x));
    Some(acc.total() / values.len() as f64)
}

fn estimate_matrix(fits: &[crate::estimator::LocalEstimate], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(fits.len(), p, |i, k| fits[i].beta[k])
}

fn run_method(data: &SyntheticDataset, method: Method, grid: &TuningGrid, kernel: KernelFamily) -> Result<MethodOutcome> {
    let ds = &data.dataset;
    let resolved = grid.resolve(ds)?;
    let base = FitConfig::new(0.0, KernelSpec::new(kernel, resolved.bandwidths[0])?);
    let (gamma, bandwidth) = match method {
        Method::Gwr => {
            let (b, _, _) = select_bandwidth(ds, &resolved.bandwidths, &base)?;
            (0.0, b)
        }
        Method::Dgwr => {
            let sel = select(ds, grid, &base)?;
            (sel.gamma_opt, sel.b_opt)
        }
    };
    let fits = fit_all(ds, &base.with_gamma(gamma).with_bandwidth(bandwidth))?;
    let est = estimate_matrix(&fits, ds.p());
    Ok(MethodOutcome {
        method,
        mse: mse(&est, &data.true_betas)?,
        gamma,
        bandwidth,
    })
}

/// Runs one replication: generate, tune each method, fit, score.
pub fn run_replication(
    config: &ScenarioConfig,
    index: usize,
    methods: &[Method],
    grid: &TuningGrid,
    kernel: KernelFamily,
) -> ReplicationRecord {
    let mut rng = replication_rng(config.seed, index as u64);
    let data = match generate(config, &mut rng) {
        Ok(d) => d,
        Err(e) => {
            return ReplicationRecord {
                index,
                outlier_fraction: None,
                outcomes: vec![],
                failures: methods
                    .iter()
                    .map(|&method| MethodFailure {
                        method,
                        code: e.code().into(),
                        message: e.to_string(),
                    })
                    .collect(),
            }
        }
    };
    let outlier_fraction = data.outlier_mask.iter().filter(|m| **m).count() as f64 / config.n as f64;
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for &method in methods {
        match run_method(&data, method, grid, kernel) {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(MethodFailure {
                method,
                code: e.code().into(),
                message: e.to_string(),
            }),
        }
    }
    ReplicationRecord {
        index,
        outlier_fraction: Some(outlier_fraction),
        outcomes,
        failures,
    }
}

/// Runs `reps` independent replications and aggregates them. Failed
/// method runs are kept in the records and counted, never dropped.
pub fn run_replications(
    config: &ScenarioConfig,
    reps: usize,
    methods: &[Method],
    grid: &TuningGrid,
) -> Result<SimReport> {
    run_replications_with_kernel(config, reps, methods, grid, KernelFamily::Gaussian)
}

pub fn run_replications_with_kernel(
    config: &ScenarioConfig,
    reps: usize,
    methods: &[Method],
    grid: &TuningGrid,
    kernel: KernelFamily,
) -> Result<SimReport> {
    config.validate()?;
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let mut methods = methods.to_vec();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let replications: Vec<ReplicationRecord> = (0..reps)
        .into_par_iter()
        .map(|r| run_replication(config, r, &methods, grid, kernel))
        .collect();
    let summaries = methods
        .iter()
        .map(|&m| {
            let ok: Vec<&MethodOutcome> = replications.iter().filter_map(|r| r.outcome(m)).collect();
            let mses: Vec<f64> = ok.iter().map(|o| o.mse).collect();
            let gammas: Vec<f64> = ok.iter().map(|o| o.gamma).collect();
            let bws: Vec<f64> = ok.iter().map(|o| o.bandwidth).collect();
            MethodSummary {
                method: m,
                completed: ok.len(),
                failed: reps - ok.len(),
                mse: Summary::of(&mses),
                mean_gamma: mean(&gammas),
                mean_bandwidth: mean(&bws),
            }
        })
        .collect();
    Ok(SimReport {
        config: config.clone(),
        reps,
        methods,
        grid: grid.clone(),
        kernel,
        replications,
        summaries,
    })
}

/// Number of locations whose covariate-only condition number exceeds 30,
/// for each bandwidth, on one covariate field drawn from `config`.
pub fn collinearity_counts(config: &ScenarioConfig, bandwidths: &[f64]) -> Result<Vec<usize>> {
    let mut rng = replication_rng(config.seed, 0);
    let coords = sample_domain(config.n, &mut rng)?;
    let (x1, x2) = generate_covariates(&coords, config.phi, config.r, &mut rng)?;
    let ds = SpatialDataset::with_intercept(coords, &[x1, x2], vec![0.0; config.n])?;
    bandwidths
        .iter()
        .map(|&h| {
            let cn = condition_numbers(&ds, &KernelSpec::gaussian(h)?, false)?;
            Ok(cn.iter().filter(|c| **c > COLLINEARITY_WARNING_LEVEL).count())
        })
        .collect()
}
