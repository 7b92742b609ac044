//! Per-location robust estimation.
//!
//! Each location `i` maximizes the gamma-divergence objective
//!
//! ```text
//! D_i(beta, s2) = (1/g) log( sum_j w_ij phi(y_j; x_j'beta, s2)^g ) + g / (2 (1 + g)) log s2
//! ```
//!
//! by majorization-minimization: normalized weights
//! `u_j ∝ w_ij phi(y_j; x_j'beta, s2)^g` are formed at the current iterate,
//! then `beta` is the `u`-weighted least-squares solution and
//! `s2 = (1 + g) sum_j u_j r_j^2`. At `g = 0` one such step with `u ∝ w_ij`
//! is exactly the classical GWR fit.
//!
//! All density powers are handled in the log domain; `phi^g` is never formed
//! directly when building weights, so wild residuals cannot underflow the
//! normalization.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest admissible squared pivot of the diagonally equilibrated moment
/// matrix; anything below is treated as exact collinearity.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// `log phi(y; mu, s2)` for the normal density.
#[inline]
pub fn log_normal_density(y: f64, mu: f64, sigma2: f64) -> f64 {
    let r = y - mu;
    -0.5 * (LN_2PI + sigma2.ln()) - r * r / (2.0 * sigma2)
}

/// `log(sum_k exp(a_k))` over finite entries; `-inf` when none are finite.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.into_iter().map(|a| (a - m).exp()).sum();
    m + s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Robustness parameter; `0` is classical GWR.
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub max_iter: usize,
    /// Relative change of `(beta, sigma2)` at which iteration stops.
    pub tol: f64,
    /// Lower bound on `sigma2`. `None` means `1e-12 * var(y)`.
    pub sigma2_floor: Option<f64>,
    /// Minimum sum of kernel weights. `None` means `p + 1`.
    pub min_ess: Option<f64>,
}

impl FitConfig {
    pub const DEFAULT_MAX_ITER: usize = 200;
    pub const DEFAULT_TOL: f64 = 1e-8;

    pub fn new(gamma: f64, kernel: KernelSpec) -> Self {
        Self {
            gamma,
            kernel,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            sigma2_floor: None,
            min_ess: None,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        Self {
            kernel: self.kernel.with_bandwidth(bandwidth),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if let Some(f) = self.sigma2_floor {
            if !(f > 0.0) {
                return Err(Error::Config(format!("sigma2_floor must be > 0, got {f}")));
            }
        }
        if let Some(m) = self.min_ess {
            if !(m > 0.0) {
                return Err(Error::Config(format!("min_ess must be > 0, got {m}")));
            }
        }
        Ok(())
    }

    /// Fills in data-dependent defaults.
    pub fn resolve(&self, dataset: &SpatialDataset) -> Result<FitConfig> {
        self.validate()?;
        Ok(FitConfig {
            sigma2_floor: Some(
                self.sigma2_floor
                    .unwrap_or_else(|| (1e-12 * dataset.response_variance()).max(f64::MIN_POSITIVE)),
            ),
            min_ess: Some(self.min_ess.unwrap_or((dataset.p() + 1) as f64)),
            ..*self
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// `sigma2` hit its floor: the local fit is (near) perfect.
    PerfectFit,
}

/// Result of one location's fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimate {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gamma-divergence objective at the estimate (the weighted
    /// log-likelihood when `gamma = 0`).
    pub final_objective: f64,
    /// `|| sum_j u_j x_j (y_j - x_j'beta) ||_2` with `u` the normalized
    /// weights at the returned estimate.
    pub score_residual: f64,
    pub warning: Option<FitWarning>,
}

/// Iterate state of the MM loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MMState {
    pub u: Vec<f64>,
    pub beta_current: Vec<f64>,
    pub sigma2_current: f64,
}

/// One MM iteration: the state used to build the majorizer and the
/// objective at that state's `(beta, sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub state: MMState,
    pub objective: f64,
}

/// Kernel weights of every sample as seen from `target`.
pub fn location_weights(dataset: &SpatialDataset, kernel: &KernelSpec, target: usize) -> Vec<f64> {
    dataset
        .distances()
        .row(target)
        .iter()
        .map(|&d| kernel.weight(d))
        .collect()
}

fn check_target(dataset: &SpatialDataset, target: usize) -> Result<()> {
    if target >= dataset.n() {
        return Err(Error::Input(format!(
            "location {target} out of range (n = {})",
            dataset.n()
        )));
    }
    Ok(())
}

fn check_beta(dataset: &SpatialDataset, beta: &[f64]) -> Result<DVector<f64>> {
    if beta.len() != dataset.p() {
        return Err(Error::Input(format!(
            "beta has length {}, expected {}",
            beta.len(),
            dataset.p()
        )));
    }
    Ok(DVector::from_column_slice(beta))
}

/// Gamma-divergence objective with weights `weights`, additive constant zero.
pub fn objective_with_weights(
    dataset: &SpatialDataset,
    weights: &[f64],
    beta: &[f64],
    sigma2: f64,
    gamma: f64,
) -> Result<f64> {
    if gamma == 0.0 {
        return Err(Error::GammaZero);
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Input(format!("sigma2 must be > 0, got {sigma2}")));
    }
    let beta = check_beta(dataset, beta)?;
    let y = dataset.response();
    let terms = (0..dataset.n()).filter(|&j| weights[j] > 0.0).map(|j| {
        weights[j].ln() + gamma * log_normal_density(y[j], dataset.fitted(j, &beta), sigma2)
    });
    let lse = log_sum_exp(terms);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateObjective);
    }
    Ok(lse / gamma + gamma / (2.0 * (1.0 + gamma)) * sigma2.ln())
}

/// Gamma-divergence objective `D_i(beta, sigma2)` at location `target`.
pub fn objective(
    dataset: &SpatialDataset,
    target: usize,
    beta: &[f64],
    sigma2: f64,
    config: &FitConfig,
) -> Result<f64> {
    check_target(dataset, target)?;
    config.kernel.validate()?;
    let w = location_weights(dataset, &config.kernel, target);
    objective_with_weights(dataset, &w, beta, sigma2, config.gamma)
}

/// Geographically weighted log-likelihood `sum_j w_ij log phi(y_j; x_j'beta, sigma2)`.
pub fn log_likelihood_objective(
    dataset: &SpatialDataset,
    target: usize,
    beta: &[f64],
    sigma2: f64,
    config: &FitConfig,
) -> Result<f64> {
    check_target(dataset, target)?;
    config.kernel.validate()?;
    let w = location_weights(dataset, &config.kernel, target);
    log_likelihood_with_weights(dataset, &w, beta, sigma2)
}

pub fn log_likelihood_with_weights(
    dataset: &SpatialDataset,
    weights: &[f64],
    beta: &[f64],
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Input(format!("sigma2 must be > 0, got {sigma2}")));
    }
    let beta = check_beta(dataset, beta)?;
    let y = dataset.response();
    Ok((0..dataset.n())
        .filter(|&j| weights[j] != 0.0)
        .map(|j| weights[j] * log_normal_density(y[j], dataset.fitted(j, &beta), sigma2))
        .sum())
}

/// Solves the `u`-weighted normal equations.
///
/// The moment matrix is equilibrated by its diagonal before a Cholesky
/// factorization; a squared pivot below [`SINGULAR_PIVOT_RATIO`] is reported
/// as [`Error::SingularMomentMatrix`].
pub(crate) fn weighted_least_squares(dataset: &SpatialDataset, u: &[f64]) -> Result<DVector<f64>> {
    let p = dataset.p();
    let x = dataset.design();
    let y = dataset.response();
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut v = DVector::<f64>::zeros(p);
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = uj * x[(j, a)];
            v[a] += xa * y[j];
            for b in 0..=a {
                m[(a, b)] += xa * x[(j, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    let scale: Vec<f64> = (0..p).map(|a| m[(a, a)]).collect();
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::SingularMomentMatrix { pivot_ratio: 0.0 });
    }
    let inv_sqrt: Vec<f64> = scale.iter().map(|s| 1.0 / s.sqrt()).collect();
    let eq = DMatrix::from_fn(p, p, |a, b| m[(a, b)] * inv_sqrt[a] * inv_sqrt[b]);
    let chol = eq
        .cholesky()
        .ok_or(Error::SingularMomentMatrix { pivot_ratio: 0.0 })?;
    let pivot_ratio = (0..p)
        .map(|a| chol.l_dirty()[(a, a)].powi(2))
        .fold(f64::INFINITY, f64::min);
    if pivot_ratio < SINGULAR_PIVOT_RATIO {
        return Err(Error::SingularMomentMatrix { pivot_ratio });
    }
    let rhs = DVector::from_fn(p, |a, _| v[a] * inv_sqrt[a]);
    let z = chol.solve(&rhs);
    Ok(DVector::from_fn(p, |a, _| z[a] * inv_sqrt[a]))
}

/// Resolved numeric settings for the inner loop.
struct Settings {
    gamma: f64,
    max_iter: usize,
    tol: f64,
    floor: f64,
    min_ess: f64,
}

impl Settings {
    fn from_config(config: &FitConfig, dataset: &SpatialDataset) -> Result<Self> {
        let r = config.resolve(dataset)?;
        Ok(Self {
            gamma: r.gamma,
            max_iter: r.max_iter,
            tol: r.tol,
            floor: r.sigma2_floor.unwrap(),
            min_ess: r.min_ess.unwrap(),
        })
    }
}

/// Computes normalized weights at `(beta, sigma2)` into `u` and returns the
/// log of the unnormalized sum `log sum_j w_j phi_j^gamma`.
fn normalized_weights(
    dataset: &SpatialDataset,
    weights: &[f64],
    beta: &DVector<f64>,
    sigma2: f64,
    gamma: f64,
    u: &mut [f64],
) -> f64 {
    let y = dataset.response();
    let mut max = f64::NEG_INFINITY;
    for j in 0..dataset.n() {
        u[j] = if weights[j] > 0.0 {
            let a = weights[j].ln() + gamma * log_normal_density(y[j], dataset.fitted(j, beta), sigma2);
            max = max.max(a);
            a
        } else {
            f64::NEG_INFINITY
        };
    }
    if max == f64::NEG_INFINITY {
        u.iter_mut().for_each(|v| *v = 0.0);
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for v in u.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in u.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

fn weighted_sse(dataset: &SpatialDataset, u: &[f64], beta: &DVector<f64>) -> f64 {
    let y = dataset.response();
    u.iter()
        .enumerate()
        .filter(|(_, &uj)| uj != 0.0)
        .map(|(j, &uj)| {
            let r = y[j] - dataset.fitted(j, beta);
            uj * r * r
        })
        .sum()
}

fn score_norm(dataset: &SpatialDataset, u: &[f64], beta: &DVector<f64>) -> f64 {
    let p = dataset.p();
    let x = dataset.design();
    let y = dataset.response();
    let mut s = vec![0.0; p];
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        let r = y[j] - dataset.fitted(j, beta);
        for (a, sa) in s.iter_mut().enumerate() {
            *sa += uj * x[(j, a)] * r;
        }
    }
    s.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn relative_change(old_beta: &DVector<f64>, new_beta: &DVector<f64>, old_s2: f64, new_s2: f64) -> f64 {
    let db = (new_beta - old_beta).amax();
    let nb = new_beta.amax();
    (db / (1.0 + nb)).max((new_s2 - old_s2).abs() / (1.0 + new_s2))
}

/// MM fit with caller-supplied kernel weights (e.g. with one sample
/// zeroed out for leave-one-out scoring).
///
/// `init` is used only when `gamma > 0`; otherwise the fit is the closed-form
/// weighted least-squares solution.
pub fn fit_with_weights(
    dataset: &SpatialDataset,
    weights: &[f64],
    config: &FitConfig,
    init: Option<&LocalEstimate>,
) -> Result<LocalEstimate> {
    fit_inner(dataset, weights, config, init, None)
}

fn fit_inner(
    dataset: &SpatialDataset,
    weights: &[f64],
    config: &FitConfig,
    init: Option<&LocalEstimate>,
    mut observer: Option<&mut dyn FnMut(IterationRecord)>,
) -> Result<LocalEstimate> {
    let s = Settings::from_config(config, dataset)?;
    let n = dataset.n();
    if weights.len() != n {
        return Err(Error::Input(format!(
            "weight vector has length {}, expected {n}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Input("kernel weights must be finite and non-negative".into()));
    }
    let ess: f64 = weights.iter().sum();
    if ess < s.min_ess {
        return Err(Error::InsufficientEffectiveSampleSize {
            ess,
            min_ess: s.min_ess,
        });
    }

    let mut u: Vec<f64> = weights.iter().map(|w| w / ess).collect();

    let use_init = s.gamma > 0.0 && init.is_some();
    let (mut beta, mut sigma2, mut floored) = match init.filter(|_| use_init) {
        Some(e) => {
            let b = check_beta(dataset, &e.beta)?;
            if !(e.sigma2 > 0.0) || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("initial estimate is not finite".into()));
            }
            (b, e.sigma2.max(s.floor), e.sigma2 < s.floor)
        }
        None => {
            // classical GWR step; for gamma = 0 this is the whole fit
            let b = weighted_least_squares(dataset, &u)?;
            let raw = weighted_sse(dataset, &u, &b);
            if let Some(obs) = observer.as_deref_mut() {
                obs(IterationRecord {
                    state: MMState {
                        u: u.clone(),
                        beta_current: b.iter().copied().collect(),
                        sigma2_current: raw.max(s.floor),
                    },
                    objective: f64::NAN,
                });
            }
            (b, raw.max(s.floor), raw < s.floor)
        }
    };

    if s.gamma == 0.0 {
        let beta_v: Vec<f64> = beta.iter().copied().collect();
        let objective = log_likelihood_with_weights(dataset, weights, &beta_v, sigma2)?;
        return Ok(LocalEstimate {
            score_residual: score_norm(dataset, &u, &beta),
            beta: beta_v,
            sigma2,
            iterations: 1,
            converged: !floored,
            final_objective: objective,
            warning: floored.then_some(FitWarning::PerfectFit),
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    let gamma = s.gamma;
    let ascent_term = |s2: f64| gamma / (2.0 * (1.0 + gamma)) * s2.ln();
    while iterations < s.max_iter {
        let log_total = normalized_weights(dataset, weights, &beta, sigma2, gamma, &mut u);
        if log_total == f64::NEG_INFINITY {
            return Err(Error::DegenerateObjective);
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(IterationRecord {
                state: MMState {
                    u: u.clone(),
                    beta_current: beta.iter().copied().collect(),
                    sigma2_current: sigma2,
                },
                objective: log_total / gamma + ascent_term(sigma2),
            });
        }
        let new_beta = weighted_least_squares(dataset, &u)?;
        let raw = (1.0 + gamma) * weighted_sse(dataset, &u, &new_beta);
        floored = raw < s.floor;
        let new_sigma2 = raw.max(s.floor);
        let change = relative_change(&beta, &new_beta, sigma2, new_sigma2);
        beta = new_beta;
        sigma2 = new_sigma2;
        iterations += 1;
        if change < s.tol {
            converged = true;
            break;
        }
    }

    let log_total = normalized_weights(dataset, weights, &beta, sigma2, gamma, &mut u);
    if log_total == f64::NEG_INFINITY {
        return Err(Error::DegenerateObjective);
    }
    let final_objective = log_total / gamma + ascent_term(sigma2);
    if let Some(obs) = observer.as_deref_mut() {
        obs(IterationRecord {
            state: MMState {
                u: u.clone(),
                beta_current: beta.iter().copied().collect(),
                sigma2_current: sigma2,
            },
            objective: final_objective,
        });
    }
    Ok(LocalEstimate {
        score_residual: score_norm(dataset, &u, &beta),
        beta: beta.iter().copied().collect(),
        sigma2,
        iterations,
        converged: converged && !floored,
        final_objective,
        warning: floored.then_some(FitWarning::PerfectFit),
    })
}

/// Fits location `target`. Without `init`, iteration starts from the
/// classical GWR estimate at the same bandwidth.
pub fn mm_fit_location(
    dataset: &SpatialDataset,
    target: usize,
    config: &FitConfig,
    init: Option<&LocalEstimate>,
) -> Result<LocalEstimate> {
    check_target(dataset, target)?;
    config.validate()?;
    let w = location_weights(dataset, &config.kernel, target);
    fit_inner(dataset, &w, config, init, None)
}

/// Like [`mm_fit_location`] but also returns every iterate.
///
/// For `gamma > 0` the records hold the state that built each majorizer plus
/// the final state; their objectives form the ascent sequence. When started
/// without `init` the first record is the classical GWR starting point, whose
/// objective is reported as NaN.
pub fn mm_fit_location_traced(
    dataset: &SpatialDataset,
    target: usize,
    config: &FitConfig,
    init: Option<&LocalEstimate>,
) -> Result<(LocalEstimate, Vec<IterationRecord>)> {
    check_target(dataset, target)?;
    config.validate()?;
    let w = location_weights(dataset, &config.kernel, target);
    let mut trace = Vec::new();
    let mut push = |r: IterationRecord| trace.push(r);
    let est = fit_inner(dataset, &w, config, init, Some(&mut push))?;
    Ok((est, trace))
}

/// Fits every location, failing on the first (lowest-index) error.
pub fn fit_all(dataset: &SpatialDataset, config: &FitConfig) -> Result<Vec<LocalEstimate>> {
    fit_all_collect(dataset, config).into_iter().collect()
}

/// Fits every location and reports each outcome separately. Errors carry the
/// location index.
pub fn fit_all_collect(dataset: &SpatialDataset, config: &FitConfig) -> Vec<Result<LocalEstimate>> {
    if let Err(e) = config.validate() {
        return vec![Err(e)];
    }
    (0..dataset.n())
        .into_par_iter()
        .map(|i| mm_fit_location(dataset, i, config, None).map_err(|e| e.at(i)))
        .collect()
}
