//! Sandwich standard errors, normalized outlier weights and local
//! collinearity diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::{location_weights, log_normal_density, log_sum_exp, FitConfig, LocalEstimate};
use crate::kernel::KernelSpec;

/// Jacobians with a larger eigenvalue-magnitude ratio are treated as singular.
pub const JACOBIAN_CONDITION_LIMIT: f64 = 1e12;

/// Relative eigenvalue level below which a moment matrix is considered
/// exactly collinear.
pub const COLLINEAR_EIGEN_RATIO: f64 = 1e-13;

/// Outlier threshold on the normalized weight.
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.5;

/// Condition numbers above this indicate considerable local collinearity.
pub const COLLINEARITY_WARNING_LEVEL: f64 = 30.0;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Var(beta_i)` with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovariance {
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// `|lambda|_max / |lambda|_min` of the Jacobian `J_i`.
    pub jacobian_condition: f64,
}

/// Per-location sandwich covariances. A location whose Jacobian is singular
/// holds its error; the others are unaffected.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub entries: Vec<Result<LocalCovariance>>,
}

impl CovarianceEstimate {
    pub fn std_errors(&self) -> Vec<Option<&[f64]>> {
        self.entries
            .iter()
            .map(|e| e.as_ref().ok().map(|c| c.std_errors.as_slice()))
            .collect()
    }
}

/// Bread `J_i` and meat `I_i` of the sandwich at one location.
pub fn jacobian_and_information(
    dataset: &SpatialDataset,
    weights: &[f64],
    estimate: &LocalEstimate,
    gamma: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = dataset.p();
    let x = dataset.design();
    let y = dataset.response();
    let beta = DVector::from_column_slice(&estimate.beta);
    let s2 = estimate.sigma2;
    let mut jac = DMatrix::zeros(p, p);
    let mut info = DMatrix::zeros(p, p);
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let mu = dataset.fitted(j, &beta);
        let r = y[j] - mu;
        let log_wp = w.ln() + gamma * log_normal_density(y[j], mu, s2);
        let wp = log_wp.exp();
        let wp2 = (2.0 * log_wp).exp();
        let cj = wp * (gamma * r * r / s2 - 1.0);
        let ci = wp2 * r * r;
        for a in 0..p {
            for b in 0..=a {
                let xx = x[(j, a)] * x[(j, b)];
                jac[(a, b)] += cj * xx;
                info[(a, b)] += ci * xx;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jac[(b, a)] = jac[(a, b)];
            info[(b, a)] = info[(a, b)];
        }
    }
    (jac, info)
}

/// `J^-1 I J^-1` from a symmetric Jacobian and information matrix.
pub fn sandwich(jac: &DMatrix<f64>, info: &DMatrix<f64>) -> Result<LocalCovariance> {
    let eig = SymmetricEigen::new(symmetrize(jac));
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= JACOBIAN_CONDITION_LIMIT) {
        return Err(Error::SingularJacobian { condition });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let jinv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let cov = symmetrize(&(&jinv * info * &jinv));
    let std_errors = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(LocalCovariance {
        covariance: cov,
        std_errors,
        jacobian_condition: condition,
    })
}

/// Sandwich covariance of every local coefficient estimate, using the
/// kernel and gamma in `config`.
pub fn sandwich_covariance(
    dataset: &SpatialDataset,
    estimates: &[LocalEstimate],
    config: &FitConfig,
) -> Result<CovarianceEstimate> {
    config.validate()?;
    if estimates.len() != dataset.n() {
        return Err(Error::Input(format!(
            "{} estimates for {} locations",
            estimates.len(),
            dataset.n()
        )));
    }
    if let Some(e) = estimates.iter().find(|e| e.beta.len() != dataset.p()) {
        return Err(Error::Input(format!(
            "estimate has {} coefficients, expected {}",
            e.beta.len(),
            dataset.p()
        )));
    }
    let entries = estimates
        .par_iter()
        .enumerate()
        .map(|(i, est)| {
            let w = location_weights(dataset, &config.kernel, i);
            let (jac, info) = jacobian_and_information(dataset, &w, est, config.gamma);
            sandwich(&jac, &info).map_err(|e| e.at(i))
        })
        .collect();
    Ok(CovarianceEstimate { entries })
}

/// Normalized weights `U_i = phi_i^g / mean_j phi_j^g`, where `phi_i` is
/// sample `i`'s density under its own location's fit. They average to one.
pub fn normalized_outlier_weights(
    dataset: &SpatialDataset,
    estimates: &[LocalEstimate],
    gamma: f64,
) -> Result<Vec<f64>> {
    if estimates.len() != dataset.n() {
        return Err(Error::Input(format!(
            "{} estimates for {} locations",
            estimates.len(),
            dataset.n()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
    }
    let y = dataset.response();
    let logs: Vec<f64> = estimates
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let beta = DVector::from_column_slice(&e.beta);
            gamma * log_normal_density(y[i], dataset.fitted(i, &beta), e.sigma2)
        })
        .collect();
    let lse = log_sum_exp(logs.iter().copied());
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let log_n = (dataset.n() as f64).ln();
    Ok(logs.iter().map(|a| (a - lse + log_n).exp()).collect())
}

/// `U_i < threshold`.
pub fn flag_outliers(weights: &[f64], threshold: f64) -> Vec<bool> {
    weights.iter().map(|&u| u < threshold).collect()
}

/// Eigenvalue ratio `lambda_max / lambda_min` of the locally weighted moment
/// matrix `sum_j w_ij x_j x_j'`, one per location.
///
/// Without `include_intercept` a leading all-ones design column is dropped,
/// so the ratio describes the covariates alone. Exact collinearity gives
/// `+inf`.
pub fn condition_numbers(dataset: &SpatialDataset, kernel: &KernelSpec, include_intercept: bool) -> Result<Vec<f64>> {
    kernel.validate()?;
    let first = if !include_intercept && dataset.has_intercept() && dataset.p() > 1 {
        1
    } else {
        0
    };
    let x = dataset.design();
    let q = dataset.p() - first;
    (0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let w = location_weights(dataset, kernel, i);
            let mut m = DMatrix::<f64>::zeros(q, q);
            for (j, &wj) in w.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                for a in 0..q {
                    let xa = wj * x[(j, first + a)];
                    for b in 0..=a {
                        m[(a, b)] += xa * x[(j, first + b)];
                    }
                }
            }
            for a in 0..q {
                for b in 0..a {
                    m[(b, a)] = m[(a, b)];
                }
            }
            moment_condition_number(&m).map_err(|e| e.at(i))
        })
        .collect()
}

/// Condition number of a symmetric positive semi-definite matrix.
pub fn moment_condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) {
        return Err(Error::Input("weighted moment matrix is zero".into()));
    }
    if min <= COLLINEAR_EIGEN_RATIO * max {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsResult {
    #[serde(rename = "U")]
    pub u: Vec<f64>,
    pub outlier_flags: Vec<bool>,
    pub condition_numbers: Vec<f64>,
    pub threshold: f64,
}

/// Normalized weights, outlier flags and condition numbers in one pass.
pub fn diagnose(
    dataset: &SpatialDataset,
    estimates: &[LocalEstimate],
    gamma: f64,
    kernel: &KernelSpec,
    threshold: f64,
    include_intercept: bool,
) -> Result<DiagnosticsResult> {
    let u = normalized_outlier_weights(dataset, estimates, gamma)?;
    let outlier_flags = flag_outliers(&u, threshold);
    let condition_numbers = condition_numbers(dataset, kernel, include_intercept)?;
    Ok(DiagnosticsResult {
        u,
        outlier_flags,
        condition_numbers,
        threshold,
    })
}
