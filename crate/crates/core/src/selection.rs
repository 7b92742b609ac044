//! Data-driven choice of the robustness parameter and the bandwidth.
//!
//! Gamma is chosen first, at the largest candidate bandwidth, by minimizing
//! an asymptotic Hyvärinen score. The bandwidth is then chosen at that gamma
//! by maximizing a robust leave-one-out criterion built from the same
//! divergence. Grid points whose fits are not identifiable (too little kernel
//! mass, collinear local design) are skipped and reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::{
    fit_all, fit_with_weights, location_weights, log_normal_density, log_sum_exp, FitConfig,
    LocalEstimate,
};
use crate::kernel::{bandwidth_grid, median_pairwise_distance};

/// Default robustness candidates `{0, 0.01, 0.03, 0.05, 0.1, 0.15, ..., 0.5}`.
pub fn default_gammas() -> Vec<f64> {
    vec![0.0, 0.01, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthCandidates {
    /// `{k b*/count : k = 1..count}` with `b*` the median pairwise distance.
    MedianFractions { count: usize },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub gammas: Vec<f64>,
    pub bandwidths: BandwidthCandidates,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            gammas: default_gammas(),
            bandwidths: BandwidthCandidates::MedianFractions { count: 10 },
        }
    }
}

/// Candidate values after data-dependent expansion, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedGrid {
    pub gammas: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// Median pairwise distance, when the bandwidths were derived from it.
    pub median_distance: Option<f64>,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl TuningGrid {
    pub fn resolve(&self, dataset: &SpatialDataset) -> Result<ResolvedGrid> {
        if self.gammas.is_empty() {
            return Err(Error::Config("gamma grid is empty".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!("gamma candidate {g} is not >= 0")));
        }
        let (bandwidths, median_distance) = match &self.bandwidths {
            BandwidthCandidates::MedianFractions { count } => {
                let median = median_pairwise_distance(dataset.coords())?;
                (bandwidth_grid(dataset.coords(), *count)?, Some(median))
            }
            BandwidthCandidates::Explicit(b) => {
                if b.is_empty() {
                    return Err(Error::Config("bandwidth grid is empty".into()));
                }
                if let Some(v) = b.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config(format!("bandwidth candidate {v} is not > 0")));
                }
                (b.clone(), None)
            }
        };
        Ok(ResolvedGrid {
            gammas: sorted_unique(self.gammas.clone()),
            bandwidths: sorted_unique(bandwidths),
            median_distance,
        })
    }
}

/// Leave-one-out fit used to score sample `i` at its own location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooFit {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub prediction: f64,
}

/// Robust cross-validation value together with the leave-one-out fits.
#[derive(Debug, Clone, PartialEq)]
pub struct RcvDetail {
    pub value: f64,
    pub loo: Vec<LooFit>,
}

/// RCV from leave-one-out predictions and variances.
///
/// For `gamma > 0`:
/// `(1/g) log sum_i phi(y_i; pred_i, s2_i)^g + g / (2 (1 + g)) log sum_i s2_i`.
/// For `gamma = 0` the criterion is the negative leave-one-out sum of squares.
pub fn rcv_from_predictions(response: &[f64], predictions: &[f64], sigma2: &[f64], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return -response
            .iter()
            .zip(predictions)
            .map(|(y, m)| (y - m) * (y - m))
            .sum::<f64>();
    }
    let terms = response
        .iter()
        .zip(predictions)
        .zip(sigma2)
        .map(|((&y, &m), &s2)| gamma * log_normal_density(y, m, s2));
    let lse = log_sum_exp(terms);
    lse / gamma + gamma / (2.0 * (1.0 + gamma)) * sigma2.iter().sum::<f64>().ln()
}

/// Fits location `i` with sample `i`'s own weight set to zero.
pub fn loo_fit_location(
    dataset: &SpatialDataset,
    i: usize,
    config: &FitConfig,
    init: Option<&LocalEstimate>,
) -> Result<LocalEstimate> {
    let mut w = location_weights(dataset, &config.kernel, i);
    w[i] = 0.0;
    fit_with_weights(dataset, &w, config, init)
}

/// Robust cross-validation criterion at `config`'s gamma and bandwidth.
/// Larger is better.
pub fn rcv(dataset: &SpatialDataset, config: &FitConfig) -> Result<f64> {
    rcv_detail(dataset, config, false).map(|d| d.value)
}

/// RCV with access to the leave-one-out fits. With `warm_start` each
/// leave-one-out fit starts from the full-data fit at the same location
/// instead of the leave-one-out classical GWR estimate.
pub fn rcv_detail(dataset: &SpatialDataset, config: &FitConfig, warm_start: bool) -> Result<RcvDetail> {
    config.validate()?;
    let fits: Vec<Result<LocalEstimate>> = (0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let init = if warm_start {
                Some(crate::estimator::mm_fit_location(dataset, i, config, None)?)
            } else {
                None
            };
            loo_fit_location(dataset, i, config, init.as_ref())
        })
        .collect();
    let mut loo = Vec::with_capacity(dataset.n());
    for (i, f) in fits.into_iter().enumerate() {
        let est = f.map_err(|e| e.at(i))?;
        let beta = nalgebra::DVector::from_column_slice(&est.beta);
        loo.push(LooFit {
            prediction: dataset.fitted(i, &beta),
            beta: est.beta,
            sigma2: est.sigma2,
        });
    }
    let y: Vec<f64> = dataset.response().iter().copied().collect();
    let pred: Vec<f64> = loo.iter().map(|l| l.prediction).collect();
    let s2: Vec<f64> = loo.iter().map(|l| l.sigma2).collect();
    let value = rcv_from_predictions(&y, &pred, &s2, config.gamma);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("RCV evaluated to {value}")));
    }
    Ok(RcvDetail { value, loo })
}

/// Asymptotic Hyvärinen score of full-data fits. Smaller is better.
pub fn hyvarinen_from_estimates(dataset: &SpatialDataset, estimates: &[LocalEstimate], gamma: f64) -> Result<f64> {
    if estimates.len() != dataset.n() {
        return Err(Error::Input(format!(
            "{} estimates for {} locations",
            estimates.len(),
            dataset.n()
        )));
    }
    let y = dataset.response();
    let mut total = 0.0;
    for (i, est) in estimates.iter().enumerate() {
        let beta = nalgebra::DVector::from_column_slice(&est.beta);
        let mu = dataset.fitted(i, &beta);
        let s2 = est.sigma2;
        let r2 = (y[i] - mu) * (y[i] - mu);
        let w = (gamma * log_normal_density(y[i], mu, s2)).exp();
        total += (2.0 * (gamma * r2 - s2) * w + r2 * w * w) / (s2 * s2);
    }
    Ok(total)
}

/// Hyvärinen score `H(gamma; b)` at `config`'s gamma and bandwidth.
pub fn hyvarinen_score(dataset: &SpatialDataset, config: &FitConfig) -> Result<f64> {
    let unavailable = |reason: String| Error::ScoreUnavailable {
        gamma: config.gamma,
        bandwidth: config.kernel.bandwidth,
        reason,
    };
    let fits = fit_all(dataset, config).map_err(|e| unavailable(e.to_string()))?;
    let h = hyvarinen_from_estimates(dataset, &fits, config.gamma)?;
    if !h.is_finite() {
        return Err(unavailable(format!("score evaluated to {h}")));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStep {
    Gamma,
    Bandwidth,
}

/// A grid point that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub step: SelectionStep,
    pub gamma: f64,
    pub bandwidth: f64,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub gamma_opt: f64,
    pub b_opt: f64,
    /// `(gamma, H(gamma; b_L))` for every scored gamma, ascending.
    pub hscore_trace: Vec<(f64, f64)>,
    /// `(b, RCV(b; gamma_opt))` for every scored bandwidth, ascending.
    pub rcv_trace: Vec<(f64, f64)>,
    pub skipped: Vec<SkippedPoint>,
    pub grid: ResolvedGrid,
}

fn skipped(step: SelectionStep, gamma: f64, bandwidth: f64, e: &Error) -> SkippedPoint {
    SkippedPoint {
        step,
        gamma,
        bandwidth,
        code: e.code().to_string(),
        reason: e.to_string(),
    }
}

fn failed(step: &str, skipped: &[SkippedPoint]) -> Error {
    Error::SelectionFailed {
        step: step.into(),
        reasons: skipped
            .iter()
            .map(|s| format!("gamma={}, b={}: {}", s.gamma, s.bandwidth, s.reason))
            .collect(),
    }
}

/// Bandwidth maximizing RCV at a fixed gamma; ties go to the larger
/// bandwidth. Returns the choice, the trace and the skipped points.
pub fn select_bandwidth(
    dataset: &SpatialDataset,
    bandwidths: &[f64],
    base_config: &FitConfig,
) -> Result<(f64, Vec<(f64, f64)>, Vec<SkippedPoint>)> {
    let bandwidths = sorted_unique(bandwidths.to_vec());
    let gamma = base_config.gamma;
    let scored: Vec<(f64, Result<f64>)> = bandwidths
        .par_iter()
        .map(|&b| (b, rcv(dataset, &base_config.with_bandwidth(b))))
        .collect();
    let mut trace = Vec::new();
    let mut skips = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for (b, r) in scored {
        match r {
            Ok(v) => {
                trace.push((b, v));
                if best.is_none_or(|(_, bv)| v >= bv) {
                    best = Some((b, v));
                }
            }
            Err(e) => skips.push(skipped(SelectionStep::Bandwidth, gamma, b, &e)),
        }
    }
    match best {
        Some((b, _)) => Ok((b, trace, skips)),
        None => Err(failed("bandwidth", &skips)),
    }
}

/// Two-step selection: gamma by Hyvärinen score at the largest bandwidth,
/// then the bandwidth by RCV at the chosen gamma.
///
/// Ties prefer the smaller gamma and the larger bandwidth, so the outcome
/// does not depend on the order of the candidate lists.
pub fn select(dataset: &SpatialDataset, grid: &TuningGrid, base_config: &FitConfig) -> Result<SelectionResult> {
    base_config.kernel.validate()?;
    let resolved = grid.resolve(dataset)?;
    let b_max = *resolved.bandwidths.last().unwrap();

    let scored: Vec<(f64, Result<f64>)> = resolved
        .gammas
        .par_iter()
        .map(|&g| {
            let cfg = base_config.with_gamma(g).with_bandwidth(b_max);
            (g, hyvarinen_score(dataset, &cfg))
        })
        .collect();
    let mut hscore_trace = Vec::new();
    let mut skips = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for (g, r) in scored {
        match r {
            Ok(h) => {
                hscore_trace.push((g, h));
                if best.is_none_or(|(_, bh)| h < bh) {
                    best = Some((g, h));
                }
            }
            Err(e) => skips.push(skipped(SelectionStep::Gamma, g, b_max, &e)),
        }
    }
    let gamma_opt = match best {
        Some((g, _)) => g,
        None => return Err(failed("gamma", &skips)),
    };

    let (b_opt, rcv_trace, more) =
        select_bandwidth(dataset, &resolved.bandwidths, &base_config.with_gamma(gamma_opt)).map_err(
            |e| match e {
                Error::SelectionFailed { step, mut reasons } => {
                    let mut all: Vec<String> = skips
                        .iter()
                        .map(|s| format!("gamma={}, b={}: {}", s.gamma, s.bandwidth, s.reason))
                        .collect();
                    all.append(&mut reasons);
                    Error::SelectionFailed { step, reasons: all }
                }
                e => e,
            },
        )?;
    skips.extend(more);
    Ok(SelectionResult {
        gamma_opt,
        b_opt,
        hscore_trace,
        rcv_trace,
        skipped: skips,
        grid: resolved,
    })
}
