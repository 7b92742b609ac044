//! End-to-end fitting: optional tuning, per-location fits, standard errors
//! and diagnostics.

use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_all, FitConfig, LocalEstimate};
use crate::inference::{diagnose, sandwich_covariance, CovarianceEstimate, DiagnosticsResult, DEFAULT_OUTLIER_THRESHOLD};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::selection::{hyvarinen_score, select, select_bandwidth, SelectionResult, SelectionStep, SkippedPoint, TuningGrid};

/// A tuning parameter that is either fixed or selected from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Param::Auto);
        }
        s.trim()
            .parse::<f64>()
            .map(Param::Fixed)
            .map_err(|_| Error::Config(format!("expected 'auto' or a number, got '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub gamma: Param,
    pub bandwidth: Param,
    pub kernel: KernelFamily,
    pub grid: TuningGrid,
    pub threshold: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub sigma2_floor: Option<f64>,
    pub min_ess: Option<f64>,
    /// Include the intercept column in the condition numbers.
    pub cn_include_intercept: bool,
}

impl Default for FitRequest {
    fn default() -> Self {
        Self {
            gamma: Param::Auto,
            bandwidth: Param::Auto,
            kernel: KernelFamily::Gaussian,
            grid: TuningGrid::default(),
            threshold: DEFAULT_OUTLIER_THRESHOLD,
            max_iter: FitConfig::DEFAULT_MAX_ITER,
            tol: FitConfig::DEFAULT_TOL,
            sigma2_floor: None,
            min_ess: None,
            cn_include_intercept: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Fully resolved configuration used for the final fits.
    pub config: FitConfig,
    pub selection: Option<SelectionResult>,
    pub estimates: Vec<LocalEstimate>,
    pub covariance: CovarianceEstimate,
    pub diagnostics: DiagnosticsResult,
}

fn base_config(req: &FitRequest, bandwidth: f64) -> Result<FitConfig> {
    Ok(FitConfig {
        gamma: 0.0,
        kernel: KernelSpec::new(req.kernel, bandwidth)?,
        max_iter: req.max_iter,
        tol: req.tol,
        sigma2_floor: req.sigma2_floor,
        min_ess: req.min_ess,
    })
}

/// Chooses whichever of gamma and bandwidth are [`Param::Auto`].
///
/// Both automatic: the two-step selection. Only gamma automatic: Hyvärinen
/// score at the fixed bandwidth. Only the bandwidth automatic: RCV at the
/// fixed gamma.
pub fn tune(dataset: &SpatialDataset, req: &FitRequest) -> Result<(FitConfig, Option<SelectionResult>)> {
    let resolved = req.grid.resolve(dataset)?;
    match (req.gamma, req.bandwidth) {
        (Param::Fixed(g), Param::Fixed(b)) => Ok((base_config(req, b)?.with_gamma(g), None)),
        (Param::Auto, Param::Auto) => {
            let base = base_config(req, resolved.bandwidths[0])?;
            let sel = select(dataset, &req.grid, &base)?;
            Ok((base.with_gamma(sel.gamma_opt).with_bandwidth(sel.b_opt), Some(sel)))
        }
        (Param::Fixed(g), Param::Auto) => {
            let base = base_config(req, resolved.bandwidths[0])?.with_gamma(g);
            base.validate()?;
            let (b, rcv_trace, skipped) = select_bandwidth(dataset, &resolved.bandwidths, &base)?;
            let sel = SelectionResult {
                gamma_opt: g,
                b_opt: b,
                hscore_trace: vec![],
                rcv_trace,
                skipped,
                grid: resolved,
            };
            Ok((base.with_bandwidth(b), Some(sel)))
        }
        (Param::Auto, Param::Fixed(b)) => {
            let base = base_config(req, b)?;
            let mut trace = Vec::new();
            let mut skipped = Vec::new();
            let mut best: Option<(f64, f64)> = None;
            for &g in &resolved.gammas {
                match hyvarinen_score(dataset, &base.with_gamma(g)) {
                    Ok(h) => {
                        trace.push((g, h));
                        if best.is_none_or(|(_, bh)| h < bh) {
                            best = Some((g, h));
                        }
                    }
                    Err(e) => skipped.push(SkippedPoint {
                        step: SelectionStep::Gamma,
                        gamma: g,
                        bandwidth: b,
                        code: e.code().into(),
                        reason: e.to_string(),
                    }),
                }
            }
            let Some((g, _)) = best else {
                return Err(Error::SelectionFailed {
                    step: "gamma".into(),
                    reasons: skipped.iter().map(|s| s.reason.clone()).collect(),
                });
            };
            let sel = SelectionResult {
                gamma_opt: g,
                b_opt: b,
                hscore_trace: trace,
                rcv_trace: vec![],
                skipped,
                grid: resolved,
            };
            Ok((base.with_gamma(g), Some(sel)))
        }
    }
}

/// Tunes (as requested), fits every location, and computes standard errors
/// and diagnostics at the final parameters.
pub fn fit(dataset: &SpatialDataset, req: &FitRequest) -> Result<FitOutcome> {
    let (config, selection) = tune(dataset, req)?;
    let config = config.resolve(dataset)?;
    let estimates = fit_all(dataset, &config)?;
    let covariance = sandwich_covariance(dataset, &estimates, &config)?;
    let diagnostics = diagnose(
        dataset,
        &estimates,
        config.gamma,
        &config.kernel,
        req.threshold,
        req.cn_include_intercept,
    )?;
    Ok(FitOutcome {
        config,
        selection,
        estimates,
        covariance,
        diagnostics,
    })
}
