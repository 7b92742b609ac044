//! Robust geographically weighted regression.
//!
//! Local regression coefficients are estimated at every location by
//! maximizing a kernel-weighted gamma-divergence instead of the weighted
//! log-likelihood, which automatically downweights observations that are
//! unlikely under the local fit. `gamma = 0` gives classical GWR.
//!
//! The crate covers:
//!
//! - [`kernel`]: distances, kernel weights, bandwidth candidates;
//! - [`estimator`]: the per-location majorization-minimization fit;
//! - [`selection`]: choosing gamma (Hyvärinen score) and the bandwidth
//!   (robust leave-one-out cross-validation);
//! - [`inference`]: sandwich standard errors, normalized outlier weights,
//!   local condition numbers;
//! - [`sim`]: the synthetic contamination experiment;
//! - [`pipeline`], [`io`], [`cli`]: end-to-end fitting, file formats and the
//!   `dgwr` binary.
//!
//! ```no_run
//! use dgwr::pipeline::{fit, FitRequest};
//! # fn demo(ds: &dgwr::SpatialDataset) -> dgwr::Result<()> {
//! let out = fit(ds, &FitRequest::default())?;
//! println!("gamma = {}, b = {}", out.config.gamma, out.config.kernel.bandwidth);
//! # Ok(()) }
//! ```

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod pipeline;
pub mod selection;
pub mod sim;

pub use dataset::SpatialDataset;
pub use error::{Error, Result};
pub use estimator::{FitConfig, LocalEstimate};
pub use kernel::{Coordinates, KernelFamily, KernelSpec};
