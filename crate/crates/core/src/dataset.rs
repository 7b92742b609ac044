use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{distance_matrix, Coordinates, DistanceMatrix};

/// Locations, design matrix and response: the `(s_i, x_i, y_i)` triples.
///
/// By convention the first design column is an all-ones intercept. Pairwise
/// distances are computed once at construction and shared by every fit.
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    coords: Coordinates,
    design: DMatrix<f64>,
    response: DVector<f64>,
    distances: DistanceMatrix,
}

impl SpatialDataset {
    pub fn new(coords: Coordinates, design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let n = coords.len();
        let p = design.ncols();
        if design.nrows() != n || response.len() != n {
            return Err(Error::Input(format!(
                "row counts disagree: {n} coordinates, {} design rows, {} responses",
                design.nrows(),
                response.len()
            )));
        }
        if p == 0 {
            return Err(Error::Input("design matrix has no columns".into()));
        }
        if n < p + 1 {
            return Err(Error::Input(format!(
                "need at least p + 1 = {} samples, got {n}",
                p + 1
            )));
        }
        if let Some(k) = design.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "design entry (row {}, column {}) is not finite",
                k % n,
                k / n
            )));
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("response {i} is not finite")));
        }
        let distances = distance_matrix(&coords);
        Ok(Self {
            coords,
            design,
            response,
            distances,
        })
    }

    /// Builds a dataset from covariate columns, prepending the intercept.
    pub fn with_intercept(coords: Coordinates, covariates: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let n = coords.len();
        if let Some(c) = covariates.iter().find(|c| c.len() != n) {
            return Err(Error::Input(format!(
                "covariate column has {} rows, expected {n}",
                c.len()
            )));
        }
        let design = DMatrix::from_fn(n, covariates.len() + 1, |i, k| {
            if k == 0 {
                1.0
            } else {
                covariates[k - 1][i]
            }
        });
        Self::new(coords, design, DVector::from_vec(response))
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// `x_j' beta`
    #[inline]
    pub fn fitted(&self, j: usize, beta: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for k in 0..self.p() {
            s += self.design[(j, k)] * beta[k];
        }
        s
    }

    /// Whether the first design column is identically one.
    pub fn has_intercept(&self) -> bool {
        self.design.column(0).iter().all(|&v| v == 1.0)
    }

    /// Same locations and design with a replaced response.
    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        if response.len() != self.n() {
            return Err(Error::Input("replacement response has the wrong length".into()));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("replacement response is not finite".into()));
        }
        Ok(Self {
            response,
            ..self.clone()
        })
    }

    /// Same samples, reordered: new sample `k` is old sample `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&k| k >= n || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::Input("order is not a permutation".into()));
        }
        let design = DMatrix::from_fn(n, self.p(), |i, k| self.design[(order[i], k)]);
        let response = DVector::from_fn(n, |i, _| self.response[order[i]]);
        Self::new(self.coords.permuted(order), design, response)
    }

    /// Sample variance of the response (denominator `n`).
    pub fn response_variance(&self) -> f64 {
        let n = self.n() as f64;
        let mean = self.response.sum() / n;
        self.response.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
    }
}
