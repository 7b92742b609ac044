//! Spatial distances, kernel weights and bandwidth candidates.
//!
//! Coordinates are treated as planar. Raw longitude/latitude pairs are used
//! as-is; project them first if the study area is large enough for the
//! curvature of the earth to matter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar point locations `s_1, ..., s_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Coordinates {
    points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("at least one location is required".into()));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Input(format!("coordinate {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[j]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Returns the points reordered by `order` (`order[k]` is the old index of
    /// the new k-th point).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&k| self.points[k]).collect(),
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for Coordinates {
    type Error = Error;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self> {
        Coordinates::new(points)
    }
}

impl From<Coordinates> for Vec<[f64; 2]> {
    fn from(c: Coordinates) -> Self {
        c.points
    }
}

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Distances from location `i` to every location.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Computes all pairwise distances.
pub fn distance_matrix(coords: &Coordinates) -> DistanceMatrix {
    let n = coords.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = coords.distance(i, j);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-d^2 / (2 b^2))`
    #[default]
    Gaussian,
    /// `(1 - (d/b)^2)^2` inside the bandwidth, zero outside.
    Bisquare,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "bisquare" => Ok(Self::Bisquare),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Weight function family together with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        let spec = Self { family, bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config(format!(
                "bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        Self { bandwidth, ..self }
    }

    /// Kernel value at distance `d`.
    #[inline]
    pub fn weight(&self, d: f64) -> f64 {
        let t = d / self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => (-0.5 * t * t).exp(),
            KernelFamily::Bisquare => {
                if t < 1.0 {
                    let v = 1.0 - t * t;
                    v * v
                } else {
                    0.0
                }
            }
        }
    }
}

/// Kernel weights `w_i1(b), ..., w_in(b)` seen from one target location.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub target_index: usize,
    pub weights: Vec<f64>,
}

impl WeightVector {
    /// Sum of the weights, i.e. the effective local sample size.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Evaluates the kernel on one row of the distance matrix.
pub fn kernel_weights(spec: &KernelSpec, distances: &[f64], target: usize) -> Result<WeightVector> {
    spec.validate()?;
    if target >= distances.len() {
        return Err(Error::Input(format!(
            "target {target} out of range for {} distances",
            distances.len()
        )));
    }
    Ok(WeightVector {
        target_index: target,
        weights: distances.iter().map(|&d| spec.weight(d)).collect(),
    })
}

/// Median of the `n(n-1)/2` distances between distinct unordered pairs.
///
/// Self-distances are excluded. An even number of pairs yields the mean of
/// the two middle values.
pub fn median_pairwise_distance(coords: &Coordinates) -> Result<f64> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::Input(
            "median pairwise distance needs at least two locations".into(),
        ));
    }
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(coords.distance(i, j));
        }
    }
    let m = d.len();
    let mid = m / 2;
    let (_, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        return Ok(upper);
    }
    let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lower + upper))
}

/// `{k b*/L : k = 1..L}` with `b*` the median pairwise distance.
pub fn bandwidth_grid(coords: &Coordinates, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Config("bandwidth grid needs at least one point".into()));
    }
    let median = median_pairwise_distance(coords)?;
    Ok(bandwidth_grid_from_median(median, count))
}

pub(crate) fn bandwidth_grid_from_median(median: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|k| if k == count { median } else { k as f64 * median / count as f64 })
        .collect()
}
