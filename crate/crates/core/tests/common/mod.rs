#![allow(dead_code)]

use dgwr::kernel::Coordinates;
use dgwr::SpatialDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance on the unit square with an intercept and `p - 1`
/// standard normal covariates. A fraction `contamination` of responses is
/// shifted by 10.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, contamination: f64) -> SpatialDataset {
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let design = DMatrix::from_fn(n, p, |_, k| if k == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let beta: Vec<f64> = (0..p).map(|k| 1.0 + k as f64 * 0.5).collect();
    let y = DVector::from_fn(n, |i, _| {
        let mut v: f64 = (0..p).map(|k| design[(i, k)] * beta[k]).sum();
        v += 0.5 * pts[i][0] * design[(i, p.min(2) - 1)];
        v += rng.sample::<f64, _>(StandardNormal);
        if rng.random::<f64>() < contamination {
            v += 10.0;
        }
        v
    });
    SpatialDataset::new(Coordinates::new(pts).unwrap(), design, y).unwrap()
}

pub fn gaussian_weight(d: f64, b: f64) -> f64 {
    (-d * d / (2.0 * b * b)).exp()
}

pub fn weights(ds: &SpatialDataset, b: f64, target: usize) -> Vec<f64> {
    let pts = ds.coords().points();
    (0..ds.n())
        .map(|j| {
            let dx = pts[target][0] - pts[j][0];
            let dy = pts[target][1] - pts[j][1];
            gaussian_weight((dx * dx + dy * dy).sqrt(), b)
        })
        .collect()
}

pub fn density(y: f64, mu: f64, s2: f64) -> f64 {
    (-(y - mu) * (y - mu) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
}

pub fn fitted(ds: &SpatialDataset, j: usize, beta: &[f64]) -> f64 {
    (0..ds.p()).map(|k| ds.design()[(j, k)] * beta[k]).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Inverse via column-by-column solves.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|c| solve(a.to_vec(), (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, k) = (a.len(), b[0].len(), b.len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Normal-equations weighted least squares: `(X'WX) beta = X'Wy`.
pub fn wls(ds: &SpatialDataset, w: &[f64]) -> Vec<f64> {
    let p = ds.p();
    let x = ds.design();
    let y = ds.response();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for j in 0..ds.n() {
        for r in 0..p {
            b[r] += w[j] * x[(j, r)] * y[j];
            for c in 0..p {
                a[r][c] += w[j] * x[(j, r)] * x[(j, c)];
            }
        }
    }
    solve(a, b)
}

/// Straightforward majorization-minimization with explicit density powers,
/// run for a fixed number of iterations from the weighted least-squares fit.
pub fn naive_mm(ds: &SpatialDataset, w: &[f64], gamma: f64, iters: usize) -> (Vec<f64>, f64) {
    let y = ds.response();
    let mut beta = wls(ds, w);
    let sw: f64 = w.iter().sum();
    let mut s2 = (0..ds.n())
        .map(|j| w[j] * (y[j] - fitted(ds, j, &beta)).powi(2))
        .sum::<f64>()
        / sw;
    for _ in 0..iters {
        let raw: Vec<f64> = (0..ds.n())
            .map(|j| w[j] * density(y[j], fitted(ds, j, &beta), s2).powf(gamma))
            .collect();
        let total: f64 = raw.iter().sum();
        let u: Vec<f64> = raw.iter().map(|v| v / total).collect();
        beta = wls(ds, &u);
        s2 = (1.0 + gamma)
            * (0..ds.n())
                .map(|j| u[j] * (y[j] - fitted(ds, j, &beta)).powi(2))
                .sum::<f64>();
    }
    (beta, s2)
}

/// Gamma-divergence objective evaluated term by term without logs of sums.
pub fn naive_objective(ds: &SpatialDataset, w: &[f64], beta: &[f64], s2: f64, gamma: f64) -> f64 {
    let y = ds.response();
    let s: f64 = (0..ds.n())
        .map(|j| w[j] * density(y[j], fitted(ds, j, beta), s2).powf(gamma))
        .sum();
    s.ln() / gamma + gamma / (2.0 * (1.0 + gamma)) * s2.ln()
}

/// `|| sum_j w_j phi_j^g x_j r_j ||_2 / sum_j w_j phi_j^g`, computed with a
/// common log shift.
pub fn estimating_equation_residual(ds: &SpatialDataset, w: &[f64], beta: &[f64], s2: f64, gamma: f64) -> f64 {
    let y = ds.response();
    let logs: Vec<f64> = (0..ds.n())
        .map(|j| {
            let r = y[j] - fitted(ds, j, beta);
            w[j].ln() + gamma * (-r * r / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln())
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = vec![0.0; ds.p()];
    let mut den = 0.0;
    for j in 0..ds.n() {
        let v = (logs[j] - m).exp();
        let r = y[j] - fitted(ds, j, beta);
        den += v;
        for k in 0..ds.p() {
            num[k] += v * ds.design()[(j, k)] * r;
        }
    }
    num.iter().map(|v| v * v).sum::<f64>().sqrt() / den
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs())))
        .fold(0.0, f64::max)
}

pub fn rcv_oracle(ds: &dgwr::SpatialDataset, b: f64, gamma: f64) -> f64 {
    let y = ds.response();
    let mut sum_phi = 0.0;
    let mut sum_s2 = 0.0;
    for i in 0..ds.n() {
        let mut w = weights(ds, b, i);
        w[i] = 0.0;
        let (beta, s2) = naive_mm(ds, &w, gamma, 3000);
        sum_phi += density(y[i], fitted(ds, i, &beta), s2).powf(gamma);
        sum_s2 += s2;
    }
    sum_phi.ln() / gamma + gamma / (2.0 * (1.0 + gamma)) * sum_s2.ln()
}

pub fn hyvarinen_oracle(ds: &dgwr::SpatialDataset, ests: &[dgwr::LocalEstimate], gamma: f64) -> f64 {
    let y = ds.response();
    (0..ds.n())
        .map(|i| {
            let mu = fitted(ds, i, &ests[i].beta);
            let s2 = ests[i].sigma2;
            let r2 = (y[i] - mu).powi(2);
            let w = density(y[i], mu, s2).powf(gamma);
            (2.0 * (gamma * r2 - s2) * w + r2 * w * w) / (s2 * s2)
        })
        .sum()
}

/// Sandwich assembled with explicit loops and `powf`.
pub fn sandwich_oracle(ds: &dgwr::SpatialDataset, w: &[f64], beta: &[f64], s2: f64, gamma: f64) -> Vec<Vec<f64>> {
    let p = ds.p();
    let x = ds.design();
    let y = ds.response();
    let mut j = vec![vec![0.0; p]; p];
    let mut info = vec![vec![0.0; p]; p];
    for k in 0..ds.n() {
        let r = y[k] - fitted(ds, k, beta);
        let phi = density(y[k], fitted(ds, k, beta), s2);
        for a in 0..p {
            for b in 0..p {
                let xx = x[(k, a)] * x[(k, b)];
                j[a][b] += w[k] * phi.powf(gamma) * (gamma * r * r / s2 - 1.0) * xx;
                info[a][b] += w[k] * w[k] * phi.powf(2.0 * gamma) * r * r * xx;
            }
        }
    }
    let ji = inverse(&j);
    matmul(&matmul(&ji, &info), &ji)
}
