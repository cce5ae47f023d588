//! Normalized correlation matrix of the pixel-profile matrix and the
//! eigenvalue-concentration loss `Σ_i i·λ_i`.
//!
//! With `M ∈ R^{P×N}` (one row per pixel, one column per image),
//! `K = Σ⁻¹ (M - M̄)ᵀ (M - M̄) Σ⁻¹ / (P - 1)` where `Σ` holds the sample
//! column SDs, so `tr K = N`.
//!
//! The gradient uses `∂λ_i/∂K = u_i u_iᵀ`, then back-propagates through the
//! SD normalization and the mean subtraction. Inside a degenerate
//! eigenvalue block the computed eigenbasis is used as is.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::math;
use crate::series::WarpedSeries;

/// Eigen-structure of the normalized correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpectrum {
    pub n: usize,
    /// Row-major `N × N`.
    pub k: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Row-major; column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: Vec<f64>,
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
    /// Columns whose SD was floored because the image is constant.
    pub floored: Vec<bool>,
}

impl CorrelationSpectrum {
    /// `λ₁ / N`, the share of the leading eigenvalue.
    pub fn leading_share(&self) -> f64 {
        self.eigenvalues[0] / self.n as f64
    }

    pub fn has_warnings(&self) -> bool {
        self.floored.iter().any(|f| *f)
    }
}

/// Centered columns and (possibly floored) SDs.
fn standardize(stack: &WarpedSeries) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
    let p = stack.pixels();
    let n = stack.count;
    let scale = stack.data.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    let eps = 1e-12 * if scale > 0.0 { scale } else { 1.0 };
    let mut z = stack.data.clone();
    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    let mut floored = vec![false; n];
    for j in 0..n {
        let col = &mut z[j * p..(j + 1) * p];
        let mean = col.iter().sum::<f64>() / p as f64;
        let mut ss = 0.0;
        for v in col.iter_mut() {
            *v -= mean;
            ss += *v * *v;
        }
        let sd = math::sqrt(ss / (p - 1) as f64);
        means[j] = mean;
        if sd <= eps {
            sds[j] = eps;
            floored[j] = true;
        } else {
            sds[j] = sd;
        }
    }
    (z, means, sds, floored)
}

/// Builds `K` for a stack and eigendecomposes it.
pub fn correlation_spectrum(stack: &WarpedSeries) -> Result<CorrelationSpectrum> {
    let n = stack.count;
    let p = stack.pixels();
    if n < 2 || p < 2 {
        return Err(Error::InvalidSeries("correlation needs at least 2 images of 2 pixels".into()));
    }
    let (z, column_means, column_sds, floored) = standardize(stack);
    let mut k = vec![0.0; n * n];
    let denom = (p - 1) as f64;
    for j in 0..n {
        let zj = &z[j * p..(j + 1) * p];
        for l in j..n {
            let zl = &z[l * p..(l + 1) * p];
            let dot: f64 = zj.iter().zip(zl).map(|(a, b)| a * b).sum();
            let v = dot / (denom * column_sds[j] * column_sds[l]);
            k[j * n + l] = v;
            k[l * n + j] = v;
        }
    }
    let eig = symmetric_eigen(&k, n)?;
    Ok(CorrelationSpectrum {
        n,
        k,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        column_means,
        column_sds,
        floored,
    })
}

/// `Σ_i i·λ_i` with `λ` descending and `i` starting at 1.
pub fn pca_loss(spec: &CorrelationSpectrum) -> f64 {
    spec.eigenvalues
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1) as f64 * l)
        .sum()
}

/// Gradient of [`pca_loss`] w.r.t. the stack intensities (image-major).
pub fn pca_loss_backward(stack: &WarpedSeries, spec: &CorrelationSpectrum) -> Vec<f64> {
    let n = spec.n;
    let p = stack.pixels();
    let denom = (p - 1) as f64;

    // dL/dK = Σ_i i·u_i u_iᵀ
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        let w = (i + 1) as f64;
        for r in 0..n {
            let ur = spec.eigenvectors[r * n + i];
            for c in 0..n {
                g[r * n + c] += w * ur * spec.eigenvectors[c * n + i];
            }
        }
    }

    // Y = Z Σ⁻¹, dL/dY = 2 Y G / (P - 1)
    let mut y = stack.data.clone();
    for j in 0..n {
        let (mean, sd) = (spec.column_means[j], spec.column_sds[j]);
        for v in &mut y[j * p..(j + 1) * p] {
            *v = (*v - mean) / sd;
        }
    }
    let mut dy = vec![0.0; n * p];
    for j in 0..n {
        let out = &mut dy[j * p..(j + 1) * p];
        for l in 0..n {
            let coeff = 2.0 * g[l * n + j] / denom;
            if coeff == 0.0 {
                continue;
            }
            for (o, yl) in out.iter_mut().zip(&y[l * p..(l + 1) * p]) {
                *o += coeff * yl;
            }
        }
    }

    // through y = z / sd(z) and z = m - mean(m)
    let mut grad = dy;
    for j in 0..n {
        let sd = spec.column_sds[j];
        let yj = &y[j * p..(j + 1) * p];
        let col = &mut grad[j * p..(j + 1) * p];
        if !spec.floored[j] {
            let proj: f64 = col.iter().zip(yj).map(|(d, yv)| d * yv).sum::<f64>() / denom;
            for (d, yv) in col.iter_mut().zip(yj) {
                *d = (*d - yv * proj) / sd;
            }
        } else {
            for d in col.iter_mut() {
                *d /= sd;
            }
        }
        let mean = col.iter().sum::<f64>() / p as f64;
        for d in col.iter_mut() {
            *d -= mean;
        }
    }
    grad
}
