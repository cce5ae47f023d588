//! Smoothness and cyclic-consistency penalties on displacement fields.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::series::DeformationSet;

/// `(1 / NP) Σ_i Σ_p ‖∇φ_i(p)‖²` with forward differences; the difference
/// past the last row or column is zero.
pub fn smoothness_loss(defs: &DeformationSet) -> f64 {
    let (w, h) = (defs.width(), defs.height());
    let mut total = 0.0;
    for i in 0..defs.len() {
        let f = defs.field(i);
        for y in 0..h {
            for x in 0..w {
                let p = 2 * (y * w + x);
                for c in 0..2 {
                    if x + 1 < w {
                        let d = f[p + 2 + c] - f[p + c];
                        total += d * d;
                    }
                    if y + 1 < h {
                        let d = f[p + 2 * w + c] - f[p + c];
                        total += d * d;
                    }
                }
            }
        }
    }
    total / (defs.len() * defs.pixels()) as f64
}

pub fn smoothness_backward(defs: &DeformationSet) -> Vec<f64> {
    let (w, h) = (defs.width(), defs.height());
    let scale = 2.0 / (defs.len() * defs.pixels()) as f64;
    let mut grad = vec![0.0; defs.data().len()];
    for i in 0..defs.len() {
        let f = defs.field(i);
        let g = &mut grad[i * 2 * w * h..(i + 1) * 2 * w * h];
        for y in 0..h {
            for x in 0..w {
                let p = 2 * (y * w + x);
                for c in 0..2 {
                    if x + 1 < w {
                        let d = scale * (f[p + 2 + c] - f[p + c]);
                        g[p + 2 + c] += d;
                        g[p + c] -= d;
                    }
                    if y + 1 < h {
                        let d = scale * (f[p + 2 * w + c] - f[p + c]);
                        g[p + 2 * w + c] += d;
                        g[p + c] -= d;
                    }
                }
            }
        }
    }
    grad
}

/// Per-pixel, per-component sum of the fields over images.
fn field_sum(defs: &DeformationSet) -> Vec<f64> {
    let mut sum = vec![0.0; defs.pixels() * 2];
    for i in 0..defs.len() {
        for (s, v) in sum.iter_mut().zip(defs.field(i)) {
            *s += v;
        }
    }
    sum
}

/// `sqrt((1 / NP) Σ_p ‖Σ_i φ_i(p)‖²)`, the squared norm summing both
/// displacement components.
pub fn cyclic_loss(defs: &DeformationSet) -> f64 {
    let ss: f64 = field_sum(defs).iter().map(|v| v * v).sum();
    math::sqrt(ss / (defs.len() * defs.pixels()) as f64)
}

/// Gradient of [`cyclic_loss`]; zero where the loss itself is zero.
pub fn cyclic_backward(defs: &DeformationSet) -> Vec<f64> {
    let sum = field_sum(defs);
    let np = (defs.len() * defs.pixels()) as f64;
    let loss = math::sqrt(sum.iter().map(|v| v * v).sum::<f64>() / np);
    let mut grad = vec![0.0; defs.data().len()];
    if loss == 0.0 {
        return grad;
    }
    let stride = sum.len();
    for i in 0..defs.len() {
        for (g, s) in grad[i * stride..(i + 1) * stride].iter_mut().zip(&sum) {
            *g = s / (np * loss);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_smooth() {
        let d = DeformationSet::constant(3, 5, 4, 1.5, -2.0);
        assert_eq!(smoothness_loss(&d), 0.0);
        assert!(smoothness_backward(&d).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unit_shear_count() {
        let (n, w, h) = (2, 6, 5);
        let mut d = DeformationSet::zeros(n, w, h);
        for i in 0..n {
            let f = d.field_mut(i);
            for y in 0..h {
                for x in 0..w {
                    f[2 * (y * w + x)] = x as f64;
                }
            }
        }
        // every pixel with x < w - 1 contributes 1, in every image
        let expect = (n * (w - 1) * h) as f64 / (n * w * h) as f64;
        assert!((smoothness_loss(&d) - expect).abs() < 1e-15);
    }

    #[test]
    fn cyclic_cases() {
        assert_eq!(cyclic_loss(&DeformationSet::zeros(3, 4, 4)), 0.0);
        let mut d = DeformationSet::zeros(3, 4, 4);
        for (k, v) in d.field_mut(0).iter_mut().enumerate() {
            *v = (k as f64 * 0.7).sin();
        }
        let neg: Vec<f64> = d.field(0).iter().map(|v| -v).collect();
        d.field_mut(1).copy_from_slice(&neg);
        assert!(cyclic_loss(&d) < 1e-15);

        let d = DeformationSet::from_vec(2, 1, 1, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert!((cyclic_loss(&d) - 12.5f64.sqrt()).abs() < 1e-12);
    }
}
