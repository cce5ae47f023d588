//! Separable smoothing with replicate boundaries, and the adjoints the
//! optimizer needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

fn kernel(sigma: f64) -> (Vec<f64>, isize) {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| math::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= norm);
    (k, radius)
}

fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn horizontal(input: &[f64], width: usize, k: &[f64], radius: isize, adjoint: bool) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (src, dst) in input.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        for x in 0..width {
            let lo = x as isize - radius;
            let interior = lo >= 0 && x as isize + radius < width as isize;
            if adjoint {
                let v = src[x];
                if interior {
                    for (o, kv) in dst[lo as usize..].iter_mut().zip(k) {
                        *o += kv * v;
                    }
                } else {
                    for (j, kv) in k.iter().enumerate() {
                        dst[clampi(lo + j as isize, width)] += kv * v;
                    }
                }
            } else if interior {
                dst[x] = src[lo as usize..].iter().zip(k).map(|(a, b)| a * b).sum();
            } else {
                dst[x] = k.iter().enumerate().map(|(j, kv)| kv * src[clampi(lo + j as isize, width)]).sum();
            }
        }
    }
    out
}

fn vertical(input: &[f64], width: usize, height: usize, k: &[f64], radius: isize, adjoint: bool) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for y in 0..height {
        for (j, kv) in k.iter().enumerate() {
            let other = clampi(y as isize + j as isize - radius, height);
            let (src, dst) = if adjoint { (y, other) } else { (other, y) };
            let src = &input[src * width..(src + 1) * width];
            for (o, v) in out[dst * width..(dst + 1) * width].iter_mut().zip(src) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Blurs a row-major `width × height` image; `sigma <= 0` copies it.
pub fn gaussian_blur(map: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let (k, r) = kernel(sigma);
    let tmp = horizontal(map, width, &k, r, false);
    vertical(&tmp, width, height, &k, r, false)
}

/// Transpose of [`gaussian_blur`]: `⟨blur(a), b⟩ = ⟨a, blur_adjoint(b)⟩`.
pub fn gaussian_blur_adjoint(map: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let (k, r) = kernel(sigma);
    let tmp = vertical(map, width, height, &k, r, true);
    horizontal(&tmp, width, &k, r, true)
}

fn box_forward(src: &[f64], r: usize, prefix: &mut Vec<f64>, out: &mut [f64]) {
    let n = src.len();
    let w = (2 * r + 1) as f64;
    prefix.clear();
    prefix.push(0.0);
    let mut acc = 0.0;
    for j in 0..n + 2 * r {
        acc += src[j.saturating_sub(r).min(n - 1)];
        prefix.push(acc);
    }
    for (x, o) in out.iter_mut().enumerate() {
        *o = (prefix[x + 2 * r + 1] - prefix[x]) / w;
    }
}

fn box_adjoint(src: &[f64], r: usize, prefix: &mut Vec<f64>, out: &mut [f64]) {
    let n = src.len();
    let w = (2 * r + 1) as f64;
    prefix.clear();
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in src {
        acc += v;
        prefix.push(acc);
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..n + 2 * r {
        let lo = j.saturating_sub(2 * r);
        let hi = j.min(n - 1);
        if lo <= hi {
            out[j.saturating_sub(r).min(n - 1)] += (prefix[hi + 1] - prefix[lo]) / w;
        }
    }
}

fn transpose(input: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = input[y * width + x];
        }
    }
    out
}

fn box_rows(input: &[f64], width: usize, r: usize, passes: usize, adjoint: bool) -> Vec<f64> {
    let mut a = input.to_vec();
    let mut b = vec![0.0; input.len()];
    let mut prefix = Vec::with_capacity(width + 2 * r + 1);
    for _ in 0..passes {
        for (src, dst) in a.chunks_exact(width).zip(b.chunks_exact_mut(width)) {
            if adjoint {
                box_adjoint(src, r, &mut prefix, dst);
            } else {
                box_forward(src, r, &mut prefix, dst);
            }
        }
        core::mem::swap(&mut a, &mut b);
    }
    a
}

/// Box radius whose three-fold repetition has standard deviation closest to
/// `sigma`; zero for `sigma <= 0`.
pub fn box_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        return 0;
    }
    let width = math::sqrt(4.0 * sigma * sigma + 1.0);
    (libm::round((width - 1.0) / 2.0) as usize).max(1)
}

/// Three passes of a `(2r+1)`-wide box along each axis, a cheap
/// near-Gaussian smoother with replicate boundaries. Cost does not depend
/// on `radius`.
pub fn box_blur3(map: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return map.to_vec();
    }
    let rows = box_rows(map, width, radius, 3, false);
    let cols = box_rows(&transpose(&rows, width, height), height, radius, 3, false);
    transpose(&cols, height, width)
}

/// Transpose of [`box_blur3`].
pub fn box_blur3_adjoint(map: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return map.to_vec();
    }
    let cols = box_rows(&transpose(map, width, height), height, radius, 3, true);
    let rows = transpose(&cols, height, width);
    box_rows(&rows, width, radius, 3, true)
}

/// Applies `f` to the dx and dy planes of every field of an interleaved
/// deformation buffer.
pub fn map_planes(data: &[f64], width: usize, height: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let p = width * height;
    let mut out = vec![0.0; data.len()];
    let mut plane = vec![0.0; p];
    for (src, dst) in data.chunks_exact(2 * p).zip(out.chunks_exact_mut(2 * p)) {
        for c in 0..2 {
            for (q, v) in plane.iter_mut().enumerate() {
                *v = src[2 * q + c];
            }
            for (q, v) in f(&plane).into_iter().enumerate() {
                dst[2 * q + c] = v;
            }
        }
    }
    out
}
