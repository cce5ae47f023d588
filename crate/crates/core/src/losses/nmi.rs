//! Normalized mutual information `(H(A) + H(B)) / H(A, B)` from soft
//! joint histograms.
//!
//! Each image is min–max normalized onto `[0, B - 1]` and every pixel
//! spreads unit mass over its two nearest bins with a linear (triangular)
//! kernel, which makes the histogram piecewise linear in the intensities.
//! The normalization extremes are differentiated as well (subgradient at the
//! first arg-min / arg-max).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::series::WarpedSeries;

pub const ENTROPY_FLOOR: f64 = 1e-12;
const LOG_FLOOR: f64 = 1e-30;

/// Soft-histogram settings. JSON: `{"bins": 32}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmiConfig {
    pub bins: usize,
}

impl Default for NmiConfig {
    fn default() -> Self {
        Self { bins: 32 }
    }
}

/// Intensity interval `(lo, hi)` mapped onto the bins.
pub type Range = (f64, f64);

struct Binned {
    lo: f64,
    range: f64,
    /// The interval was supplied, so it carries no gradient.
    fixed: bool,
    argmin: usize,
    argmax: usize,
    bin: Vec<u32>,
    frac: Vec<f64>,
}

fn bin_image(x: &[f64], bins: usize, fixed: Option<Range>) -> Binned {
    let mut argmin = 0;
    let mut argmax = 0;
    for (i, v) in x.iter().enumerate() {
        if *v < x[argmin] {
            argmin = i;
        }
        if *v > x[argmax] {
            argmax = i;
        }
    }
    let (lo, range, fixed) = match fixed {
        Some((lo, hi)) => (lo, hi - lo, true),
        None => (x[argmin], x[argmax] - x[argmin], false),
    };
    let top = (bins - 1) as f64;
    let mut bin = vec![0u32; x.len()];
    let mut frac = vec![0.0; x.len()];
    if range > 0.0 {
        for (i, v) in x.iter().enumerate() {
            let u = ((v - lo) / range * top).clamp(0.0, top);
            let b = (math::floor(u) as usize).min(bins - 2);
            bin[i] = b as u32;
            frac[i] = u - b as f64;
        }
    }
    Binned {
        lo,
        range,
        fixed,
        argmin,
        argmax,
        bin,
        frac,
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * math::ln(*v)).sum::<f64>()
}

/// NMI value with gradients w.r.t. both images.
#[derive(Debug, Clone, PartialEq)]
pub struct NmiEval {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Chains the gradient w.r.t. bin coordinates back to intensities,
/// including the min/max normalization.
fn chain_normalization(x: &[f64], binned: &Binned, gu: &[f64], bins: usize) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    if binned.range <= 0.0 {
        return grad;
    }
    let s = (bins - 1) as f64;
    let r = binned.range;
    let hi = binned.lo + r;
    let mut to_lo = 0.0;
    let mut to_hi = 0.0;
    for ((g, v), du) in grad.iter_mut().zip(x).zip(gu) {
        if binned.fixed && !(binned.lo..=hi).contains(v) {
            continue;
        }
        *g = du * s / r;
        to_lo += du * s * (v - hi) / (r * r);
        to_hi -= du * s * (v - binned.lo) / (r * r);
    }
    if !binned.fixed {
        grad[binned.argmin] += to_lo;
        grad[binned.argmax] += to_hi;
    }
    grad
}

/// NMI of two equally sized images, each min–max normalized onto the bins.
pub fn nmi(a: &[f64], b: &[f64], cfg: &NmiConfig) -> Result<NmiEval> {
    nmi_in_ranges(a, b, None, None, cfg)
}

/// [`nmi`] with optional fixed intensity intervals. A fixed interval is
/// treated as a constant, and values outside it are clamped to the end bins.
pub fn nmi_in_ranges(a: &[f64], b: &[f64], range_a: Option<Range>, range_b: Option<Range>, cfg: &NmiConfig) -> Result<NmiEval> {
    let bins = cfg.bins;
    if bins < 2 {
        return Err(Error::InvalidConfig("NMI needs at least 2 bins".into()));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch("NMI images differ in size".into()));
    }
    let p = a.len();
    let ba = bin_image(a, bins, range_a);
    let bb = bin_image(b, bins, range_b);
    let inv_p = 1.0 / p as f64;

    let mut joint = vec![0.0; bins * bins];
    for q in 0..p {
        let (ia, fa) = (ba.bin[q] as usize, ba.frac[q]);
        let (ib, fb) = (bb.bin[q] as usize, bb.frac[q]);
        let wa = [1.0 - fa, fa];
        let wb = [1.0 - fb, fb];
        for (da, wa) in wa.iter().enumerate() {
            for (db, wb) in wb.iter().enumerate() {
                joint[(ia + da) * bins + ib + db] += wa * wb * inv_p;
            }
        }
    }
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for x in 0..bins {
        for y in 0..bins {
            pa[x] += joint[x * bins + y];
            pb[y] += joint[x * bins + y];
        }
    }
    let ha = entropy(&pa);
    let hb = entropy(&pb);
    let hab = entropy(&joint).max(ENTROPY_FLOOR);
    let value = (ha + hb) / hab;

    // dNMI/dp_xy, marginals folded in
    let dlog = |v: f64| -(math::ln(v.max(LOG_FLOOR)) + 1.0);
    let mut g = vec![0.0; bins * bins];
    for x in 0..bins {
        for y in 0..bins {
            g[x * bins + y] =
                (dlog(pa[x]) + dlog(pb[y])) / hab - (ha + hb) / (hab * hab) * dlog(joint[x * bins + y]);
        }
    }

    let mut gu = vec![0.0; p];
    let mut gv = vec![0.0; p];
    for q in 0..p {
        let (ia, fa) = (ba.bin[q] as usize, ba.frac[q]);
        let (ib, fb) = (bb.bin[q] as usize, bb.frac[q]);
        let wa = [1.0 - fa, fa];
        let wb = [1.0 - fb, fb];
        let mut du = 0.0;
        let mut dv = 0.0;
        for db in 0..2 {
            du += (g[(ia + 1) * bins + ib + db] - g[ia * bins + ib + db]) * wb[db];
        }
        for da in 0..2 {
            dv += (g[(ia + da) * bins + ib + 1] - g[(ia + da) * bins + ib]) * wa[da];
        }
        gu[q] = du * inv_p;
        gv[q] = dv * inv_p;
    }

    Ok(NmiEval {
        value,
        grad_a: chain_normalization(a, &ba, &gu, bins),
        grad_b: chain_normalization(b, &bb, &gv, bins),
    })
}

/// `-(1/N) Σ_i NMI(I_i ∘ φ_i, template)` with gradients w.r.t. the stack and
/// the template.
pub fn nmi_loss(stack: &WarpedSeries, template: &[f64], cfg: &NmiConfig) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    nmi_loss_over(stack, template, cfg, 0..stack.count, None)
}

/// As [`nmi_loss`], averaging only over the given image indices.
///
/// With `ranges = Some((per_image, template))` the bins are fixed to those
/// intervals instead of following each image's extremes.
pub fn nmi_loss_over(
    stack: &WarpedSeries,
    template: &[f64],
    cfg: &NmiConfig,
    images: core::ops::Range<usize>,
    ranges: Option<(&[Range], Range)>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = stack.pixels();
    if template.len() != p {
        return Err(Error::ShapeMismatch("template grid differs from stack grid".into()));
    }
    let count = images.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; stack.data.len()];
    let mut grad_t = vec![0.0; p];
    for i in images {
        let e = match ranges {
            Some((per_image, t)) => nmi_in_ranges(stack.image(i), template, Some(per_image[i]), Some(t), cfg)?,
            None => nmi(stack.image(i), template, cfg)?,
        };
        loss -= e.value / count;
        for (g, v) in grad[i * p..(i + 1) * p].iter_mut().zip(&e.grad_a) {
            *g = -v / count;
        }
        for (g, v) in grad_t.iter_mut().zip(&e.grad_b) {
            *g -= v / count;
        }
    }
    Ok((loss, grad, grad_t))
}
