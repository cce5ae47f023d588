//! Finite-difference checks of every analytic backward pass on small random
//! instances. Each check returns the worst relative error per instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t1reg_core::losses::nmi::{nmi, NmiConfig};
use t1reg_core::losses::pca::{correlation_spectrum, pca_loss, pca_loss_backward};
use t1reg_core::losses::regularizers::{cyclic_backward, cyclic_loss, smoothness_backward, smoothness_loss};
use t1reg_core::losses::relax::{relax_loss_backward_with, relax_loss_with};
use t1reg_core::losses::total::total_loss;
use t1reg_core::optimizer::{check_gradient, check_gradient_filtered, CheckOptions, GradientCheck};
use t1reg_core::relaxometry::{fit_series, molli_signal, FitConfig, MolliParams};
use t1reg_core::warp::{warp_backward, warp_image};
use t1reg_core::{DeformationSet, ImageSeries, LossWeights, Result, WarpedSeries};

/// One backward pass checked over many instances.
pub struct SuiteResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub checks: Vec<GradientCheck>,
}

impl SuiteResult {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.checks.iter().map(|c| c.checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance && self.checks.iter().all(|c| c.checked > 0)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn near_integer(v: f64, margin: f64) -> bool {
    let f = v - v.floor();
    f < margin || f > 1.0 - margin
}

/// Field coordinate `c` of a `w × h` field samples an interior cell away
/// from bilinear kinks.
fn smooth_coordinate(field: &[f64], w: usize, h: usize, c: usize, margin: f64) -> bool {
    let p = c / 2;
    let (x, y) = ((p % w) as f64, (p / w) as f64);
    let sx = x + field[2 * p];
    let sy = y + field[2 * p + 1];
    sx > 0.0
        && sy > 0.0
        && sx < (w - 1) as f64
        && sy < (h - 1) as f64
        && !near_integer(sx, margin)
        && !near_integer(sy, margin)
}

pub fn warp(trials: u64) -> Result<SuiteResult> {
    let opts = CheckOptions {
        step: 1e-4,
        abs_floor: 1e-6,
        ..CheckOptions::default()
    };
    let mut checks = Vec::new();
    for trial in 0..trials {
        let mut r = rng(1000 + trial);
        let (w, h) = (6, 6);
        let image = uniform(&mut r, w * h, 0.0, 1.0);
        let field = uniform(&mut r, 2 * w * h, -1.5, 1.5);
        let upstream = uniform(&mut r, w * h, -1.0, 1.0);
        let analytic = warp_backward(&image, &field, w, h, &upstream)?;
        let f = |x: &[f64]| {
            let out = warp_image(&image, x, w, h)?;
            Ok(out.iter().zip(&upstream).map(|(a, b)| a * b).sum())
        };
        checks.push(check_gradient_filtered(f, &analytic, &field, &opts, |c| {
            smooth_coordinate(&field, w, h, c, 1e-3)
        })?);
    }
    Ok(SuiteResult {
        name: "warp",
        tolerance: 1e-4,
        checks,
    })
}

/// Columns that share one base image, so the spectrum is far from flat.
pub fn random_stack(r: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> WarpedSeries {
    let base = uniform(r, w * h, 0.0, 1.0);
    let mut data = Vec::with_capacity(n * w * h);
    for _ in 0..n {
        let a = r.random_range(0.5..2.0);
        let b = r.random_range(-1.0..1.0);
        for &v in &base {
            data.push(a * v + b + r.random_range(-0.3..0.3));
        }
    }
    WarpedSeries::new(w, h, n, data).unwrap()
}

pub fn pca(trials: u64) -> Result<SuiteResult> {
    let opts = CheckOptions {
        step: 1e-5,
        abs_floor: 1e-6,
        ..CheckOptions::default()
    };
    let mut checks = Vec::new();
    for trial in 0..trials {
        let mut r = rng(2000 + trial);
        let stack = random_stack(&mut r, 5, 5, 4);
        let spec = correlation_spectrum(&stack)?;
        let analytic = pca_loss_backward(&stack, &spec);
        let f = |x: &[f64]| {
            let s = WarpedSeries::new(5, 5, 4, x.to_vec())?;
            Ok(pca_loss(&correlation_spectrum(&s)?))
        };
        checks.push(check_gradient(f, &analytic, &stack.data, &opts)?);
    }
    Ok(SuiteResult {
        name: "pca",
        tolerance: 1e-4,
        checks,
    })
}

// Central differences are exact on quadratics, so the quadratic terms use a
// wide step that only reduces round-off.
fn quadratic_opts() -> CheckOptions {
    CheckOptions {
        step: 1e-3,
        abs_floor: 1e-6,
        ..CheckOptions::default()
    }
}

pub fn relax(trials: u64) -> Result<SuiteResult> {
    let mut checks = Vec::new();
    for trial in 0..trials {
        let mut r = rng(3000 + trial);
        let (w, h, n) = (4, 5, 4);
        let stack = WarpedSeries::new(w, h, n, uniform(&mut r, w * h * n, 0.0, 2.0))?;
        let prediction = uniform(&mut r, w * h * n, -2.0, 2.0);
        let analytic = relax_loss_backward_with(&stack, &prediction)?;
        let f = |x: &[f64]| relax_loss_with(&WarpedSeries::new(w, h, n, x.to_vec())?, &prediction);
        checks.push(check_gradient(f, &analytic, &stack.data, &quadratic_opts())?);
    }
    Ok(SuiteResult {
        name: "relax",
        tolerance: 1e-4,
        checks,
    })
}

fn random_defs(r: &mut ChaCha8Rng, n: usize, w: usize, h: usize, amp: f64) -> DeformationSet {
    DeformationSet::from_vec(n, w, h, uniform(r, 2 * n * w * h, -amp, amp)).unwrap()
}

pub fn regularizers(trials: u64) -> Result<[SuiteResult; 2]> {
    let (mut smooth, mut cyclic) = (Vec::new(), Vec::new());
    for trial in 0..trials {
        let mut r = rng(4000 + trial);
        let (n, w, h) = (3, 6, 5);
        let defs = random_defs(&mut r, n, w, h, 2.0);
        let rebuild = |x: &[f64]| DeformationSet::from_vec(n, w, h, x.to_vec());
        let g = smoothness_backward(&defs);
        smooth.push(check_gradient(|x| Ok(smoothness_loss(&rebuild(x)?)), &g, defs.data(), &quadratic_opts())?);
        let g = cyclic_backward(&defs);
        cyclic.push(check_gradient(|x| Ok(cyclic_loss(&rebuild(x)?)), &g, defs.data(), &quadratic_opts())?);
    }
    Ok([
        SuiteResult {
            name: "smoothness",
            tolerance: 1e-4,
            checks: smooth,
        },
        SuiteResult {
            name: "cyclic",
            tolerance: 1e-4,
            checks: cyclic,
        },
    ])
}

/// Bin coordinate of every pixel after min–max normalization.
fn bin_coordinates(x: &[f64], bins: usize) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    x.iter().map(|v| (v - lo) / (hi - lo) * (bins - 1) as f64).collect()
}

/// Bilinear histograms have kinks at bin edges: a pixel is skipped when its
/// own bin coordinate is near one, and the extremes are skipped when any
/// pixel is (they move every coordinate through the normalization).
fn nmi_safe(x: &[f64], bins: usize) -> impl Fn(usize) -> bool {
    let u = bin_coordinates(x, bins);
    let top = (bins - 1) as f64;
    let fragile = u.iter().any(|v| near_integer(*v, 1e-4) && *v > 1e-9 && *v < top - 1e-9);
    let imin = (0..x.len()).min_by(|&i, &j| x[i].total_cmp(&x[j])).unwrap();
    let imax = (0..x.len()).max_by(|&i, &j| x[i].total_cmp(&x[j])).unwrap();
    move |i| {
        if i == imin || i == imax {
            !fragile
        } else {
            !near_integer(u[i], 1e-4)
        }
    }
}

pub fn nmi_pair(trials: u64) -> Result<SuiteResult> {
    let cfg = NmiConfig::default();
    let opts = CheckOptions {
        step: 1e-7,
        abs_floor: 1e-6,
        ..CheckOptions::default()
    };
    let mut checks = Vec::new();
    for trial in 0..trials {
        let mut r = rng(5000 + trial);
        let a = uniform(&mut r, 64, 0.0, 1.0);
        let b: Vec<f64> = a.iter().map(|v| v * v + r.random_range(-0.1..0.1)).collect();
        let e = nmi(&a, &b, &cfg)?;
        checks.push(check_gradient_filtered(
            |x| Ok(nmi(x, &b, &cfg)?.value),
            &e.grad_a,
            &a,
            &opts,
            nmi_safe(&a, cfg.bins),
        )?);
        checks.push(check_gradient_filtered(
            |x| Ok(nmi(&a, x, &cfg)?.value),
            &e.grad_b,
            &b,
            &opts,
            nmi_safe(&b, cfg.bins),
        )?);
    }
    Ok(SuiteResult {
        name: "nmi",
        tolerance: 1e-4,
        checks,
    })
}

/// A 6×6, four-image MOLLI series with smooth parameter variation and
/// mild noise.
fn molli_series(r: &mut ChaCha8Rng) -> ImageSeries {
    let (w, h) = (6usize, 6usize);
    let times = [120.0, 400.0, 1100.0, 2400.0];
    let mut data = Vec::with_capacity(4 * w * h);
    for &t in &times {
        for y in 0..h {
            for x in 0..w {
                let p = MolliParams::new(1.0 + 0.05 * x as f64, 1.8 + 0.02 * y as f64, 600.0 + 40.0 * (x + y) as f64);
                data.push(molli_signal(&p, t) + r.random_range(0.0..0.02));
            }
        }
    }
    ImageSeries::new(w, h, times.to_vec(), data).unwrap()
}

pub fn total(trials: u64) -> Result<SuiteResult> {
    let opts = CheckOptions {
        step: 1e-5,
        abs_floor: 1e-6,
        ..CheckOptions::default()
    };
    let mut checks = Vec::new();
    for trial in 0..trials {
        let mut r = rng(6000 + trial);
        let series = molli_series(&mut r);
        let maps = fit_series(&series, None, &FitConfig::default())?;
        let defs = random_defs(&mut r, 4, 6, 6, 1.2);
        let weights = LossWeights::PCA_RELAX;
        let eval = total_loss(&series, &defs, Some(&maps), weights)?;
        let f = |x: &[f64]| {
            let d = DeformationSet::from_vec(4, 6, 6, x.to_vec())?;
            Ok(total_loss(&series, &d, Some(&maps), weights)?.total)
        };
        let field_of = |c: usize| &defs.data()[(c / 72) * 72..(c / 72 + 1) * 72];
        checks.push(check_gradient_filtered(f, &eval.grad, defs.data(), &opts, |c| {
            smooth_coordinate(field_of(c), 6, 6, c % 72, 1e-3)
        })?);
    }
    Ok(SuiteResult {
        name: "total",
        tolerance: 5e-4,
        checks,
    })
}
