//! MOLLI signal model, per-pixel three-parameter fitting and fitting-SD
//! estimation.
//!
//! The magnitude model is `S(t) = |C (1 - k exp(-t / T1*))|` with
//! `T1 = (k - 1) T1*`. Fitting restores the polarity of the first `m`
//! samples for every candidate `m` and keeps the lowest residual.
//!
//! The SD map uses first-order error propagation on the polarity-restored
//! residuals: `Cov = RSS / (N - 3) · (JᵀJ)⁻¹` and `σ_T1² = gᵀ Cov g` with
//! `g = ∇T1 = [0, T1*, k - 1]`.

mod screen;
pub mod simplex;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::series::{ImageSeries, Mask, ParameterMaps, WarpedSeries, SENTINEL_MS};

/// `(C, k, T1*)` of one pixel. `T1*` in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MolliParams {
    pub c: f64,
    pub k: f64,
    pub t1star: f64,
}

impl MolliParams {
    pub fn new(c: f64, k: f64, t1star: f64) -> Self {
        Self { c, k, t1star }
    }

    pub fn is_valid(&self) -> bool {
        self.c.is_finite() && self.k.is_finite() && self.t1star.is_finite() && self.t1star > 0.0 && self.c >= 0.0
    }

    /// Signed recovery `C (1 - k exp(-t / T1*))`.
    #[inline]
    pub fn signed(&self, t: f64) -> f64 {
        self.c * (1.0 - self.k * math::exp(-t / self.t1star))
    }

    /// Partial derivatives of the signed model w.r.t. `(C, k, T1*)`.
    #[inline]
    pub fn signed_gradient(&self, t: f64) -> [f64; 3] {
        let e = math::exp(-t / self.t1star);
        [
            1.0 - self.k * e,
            -self.c * e,
            -self.c * self.k * e * t / (self.t1star * self.t1star),
        ]
    }

    /// Inversion time at which the signed model crosses zero (k > 1).
    pub fn null_point(&self) -> Option<f64> {
        (self.k > 1.0).then(|| self.t1star * math::ln(self.k))
    }
}

/// The magnitude signal model.
pub fn molli_signal(p: &MolliParams, t: f64) -> f64 {
    math::abs(p.signed(t))
}

/// Analytic gradient of [`molli_signal`] w.r.t. `(C, k, T1*)`; undefined at
/// the null point, where the sign of the signed model is taken as positive.
pub fn molli_signal_gradient(p: &MolliParams, t: f64) -> [f64; 3] {
    let g = p.signed_gradient(t);
    if p.signed(t) < 0.0 {
        [-g[0], -g[1], -g[2]]
    } else {
        g
    }
}

/// `T1 = (k - 1) T1*`.
pub fn derive_t1(p: &MolliParams) -> f64 {
    (p.k - 1.0) * p.t1star
}

/// Sign applied to sample `i` when the first `polarity` samples are
/// restored to negative polarity.
#[inline]
pub fn polarity_sign(i: usize, polarity: usize) -> f64 {
    if i < polarity {
        -1.0
    } else {
        1.0
    }
}

fn default_max_iter() -> usize {
    400
}

fn default_simplex_tol() -> f64 {
    1e-6
}

fn default_bounds() -> [f64; 2] {
    [1.0, 10_000.0]
}

fn default_screen() -> bool {
    true
}

/// Nelder-Mead fitting options.
///
/// The simplex runs in scaled coordinates `(C / C₀, k, T1* / T1*₀)`, so the
/// diameter tolerance is relative: `simplex_tol · C₀` along the `C` axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_simplex_tol")]
    pub simplex_tol: f64,
    /// Largest number of leading samples whose polarity is restored;
    /// `None` searches all of them.
    #[serde(default)]
    pub m_max: Option<usize>,
    #[serde(default = "default_bounds")]
    pub t1star_bounds_ms: [f64; 2],
    /// Skip polarity candidates whose closed-form screening residual is far
    /// above the best one; `false` runs the simplex for every candidate.
    #[serde(default = "default_screen")]
    pub polarity_screen: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            simplex_tol: default_simplex_tol(),
            m_max: None,
            t1star_bounds_ms: default_bounds(),
            polarity_screen: default_screen(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.t1star_bounds_ms;
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.simplex_tol > 0.0 && self.simplex_tol.is_finite()) {
            return Err(Error::InvalidConfig("simplex_tol must be positive".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad t1star_bounds_ms [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Best fit over all polarity restorations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: MolliParams,
    /// `sqrt(RSS)` of the polarity-restored residuals.
    pub residual_norm: f64,
    /// Number of leading samples restored to negative polarity.
    pub sign_pattern: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn t1(&self) -> f64 {
        derive_t1(&self.params)
    }
}

/// Residual sum of squares of `signal` with the first `polarity` samples
/// negated, against the signed model.
pub fn restored_rss(p: &MolliParams, signal: &[f64], times: &[f64], polarity: usize) -> f64 {
    signal
        .iter()
        .zip(times)
        .enumerate()
        .map(|(i, (&s, &t))| {
            let r = polarity_sign(i, polarity) * s - p.signed(t);
            r * r
        })
        .sum()
}

fn initial_t1star(signal: &[f64], times: &[f64]) -> f64 {
    let imin = signal
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (times[imin] / core::f64::consts::LN_2).clamp(100.0, 3000.0)
}

/// Fits the MOLLI model to one pixel's signal profile.
///
/// `times` must be ascending. Flat or all-zero profiles return a
/// non-converged result without running the simplex.
pub fn fit_pixel(signal: &[f64], times: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    let n = signal.len();
    if n < 3 || times.len() != n {
        return Err(Error::InvalidSeries(format!(
            "need matching signal/time vectors of length >= 3, got {n} and {}",
            times.len()
        )));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("signal sample {i}")));
    }
    let max = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let t1s0 = initial_t1star(signal, times);

    if max - min <= 1e-9 * math::abs(max) || max <= 0.0 {
        let mean = signal.iter().sum::<f64>() / n as f64;
        let params = MolliParams::new(mean, 0.0, t1s0);
        return Ok(FitResult {
            params,
            residual_norm: math::sqrt(restored_rss(&params, signal, times, 0)),
            sign_pattern: 0,
            converged: false,
            iterations: 0,
        });
    }

    let c0 = max;
    let [lo, hi] = cfg.t1star_bounds_ms;
    let m_top = cfg.m_max.map_or(n, |m| m.min(n));
    let mut restored = [0.0f64; 64];
    let mut best: Option<FitResult> = None;
    let mut best_rss = f64::INFINITY;
    let mut buf = Vec::new();
    let restored: &mut [f64] = if n <= restored.len() {
        &mut restored[..n]
    } else {
        buf.resize(n, 0.0);
        &mut buf
    };

    let mut keep = [true; 65];
    let mut keep_buf = Vec::new();
    let keep: &mut [bool] = if m_top < keep.len() {
        &mut keep[..=m_top]
    } else {
        keep_buf.resize(m_top + 1, true);
        &mut keep_buf
    };
    if cfg.polarity_screen && m_top > 1 {
        screen::select(signal, times, cfg.t1star_bounds_ms, keep);
    }

    for m in 0..=m_top {
        if !keep[m] {
            continue;
        }
        for (i, r) in restored.iter_mut().enumerate() {
            *r = polarity_sign(i, m) * signal[i];
        }
        let objective = |x: &[f64; 3]| {
            let c = x[0] * c0;
            let k = x[1];
            let t1s = x[2] * t1s0;
            if c < 0.0 || !(lo..=hi).contains(&t1s) {
                return f64::INFINITY;
            }
            let inv = -1.0 / t1s;
            let mut rss = 0.0;
            for (s, t) in restored.iter().zip(times) {
                let r = s - c * (1.0 - k * math::exp(t * inv));
                rss += r * r;
            }
            rss / (c0 * c0)
        };
        let res = simplex::minimize(objective, [1.0, 2.0, 1.0], [0.1, 0.1, 0.1], cfg.simplex_tol, cfg.max_iter);
        let params = MolliParams::new(res.x[0] * c0, res.x[1], res.x[2] * t1s0);
        let rss = res.value * c0 * c0;
        if rss < best_rss || best.is_none() {
            best_rss = rss;
            best = Some(FitResult {
                params,
                residual_norm: math::sqrt(rss.max(0.0)),
                sign_pattern: m,
                converged: res.converged,
                iterations: res.iterations,
            });
        }
    }
    let mut best = best.expect("at least one polarity candidate");
    if best.params.is_valid() {
        for (i, r) in restored.iter_mut().enumerate() {
            *r = polarity_sign(i, best.sign_pattern) * signal[i];
        }
        let (params, rss) = polish(best.params, best_rss, restored, times, [lo, hi]);
        best.params = params;
        best.residual_norm = math::sqrt(rss.max(0.0));
    }
    Ok(best)
}

const POLISH_STEPS: usize = 12;

/// Damped Gauss-Newton refinement of a simplex solution on the restored
/// signal. A step is kept unless it raises the residual beyond round-off.
fn polish(mut p: MolliParams, mut rss: f64, restored: &[f64], times: &[f64], bounds: [f64; 2]) -> (MolliParams, f64) {
    let rss_of = |q: &MolliParams| -> f64 {
        restored
            .iter()
            .zip(times)
            .map(|(&s, &t)| {
                let r = s - q.signed(t);
                r * r
            })
            .sum()
    };
    for _ in 0..POLISH_STEPS {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&s, &t) in restored.iter().zip(times) {
            let g = p.signed_gradient(t);
            let r = s - p.signed(t);
            for a in 0..3 {
                jtr[a] += g[a] * r;
                for b in 0..3 {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        let Some(inv) = crate::linalg::inverse_sym3(&jtj) else {
            break;
        };
        let mut delta = [0.0f64; 3];
        for a in 0..3 {
            delta[a] = (0..3).map(|b| inv[a][b] * jtr[b]).sum();
        }
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..4 {
            let q = MolliParams::new(p.c + scale * delta[0], p.k + scale * delta[1], p.t1star + scale * delta[2]);
            if q.c >= 0.0 && (bounds[0]..=bounds[1]).contains(&q.t1star) && q.is_valid() {
                let r = rss_of(&q);
                // near the optimum the residual is flat to round-off, so an
                // equal residual still accepts the Newton step
                if r <= rss * (1.0 + 1e-12) {
                    let rel = |d: f64, v: f64| math::abs(d) / math::abs(v).max(1e-300);
                    improved = rel(q.c - p.c, p.c).max(rel(q.k - p.k, p.k)).max(rel(q.t1star - p.t1star, p.t1star)) > 1e-13;
                    p = q;
                    rss = r;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (p, rss)
}

/// Propagated SD of `T1` for a pixel fitted with `params` and `polarity`;
/// `None` when there are no residual degrees of freedom or `JᵀJ` is
/// singular.
pub fn propagate_sd(signal: &[f64], times: &[f64], params: &MolliParams, polarity: usize) -> Option<f64> {
    let n = signal.len();
    if n <= 3 || !params.is_valid() {
        return None;
    }
    let rss = restored_rss(params, signal, times, polarity);
    let sigma2 = rss / (n - 3) as f64;
    let mut jtj = [[0.0f64; 3]; 3];
    for &t in times {
        let g = params.signed_gradient(t);
        for a in 0..3 {
            for b in 0..3 {
                jtj[a][b] += g[a] * g[b];
            }
        }
    }
    let inv = crate::linalg::inverse_sym3(&jtj)?;
    let grad = [0.0, params.t1star, params.k - 1.0];
    let mut var = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            var += grad[a] * inv[a][b] * grad[b];
        }
    }
    let var = var * sigma2;
    if !var.is_finite() {
        return None;
    }
    Some(math::sqrt(var.max(0.0)))
}

/// Fits every pixel of a stack (or only masked ones).
pub fn fit_stack(
    times: &[f64],
    stack: &WarpedSeries,
    mask: Option<&Mask>,
    cfg: &FitConfig,
) -> Result<ParameterMaps> {
    cfg.validate()?;
    if times.len() != stack.count {
        return Err(Error::ShapeMismatch(format!("{} times for {} images", times.len(), stack.count)));
    }
    if let Some(m) = mask {
        if m.width != stack.width || m.height != stack.height {
            return Err(Error::ShapeMismatch("mask grid differs from series grid".into()));
        }
    }
    let p = stack.pixels();
    let n = stack.count;
    let mut maps = ParameterMaps::unfitted(stack.width, stack.height);
    let mut profile = alloc::vec![0.0; n];
    for pixel in 0..p {
        if mask.is_some_and(|m| !m.data[pixel]) {
            continue;
        }
        for (i, v) in profile.iter_mut().enumerate() {
            *v = stack.data[i * p + pixel];
        }
        let fit = match fit_pixel(&profile, times, cfg) {
            Ok(f) => f,
            Err(_) => {
                maps.fitted[pixel] = true;
                continue;
            }
        };
        maps.c[pixel] = fit.params.c;
        maps.k[pixel] = fit.params.k;
        maps.t1star[pixel] = fit.params.t1star;
        maps.polarity[pixel] = fit.sign_pattern as u8;
        maps.fitted[pixel] = true;
        if !fit.converged {
            maps.set_sentinel(pixel);
            continue;
        }
        match propagate_sd(&profile, times, &fit.params, fit.sign_pattern) {
            Some(sd) => {
                maps.t1[pixel] = fit.t1();
                maps.sd_t1[pixel] = sd;
                maps.converged[pixel] = true;
            }
            None => maps.set_sentinel(pixel),
        }
    }
    Ok(maps)
}

/// Fits every pixel of a series (or only masked ones).
pub fn fit_series(series: &ImageSeries, mask: Option<&Mask>, cfg: &FitConfig) -> Result<ParameterMaps> {
    let stack = WarpedSeries {
        width: series.width(),
        height: series.height(),
        count: series.len(),
        data: series.data().to_vec(),
    };
    fit_stack(series.times_ms(), &stack, mask, cfg)
}

/// Recomputes the propagated T1 SD of every converged pixel; sentinels
/// elsewhere.
pub fn sd_map(series: &ImageSeries, maps: &ParameterMaps) -> Result<Vec<f64>> {
    if maps.width != series.width() || maps.height != series.height() {
        return Err(Error::ShapeMismatch("maps grid differs from series grid".into()));
    }
    let mut out = alloc::vec![SENTINEL_MS; series.pixels()];
    for (pixel, sd) in out.iter_mut().enumerate() {
        if !maps.converged[pixel] {
            continue;
        }
        let params = MolliParams::new(maps.c[pixel], maps.k[pixel], maps.t1star[pixel]);
        let profile = series.profile(pixel);
        if let Some(v) = propagate_sd(&profile, series.times_ms(), &params, maps.polarity[pixel] as usize) {
            *sd = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (1..=n).map(|i| i as f64 * step).collect()
    }

    fn synth(p: &MolliParams, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| molli_signal(p, t)).collect()
    }

    #[test]
    fn signal_limits() {
        let p = MolliParams::new(1.0, 2.0, 1000.0);
        assert_eq!(molli_signal(&p, 0.0), 1.0);
        assert!(molli_signal(&p, 1000.0 * core::f64::consts::LN_2) < 1e-15);
        let q = MolliParams::new(3.0, 2.0, 500.0);
        assert!((molli_signal(&q, 1e6) - 3.0).abs() < 1e-12);
        assert!((p.null_point().unwrap() - 693.147_180_559_945_3).abs() < 1e-9);
    }

    #[test]
    fn t1_derivation() {
        assert_eq!(derive_t1(&MolliParams::new(1.0, 2.0, 1000.0)), 1000.0);
        assert_eq!(derive_t1(&MolliParams::new(1.0, 1.0, 800.0)), 0.0);
        // 0.9 * 632
        assert!((derive_t1(&MolliParams::new(1.0, 1.9, 632.0)) - 568.8).abs() < 1e-9);
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let times = grid(11, 100.0);
        let truth = MolliParams::new(1.0, 2.0, 1000.0);
        let fit = fit_pixel(&synth(&truth, &times), &times, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params.c - 1.0).abs() < 1e-3);
        assert!((fit.params.k - 2.0).abs() < 2e-3);
        assert!((fit.params.t1star - 1000.0).abs() < 1.0);
        assert!((fit.t1() - 1000.0).abs() < 1.0);
        // null point at ~693 ms: samples 100..600 are negative
        assert_eq!(fit.sign_pattern, 6);
    }

    #[test]
    fn flat_and_zero_signals_are_sentinels() {
        let times = grid(11, 100.0);
        let flat = fit_pixel(&[5.0; 11], &times, &FitConfig::default()).unwrap();
        assert!(!flat.converged);
        assert_eq!(flat.params.c, 5.0);
        assert_eq!(flat.params.k, 0.0);
        let zero = fit_pixel(&[0.0; 11], &times, &FitConfig::default()).unwrap();
        assert!(!zero.converged);
    }

    #[test]
    fn nan_is_rejected() {
        let times = grid(5, 100.0);
        let mut s = vec![1.0; 5];
        s[2] = f64::NAN;
        assert!(matches!(fit_pixel(&s, &times, &FitConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn noiseless_sd_is_zero() {
        let times = grid(11, 100.0);
        let truth = MolliParams::new(1.0, 2.0, 1000.0);
        let s = synth(&truth, &times);
        let fit = fit_pixel(&s, &times, &FitConfig::default()).unwrap();
        let sd = propagate_sd(&s, &times, &fit.params, fit.sign_pattern).unwrap();
        assert!(sd <= 1e-6, "{sd}");
    }

    #[test]
    fn k_near_one_inflates_sd() {
        let times = grid(11, 150.0);
        let wiggle: Vec<f64> = (0..11).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let regular = MolliParams::new(1.0, 1.9, 600.0);
        let flat = MolliParams::new(1.0, 1.05, 600.0);
        let mk = |p: &MolliParams| -> f64 {
            let s: Vec<f64> = times.iter().zip(&wiggle).map(|(&t, w)| molli_signal(p, t) + w).collect();
            let f = fit_pixel(&s, &times, &FitConfig::default()).unwrap();
            propagate_sd(&s, &times, &f.params, f.sign_pattern).unwrap()
        };
        let a = mk(&regular);
        let b = mk(&flat);
        assert!(b.is_finite() && a.is_finite());
        // relative SD (σ_T1 / T1) blows up as k → 1
        assert!(b / derive_t1(&flat) > 5.0 * a / derive_t1(&regular), "{a} {b}");
    }

    #[test]
    fn masked_fit_and_isolation() {
        let times = grid(11, 100.0);
        let p = MolliParams::new(100.0, 1.9, 700.0);
        let mut data = vec![0.0; 11 * 4];
        for (i, &t) in times.iter().enumerate() {
            for px in 0..4 {
                data[i * 4 + px] = if px == 3 { 0.0 } else { molli_signal(&p, t) };
            }
        }
        let series = ImageSeries::new(2, 2, times.clone(), data).unwrap();
        let maps = fit_series(&series, None, &FitConfig::default()).unwrap();
        assert_eq!(&maps.converged, &[true, true, true, false]);
        assert_eq!(maps.t1[3], SENTINEL_MS);
        assert!((maps.t1[0] - 630.0).abs() < 0.63);

        let mask = Mask::new(2, 2, "myocardium", vec![false, true, false, false]).unwrap();
        let maps = fit_series(&series, Some(&mask), &FitConfig::default()).unwrap();
        assert_eq!(maps.converged.iter().filter(|c| **c).count(), 1);
        assert!(maps.converged[1]);
        assert!(!maps.fitted[0]);
    }
}
