//! Synthetic MOLLI phantom with ground-truth parameters, motion and mask.
//!
//! A disk of blood inside an annulus of myocardium on a uniform background.
//! Parameter maps are Gaussian-blurred so every pixel still follows the
//! signal model exactly while edges stay smooth. Motion for every image but
//! the first is a random translation plus a few Gaussian bumps; the total
//! amplitude budget keeps the peak displacement at or below `A`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::math;
use crate::relaxometry::MolliParams;
use crate::series::{DeformationSet, ImageSeries, Mask, ParameterMaps};
use crate::warp::{sample, warp_series};

/// Relaxation properties of one tissue class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tissue {
    pub t1_ms: f64,
    /// Proton-density-like signal scale `C`.
    pub c: f64,
    pub k: f64,
}

impl Tissue {
    pub fn params(&self) -> MolliParams {
        MolliParams::new(self.c, self.k, self.t1_ms / (self.k - 1.0))
    }
}

/// Three inversion blocks 80 ms apart, sampled once per 1000 ms heartbeat.
pub fn default_inversion_times() -> Vec<f64> {
    let mut t = Vec::with_capacity(11);
    for (offset, beats) in [(100.0, 4), (180.0, 4), (260.0, 3)] {
        for b in 0..beats {
            t.push(offset + 1000.0 * b as f64);
        }
    }
    t.sort_by(f64::total_cmp);
    t
}

/// Phantom geometry, tissues, motion and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub inversion_times_ms: Vec<f64>,
    pub blood: Tissue,
    pub myocardium: Tissue,
    pub background: Tissue,
    /// Blood-pool radius as a fraction of `min(width, height)`.
    pub blood_radius: f64,
    /// Outer myocardial radius as a fraction of `min(width, height)`.
    pub myocardium_radius: f64,
    /// Gaussian blur of the parameter maps, pixels.
    pub edge_blur_px: f64,
    /// Peak displacement bound `A`, pixels.
    pub motion_amplitude_px: f64,
    /// Width of the motion bumps, pixels.
    pub motion_smoothness_px: f64,
    /// Number of Gaussian bumps per motion field.
    pub motion_bumps: usize,
    /// Noise SD as a fraction of the largest tissue `C`.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::pre_contrast()
    }
}

impl PhantomSpec {
    /// Native-T1-like tissues: myocardium 1200 ms, blood 1800 ms,
    /// background 300 ms.
    pub fn pre_contrast() -> Self {
        Self {
            width: 128,
            height: 128,
            inversion_times_ms: default_inversion_times(),
            blood: Tissue {
                t1_ms: 1800.0,
                c: 1100.0,
                k: 1.95,
            },
            myocardium: Tissue {
                t1_ms: 1200.0,
                c: 700.0,
                k: 1.9,
            },
            background: Tissue {
                t1_ms: 300.0,
                c: 450.0,
                k: 1.8,
            },
            blood_radius: 0.09,
            myocardium_radius: 0.16,
            edge_blur_px: 1.0,
            motion_amplitude_px: 5.0,
            motion_smoothness_px: 12.0,
            motion_bumps: 4,
            noise_fraction: 0.02,
            seed: 0,
        }
    }

    /// Contrast-enhanced tissues: shorter T1 everywhere and blood darker
    /// than myocardium in T1.
    pub fn post_contrast() -> Self {
        Self {
            blood: Tissue {
                t1_ms: 300.0,
                c: 1100.0,
                k: 1.9,
            },
            myocardium: Tissue {
                t1_ms: 450.0,
                c: 700.0,
                k: 1.85,
            },
            background: Tissue {
                t1_ms: 250.0,
                c: 450.0,
                k: 1.8,
            },
            ..Self::pre_contrast()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.width < 4 || self.height < 4 {
            return bad("phantom grid must be at least 4x4");
        }
        if self.inversion_times_ms.len() < 3 {
            return bad("phantom needs at least 3 inversion times");
        }
        for t in [&self.blood, &self.myocardium, &self.background] {
            if !(t.t1_ms > 0.0 && t.k > 1.0 && t.c >= 0.0) {
                return bad("tissue T1 must be positive, k > 1 and C >= 0");
            }
        }
        if !(self.motion_amplitude_px >= 0.0) || !(self.noise_fraction >= 0.0) {
            return bad("motion amplitude and noise must be non-negative");
        }
        if !(self.motion_smoothness_px > 0.0) || !(self.edge_blur_px >= 0.0) {
            return bad("motion smoothness must be positive and blur non-negative");
        }
        if !(self.blood_radius > 0.0 && self.myocardium_radius > self.blood_radius && self.myocardium_radius < 0.5) {
            return bad("radii must satisfy 0 < blood < myocardium < 0.5");
        }
        Ok(())
    }

    fn noise_sd(&self) -> f64 {
        let c = self.blood.c.max(self.myocardium.c).max(self.background.c);
        self.noise_fraction * c
    }

    /// Closed-form upper bound on the smoothness energy of the generated
    /// motion: each bump's forward difference is at most `e^{-1/2}/σ` per
    /// unit amplitude, so `(1/N) Σ_i 2 B_i² / (e σ²)` with `B_i ≤ A`.
    pub fn motion_energy_bound(&self) -> f64 {
        let n = self.inversion_times_ms.len() as f64;
        let a = self.motion_amplitude_px;
        let s = self.motion_smoothness_px;
        2.0 * a * a * (n - 1.0) / (n * core::f64::consts::E * s * s)
    }
}

/// Everything the generator knows.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub spec: PhantomSpec,
    /// Ground-truth parameters (SD zero, all converged).
    pub maps: ParameterMaps,
    /// Pull warp applied to the aligned series: `corrupted = clean ∘ motion`.
    pub motion: DeformationSet,
    /// Inverse of `motion`: the fields a perfect registration anchored at
    /// the first image would return.
    pub correction: DeformationSet,
    pub mask: Mask,
    /// Aligned, noiseless.
    pub clean: ImageSeries,
    /// Aligned, with the same noise draw as `corrupted`.
    pub aligned: ImageSeries,
    /// Moved and noisy: the registration input.
    pub corrupted: ImageSeries,
}

fn sample_motion(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> DeformationSet {
    let (w, h) = (spec.width, spec.height);
    let n = spec.inversion_times_ms.len();
    let a = spec.motion_amplitude_px;
    let sigma = spec.motion_smoothness_px;
    let mut defs = DeformationSet::zeros(n, w, h);
    // the first image is the static reference
    for i in 1..n {
        let share: f64 = rng.random_range(0.4..0.8);
        let angle: f64 = rng.random_range(0.0..core::f64::consts::TAU);
        let (s, c) = math::sin_cos(angle);
        let shift = [a * share * c, a * share * s];

        let mut weights: Vec<f64> = (0..spec.motion_bumps).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut bumps = Vec::with_capacity(weights.len());
        for wj in weights.iter_mut() {
            let amp = a * (1.0 - share) * *wj / total.max(1e-300);
            let angle: f64 = rng.random_range(0.0..core::f64::consts::TAU);
            let (s, c) = math::sin_cos(angle);
            let cx: f64 = rng.random_range(0.0..w as f64);
            let cy: f64 = rng.random_range(0.0..h as f64);
            bumps.push((cx, cy, amp * c, amp * s));
        }

        let field = defs.field_mut(i);
        for y in 0..h {
            for x in 0..w {
                let mut d = shift;
                for &(cx, cy, ax, ay) in &bumps {
                    let (ddx, ddy) = (x as f64 - cx, y as f64 - cy);
                    let r2 = ddx * ddx + ddy * ddy;
                    let g = math::exp(-r2 / (2.0 * sigma * sigma));
                    d[0] += ax * g;
                    d[1] += ay * g;
                }
                field[2 * (y * w + x)] = d[0];
                field[2 * (y * w + x) + 1] = d[1];
            }
        }
    }
    defs
}

/// Inverts a pull field by fixed-point iteration `ψ(x) = -φ(x + ψ(x))`.
pub fn invert_field(field: &[f64], width: usize, height: usize, iterations: usize) -> Vec<f64> {
    let p = width * height;
    let mut dx = vec![0.0; p];
    let mut dy = vec![0.0; p];
    for q in 0..p {
        dx[q] = field[2 * q];
        dy[q] = field[2 * q + 1];
    }
    let mut inv: Vec<f64> = field.iter().map(|v| -v).collect();
    for _ in 0..iterations {
        for y in 0..height {
            for x in 0..width {
                let q = y * width + x;
                let sx = x as f64 + inv[2 * q];
                let sy = y as f64 + inv[2 * q + 1];
                inv[2 * q] = -sample(&dx, width, height, sx, sy);
                inv[2 * q + 1] = -sample(&dy, width, height, sx, sy);
            }
        }
    }
    inv
}

fn split(field: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        field.iter().step_by(2).copied().collect(),
        field.iter().skip(1).step_by(2).copied().collect(),
    )
}

const INVERSE_ITERATIONS: usize = 40;

/// Generates a phantom; identical specs give identical phantoms.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomTruth> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let p = w * h;
    let n = spec.inversion_times_ms.len();
    let size = w.min(h) as f64;
    let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
    let r_blood = spec.blood_radius * size;
    let r_myo = spec.myocardium_radius * size;
    let margin = spec.edge_blur_px.max(0.5);

    let mut c_map = vec![0.0; p];
    let mut k_map = vec![0.0; p];
    let mut t1s_map = vec![0.0; p];
    let mut mask = vec![false; p];
    for y in 0..h {
        for x in 0..w {
            let q = y * w + x;
            let r = math::hypot(x as f64 - cx, y as f64 - cy);
            let tissue = if r < r_blood {
                &spec.blood
            } else if r < r_myo {
                &spec.myocardium
            } else {
                &spec.background
            };
            let params = tissue.params();
            c_map[q] = params.c;
            k_map[q] = params.k;
            t1s_map[q] = params.t1star;
            mask[q] = r >= r_blood + margin && r <= r_myo - margin;
        }
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::InvalidConfig("myocardium has no interior pixels".into()));
    }
    let c_map = gaussian_blur(&c_map, w, h, spec.edge_blur_px);
    let k_map = gaussian_blur(&k_map, w, h, spec.edge_blur_px);
    let t1s_map = gaussian_blur(&t1s_map, w, h, spec.edge_blur_px);

    let mut times = spec.inversion_times_ms.clone();
    times.sort_by(f64::total_cmp);

    let mut maps = ParameterMaps::unfitted(w, h);
    let mut clean = vec![0.0; n * p];
    for q in 0..p {
        let params = MolliParams::new(c_map[q], k_map[q], t1s_map[q]);
        maps.c[q] = params.c;
        maps.k[q] = params.k;
        maps.t1star[q] = params.t1star;
        maps.t1[q] = crate::relaxometry::derive_t1(&params);
        maps.sd_t1[q] = 0.0;
        maps.converged[q] = true;
        maps.fitted[q] = true;
        maps.polarity[q] = times.iter().filter(|&&t| params.signed(t) < 0.0).count() as u8;
        for (i, &t) in times.iter().enumerate() {
            clean[i * p + q] = crate::relaxometry::molli_signal(&params, t);
        }
    }
    let clean = ImageSeries::new(w, h, times.clone(), clean)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = sample_motion(spec, &mut rng);
    let moved = warp_series(&clean, &motion)?;

    let noise = Normal::new(0.0, spec.noise_sd()).map_err(|_| Error::InvalidConfig("noise SD".into()))?;
    let draws: Vec<f64> = (0..n * p).map(|_| rng.sample(noise)).collect();
    let aligned = clean
        .data()
        .iter()
        .zip(&draws)
        .map(|(s, e)| math::abs(s + e))
        .collect();
    let corrupted = moved.data.iter().zip(&draws).map(|(s, e)| math::abs(s + e)).collect();

    let mut correction = DeformationSet::zeros(n, w, h);
    for i in 0..n {
        let inv = invert_field(motion.field(i), w, h, INVERSE_ITERATIONS);
        correction.field_mut(i).copy_from_slice(&inv);
    }

    Ok(PhantomTruth {
        spec: spec.clone(),
        maps,
        motion,
        correction,
        mask: Mask::new(w, h, "myocardium", mask)?,
        aligned: ImageSeries::new(w, h, times.clone(), aligned)?,
        corrupted: ImageSeries::new(w, h, times, corrupted)?,
        clean,
    })
}

/// Mean and maximum endpoint error, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementError {
    pub mean: f64,
    pub max: f64,
}

/// Endpoint error of `estimated` against the ground-truth correction
/// fields.
///
/// The truth correction is inverted (giving the motion) and composed with
/// the estimate: `r(x) = φ̂(x) + m(x + φ̂(x))`, resampling `m` at the
/// estimated-displaced coordinates; `r ≡ 0` for a perfect estimate.
pub fn displacement_error(
    estimated: &DeformationSet,
    truth: &DeformationSet,
    mask: Option<&Mask>,
) -> Result<DisplacementError> {
    if !estimated.matches(truth.len(), truth.width(), truth.height()) {
        return Err(Error::ShapeMismatch("estimated and truth deformation sets differ".into()));
    }
    let (w, h) = (truth.width(), truth.height());
    if let Some(m) = mask {
        if m.width != w || m.height != h {
            return Err(Error::ShapeMismatch("mask grid differs".into()));
        }
    }
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut count = 0usize;
    for i in 0..truth.len() {
        let motion = invert_field(truth.field(i), w, h, INVERSE_ITERATIONS);
        let (mx, my) = split(&motion);
        let est = estimated.field(i);
        for y in 0..h {
            for x in 0..w {
                let q = y * w + x;
                if mask.is_some_and(|m| !m.data[q]) {
                    continue;
                }
                let (ex, ey) = (est[2 * q], est[2 * q + 1]);
                let sx = x as f64 + ex;
                let sy = y as f64 + ey;
                let rx = ex + sample(&mx, w, h, sx, sy);
                let ry = ey + sample(&my, w, h, sx, sy);
                let e = math::hypot(rx, ry);
                sum += e;
                max = max.max(e);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion("no pixels for displacement error".into()));
    }
    Ok(DisplacementError {
        mean: sum / count as f64,
        max,
    })
}

/// Re-expresses groupwise fields in the frame of image `reference`:
/// `ψ_i(x) = r(x) + φ_i(x + r(x))` with `r` the inverse of `φ_reference`,
/// so that `ψ_reference ≈ 0`.
pub fn anchor_to_reference(defs: &DeformationSet, reference: usize) -> Result<DeformationSet> {
    if reference >= defs.len() {
        return Err(Error::InvalidConfig("reference index out of range".into()));
    }
    let (w, h) = (defs.width(), defs.height());
    let inv = invert_field(defs.field(reference), w, h, INVERSE_ITERATIONS);
    let mut out = DeformationSet::zeros(defs.len(), w, h);
    for i in 0..defs.len() {
        let (fx, fy) = split(defs.field(i));
        let dst = out.field_mut(i);
        for y in 0..h {
            for x in 0..w {
                let q = y * w + x;
                let (rx, ry) = (inv[2 * q], inv[2 * q + 1]);
                let sx = x as f64 + rx;
                let sy = y as f64 + ry;
                dst[2 * q] = rx + sample(&fx, w, h, sx, sy);
                dst[2 * q + 1] = ry + sample(&fy, w, h, sx, sy);
            }
        }
    }
    Ok(out)
}
