//! Image series, deformation fields, masks and parameter maps.
//!
//! Every container stores pixels row-major (`y * width + x`); stacked
//! containers are image-major on top of that.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Value stored in `t1` and `sd_t1` for pixels whose fit did not converge.
pub const SENTINEL_MS: f64 = -1.0;

/// N baseline images at known inversion times, sorted by ascending time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    width: usize,
    height: usize,
    times_ms: Vec<f64>,
    data: Vec<f64>,
    permutation: Vec<usize>,
    spacing_mm: Option<[f64; 2]>,
}

impl ImageSeries {
    /// Validates and sorts by inversion time.
    ///
    /// `data` holds `times_ms.len()` images of `width * height` pixels in the
    /// order given by `times_ms`.
    pub fn new(width: usize, height: usize, times_ms: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        let n = times_ms.len();
        if width == 0 || height == 0 {
            return Err(Error::InvalidSeries("empty image grid".into()));
        }
        if n < 3 {
            return Err(Error::InvalidSeries(format!(
                "need at least 3 images for a three-parameter fit, got {n}"
            )));
        }
        let pixels = width * height;
        if data.len() != n * pixels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} intensities for {n} images of {width}x{height}, got {}",
                n * pixels,
                data.len()
            )));
        }
        if let Some(t) = times_ms.iter().find(|t| !t.is_finite() || **t <= 0.0) {
            return Err(Error::InvalidSeries(format!("inversion time {t} is not finite and positive")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("intensity at flat index {pos}")));
        }
        if let Some(pos) = data.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidSeries(format!("negative intensity at flat index {pos}")));
        }

        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.sort_by(|&a, &b| times_ms[a].total_cmp(&times_ms[b]));
        if permutation.windows(2).any(|w| times_ms[w[0]] == times_ms[w[1]]) {
            return Err(Error::InvalidSeries("duplicate inversion times".into()));
        }

        let sorted_times = permutation.iter().map(|&i| times_ms[i]).collect();
        let mut sorted = Vec::with_capacity(data.len());
        for &i in &permutation {
            sorted.extend_from_slice(&data[i * pixels..(i + 1) * pixels]);
        }
        Ok(Self {
            width,
            height,
            times_ms: sorted_times,
            data: sorted,
            permutation,
            spacing_mm: None,
        })
    }

    pub fn with_spacing(mut self, spacing_mm: Option<[f64; 2]>) -> Self {
        self.spacing_mm = spacing_mm;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.times_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ms.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn times_ms(&self) -> &[f64] {
        &self.times_ms
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `permutation()[i]` is the position in the input of sorted image `i`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Physical pixel spacing, if known. Carried through IO, unused by the
    /// numerics.
    pub fn spacing_mm(&self) -> Option<[f64; 2]> {
        self.spacing_mm
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[i * p..(i + 1) * p]
    }

    /// Signal profile of one pixel across the series.
    pub fn profile(&self, pixel: usize) -> Vec<f64> {
        let p = self.pixels();
        (0..self.len()).map(|i| self.data[i * p + pixel]).collect()
    }

    /// Same times and grid, new intensities (already in sorted order).
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.width, self.height, self.times_ms.clone(), data)?;
        out.spacing_mm = self.spacing_mm;
        Ok(out)
    }

    /// Multiplies every intensity by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|v| v * factor).collect())
    }

    pub fn max_intensity(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// View as an unwarped stack.
    pub fn as_stack(&self) -> WarpedSeries {
        WarpedSeries {
            width: self.width,
            height: self.height,
            count: self.len(),
            data: self.data.clone(),
        }
    }
}

/// A stack of N images on a shared grid, typically `I_i ∘ φ_i`.
///
/// Unlike [`ImageSeries`] no sign or time constraints apply, so the type
/// also serves as a plain intensity stack for the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedSeries {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub data: Vec<f64>,
}

impl WarpedSeries {
    pub fn new(width: usize, height: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * count {
            return Err(Error::ShapeMismatch(format!(
                "stack of {count} x {width}x{height} needs {} values, got {}",
                width * height * count,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            count,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[i * p..(i + 1) * p]
    }

    /// Re-attaches inversion times so the stack can be fitted.
    pub fn to_series(&self, times_ms: &[f64]) -> Result<ImageSeries> {
        if times_ms.len() != self.count {
            return Err(Error::ShapeMismatch(format!(
                "{} times for {} images",
                times_ms.len(),
                self.count
            )));
        }
        ImageSeries::new(self.width, self.height, times_ms.to_vec(), self.data.clone())
    }
}

/// One dense displacement field per image, interleaved `(dx, dy)` per pixel.
///
/// Warping is a pull: output `(x, y)` samples the input at `(x + dx, y + dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationSet {
    width: usize,
    height: usize,
    count: usize,
    data: Vec<f64>,
}

impl DeformationSet {
    pub fn zeros(count: usize, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            count,
            data: alloc::vec![0.0; count * width * height * 2],
        }
    }

    pub fn from_vec(count: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != count * width * height * 2 {
            return Err(Error::ShapeMismatch(format!(
                "{count} fields of {width}x{height}x2 need {} values, got {}",
                count * width * height * 2,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("displacement at flat index {pos}")));
        }
        Ok(Self {
            width,
            height,
            count,
            data,
        })
    }

    /// Constant displacement `(dx, dy)` everywhere in every field.
    pub fn constant(count: usize, width: usize, height: usize, dx: f64, dy: f64) -> Self {
        let mut out = Self::zeros(count, width, height);
        for v in out.data.chunks_exact_mut(2) {
            v[0] = dx;
            v[1] = dy;
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn field(&self, i: usize) -> &[f64] {
        let s = self.pixels() * 2;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.pixels() * 2;
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn at(&self, i: usize, x: usize, y: usize) -> (f64, f64) {
        let o = ((i * self.height + y) * self.width + x) * 2;
        (self.data[o], self.data[o + 1])
    }

    /// Largest displacement magnitude over all fields and pixels.
    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(2)
            .map(|v| math::hypot(v[0], v[1]))
            .fold(0.0, f64::max)
    }

    pub fn matches(&self, count: usize, width: usize, height: usize) -> bool {
        self.count == count && self.width == width && self.height == height
    }
}

/// Boolean region of interest with a role label such as `"myocardium"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub role: String,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, role: impl Into<String>, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask of {width}x{height} needs {} entries, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            role: role.into(),
            data,
        })
    }

    pub fn full(width: usize, height: usize, role: impl Into<String>) -> Self {
        Self {
            width,
            height,
            role: role.into(),
            data: alloc::vec![true; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }
}

/// Per-pixel MOLLI parameters plus derived T1 and fitting SD.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMaps {
    pub width: usize,
    pub height: usize,
    pub c: Vec<f64>,
    pub k: Vec<f64>,
    pub t1star: Vec<f64>,
    pub t1: Vec<f64>,
    pub sd_t1: Vec<f64>,
    pub converged: Vec<bool>,
    /// Number of leading samples restored to negative polarity by the fit.
    pub polarity: Vec<u8>,
    /// False for pixels skipped by a mask.
    pub fitted: Vec<bool>,
}

impl ParameterMaps {
    /// Maps with every pixel unfitted and carrying sentinels.
    pub fn unfitted(width: usize, height: usize) -> Self {
        let p = width * height;
        Self {
            width,
            height,
            c: alloc::vec![0.0; p],
            k: alloc::vec![0.0; p],
            t1star: alloc::vec![0.0; p],
            t1: alloc::vec![SENTINEL_MS; p],
            sd_t1: alloc::vec![SENTINEL_MS; p],
            converged: alloc::vec![false; p],
            polarity: alloc::vec![0; p],
            fitted: alloc::vec![false; p],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn converged_fraction(&self) -> f64 {
        let p = self.pixels();
        if p == 0 {
            return 0.0;
        }
        self.converged.iter().filter(|b| **b).count() as f64 / p as f64
    }

    /// Marks a pixel as failed, keeping its parameters.
    pub fn set_sentinel(&mut self, pixel: usize) {
        self.t1[pixel] = SENTINEL_MS;
        self.sd_t1[pixel] = SENTINEL_MS;
        self.converged[pixel] = false;
    }
}
