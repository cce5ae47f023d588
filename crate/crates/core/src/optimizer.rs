//! Adaptive-moment (Adam) updates over a flat parameter vector, and a
//! central-difference gradient checker.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;

/// Optimizer state; moments have the shape of the optimized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected update of `params` in place.
    ///
    /// `term` names the loss that produced `grad`, for error reporting.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], term: &str) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { term: term.to_string() });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((x, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= self.learning_rate * m_hat / (math::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    /// Seed of the coordinate subsample, if one was drawn.
    pub seed: Option<u64>,
}

/// Options for [`check_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub step: f64,
    /// Denominator floor `ε_abs` in `|a - n| / max(|n|, ε_abs)`.
    pub abs_floor: f64,
    /// Vectors longer than this are checked on a random subsample of this
    /// many coordinates.
    pub max_coordinates: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            abs_floor: 1e-8,
            max_coordinates: 200,
            seed: 0,
        }
    }
}

/// Compares `analytic` with central differences of `f` around `point`.
///
/// Only coordinates accepted by `filter` are checked (e.g. interior pixels).
pub fn check_gradient_filtered<F, P>(
    mut f: F,
    analytic: &[f64],
    point: &[f64],
    opts: &CheckOptions,
    filter: P,
) -> Result<GradientCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
    P: Fn(usize) -> bool,
{
    if analytic.len() != point.len() {
        return Err(Error::ShapeMismatch("gradient and point lengths differ".into()));
    }
    let eligible: Vec<usize> = (0..point.len()).filter(|&i| filter(i)).collect();
    let (coords, seed) = if eligible.len() > opts.max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let picked = index::sample(&mut rng, eligible.len(), opts.max_coordinates);
        let mut c: Vec<usize> = picked.iter().map(|i| eligible[i]).collect();
        c.sort_unstable();
        (c, Some(opts.seed))
    } else {
        (eligible, None)
    };

    let mut x = point.to_vec();
    let mut worst = 0.0;
    let mut worst_index = 0;
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let fp = f(&x)?;
        x[i] = orig - opts.step;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let err = math::abs(analytic[i] - numeric) / math::abs(numeric).max(opts.abs_floor);
        if err > worst {
            worst = err;
            worst_index = i;
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        worst_index,
        checked: coords.len(),
        seed,
    })
}

/// [`check_gradient_filtered`] over every coordinate.
pub fn check_gradient<F>(f: F, analytic: &[f64], point: &[f64], opts: &CheckOptions) -> Result<GradientCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_gradient_filtered(f, analytic, point, opts, |_| true)
}
