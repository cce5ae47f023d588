//! Relaxometry residual `(1 / NP) Σ ‖S - Ŝ‖²` with `Ŝ` frozen at the
//! fitted parameters.
//!
//! `Ŝ_i = s_i · C (1 - k e^{-t_i/T1*})` where `s_i = -1` for the first `m`
//! samples (the fit's polarity restoration), so `S - Ŝ` equals the fit's own
//! residual up to sign.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::relaxometry::{polarity_sign, MolliParams};
use crate::series::{ParameterMaps, WarpedSeries};

/// Model prediction for every image and pixel (image-major).
pub fn relax_prediction(times: &[f64], maps: &ParameterMaps) -> Result<Vec<f64>> {
    if maps.fitted.iter().any(|f| !f) {
        return Err(Error::UnfittedMaps);
    }
    let p = maps.pixels();
    let mut out = alloc::vec![0.0; times.len() * p];
    for pixel in 0..p {
        let params = MolliParams::new(maps.c[pixel], maps.k[pixel], maps.t1star[pixel]);
        let m = maps.polarity[pixel] as usize;
        for (i, &t) in times.iter().enumerate() {
            out[i * p + pixel] = polarity_sign(i, m) * params.signed(t);
        }
    }
    Ok(out)
}

fn check(stack: &WarpedSeries, prediction: &[f64]) -> Result<()> {
    if prediction.len() != stack.data.len() {
        return Err(Error::ShapeMismatch("prediction and stack sizes differ".into()));
    }
    Ok(())
}

pub fn relax_loss_with(stack: &WarpedSeries, prediction: &[f64]) -> Result<f64> {
    check(stack, prediction)?;
    let ss: f64 = stack
        .data
        .iter()
        .zip(prediction)
        .map(|(s, p)| (s - p) * (s - p))
        .sum();
    Ok(ss / stack.data.len() as f64)
}

pub fn relax_loss_backward_with(stack: &WarpedSeries, prediction: &[f64]) -> Result<Vec<f64>> {
    check(stack, prediction)?;
    let scale = 2.0 / stack.data.len() as f64;
    Ok(stack
        .data
        .iter()
        .zip(prediction)
        .map(|(s, p)| scale * (s - p))
        .collect())
}

fn check_maps(stack: &WarpedSeries, times: &[f64], maps: &ParameterMaps) -> Result<()> {
    if maps.width != stack.width || maps.height != stack.height || times.len() != stack.count {
        return Err(Error::ShapeMismatch("maps, times and stack disagree".into()));
    }
    Ok(())
}

pub fn relax_loss(stack: &WarpedSeries, times: &[f64], maps: &ParameterMaps) -> Result<f64> {
    check_maps(stack, times, maps)?;
    relax_loss_with(stack, &relax_prediction(times, maps)?)
}

/// `2 (S - Ŝ) / (N P)`, the exact gradient with `Ŝ` held fixed.
pub fn relax_loss_backward(stack: &WarpedSeries, times: &[f64], maps: &ParameterMaps) -> Result<Vec<f64>> {
    check_maps(stack, times, maps)?;
    relax_loss_backward_with(stack, &relax_prediction(times, maps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_prediction_gives_mean_square() {
        let s = WarpedSeries::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = relax_loss_with(&s, &[0.0; 4]).unwrap();
        assert!((l - 7.5).abs() < 1e-12);
    }

    #[test]
    fn single_sample_gradient() {
        let s = WarpedSeries::new(1, 1, 1, vec![5.0]).unwrap();
        assert_eq!(relax_loss_backward_with(&s, &[2.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn unfitted_maps_rejected() {
        let maps = ParameterMaps::unfitted(1, 1);
        let s = WarpedSeries::new(1, 1, 3, vec![1.0; 3]).unwrap();
        assert_eq!(relax_loss(&s, &[1.0, 2.0, 3.0], &maps), Err(Error::UnfittedMaps));
    }
}
