//! Bilinear pull-warping of images by dense displacement fields and its
//! analytic derivative w.r.t. the displacements.
//!
//! Convention: `out(x, y) = image(x + dx, y + dy)`. Sample coordinates
//! outside the grid are clamped to the edge, and the derivative across a
//! clamped edge is zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::series::{DeformationSet, ImageSeries, WarpedSeries};

/// Bilinear sample location: base cell, fractional offsets and whether each
/// axis was clamped.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    clamped_x: bool,
    clamped_y: bool,
}

#[inline]
fn axis(coord: f64, len: usize) -> (usize, usize, f64, bool) {
    let max = (len - 1) as f64;
    if coord <= 0.0 || len == 1 {
        return (0, 0, 0.0, coord < 0.0 || len == 1);
    }
    if coord >= max {
        return (len - 1, len - 1, 0.0, coord > max);
    }
    let f = math::floor(coord);
    let i0 = f as usize;
    (i0, i0 + 1, coord - f, false)
}

#[inline]
fn tap(sx: f64, sy: f64, width: usize, height: usize) -> Tap {
    let (x0, x1, fx, clamped_x) = axis(sx, width);
    let (y0, y1, fy, clamped_y) = axis(sy, height);
    Tap {
        x0,
        y0,
        x1,
        y1,
        fx,
        fy,
        clamped_x,
        clamped_y,
    }
}

/// Samples `image` at a continuous location with clamp-to-edge.
#[inline]
pub fn sample(image: &[f64], width: usize, height: usize, sx: f64, sy: f64) -> f64 {
    let t = tap(sx, sy, width, height);
    let i00 = image[t.y0 * width + t.x0];
    let i10 = image[t.y0 * width + t.x1];
    let i01 = image[t.y1 * width + t.x0];
    let i11 = image[t.y1 * width + t.x1];
    (1.0 - t.fy) * ((1.0 - t.fx) * i00 + t.fx * i10) + t.fy * ((1.0 - t.fx) * i01 + t.fx * i11)
}

/// Sample value and its partial derivatives w.r.t. the sample coordinates.
#[inline]
fn sample_with_gradient(image: &[f64], width: usize, height: usize, sx: f64, sy: f64) -> (f64, f64, f64) {
    let t = tap(sx, sy, width, height);
    let i00 = image[t.y0 * width + t.x0];
    let i10 = image[t.y0 * width + t.x1];
    let i01 = image[t.y1 * width + t.x0];
    let i11 = image[t.y1 * width + t.x1];
    let value = (1.0 - t.fy) * ((1.0 - t.fx) * i00 + t.fx * i10) + t.fy * ((1.0 - t.fx) * i01 + t.fx * i11);
    let gx = if t.clamped_x || t.x0 == t.x1 {
        0.0
    } else {
        (1.0 - t.fy) * (i10 - i00) + t.fy * (i11 - i01)
    };
    let gy = if t.clamped_y || t.y0 == t.y1 {
        0.0
    } else {
        (1.0 - t.fx) * (i01 - i00) + t.fx * (i11 - i10)
    };
    (value, gx, gy)
}

fn check(image: &[f64], field: &[f64], width: usize, height: usize) -> Result<()> {
    if image.len() != width * height || field.len() != width * height * 2 {
        return Err(Error::ShapeMismatch(format!(
            "image of {} and field of {} values for a {width}x{height} grid",
            image.len(),
            field.len()
        )));
    }
    Ok(())
}

/// Warps one image by one field, writing into `out`.
pub fn warp_image_into(image: &[f64], field: &[f64], width: usize, height: usize, out: &mut [f64]) {
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            out[p] = sample(image, width, height, x as f64 + field[2 * p], y as f64 + field[2 * p + 1]);
        }
    }
}

pub fn warp_image(image: &[f64], field: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    check(image, field, width, height)?;
    let mut out = vec![0.0; width * height];
    warp_image_into(image, field, width, height, &mut out);
    Ok(out)
}

/// Gradient of a scalar loss w.r.t. the field given the gradient w.r.t. the
/// warped image, accumulated into `grad` (interleaved `dx, dy`).
pub fn warp_backward_into(
    image: &[f64],
    field: &[f64],
    width: usize,
    height: usize,
    upstream: &[f64],
    grad: &mut [f64],
) {
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let u = upstream[p];
            if u == 0.0 {
                continue;
            }
            let (_, gx, gy) =
                sample_with_gradient(image, width, height, x as f64 + field[2 * p], y as f64 + field[2 * p + 1]);
            grad[2 * p] += u * gx;
            grad[2 * p + 1] += u * gy;
        }
    }
}

pub fn warp_backward(image: &[f64], field: &[f64], width: usize, height: usize, upstream: &[f64]) -> Result<Vec<f64>> {
    check(image, field, width, height)?;
    if upstream.len() != width * height {
        return Err(Error::ShapeMismatch("upstream gradient size".into()));
    }
    let mut grad = vec![0.0; width * height * 2];
    warp_backward_into(image, field, width, height, upstream, &mut grad);
    Ok(grad)
}

/// `I_i ∘ φ_i` for every image.
pub fn warp_series(series: &ImageSeries, defs: &DeformationSet) -> Result<WarpedSeries> {
    if !defs.matches(series.len(), series.width(), series.height()) {
        return Err(Error::ShapeMismatch(format!(
            "{} fields of {}x{} for {} images of {}x{}",
            defs.len(),
            defs.width(),
            defs.height(),
            series.len(),
            series.width(),
            series.height()
        )));
    }
    let (w, h) = (series.width(), series.height());
    let p = w * h;
    let mut data = vec![0.0; series.len() * p];
    for i in 0..series.len() {
        warp_image_into(series.image(i), defs.field(i), w, h, &mut data[i * p..(i + 1) * p]);
    }
    WarpedSeries::new(w, h, series.len(), data)
}

/// Chains per-image intensity gradients through the warp of every image.
pub fn warp_series_backward(series: &ImageSeries, defs: &DeformationSet, upstream: &[f64]) -> Vec<f64> {
    let (w, h) = (series.width(), series.height());
    let p = w * h;
    let mut grad = vec![0.0; defs.data().len()];
    for i in 0..series.len() {
        warp_backward_into(
            series.image(i),
            defs.field(i),
            w,
            h,
            &upstream[i * p..(i + 1) * p],
            &mut grad[i * 2 * p..(i + 1) * 2 * p],
        );
    }
    grad
}
