//! Closed-form polarity screening.
//!
//! For a fixed `T1*` the signed model `a + b·e^{-t/T1*}` is linear in
//! `(a, b) = (C, -C·k)`, so the least-squares residual of every polarity
//! restoration can be profiled over a log-spaced `T1*` grid without any
//! iterative fitting. Restoring one more sample only changes two running
//! sums, so all candidates cost little more than one.

use alloc::vec;

use crate::math;

const GRID: usize = 128;
/// Candidates within this factor of the best screened residual survive.
const FACTOR: f64 = 4.0;
/// The best `MIN_KEEP` candidates always survive.
const MIN_KEEP: usize = 2;

/// Marks in `keep` (one flag per candidate `m = 0..keep.len()`) which
/// polarity restorations deserve a full simplex fit.
pub(crate) fn select(signal: &[f64], times: &[f64], bounds: [f64; 2], keep: &mut [bool]) {
    let n = signal.len();
    let (lo, hi) = (math::ln(bounds[0]), math::ln(bounds[1]));
    let mut se = [0.0f64; GRID];
    let mut see = [0.0f64; GRID];
    let mut sre = [0.0f64; GRID];
    let mut decay = vec![0.0f64; GRID * n];
    for g in 0..GRID {
        let t1s = math::exp(lo + (hi - lo) * g as f64 / (GRID - 1) as f64);
        for (i, t) in times.iter().enumerate() {
            let e = math::exp(-t / t1s);
            decay[g * n + i] = e;
            se[g] += e;
            see[g] += e * e;
            sre[g] += signal[i] * e;
        }
    }
    let mut sr: f64 = signal.iter().sum();
    let srr: f64 = signal.iter().map(|s| s * s).sum();
    let nf = n as f64;

    let mut scores = vec![f64::INFINITY; keep.len()];
    for (m, score) in scores.iter_mut().enumerate() {
        if m > 0 {
            // sample m-1 flips sign
            let s = signal[m - 1];
            sr -= 2.0 * s;
            for g in 0..GRID {
                sre[g] -= 2.0 * s * decay[g * n + m - 1];
            }
        }
        let mut best = f64::INFINITY;
        for g in 0..GRID {
            let det = nf * see[g] - se[g] * se[g];
            let mut rss = f64::INFINITY;
            if det > 1e-12 * nf * see[g] {
                let a = (see[g] * sr - se[g] * sre[g]) / det;
                let b = (nf * sre[g] - se[g] * sr) / det;
                if a >= 0.0 {
                    rss = srr - a * sr - b * sre[g];
                }
            }
            if !rss.is_finite() && see[g] > 0.0 {
                // C pinned at zero
                let b = sre[g] / see[g];
                rss = srr - b * sre[g];
            }
            best = best.min(rss.max(0.0));
        }
        *score = best;
    }

    let mut order: vec::Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let floor = scores[order[0]];
    let slack = 1e-10 * srr;
    for (rank, &m) in order.iter().enumerate() {
        keep[m] = rank < MIN_KEEP || scores[m] <= FACTOR * floor + slack;
    }
}
