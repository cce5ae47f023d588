//! Nelder-Mead downhill simplex over a fixed-dimension parameter vector.

/// Outcome of one simplex minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexResult<const D: usize> {
    pub x: [f64; D],
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Simplex diameter fell below the tolerance before `max_iter`.
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn lerp<const D: usize>(from: &[f64; D], to: &[f64; D], t: f64) -> [f64; D] {
    let mut out = [0.0; D];
    for d in 0..D {
        out[d] = from[d] + t * (to[d] - from[d]);
    }
    out
}

/// Largest Euclidean distance from the best vertex.
fn diameter<const D: usize>(vertices: &[[f64; D]], best: usize) -> f64 {
    vertices
        .iter()
        .map(|v| {
            let mut s = 0.0;
            for d in 0..D {
                let e = v[d] - vertices[best][d];
                s += e * e;
            }
            crate::math::sqrt(s)
        })
        .fold(0.0, f64::max)
}

/// Minimizes `f` starting from `x0` with an axis-aligned initial simplex of
/// edge lengths `step`.
///
/// Non-finite objective values are treated as worse than any finite one,
/// which lets callers express box constraints by returning `f64::INFINITY`.
pub fn minimize<const D: usize, F>(
    mut f: F,
    x0: [f64; D],
    step: [f64; D],
    tol: f64,
    max_iter: usize,
) -> SimplexResult<D>
where
    F: FnMut(&[f64; D]) -> f64,
{
    // D + 1 vertices; stack storage keeps this allocation-free per pixel.
    let mut vertices = [[0.0; D]; 8];
    let mut values = [0.0; 8];
    assert!(D < vertices.len(), "simplex dimension too large");
    let mut eval = |x: &[f64; D], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evaluations = 0;
    vertices[0] = x0;
    values[0] = eval(&x0, &mut evaluations);
    for d in 0..D {
        let mut v = x0;
        v[d] += step[d];
        vertices[d + 1] = v;
        values[d + 1] = eval(&v, &mut evaluations);
    }

    let mut order = [0usize; 8];
    let mut iterations = 0;
    loop {
        for (i, o) in order.iter_mut().enumerate().take(D + 1) {
            *o = i;
        }
        order[..D + 1].sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[D];
        let second_worst = order[D - 1];

        if diameter(&vertices[..D + 1], best) < tol {
            return SimplexResult {
                x: vertices[best],
                value: values[best],
                iterations,
                evaluations,
                converged: true,
            };
        }
        if iterations == max_iter {
            return SimplexResult {
                x: vertices[best],
                value: values[best],
                iterations,
                evaluations,
                converged: false,
            };
        }
        iterations += 1;

        let mut centroid = [0.0; D];
        for &i in &order[..D] {
            for d in 0..D {
                centroid[d] += vertices[i][d];
            }
        }
        for c in centroid.iter_mut() {
            *c /= D as f64;
        }

        let reflected = lerp(&centroid, &vertices[worst], -REFLECT);
        let f_reflected = eval(&reflected, &mut evaluations);

        if f_reflected < values[best] {
            let expanded = lerp(&centroid, &vertices[worst], -EXPAND);
            let f_expanded = eval(&expanded, &mut evaluations);
            if f_expanded < f_reflected {
                vertices[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                vertices[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }

        let (candidate, f_candidate, accept) = if f_reflected < values[worst] {
            let c = lerp(&centroid, &reflected, CONTRACT);
            let fc = eval(&c, &mut evaluations);
            (c, fc, fc <= f_reflected)
        } else {
            let c = lerp(&centroid, &vertices[worst], CONTRACT);
            let fc = eval(&c, &mut evaluations);
            (c, fc, fc < values[worst])
        };
        if accept {
            vertices[worst] = candidate;
            values[worst] = f_candidate;
            continue;
        }

        let anchor = vertices[best];
        for i in 0..=D {
            if i != best {
                vertices[i] = lerp(&anchor, &vertices[i], SHRINK);
                values[i] = eval(&vertices[i], &mut evaluations);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            [-1.2, 1.0],
            [0.1, 0.1],
            1e-10,
            5000,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_iteration_cap() {
        let r = minimize(|x: &[f64; 3]| x.iter().map(|v| v * v).sum(), [5.0, 5.0, 5.0], [1.0; 3], 1e-30, 7);
        assert!(!r.converged);
        assert_eq!(r.iterations, 7);
    }

    #[test]
    fn infinite_region_is_avoided() {
        // minimum of (x-2)^2 subject to x <= 1
        let r = minimize(
            |x: &[f64; 1]| if x[0] > 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) },
            [0.0],
            [0.5],
            1e-9,
            500,
        );
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
