//! Randomized invariants of the correlation spectrum, the loss terms and the
//! fitting-SD map.

use proptest::prelude::*;
use t1reg_core::losses::pca::{correlation_spectrum, pca_loss};
use t1reg_core::losses::regularizers::cyclic_loss;
use t1reg_core::relaxometry::{fit_series, molli_signal, sd_map, FitConfig, MolliParams};
use t1reg_core::warp::warp_image;
use t1reg_core::{DeformationSet, ImageSeries, WarpedSeries};

fn stack_strategy() -> impl Strategy<Value = WarpedSeries> {
    (2usize..=8, 2usize..=8, 2usize..=11).prop_flat_map(|(w, h, n)| {
        prop::collection::vec(0.0f64..1000.0, w * h * n).prop_map(move |d| WarpedSeries::new(w, h, n, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn spectrum_trace_order_and_bounds(stack in stack_strategy()) {
        let spec = correlation_spectrum(&stack).unwrap();
        let n = stack.count as f64;
        let trace: f64 = spec.eigenvalues.iter().sum();
        prop_assert!((trace - n).abs() < 1e-9, "trace {trace}");
        prop_assert!(spec.eigenvalues.iter().all(|l| *l >= -1e-9));
        prop_assert!(spec.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
        let loss = pca_loss(&spec);
        prop_assert!(loss >= n - 1e-9 && loss <= n * (n + 1.0) / 2.0 + 1e-9, "loss {loss}");

        // orthonormal eigenvectors
        let k = spec.n;
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = (0..k).map(|r| spec.eigenvectors[r * k + a] * spec.eigenvectors[r * k + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_loss_ignores_per_image_affine_maps(
        stack in stack_strategy(),
        gains in prop::collection::vec(0.1f64..10.0, 11),
        offsets in prop::collection::vec(-500.0f64..500.0, 11),
    ) {
        let p = stack.pixels();
        let mut data = stack.data.clone();
        for i in 0..stack.count {
            for v in &mut data[i * p..(i + 1) * p] {
                *v = gains[i] * *v + offsets[i];
            }
        }
        let mapped = WarpedSeries::new(stack.width, stack.height, stack.count, data).unwrap();
        let a = pca_loss(&correlation_spectrum(&stack).unwrap());
        let b = pca_loss(&correlation_spectrum(&mapped).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn affine_images_warp_exactly(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -5.0f64..5.0,
        field in prop::collection::vec(-0.9f64..0.9, 2 * 64),
    ) {
        let (w, h) = (8usize, 8usize);
        let image: Vec<f64> = (0..w * h).map(|p| a * (p % w) as f64 + b * (p / w) as f64 + c).collect();
        let out = warp_image(&image, &field, w, h).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let p = y * w + x;
                let want = a * (x as f64 + field[2 * p]) + b * (y as f64 + field[2 * p + 1]) + c;
                prop_assert!((out[p] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cyclic_vanishes_exactly_for_zero_sum_fields(
        base in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 16),
        bump in 1e-3f64..1.0,
        at in 0usize..(2 * 16),
    ) {
        // the last field cancels the first two at every pixel
        let mut data = base.clone();
        let per = 2 * 16;
        for q in 0..per {
            data[2 * per + q] = -(data[q] + data[per + q]);
        }
        let defs = DeformationSet::from_vec(3, 4, 4, data.clone()).unwrap();
        prop_assert_eq!(cyclic_loss(&defs), 0.0);
        data[at] += bump;
        let defs = DeformationSet::from_vec(3, 4, 4, data).unwrap();
        prop_assert!(cyclic_loss(&defs) > 0.0);
    }
}

fn noisy_series(seed: u64, noise: f64, scale: f64) -> ImageSeries {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let times = [100.0, 180.0, 260.0, 1100.0, 1180.0, 1260.0, 2100.0, 2180.0, 2260.0, 3100.0, 3180.0];
    let truth = MolliParams::new(1.0, 1.9, 700.0);
    let (w, h) = (12usize, 12usize);
    let mut data = Vec::with_capacity(times.len() * w * h);
    for &t in &times {
        for _ in 0..w * h {
            data.push(scale * (molli_signal(&truth, t) + normal.sample(&mut rng)).abs());
        }
    }
    ImageSeries::new(w, h, times.to_vec(), data).unwrap()
}

#[test]
fn sd_map_ignores_global_scaling() {
    let cfg = FitConfig::default();
    let series = noisy_series(11, 0.02, 1.0);
    let maps = fit_series(&series, None, &cfg).unwrap();
    for alpha in [0.013, 3.7, 2500.0] {
        let scaled = series.scaled(alpha).unwrap();
        let scaled_maps = fit_series(&scaled, None, &cfg).unwrap();
        let a = sd_map(&series, &maps).unwrap();
        let b = sd_map(&scaled, &scaled_maps).unwrap();
        for (q, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(maps.converged[q], scaled_maps.converged[q]);
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "pixel {q}: {x} vs {y} at α={alpha}");
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn halving_noise_halves_the_sd() {
    let cfg = FitConfig::default();
    let sd_at = |sigma: f64| {
        let series = noisy_series(23, sigma, 1.0);
        let maps = fit_series(&series, None, &cfg).unwrap();
        median((0..maps.pixels()).filter(|&q| maps.converged[q]).map(|q| maps.sd_t1[q]).collect())
    };
    let ratio = sd_at(0.01) / sd_at(0.02);
    assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
}
