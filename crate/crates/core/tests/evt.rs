use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tailcast_core::evt::{compute_descriptors, fit_gpd_mle, gpd_cdf, gpd_log_likelihood, EvtConfig};
use tailcast_core::synth::sample_gpd;

fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn draws(n: usize, xi: f64, sigma: f64, seed: u64) -> Vec<f64> {
    sample_gpd(n, xi, sigma, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn sampled_exceedances_follow_the_cdf() {
    for (xi, sigma) in [(0.2, 5.0), (0.0, 2.0), (-0.3, 1.5)] {
        let y = draws(100_000, xi, sigma, 11);
        let d = ks_statistic(&y, |v| gpd_cdf(v, xi, sigma).unwrap());
        assert!(d < 0.01, "xi {xi}: KS {d}");
    }
}

#[test]
fn cdf_of_samples_is_uniform() {
    let y = draws(100_000, 0.2, 5.0, 3);
    let u: Vec<f64> = y.iter().map(|&v| gpd_cdf(v, 0.2, 5.0).unwrap()).collect();
    assert!(ks_statistic(&u, |v| v.clamp(0.0, 1.0)) < 0.01);
}

#[test]
fn recovers_heavy_tail_parameters() {
    let fit = fit_gpd_mle(&draws(20_000, 0.2, 5.0, 7)).unwrap();
    assert!((fit.xi - 0.2).abs() < 0.03, "{fit:?}");
    assert!((fit.sigma - 5.0).abs() < 0.15, "{fit:?}");
    assert!(fit.converged);
}

#[test]
fn maximum_beats_surrounding_grid() {
    for seed in 0..5 {
        let xi0 = [0.2, -0.2, 0.05, 0.4, -0.1][seed as usize];
        let y = draws(500, xi0, 3.0, seed);
        let fit = fit_gpd_mle(&y).unwrap();
        let best = gpd_log_likelihood(&y, fit.xi, fit.sigma);
        for i in 0..21 {
            for j in 0..21 {
                let xi = fit.xi - 0.2 + 0.4 * i as f64 / 20.0;
                let sigma = fit.sigma * (0.5 + 1.5 * j as f64 / 20.0);
                let ll = gpd_log_likelihood(&y, xi, sigma);
                if ll.is_finite() {
                    assert!(best >= ll - 1e-9, "seed {seed}: ({xi}, {sigma}) gives {ll} > {best}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_ignores_input_order(seed in 0u64..1000, shift in 1usize..400) {
        let y = draws(400, 0.1, 2.0, seed);
        let mut r = y.clone();
        r.rotate_left(shift);
        r.reverse();
        let a = fit_gpd_mle(&y).unwrap();
        let b = fit_gpd_mle(&r).unwrap();
        prop_assert!((a.xi - b.xi).abs() < 1e-6);
        prop_assert!((a.sigma - b.sigma).abs() < 1e-6 * a.sigma);
    }

    #[test]
    fn fit_is_scale_equivariant(seed in 0u64..1000, c in 0.1f64..20.0) {
        let y = draws(400, 0.15, 2.0, seed);
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let a = fit_gpd_mle(&y).unwrap();
        let b = fit_gpd_mle(&cy).unwrap();
        prop_assert!((a.xi - b.xi).abs() < 1e-6, "{} vs {}", a.xi, b.xi);
        prop_assert!((c * a.sigma - b.sigma).abs() < 1e-6 * b.sigma, "{} vs {}", c * a.sigma, b.sigma);
    }
}

#[test]
fn descriptors_on_constant_tail_fail_cleanly() {
    let mut t = vec![20.0; 300];
    t.extend(std::iter::repeat_n(30.0, 40));
    assert!(compute_descriptors(&t, &EvtConfig::default()).is_err());
}
