use chrono::Datelike;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tailcast_core::calendar::is_summer;
use tailcast_core::evt::{extract_exceedances, fit_gpd_mle};
use tailcast_core::ingest::StationMeta;
use tailcast_core::stats;
use tailcast_core::synth::{generate, generate_at, generate_with_events, haversine_km, sample_gpd, SynthConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn exponential_limit_has_unit_mean() {
    let y = sample_gpd(1_000_000, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!((mean(&y) - 1.0).abs() < 0.01);
}

#[test]
fn heavy_tail_mean_matches_formula() {
    let y = sample_gpd(1_000_000, 0.2, 5.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let expected = 5.0 / (1.0 - 0.2);
    assert!((mean(&y) - expected).abs() < 0.02 * expected, "{}", mean(&y));
}

#[test]
fn bounded_tail_respects_support() {
    let y = sample_gpd(100_000, -0.5, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!(y.iter().all(|&v| (0.0..=2.0).contains(&v)));
}

#[test]
fn no_excursions_keeps_summer_peak_near_seasonal_maximum() {
    let config = SynthConfig {
        n_stations: 10,
        exceed_prob: 0.0,
        ..SynthConfig::default()
    };
    let out = generate_with_events(&config).unwrap();
    let bound = 4.0 * config.stationary_sd();
    for (s, days) in out.series.iter().zip(&out.event_days) {
        assert!(days.is_empty());
        let summer: Vec<f64> = s
            .records()
            .iter()
            .filter(|r| is_summer(r.date))
            .map(|r| r.t_max.unwrap())
            .collect();
        let peak = 20.0 - 0.5 * (s.meta.lat - 49.0) + config.seasonal_amp;
        let q = stats::quantile(&summer, 0.999);
        assert!(q <= peak + bound, "{}: {q} vs {}", s.id(), peak + bound);
    }
}

#[test]
fn excursion_tail_refits_to_generator_shape() {
    let config = SynthConfig {
        n_stations: 20,
        n_years: 30,
        seed: 11,
        ..SynthConfig::default()
    };
    let out = generate_with_events(&config).unwrap();
    let mut pooled = Vec::new();
    for (s, days) in out.series.iter().zip(&out.event_days) {
        let hot: Vec<f64> = s
            .records()
            .iter()
            .filter(|r| days.binary_search(&r.date).is_ok())
            .map(|r| r.t_max.unwrap())
            .collect();
        pooled.extend(extract_exceedances(&hot, 0.9).unwrap().values);
    }
    let fit = fit_gpd_mle(&pooled).unwrap();
    assert!((fit.xi - 0.2).abs() < 0.05, "{fit:?} from {} exceedances", pooled.len());
}

#[test]
fn anomaly_correlation_decays_with_distance() {
    let metas: Vec<StationMeta> = [50.0, 51.0, 53.5]
        .iter()
        .enumerate()
        .map(|(i, &lat)| StationMeta::new(format!("C{i}"), "collinear", -122.0, lat).unwrap())
        .collect();
    let config = SynthConfig {
        n_stations: 3,
        n_years: 30,
        exceed_prob: 0.0,
        ..SynthConfig::default()
    };
    let out = generate_at(&config, &metas).unwrap();
    let anomalies: Vec<Vec<f64>> = out
        .series
        .iter()
        .map(|s| {
            let mut climatology = vec![(0.0, 0usize); 366];
            for r in s.records() {
                let c = &mut climatology[r.date.ordinal0() as usize];
                c.0 += r.t_max.unwrap();
                c.1 += 1;
            }
            s.records()
                .iter()
                .map(|r| {
                    let c = climatology[r.date.ordinal0() as usize];
                    r.t_max.unwrap() - c.0 / c.1 as f64
                })
                .collect()
        })
        .collect();
    let pairs = [(0, 1), (1, 2), (0, 2)];
    let mut by_distance: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(i, j)| (haversine_km(&metas[i], &metas[j]), pearson(&anomalies[i], &anomalies[j])))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in by_distance.windows(2) {
        assert!(w[0].1 > w[1].1, "{by_distance:?}");
    }
}

#[test]
fn planted_events_are_recorded_on_summer_days() {
    let out = generate_with_events(&SynthConfig {
        n_stations: 4,
        n_years: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    for days in &out.event_days {
        assert!(!days.is_empty());
        assert!(days.windows(2).all(|w| w[0] < w[1]));
        // Events start in summer and may run a few days past its end.
        assert!(days.iter().all(|d| (5..=10).contains(&d.month())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_records_satisfy_ingest_invariants(seed in 0u64..10_000, xi in -0.3f64..0.5, p in 0.0f64..0.2) {
        let config = SynthConfig { n_stations: 3, n_years: 2, seed, gpd_xi: xi, exceed_prob: p, ..SynthConfig::default() };
        for s in generate(&config).unwrap() {
            for r in s.records() {
                prop_assert!(r.check().is_ok());
                let (lo, mid, hi) = (r.t_min.unwrap(), r.t_avg.unwrap(), r.t_max.unwrap());
                prop_assert!(lo <= mid && mid <= hi);
                prop_assert!((0.0..=100.0).contains(&r.rh.unwrap()));
            }
        }
    }
}
