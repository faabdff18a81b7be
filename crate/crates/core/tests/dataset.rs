use chrono::NaiveDate;
use proptest::prelude::*;

use tailcast_core::calendar::{is_summer, next_day};
use tailcast_core::dataset::{
    build_features, compute_t90, label_pkl, make_windows, FeatureMode, Panel, SplitSpec,
};
use tailcast_core::evt::GpdDescriptors;
use tailcast_core::ingest::{DailyRecord, StationMeta, StationSeries};
use tailcast_core::synth::{generate, SynthConfig};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn consecutive(start: NaiveDate, values: &[f64]) -> Vec<(NaiveDate, f64)> {
    let mut d = start;
    values
        .iter()
        .map(|&v| {
            let out = (d, v);
            d = next_day(d);
            out
        })
        .collect()
}

fn to_bools(v: &[u8]) -> Vec<bool> {
    v.iter().map(|&b| b == 1).collect()
}

#[test]
fn golden_labels() {
    // Threshold 30: a 3-day run, a 2-day run, then a 4-day run.
    let t = consecutive(
        date(2020, 7, 1),
        &[31.0, 32.0, 33.0, 29.0, 35.0, 36.0, 30.0, 31.0, 31.5, 32.0, 40.0, 20.0],
    );
    assert_eq!(label_pkl(&t, 30.0, 3), to_bools(&[1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 0]));

    // The run straddles the end of September, so only two days stay in season.
    let t = consecutive(date(2020, 9, 29), &[35.0, 35.0, 35.0]);
    assert_eq!(label_pkl(&t, 30.0, 3), to_bools(&[0, 0, 0]));

    // The same run inside summer is a heatwave.
    let t = consecutive(date(2020, 9, 28), &[35.0, 35.0, 35.0]);
    assert_eq!(label_pkl(&t, 30.0, 3), to_bools(&[1, 1, 1]));

    // Runs before May are ignored, and May 1 starts a fresh run.
    let t = consecutive(date(2021, 4, 29), &[35.0, 35.0, 35.0, 35.0, 35.0]);
    assert_eq!(label_pkl(&t, 30.0, 3), to_bools(&[0, 0, 1, 1, 1]));
}

fn station(id: &str, lat: f64, start: NaiveDate, t_max: &[f64]) -> StationSeries {
    let meta = StationMeta::new(id, id, -123.0, lat).unwrap();
    let records = consecutive(start, t_max)
        .into_iter()
        .map(|(d, t)| DailyRecord {
            date: d,
            t_max: Some(t),
            t_min: Some(t - 9.0),
            t_avg: Some(t - 4.0),
            t_dew: Some(t - 12.0),
            rh: Some(45.0),
            wind: Some(3.0),
            precip: Some(0.0),
            pressure: Some(101.2),
        })
        .collect();
    StationSeries::new(meta, records).unwrap()
}

#[test]
fn planted_excursion_is_labeled_exactly() {
    let config = SynthConfig {
        n_stations: 2,
        n_years: 4,
        noise_sd: 0.0,
        seasonal_amp: 0.0,
        exceed_prob: 0.0,
        ..SynthConfig::default()
    };
    for s in generate(&config).unwrap() {
        let mut t_max: Vec<(NaiveDate, f64)> = s.t_max_series();
        let planted: Vec<NaiveDate> = (0..5).map(|k| date(2011, 7, 10 + k)).collect();
        for (d, v) in t_max.iter_mut() {
            if planted.contains(d) {
                *v += 8.0;
            }
        }
        let t90 = compute_t90(s.id(), &t_max).unwrap();
        let labels = label_pkl(&t_max, t90, 3);
        let labeled: Vec<NaiveDate> = t_max.iter().zip(&labels).filter(|(_, &l)| l).map(|(p, _)| p.0).collect();
        assert_eq!(labeled, planted);
    }
}

fn hot_runs(t: &[(NaiveDate, f64)], t90: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < t.len() {
        if !(is_summer(t[i].0) && t[i].1 > t90) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < t.len() && is_summer(t[i + 1].0) && t[i + 1].1 > t90 && next_day(t[i].0) == t[i + 1].0 {
            i += 1;
        }
        runs.push((start, i + 1));
        i += 1;
    }
    runs
}

fn hot_sequence() -> impl Strategy<Value = Vec<(NaiveDate, f64)>> {
    (prop::collection::vec((0u8..4, 20.0f64..40.0), 1..200), 0u32..180).prop_map(|(steps, offset)| {
        let mut d = date(2019, 3, 1) + chrono::Days::new(u64::from(offset));
        let mut out = Vec::new();
        for (skip, v) in steps {
            // A zero step leaves a hole in the calendar.
            if skip == 0 {
                d = next_day(d);
            }
            out.push((d, v));
            d = next_day(d);
        }
        out
    })
}

proptest! {
    #[test]
    fn labels_are_exactly_the_long_hot_runs(t in hot_sequence(), t90 in 25.0f64..35.0, min_run in 1usize..6) {
        let labels = label_pkl(&t, t90, min_run);
        let mut expected = vec![false; t.len()];
        for (a, b) in hot_runs(&t, t90) {
            if b - a >= min_run {
                expected[a..b].iter_mut().for_each(|l| *l = true);
            }
        }
        prop_assert_eq!(&labels, &expected);

        let mut i = 0;
        while i < labels.len() {
            if !labels[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < labels.len() && labels[i + 1] && next_day(t[i].0) == t[i + 1].0 {
                i += 1;
            }
            prop_assert!(i + 1 - start >= min_run);
            i += 1;
        }
    }

    #[test]
    fn train_and_validation_targets_never_overlap(
        n_days in 40usize..120,
        cut in 10usize..100,
        gap in 1usize..15,
        c_in in 1usize..8,
        c_out in 1usize..5,
    ) {
        prop_assume!(cut + gap < n_days);
        let start = date(2020, 6, 1);
        let t: Vec<f64> = (0..n_days).map(|k| 25.0 + (k as f64 * 0.3).sin()).collect();
        let s = station("A", 50.0, start, &t);
        let panel = Panel::build(&[s], &[vec![false; n_days]], None, FeatureMode::Baseline).unwrap();
        let split = SplitSpec::new(panel.dates[cut], panel.dates[cut + gap]).unwrap();
        let Ok(w) = make_windows(&panel, c_in, c_out, &split) else { return Ok(()) };
        let targets = |anchors: &[usize]| -> Vec<usize> {
            anchors.iter().flat_map(|&a| (a + 1)..=(a + c_out)).collect()
        };
        let train_last = targets(&w.train).into_iter().max();
        let val_first = targets(&w.val).into_iter().min();
        if let (Some(tl), Some(vf)) = (train_last, val_first) {
            prop_assert!(tl < vf);
        }
        for &a in &w.train {
            prop_assert!(panel.dates[a + c_out] <= split.train_end);
        }
        for &a in &w.val {
            prop_assert!(panel.dates[a + 1 - c_in] >= split.val_start);
        }
    }
}

fn descriptors(xi: f64) -> GpdDescriptors {
    GpdDescriptors {
        threshold_u: 25.0,
        xi,
        sigma: 3.0 + xi,
        mu: 18.0,
        variance: 30.0,
        q95: 28.0,
        n_exceed: 40,
        converged: true,
        at_bound: false,
    }
}

#[test]
fn features_do_not_depend_on_station_order() {
    let start = date(2020, 5, 1);
    let series = [
        station("A", 49.5, start, &[25.0, 26.0, 27.0, 28.0]),
        station("B", 52.0, start, &[20.0, 31.0, 22.0, 23.0]),
        station("C", 55.0, start, &[18.0, 19.0, 30.0, 21.0]),
    ];
    let labels = vec![vec![false, true, true, false]; 3];
    let desc = [descriptors(0.1), descriptors(0.2), descriptors(-0.1)];
    let forward = Panel::build(&series, &labels, Some(&desc), FeatureMode::Di).unwrap();
    let again = Panel::build(&series, &labels, Some(&desc), FeatureMode::Di).unwrap();
    assert_eq!(forward, again);

    let rev_series: Vec<StationSeries> = series.iter().rev().cloned().collect();
    let rev_desc: Vec<GpdDescriptors> = desc.iter().rev().cloned().collect();
    let reversed = Panel::build(&rev_series, &labels, Some(&rev_desc), FeatureMode::Di).unwrap();
    for t in 0..forward.n_days() {
        for s in 0..3 {
            assert_eq!(forward.row(t, s), reversed.row(t, 2 - s));
        }
    }

    for (s, d) in series.iter().zip(&desc) {
        let rows = build_features(s, &labels[0], Some(d), FeatureMode::Di).unwrap();
        for row in rows {
            assert_eq!(row.unwrap()[13..], [d.xi, d.sigma, d.mu, d.variance, d.q95]);
        }
    }
}
