use chrono::NaiveDate;
use proptest::prelude::*;

use tailcast::io::{parse_meta_csv, parse_station_csv, write_meta_csv, write_station_csv, ColumnMap};
use tailcast_core::ingest::{DailyRecord, StationMeta, StationSeries};

fn record() -> impl Strategy<Value = [Option<f64>; 8]> {
    (
        prop::option::weighted(0.9, -30.0f64..45.0),
        prop::option::weighted(0.9, 0.0f64..8.0),
        prop::option::weighted(0.9, 0.0f64..1.0),
        prop::option::weighted(0.9, -40.0f64..30.0),
        prop::option::weighted(0.9, 0.0f64..100.0),
        prop::option::weighted(0.9, 0.0f64..30.0),
        prop::option::weighted(0.9, 0.0f64..80.0),
        prop::option::weighted(0.9, 80.0f64..106.0),
    )
        .prop_map(|(t_max, spread, frac, t_dew, rh, wind, precip, pressure)| {
            // Temperatures are either all present or all missing so the record
            // stays ordered.
            let temps = t_max.map(|hi| (hi, hi - spread.unwrap_or(3.0), frac.unwrap_or(0.5)));
            [
                temps.map(|t| t.0),
                temps.map(|t| t.1),
                temps.map(|t| (t.1 + t.2 * (t.0 - t.1)).min(t.0)),
                t_dew,
                rh,
                wind,
                precip,
                pressure,
            ]
        })
}

fn series() -> impl Strategy<Value = StationSeries> {
    (
        prop::collection::btree_map(0u16..2000, record(), 1..60),
        -180.0f64..180.0,
        -90.0f64..90.0,
    )
        .prop_map(|(days, lon, lat)| {
            let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
            let records = days
                .into_iter()
                .map(|(day, fields)| {
                    let mut r = DailyRecord::missing(start + chrono::Days::new(u64::from(day)));
                    for (k, v) in fields.into_iter().enumerate() {
                        r.set_field(k, v);
                    }
                    r
                })
                .collect();
            StationSeries::new(StationMeta::new("ST-1", "Round trip", lon, lat).unwrap(), records).unwrap()
        })
}

proptest! {
    #[test]
    fn station_csv_round_trips(s in series()) {
        let mut buf = Vec::new();
        write_station_csv(&mut buf, &s).unwrap();
        let parsed = parse_station_csv(buf.as_slice(), &ColumnMap::default(), s.meta.clone()).unwrap();
        prop_assert_eq!(&parsed, &s);

        let mut again = Vec::new();
        write_station_csv(&mut again, &parsed).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn metadata_round_trips(
        coords in prop::collection::vec((-180.0f64..180.0, -90.0f64..90.0), 1..10),
    ) {
        let metas: Vec<StationMeta> = coords
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat))| StationMeta::new(format!("S{i}"), format!("Station, {i}"), lon, lat).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_meta_csv(&mut buf, &metas).unwrap();
        prop_assert_eq!(parse_meta_csv(buf.as_slice()).unwrap(), metas);
    }
}

#[test]
fn malformed_rows_report_line_numbers() {
    let meta = StationMeta::new("A", "a", -120.0, 50.0).unwrap();
    let csv = "station_id,date,t_max,t_min,t_avg,t_dew,rh,wind,precip,pressure\n\
               A,2021-06-27,30,20,25,10,50,2,0,101\n\
               A,2021-06-28,30,20,25,10,112,2,0,101\n";
    let err = parse_station_csv(csv.as_bytes(), &ColumnMap::default(), meta.clone()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    let dup = "station_id,date,t_max,t_min,t_avg,t_dew,rh,wind,precip,pressure\n\
               A,2021-06-28,30,20,25,10,50,2,0,101\n\
               A,2021-06-28,31,20,25,10,50,2,0,101\n";
    assert!(parse_station_csv(dup.as_bytes(), &ColumnMap::default(), meta).is_err());
}
