//! Season and day-of-year helpers shared by labeling, fitting and generation.

use chrono::{Datelike, NaiveDate};

/// First and last month of the heat season (May through September, inclusive).
pub const SUMMER_MONTHS: (u32, u32) = (5, 9);

/// Mean tropical year length used for the day-of-year phase.
pub const YEAR_LENGTH_DAYS: f64 = 365.25;

pub fn is_summer(date: NaiveDate) -> bool {
    let m = date.month();
    m >= SUMMER_MONTHS.0 && m <= SUMMER_MONTHS.1
}

/// `(sin, cos)` of `2π·doy/365.25` with a zero-based day of year, so Jan 1 maps
/// to `(0, 1)`.
pub fn doy_encoding(date: NaiveDate) -> (f64, f64) {
    let phase = 2.0 * core::f64::consts::PI * date.ordinal0() as f64 / YEAR_LENGTH_DAYS;
    (libm::sin(phase), libm::cos(phase))
}

/// Next calendar day; panics only past chrono's representable range.
pub fn next_day(date: NaiveDate) -> NaiveDate {
    date.succ_opt().expect("date overflow")
}
