//! Calendar-month arithmetic on [`NaiveDate`].
//!
//! Month addition clamps to the last day of the target month
//! (Jan 31 + 1 month = Feb 28/29), matching chrono's `Months` semantics.

use chrono::{Datelike, Months, NaiveDate};

/// `date` shifted by `months` calendar months (negative goes back).
pub fn add_months(date: NaiveDate, months: i64) -> NaiveDate {
    let shifted = if months >= 0 {
        date.checked_add_months(Months::new(months as u32))
    } else {
        date.checked_sub_months(Months::new(months.unsigned_abs() as u32))
    };
    shifted.expect("month arithmetic out of calendar range")
}

/// Whole calendar months from `from` to `to`, partial months rounded up:
/// the smallest `m >= 0` with `from + m months >= to`.
///
/// Returns 0 when `to <= from`.
pub fn months_ceil(from: NaiveDate, to: NaiveDate) -> u32 {
    if to <= from {
        return 0;
    }
    let mut m = month_diff(from, to).max(0);
    while add_months(from, m) < to {
        m += 1;
    }
    while m > 0 && add_months(from, m - 1) >= to {
        m -= 1;
    }
    m as u32
}

/// Whole calendar months from `from` to `to`, rounded down: the largest `m`
/// with `from + m months <= to`. Negative when `to < from`.
pub fn months_floor(from: NaiveDate, to: NaiveDate) -> i64 {
    let mut m = month_diff(from, to);
    while add_months(from, m) > to {
        m -= 1;
    }
    while add_months(from, m + 1) <= to {
        m += 1;
    }
    m
}

fn month_diff(from: NaiveDate, to: NaiveDate) -> i64 {
    (to.year() as i64 - from.year() as i64) * 12 + (to.month() as i64 - from.month() as i64)
}

/// Days since 1970-01-01.
pub fn epoch_days(date: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    (date - epoch).num_days()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn ceil_counts_partial_months() {
        assert_eq!(months_ceil(d(2021, 1, 1), d(2024, 1, 1)), 36);
        assert_eq!(months_ceil(d(2023, 6, 15), d(2024, 1, 1)), 7);
        assert_eq!(months_ceil(d(2024, 1, 1), d(2024, 5, 10)), 5);
        assert_eq!(months_ceil(d(2024, 1, 1), d(2024, 1, 2)), 1);
        assert_eq!(months_ceil(d(2024, 1, 1), d(2024, 1, 1)), 0);
        assert_eq!(months_ceil(d(2024, 3, 1), d(2024, 1, 1)), 0);
    }

    #[test]
    fn floor_handles_month_ends() {
        assert_eq!(months_floor(d(2023, 1, 1), d(2023, 2, 28)), 1);
        assert_eq!(months_floor(d(2023, 1, 1), d(2023, 3, 1)), 2);
        assert_eq!(months_floor(d(2023, 1, 31), d(2023, 2, 28)), 1);
        assert_eq!(months_floor(d(2023, 1, 1), d(2022, 12, 31)), -1);
    }

    #[test]
    fn add_months_clamps() {
        assert_eq!(add_months(d(2023, 1, 31), 1), d(2023, 2, 28));
        assert_eq!(add_months(d(2024, 3, 31), -1), d(2024, 2, 29));
    }
}
