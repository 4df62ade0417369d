//! Day-count extreme-weather indicators: absolute thresholds, percentile
//! thresholds, freeze-thaw days and thunderstorm proxy days.

use serde::{Deserialize, Serialize};

use super::quantile::quantile;
use crate::calendar::{aggregate, DailySeries, IndicatorSeries, PeriodKind, Stat, YearRange};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn test(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

fn count_where(
    daily: &DailySeries,
    kind: PeriodKind,
    hit: impl Fn(usize) -> bool,
) -> Result<IndicatorSeries> {
    let flags = DailySeries::new(
        daily.start,
        (0..daily.len())
            .map(|i| if hit(i) { 1.0 } else { 0.0 })
            .collect(),
    );
    aggregate(&flags, kind, Stat::Sum)
}

pub fn count_threshold_days(
    daily: &DailySeries,
    comparator: Comparator,
    threshold: f64,
    kind: PeriodKind,
) -> Result<IndicatorSeries> {
    count_where(daily, kind, |i| comparator.test(daily.values[i], threshold))
}

/// Empirical `percentile` (0..=100) of the reference-year daily values.
pub fn reference_threshold(daily: &DailySeries, percentile: f64, reference: YearRange) -> Result<f64> {
    let refs = daily.values_in(reference);
    quantile(&refs, percentile / 100.0).ok_or_else(|| {
        Error::InsufficientReference(format!("no daily values in reference years {reference}"))
    })
}

/// Counts days strictly above (or below) the region's reference percentile.
pub fn percentile_threshold_days(
    daily: &DailySeries,
    percentile: f64,
    reference: YearRange,
    side: Side,
    kind: PeriodKind,
) -> Result<IndicatorSeries> {
    let threshold = reference_threshold(daily, percentile, reference)?;
    let cmp = match side {
        Side::Above => Comparator::Gt,
        Side::Below => Comparator::Lt,
    };
    count_threshold_days(daily, cmp, threshold, kind)
}

/// Freeze-thaw days: tmax above and tmin below 0 °C on the same day.
pub fn wechselfrost_days(
    tmin: &DailySeries,
    tmax: &DailySeries,
    kind: PeriodKind,
) -> Result<IndicatorSeries> {
    tmin.check_aligned(tmax)?;
    count_where(tmin, kind, |i| tmax.values[i] > 0.0 && tmin.values[i] < 0.0)
}

/// Thunderstorm proxy days: heavy precipitation together with wind at or
/// above the region's reference wind percentile.
pub fn gewitter_days(
    precip: &DailySeries,
    wind: &DailySeries,
    kind: PeriodKind,
    precip_min: f64,
    wind_percentile: f64,
    reference: YearRange,
) -> Result<IndicatorSeries> {
    precip.check_aligned(wind)?;
    let wind_min = reference_threshold(wind, wind_percentile, reference)?;
    count_where(precip, kind, |i| {
        precip.values[i] >= precip_min && wind.values[i] >= wind_min
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn jan(values: Vec<f64>) -> DailySeries {
        DailySeries::new(NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(), values)
    }

    fn feb_1_2021() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 2, 1).unwrap()
    }

    #[test]
    fn frost_days_counted() {
        // A full month where only the first three days vary.
        let mut v = vec![5.0; 31];
        v[..3].copy_from_slice(&[-1.0, 0.5, -3.0]);
        let c = count_threshold_days(&jan(v), Comparator::Lt, 0.0, PeriodKind::Monthly).unwrap();
        assert_eq!(c.get(2023, 1), Some(2.0));
    }

    #[test]
    fn no_heat_days_below_threshold() {
        let c =
            count_threshold_days(&jan(vec![25.0; 31]), Comparator::Ge, 30.0, PeriodKind::Monthly)
                .unwrap();
        assert_eq!(c.get(2023, 1), Some(0.0));
    }

    #[test]
    fn high_radiation_days() {
        // 2500 J/cm² = 25 MJ/m²
        let mut v = vec![10.0; 31];
        for i in [2, 9, 17, 30] {
            v[i] = 26.5;
        }
        v[5] = 25.0;
        let c = count_threshold_days(&jan(v), Comparator::Gt, 25.0, PeriodKind::Monthly).unwrap();
        assert_eq!(c.get(2023, 1), Some(4.0));
    }

    #[test]
    fn p100_above_counts_nothing() {
        let v: Vec<f64> = (0..365).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = jan(v);
        let c = percentile_threshold_days(
            &s,
            100.0,
            YearRange::new(2023, 2023),
            Side::Above,
            PeriodKind::Monthly,
        )
        .unwrap();
        assert_eq!(c.len(), 12);
        assert!(c.values.values().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_series_threshold() {
        let s = jan(vec![4.2; 365]);
        let t = reference_threshold(&s, 90.0, YearRange::new(2023, 2023)).unwrap();
        assert_eq!(t, 4.2);
        let c = percentile_threshold_days(
            &s,
            90.0,
            YearRange::new(2023, 2023),
            Side::Above,
            PeriodKind::Monthly,
        )
        .unwrap();
        assert!(c.values.values().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_reference_window() {
        let s = jan(vec![1.0; 31]);
        assert!(matches!(
            reference_threshold(&s, 90.0, YearRange::new(1990, 1991)),
            Err(Error::InsufficientReference(_))
        ));
    }

    #[test]
    fn wechselfrost_definition() {
        let tmin = DailySeries::new(feb_1_2021(), vec![-2.0; 28]);
        let mut tmax_v = vec![3.0; 28];
        tmax_v[0] = -1.0;
        let tmax = DailySeries::new(feb_1_2021(), tmax_v);
        let c = wechselfrost_days(&tmin, &tmax, PeriodKind::Monthly).unwrap();
        assert_eq!(c.get(2021, 2), Some(27.0));
    }

    #[test]
    fn wechselfrost_alternating_month() {
        // 31 days starting on a freeze-thaw day: days 0,2,...,30 qualify.
        let tmin = jan((0..31).map(|i| if i % 2 == 0 { -2.0 } else { 1.0 }).collect());
        let tmax = jan((0..31).map(|i| if i % 2 == 0 { 3.0 } else { 5.0 }).collect());
        let oracle = (0..31)
            .filter(|&i| tmax.values[i] > 0.0 && tmin.values[i] < 0.0)
            .count();
        let c = wechselfrost_days(&tmin, &tmax, PeriodKind::Monthly).unwrap();
        assert_eq!(oracle, 16);
        assert_eq!(c.get(2023, 1), Some(16.0));
    }

    #[test]
    fn wechselfrost_length_mismatch() {
        let a = jan(vec![0.0; 31]);
        let b = jan(vec![0.0; 30]);
        assert!(matches!(
            wechselfrost_days(&a, &b, PeriodKind::Monthly),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gewitter_days_counted() {
        let n = 365;
        let mut precip = vec![0.0; n];
        let mut wind: Vec<f64> = (0..n).map(|i| 2.0 + (i % 10) as f64 * 0.1).collect();
        // Three qualifying days in March (day-of-year 60..=90), one wet but calm day.
        for d in [62, 70, 85] {
            precip[d] = 20.0;
            wind[d] = 15.0;
        }
        precip[75] = 20.0;
        wind[75] = 1.0;
        let p = jan(precip);
        let w = jan(wind);
        let c = gewitter_days(
            &p,
            &w,
            PeriodKind::Monthly,
            15.0,
            95.0,
            YearRange::new(2023, 2023),
        )
        .unwrap();
        let thr = reference_threshold(&w, 95.0, YearRange::new(2023, 2023)).unwrap();
        let oracle = (59..90)
            .filter(|&d| p.values[d] >= 15.0 && w.values[d] >= thr)
            .count();
        assert_eq!(oracle, 3);
        assert_eq!(c.get(2023, 3), Some(3.0));
        assert_eq!(c.values.values().sum::<f64>(), 3.0);
    }

    #[test]
    fn monthly_counts_sum_to_yearly_count() {
        let v: Vec<f64> = (0..730).map(|i| ((i * 7919) % 23) as f64 - 8.0).collect();
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), v.clone());
        let months = count_threshold_days(&s, Comparator::Lt, 0.0, PeriodKind::Monthly).unwrap();
        for year in [2022, 2023] {
            let by_month: f64 = (1..=12).map(|m| months.get(year, m).unwrap()).sum();
            let start = if year == 2022 { 0 } else { 365 };
            let direct = v[start..start + 365].iter().filter(|&&x| x < 0.0).count();
            assert_eq!(by_month, direct as f64);
        }
    }
}
