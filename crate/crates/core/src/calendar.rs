//! Calendar primitives shared by the panels and indicator code: inclusive
//! year ranges, contiguous daily series and week/month/quarter periods.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive range of calendar years. Serialized as `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Self {
        YearRange { first, last }
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.first && year <= self.last
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            (self.last - self.first + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    /// Parses `first:last` (or a single year).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::ConfigInvalid(format!("bad year range `{s}` (expected A:B)"));
        let (a, b) = match s.split_once(':') {
            Some((a, b)) => (a, b),
            None => (s, s),
        };
        let first: i32 = a.trim().parse().map_err(|_| bad())?;
        let last: i32 = b.trim().parse().map_err(|_| bad())?;
        if last < first {
            return Err(bad());
        }
        Ok(YearRange { first, last })
    }
}

impl From<[i32; 2]> for YearRange {
    fn from(v: [i32; 2]) -> Self {
        YearRange::new(v[0], v[1])
    }
}

impl From<YearRange> for [i32; 2] {
    fn from(r: YearRange) -> Self {
        [r.first, r.last]
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

/// A gap-free daily series starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Self {
        DailySeries { start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.date(i), v))
    }

    /// Values whose calendar year falls in `range`.
    pub fn values_in(&self, range: YearRange) -> Vec<f64> {
        self.iter()
            .filter(|(d, _)| range.contains(d.year()))
            .map(|(_, v)| v)
            .collect()
    }

    pub(crate) fn check_aligned(&self, other: &DailySeries) -> Result<()> {
        if self.len() != other.len() || self.start != other.start {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodKind {
    Weekly,
    Monthly,
    Quarterly,
}

impl PeriodKind {
    /// Single-letter tag used in feature column names.
    pub fn tag(self) -> char {
        match self {
            PeriodKind::Weekly => 'w',
            PeriodKind::Monthly => 'm',
            PeriodKind::Quarterly => 'q',
        }
    }

    pub fn max_ordinal(self) -> u32 {
        match self {
            PeriodKind::Weekly => 53,
            PeriodKind::Monthly => 12,
            PeriodKind::Quarterly => 4,
        }
    }

    /// The period containing `date`. Weeks are ISO weeks keyed by ISO year.
    pub fn period_of(self, date: NaiveDate) -> Period {
        match self {
            PeriodKind::Weekly => {
                let w = date.iso_week();
                Period::new(self, w.year(), w.week())
            }
            PeriodKind::Monthly => Period::new(self, date.year(), date.month()),
            PeriodKind::Quarterly => Period::new(self, date.year(), (date.month() - 1) / 3 + 1),
        }
    }
}

/// One week, month or quarter of a (possibly ISO) year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub kind: PeriodKind,
    pub year: i32,
    pub ordinal: u32,
}

impl Period {
    pub fn new(kind: PeriodKind, year: i32, ordinal: u32) -> Self {
        debug_assert!(ordinal >= 1 && ordinal <= kind.max_ordinal());
        Period {
            kind,
            year,
            ordinal,
        }
    }

    /// Number of days in the period.
    pub fn len_days(&self) -> u32 {
        match self.kind {
            PeriodKind::Weekly => 7,
            PeriodKind::Monthly => days_in_month(self.year, self.ordinal),
            PeriodKind::Quarterly => {
                let m0 = (self.ordinal - 1) * 3 + 1;
                (m0..m0 + 3).map(|m| days_in_month(self.year, m)).sum()
            }
        }
    }
}

pub fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    };
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month");
    (next - first).num_days() as u32
}

/// Per-period values for one region and one indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub kind: PeriodKind,
    pub values: BTreeMap<Period, f64>,
}

impl IndicatorSeries {
    pub fn new(kind: PeriodKind) -> Self {
        IndicatorSeries {
            kind,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, year: i32, ordinal: u32) -> Option<f64> {
        self.values
            .get(&Period::new(self.kind, year, ordinal))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Sum,
    Min,
    Max,
}

/// Reduces a daily series to one value per complete period. Periods cut by
/// the start or end of the series are dropped.
pub fn aggregate(daily: &DailySeries, kind: PeriodKind, stat: Stat) -> Result<IndicatorSeries> {
    if daily.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut out = IndicatorSeries::new(kind);
    let mut current: Option<(Period, u32, f64)> = None;
    let flush = |acc: Option<(Period, u32, f64)>, out: &mut IndicatorSeries| {
        if let Some((p, n, v)) = acc {
            if n == p.len_days() {
                let v = if stat == Stat::Mean { v / n as f64 } else { v };
                out.values.insert(p, v);
            }
        }
    };
    for (date, v) in daily.iter() {
        let p = kind.period_of(date);
        match current.as_mut() {
            Some((cp, n, acc)) if *cp == p => {
                *n += 1;
                *acc = match stat {
                    Stat::Mean | Stat::Sum => *acc + v,
                    Stat::Min => acc.min(v),
                    Stat::Max => acc.max(v),
                };
            }
            _ => {
                flush(current.take(), &mut out);
                current = Some((p, 1, v));
            }
        }
    }
    flush(current, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn weekly_mean_of_constant() {
        // 2024-01-01 is a Monday.
        let s = DailySeries::new(date(2024, 1, 1), vec![10.0; 7]);
        let agg = aggregate(&s, PeriodKind::Weekly, Stat::Mean).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg.get(2024, 1), Some(10.0));
    }

    #[test]
    fn january_precip_sum() {
        let s = DailySeries::new(date(2023, 1, 1), vec![1.0; 31]);
        let agg = aggregate(&s, PeriodKind::Monthly, Stat::Sum).unwrap();
        assert_eq!(agg.get(2023, 1), Some(31.0));
    }

    #[test]
    fn incomplete_weeks_are_dropped() {
        // Sat 6 Jan .. Mon 15 Jan 2024: only ISO week 2 (8-14 Jan) is complete.
        let s = DailySeries::new(date(2024, 1, 6), vec![1.0; 10]);
        let agg = aggregate(&s, PeriodKind::Weekly, Stat::Sum).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg.get(2024, 2), Some(7.0));
    }

    #[test]
    fn constant_mean_for_every_period_kind() {
        let s = DailySeries::new(date(2021, 1, 1), vec![3.25; 730]);
        for kind in [PeriodKind::Weekly, PeriodKind::Monthly, PeriodKind::Quarterly] {
            let agg = aggregate(&s, kind, Stat::Mean).unwrap();
            assert!(!agg.is_empty());
            assert!(agg.values.values().all(|&v| (v - 3.25).abs() < 1e-12));
        }
    }

    #[test]
    fn min_max_stats() {
        let s = DailySeries::new(date(2023, 2, 1), (0..28).map(f64::from).collect());
        let mn = aggregate(&s, PeriodKind::Monthly, Stat::Min).unwrap();
        let mx = aggregate(&s, PeriodKind::Monthly, Stat::Max).unwrap();
        assert_eq!(mn.get(2023, 2), Some(0.0));
        assert_eq!(mx.get(2023, 2), Some(27.0));
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = DailySeries::new(date(2023, 1, 1), vec![]);
        assert!(matches!(
            aggregate(&s, PeriodKind::Monthly, Stat::Sum),
            Err(Error::EmptySeries)
        ));
    }

    #[test]
    fn quarter_lengths() {
        assert_eq!(Period::new(PeriodKind::Quarterly, 2024, 1).len_days(), 91);
        assert_eq!(Period::new(PeriodKind::Quarterly, 2023, 1).len_days(), 90);
        assert_eq!(days_in_month(2024, 2), 29);
    }

    #[test]
    fn year_range_parse() {
        assert_eq!(YearRange::parse("1979:2022").unwrap(), YearRange::new(1979, 2022));
        assert_eq!(YearRange::parse("2004").unwrap().len(), 1);
        assert!(YearRange::parse("2022:1979").is_err());
    }
}
