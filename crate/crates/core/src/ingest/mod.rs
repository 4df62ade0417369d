//! Regional weather and yield panels: types, CSV loading, validation and
//! synthetic generation.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::{DailySeries, YearRange};
use crate::error::{Error, Result};

pub use io::{load_weather_csv, load_yield_csv, read_weather_csv, read_yield_csv, write_weather_csv, write_yield_csv};
pub use synth::{synth_generate, Driver, DriverTruth, GroundTruth, SynthConfig, SynthOutput, WeatherShock};

/// Administrative region code, e.g. `DE123`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(String);

impl RegionId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(Error::ConfigInvalid("empty region code".into()));
        }
        Ok(RegionId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A (region, year) cell of the panel.
pub type Cell = (RegionId, i32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyWeather {
    /// °C
    pub tmean: f64,
    pub tmax: f64,
    pub tmin: f64,
    /// mm/day
    pub precip: f64,
    /// m/s
    pub wind: f64,
    /// MJ/m²/day
    pub radiation: f64,
    /// %
    pub rhum: f64,
}

impl DailyWeather {
    /// First violated invariant, if any.
    pub fn violation(&self) -> Option<String> {
        let all = [
            self.tmean,
            self.tmax,
            self.tmin,
            self.precip,
            self.wind,
            self.radiation,
            self.rhum,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Some("non-finite value".into());
        }
        if !(self.tmin <= self.tmean && self.tmean <= self.tmax) {
            return Some(format!(
                "expected tmin <= tmean <= tmax, got tmin={} tmean={} tmax={}",
                self.tmin, self.tmean, self.tmax
            ));
        }
        if self.precip < 0.0 {
            return Some(format!("negative precip {}", self.precip));
        }
        if self.wind < 0.0 {
            return Some(format!("negative wind {}", self.wind));
        }
        if self.radiation < 0.0 {
            return Some(format!("negative radiation {}", self.radiation));
        }
        if !(0.0..=100.0).contains(&self.rhum) {
            return Some(format!("relative humidity {} outside [0, 100]", self.rhum));
        }
        None
    }

    pub fn get(&self, var: WeatherVar) -> f64 {
        match var {
            WeatherVar::Tmean => self.tmean,
            WeatherVar::Tmax => self.tmax,
            WeatherVar::Tmin => self.tmin,
            WeatherVar::Precip => self.precip,
            WeatherVar::Wind => self.wind,
            WeatherVar::Radiation => self.radiation,
            WeatherVar::Rhum => self.rhum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeatherVar {
    Tmean,
    Tmax,
    Tmin,
    Precip,
    Wind,
    Radiation,
    Rhum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionWeather {
    pub region: RegionId,
    pub days: Vec<DailyWeather>,
}

/// Daily weather for several regions over one shared, gap-free date range.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherPanel {
    start: NaiveDate,
    regions: Vec<RegionWeather>,
}

impl WeatherPanel {
    pub fn new(start: NaiveDate, regions: Vec<RegionWeather>) -> Result<Self> {
        let Some(first) = regions.first() else {
            return Err(Error::EmptySeries);
        };
        let n = first.days.len();
        if n == 0 {
            return Err(Error::EmptySeries);
        }
        let mut seen = BTreeSet::new();
        for r in &regions {
            if !seen.insert(r.region.clone()) {
                return Err(Error::ConfigInvalid(format!("region {} listed twice", r.region)));
            }
            if r.days.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: r.days.len(),
                });
            }
            if let Some((i, msg)) = r
                .days
                .iter()
                .enumerate()
                .find_map(|(i, d)| d.violation().map(|m| (i, m)))
            {
                return Err(Error::InvariantViolation {
                    line: 0,
                    message: format!("{} on {}: {msg}", r.region, start + Duration::days(i as i64)),
                });
            }
        }
        Ok(WeatherPanel { start, regions })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.n_days() as i64 - 1)
    }

    pub fn n_days(&self) -> usize {
        self.regions[0].days.len()
    }

    pub fn years(&self) -> YearRange {
        use chrono::Datelike;
        YearRange::new(self.start.year(), self.end().year())
    }

    pub fn regions(&self) -> &[RegionWeather] {
        &self.regions
    }

    pub fn region_ids(&self) -> impl Iterator<Item = &RegionId> {
        self.regions.iter().map(|r| &r.region)
    }

    pub fn region(&self, id: &RegionId) -> Option<&RegionWeather> {
        self.regions.iter().find(|r| &r.region == id)
    }

    pub fn series(&self, region: &RegionWeather, var: WeatherVar) -> DailySeries {
        DailySeries::new(self.start, region.days.iter().map(|d| d.get(var)).collect())
    }
}

/// Annual yields in t/ha; missing (region, year) cells are allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YieldPanel {
    records: BTreeMap<Cell, f64>,
}

impl YieldPanel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, region: RegionId, year: i32, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveYield {
                region: region.to_string(),
                year,
                value,
            });
        }
        let key = (region, year);
        if self.records.contains_key(&key) {
            return Err(Error::DuplicateRecord {
                region: key.0.to_string(),
                year,
            });
        }
        self.records.insert(key, value);
        Ok(())
    }

    pub fn get(&self, region: &RegionId, year: i32) -> Option<f64> {
        self.records.get(&(region.clone(), year)).copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, f64)> {
        self.records.iter().map(|(c, v)| (c, *v))
    }

    pub fn cells(&self) -> BTreeSet<Cell> {
        self.records.keys().cloned().collect()
    }

    pub fn regions(&self) -> BTreeSet<RegionId> {
        self.records.keys().map(|(r, _)| r.clone()).collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.records.keys().map(|(_, y)| *y).collect()
    }

    pub fn year_range(&self) -> Option<YearRange> {
        let years = self.years();
        Some(YearRange::new(*years.first()?, *years.last()?))
    }

    /// Per-region series keyed by year.
    pub fn by_region(&self) -> BTreeMap<RegionId, BTreeMap<i32, f64>> {
        let mut out: BTreeMap<RegionId, BTreeMap<i32, f64>> = BTreeMap::new();
        for ((r, y), v) in &self.records {
            out.entry(r.clone()).or_default().insert(*y, *v);
        }
        out
    }

    /// Unweighted mean across regions for every year with data.
    pub fn national_means(&self) -> BTreeMap<i32, f64> {
        let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
        for ((_, y), v) in &self.records {
            let e = acc.entry(*y).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(y, (s, n))| (y, s / n as f64)).collect()
    }

    /// Applies `f(cell, value)` to every record (no positivity check; used for
    /// derived panels such as detrended yields).
    pub fn map_values(&self, mut f: impl FnMut(&Cell, f64) -> f64) -> YieldPanel {
        YieldPanel {
            records: self.records.iter().map(|(c, v)| (c.clone(), f(c, *v))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchKind {
    /// Region has yields but no weather.
    WeatherMissing,
    /// Region has weather but no yields.
    YieldMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMismatch {
    pub region: RegionId,
    pub kind: MismatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearCoverage {
    pub first: i32,
    pub last: i32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mismatches: Vec<RegionMismatch>,
    pub year_coverage: BTreeMap<RegionId, YearCoverage>,
    /// Yield years with no weather coverage.
    pub uncovered_years: Vec<i32>,
    pub missing_fraction: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.uncovered_years.is_empty()
    }
}

/// Cross-checks the two panels. Missing fraction is taken over the union of
/// regions times the yield panel's year span.
pub fn validate_panels(weather: &WeatherPanel, yields: &YieldPanel) -> ValidationReport {
    let weather_regions: BTreeSet<RegionId> = weather.region_ids().cloned().collect();
    let yield_regions = yields.regions();
    let mut mismatches = Vec::new();
    for r in yield_regions.difference(&weather_regions) {
        mismatches.push(RegionMismatch {
            region: r.clone(),
            kind: MismatchKind::WeatherMissing,
        });
    }
    for r in weather_regions.difference(&yield_regions) {
        mismatches.push(RegionMismatch {
            region: r.clone(),
            kind: MismatchKind::YieldMissing,
        });
    }

    let year_coverage = yields
        .by_region()
        .into_iter()
        .map(|(r, s)| {
            let cov = YearCoverage {
                first: *s.keys().next().expect("non-empty"),
                last: *s.keys().last().expect("non-empty"),
                count: s.len(),
            };
            (r, cov)
        })
        .collect();

    let wy = weather.years();
    let uncovered_years = yields.years().into_iter().filter(|y| !wy.contains(*y)).collect();

    let missing_fraction = match yields.year_range() {
        Some(span) => {
            let n_regions = weather_regions.union(&yield_regions).count();
            let total = n_regions * span.len();
            1.0 - yields.len() as f64 / total as f64
        }
        None => 1.0,
    };

    ValidationReport {
        mismatches,
        year_coverage,
        uncovered_years,
        missing_fraction,
    }
}
