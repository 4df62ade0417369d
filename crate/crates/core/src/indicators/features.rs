use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::counts::{
    count_threshold_days, gewitter_days, percentile_threshold_days, wechselfrost_days, Comparator,
    Side,
};
use super::drought::{quarterly_sample, spei, spi};
use super::pet::pet_penman_monteith;
use crate::calendar::{aggregate, DailySeries, IndicatorSeries, PeriodKind, Stat, YearRange};
use crate::error::{Error, Result};
use crate::ingest::{Cell, RegionId, RegionWeather, WeatherPanel, WeatherVar, YieldPanel};
use crate::par;
use crate::targets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndicatorKind {
    Tmean,
    Tmax,
    Tmin,
    Precip,
    Wind,
    Radiation,
    Rhum,
    Pet,
    WaterBalance,
    FrostDays,
    HeatDays,
    HotDays,
    HighRadiationDays,
    PrecipP99Days,
    WindP99Days,
    WechselfrostDays,
    GewitterDays,
    Spi,
    Spei,
    RegionMeanYield,
}

const INDICATOR_NAMES: [(IndicatorKind, &str); 20] = [
    (IndicatorKind::Tmean, "tmean"),
    (IndicatorKind::Tmax, "tmax"),
    (IndicatorKind::Tmin, "tmin"),
    (IndicatorKind::Precip, "precip"),
    (IndicatorKind::Wind, "wind"),
    (IndicatorKind::Radiation, "radiation"),
    (IndicatorKind::Rhum, "rhum"),
    (IndicatorKind::Pet, "pet"),
    (IndicatorKind::WaterBalance, "water_balance"),
    (IndicatorKind::FrostDays, "frost_days"),
    (IndicatorKind::HeatDays, "heat_days"),
    (IndicatorKind::HotDays, "hot_days"),
    (IndicatorKind::HighRadiationDays, "high_radiation_days"),
    (IndicatorKind::PrecipP99Days, "precip_p99_days"),
    (IndicatorKind::WindP99Days, "wind_p99_days"),
    (IndicatorKind::WechselfrostDays, "wechselfrost_days"),
    (IndicatorKind::GewitterDays, "gewitter_days"),
    (IndicatorKind::Spi, "spi"),
    (IndicatorKind::Spei, "spei"),
    (IndicatorKind::RegionMeanYield, "region_mean_yield"),
];

impl IndicatorKind {
    pub fn name(self) -> &'static str {
        INDICATOR_NAMES
            .iter()
            .find(|(k, _)| *k == self)
            .map(|(_, n)| *n)
            .expect("every kind is named")
    }

    fn default_stat(self) -> Stat {
        use IndicatorKind::*;
        match self {
            Precip | Pet | WaterBalance => Stat::Sum,
            FrostDays | HeatDays | HotDays | HighRadiationDays | PrecipP99Days | WindP99Days
            | WechselfrostDays | GewitterDays => Stat::Sum,
            _ => Stat::Mean,
        }
    }

    fn is_count(self) -> bool {
        use IndicatorKind::*;
        matches!(
            self,
            FrostDays
                | HeatDays
                | HotDays
                | HighRadiationDays
                | PrecipP99Days
                | WindP99Days
                | WechselfrostDays
                | GewitterDays
        )
    }

    fn is_standardized(self) -> bool {
        matches!(self, IndicatorKind::Spi | IndicatorKind::Spei)
    }

    pub fn unit(self) -> &'static str {
        use IndicatorKind::*;
        match self {
            Tmean | Tmax | Tmin => "degC",
            Precip | Pet | WaterBalance => "mm",
            Wind => "m/s",
            Radiation => "MJ/m2/day",
            Rhum => "%",
            Spi | Spei => "1",
            RegionMeanYield => "t/ha",
            _ => "days",
        }
    }

    fn weather_var(self) -> Option<WeatherVar> {
        use IndicatorKind::*;
        Some(match self {
            Tmean => WeatherVar::Tmean,
            Tmax => WeatherVar::Tmax,
            Tmin => WeatherVar::Tmin,
            Precip => WeatherVar::Precip,
            Wind => WeatherVar::Wind,
            Radiation => WeatherVar::Radiation,
            Rhum => WeatherVar::Rhum,
            _ => return None,
        })
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        if key == "region_mean_yield" || s.trim() == "REGION_MEAN_YIELD" {
            return Ok(IndicatorKind::RegionMeanYield);
        }
        INDICATOR_NAMES
            .iter()
            .find(|(_, n)| *n == key)
            .map(|(k, _)| *k)
            .ok_or_else(|| Error::UnknownIndicator(s.to_string()))
    }
}

impl Serialize for IndicatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for IndicatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Indicator thresholds and site constants. Every field can be overridden
/// from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub frost_tmin: f64,
    pub heat_tmax: f64,
    pub hot_percentile: f64,
    /// MJ/m²/day; 2500 J/cm² = 25 MJ/m².
    pub radiation_mj: f64,
    pub precip_percentile: f64,
    pub wind_percentile: f64,
    pub gewitter_precip_min: f64,
    pub gewitter_wind_percentile: f64,
    /// Degrees north, used for extraterrestrial radiation in PET.
    pub latitude: f64,
    /// Metres, used for the psychrometric constant in PET.
    pub elevation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            frost_tmin: 0.0,
            heat_tmax: 30.0,
            hot_percentile: 90.0,
            radiation_mj: 25.0,
            precip_percentile: 99.0,
            wind_percentile: 99.0,
            gewitter_precip_min: 15.0,
            gewitter_wind_percentile: 95.0,
            latitude: 51.0,
            elevation: 100.0,
        }
    }
}

/// One block of feature columns: an indicator sampled at ordinals
/// `range[0]..=range[1]` of `period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub indicator: IndicatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<PeriodKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat: Option<Stat>,
    /// Accumulation scale in months (SPI/SPEI only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
}

impl FeatureEntry {
    pub fn new(indicator: IndicatorKind, period: PeriodKind, first: u32, last: u32) -> Self {
        FeatureEntry {
            indicator,
            period: Some(period),
            range: Some([first, last]),
            stat: None,
            scale: None,
        }
    }

    pub fn region_mean_yield() -> Self {
        FeatureEntry {
            indicator: IndicatorKind::RegionMeanYield,
            period: None,
            range: None,
            stat: None,
            scale: None,
        }
    }

    pub fn with_stat(mut self, stat: Stat) -> Self {
        self.stat = Some(stat);
        self
    }

    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = Some(scale);
        self
    }

    fn default_scale(period: PeriodKind) -> usize {
        if period == PeriodKind::Quarterly {
            3
        } else {
            1
        }
    }

    fn validate(&self) -> Result<()> {
        if self.indicator == IndicatorKind::RegionMeanYield {
            return Ok(());
        }
        let bad = |m: String| Err(Error::ConfigInvalid(format!("{}: {m}", self.indicator)));
        let Some(period) = self.period else {
            return bad("missing period".into());
        };
        let Some([a, b]) = self.range else {
            return bad("missing range".into());
        };
        if a < 1 || b < a || b > period.max_ordinal() {
            return bad(format!("range [{a}, {b}] outside 1..={}", period.max_ordinal()));
        }
        if self.indicator.is_standardized() && period == PeriodKind::Weekly {
            return bad("standardized indices are monthly or quarterly".into());
        }
        if self.stat.is_some() && (self.indicator.is_standardized() || self.indicator.is_count()) {
            return bad("stat only applies to aggregated variables".into());
        }
        if self.scale.is_some() && !self.indicator.is_standardized() {
            return bad("scale only applies to SPI/SPEI".into());
        }
        if self.scale == Some(0) {
            return bad("scale must be >= 1".into());
        }
        Ok(())
    }

    /// Column names produced by this entry, e.g. `spi_m1`, `tmax_max_m6`,
    /// `spei_s6_q2`.
    pub fn columns(&self) -> Vec<String> {
        if self.indicator == IndicatorKind::RegionMeanYield {
            return vec!["region_mean_yield".into()];
        }
        let (Some(period), Some([a, b])) = (self.period, self.range) else {
            return Vec::new();
        };
        let mut prefix = self.indicator.name().to_string();
        if let Some(stat) = self.stat {
            if stat != self.indicator.default_stat() {
                prefix.push('_');
                prefix.push_str(stat_name(stat));
            }
        }
        if let Some(scale) = self.scale {
            if scale != Self::default_scale(period) {
                prefix.push_str(&format!("_s{scale}"));
            }
        }
        (a..=b)
            .map(|k| format!("{prefix}_{}{k}", period.tag()))
            .collect()
    }
}

fn stat_name(s: Stat) -> &'static str {
    match s {
        Stat::Mean => "mean",
        Stat::Sum => "sum",
        Stat::Min => "min",
        Stat::Max => "max",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub entries: Vec<FeatureEntry>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl FeatureSpec {
    pub fn from_json(text: &str) -> Result<FeatureSpec> {
        // Surface unknown indicators as their own error kind.
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if let Some(entries) = raw.get("entries").and_then(|e| e.as_array()) {
            for e in entries {
                if let Some(name) = e.get("indicator").and_then(|v| v.as_str()) {
                    name.parse::<IndicatorKind>()?;
                }
            }
        }
        let spec: FeatureSpec = serde_json::from_value(raw)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<FeatureSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::ConfigInvalid(format!("spec {} has no entries", self.name)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            e.validate()?;
            for c in e.columns() {
                if !seen.insert(c.clone()) {
                    return Err(Error::ConfigInvalid(format!(
                        "spec {}: duplicate column {c}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<String> {
        self.entries.iter().flat_map(|e| e.columns()).collect()
    }

    pub fn uses_region_mean(&self) -> bool {
        self.entries
            .iter()
            .any(|e| e.indicator == IndicatorKind::RegionMeanYield)
    }
}

pub const BUILTIN_SPECS: [&str; 4] = ["reference", "spi9", "tmean9m", "stack_monthly"];

/// The shipped feature setups: the single-predictor reference run, SPI and
/// mean temperature for months 1-9, and a stacked monthly set.
pub fn builtin_spec(name: &str) -> Option<FeatureSpec> {
    use IndicatorKind::*;
    let m = PeriodKind::Monthly;
    let entries = match name {
        "reference" => vec![FeatureEntry::region_mean_yield()],
        "spi9" => vec![FeatureEntry::new(Spi, m, 1, 9)],
        "tmean9m" => vec![FeatureEntry::new(Tmean, m, 1, 9)],
        "stack_monthly" => vec![
            FeatureEntry::new(Spi, m, 1, 9),
            FeatureEntry::new(Tmean, m, 1, 9),
            FeatureEntry::new(Precip, m, 1, 9),
            FeatureEntry::new(FrostDays, m, 1, 9),
            FeatureEntry::new(HeatDays, m, 1, 9),
        ],
        _ => return None,
    };
    Some(FeatureSpec {
        name: name.to_string(),
        entries,
        thresholds: Thresholds::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub unit: String,
    pub source: IndicatorKind,
}

/// (region, year) × feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub spec_name: String,
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Cell>,
    pub values: Vec<Vec<f64>>,
    /// Rows dropped because at least one feature was undefined.
    pub dropped: usize,
}

impl FeatureTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index(&self) -> HashMap<&Cell, usize> {
        self.rows.iter().enumerate().map(|(i, c)| (c, i)).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io("<feature csv>", e);
        let mut header = vec!["region".to_string(), "year".to_string()];
        header.extend(self.names());
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for ((r, y), vals) in self.rows.iter().zip(&self.values) {
            let mut line = format!("{r},{y}");
            for v in vals {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        Ok(())
    }

    /// Reads a table written by [`FeatureTable::write_csv`]. Column metadata is
    /// recovered from the column names where possible.
    pub fn read_csv(input: impl Read, spec_name: &str) -> Result<FeatureTable> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "region" || &header[1] != "year" {
            return Err(Error::MalformedRow {
                line: 1,
                column: "header".into(),
                message: "expected `region,year,<feature...>`".into(),
            });
        }
        let columns = header
            .iter()
            .skip(2)
            .map(|name| {
                let source = column_source(name);
                ColumnMeta {
                    name: name.to_string(),
                    unit: source.unit().to_string(),
                    source,
                }
            })
            .collect();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |column: &str| Error::MalformedRow {
                line,
                column: column.to_string(),
                message: "unparseable value".into(),
            };
            let region = RegionId::new(&rec[0]).map_err(|_| bad("region"))?;
            let year: i32 = rec[1].parse().map_err(|_| bad("year"))?;
            let vals = rec
                .iter()
                .skip(2)
                .zip(header.iter().skip(2))
                .map(|(v, c)| v.parse::<f64>().map_err(|_| bad(c)))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((region, year));
            values.push(vals);
        }
        Ok(FeatureTable {
            spec_name: spec_name.to_string(),
            columns,
            rows,
            values,
            dropped: 0,
        })
    }
}

fn column_source(name: &str) -> IndicatorKind {
    let mut best = None;
    for (k, n) in INDICATOR_NAMES {
        if name.starts_with(n) && best.is_none_or(|(_, len)| n.len() > len) {
            best = Some((k, n.len()));
        }
    }
    best.map(|(k, _)| k).unwrap_or(IndicatorKind::RegionMeanYield)
}

/// Computes one indicator for one region at the given period kind.
#[allow(clippy::too_many_arguments)]
pub fn indicator_series(
    weather: &WeatherPanel,
    region: &RegionWeather,
    indicator: IndicatorKind,
    period: PeriodKind,
    stat: Option<Stat>,
    scale: Option<usize>,
    thresholds: &Thresholds,
    reference: YearRange,
) -> Result<IndicatorSeries> {
    use IndicatorKind::*;
    let series = |v| weather.series(region, v);
    let stat = stat.unwrap_or(indicator.default_stat());
    if let Some(var) = indicator.weather_var() {
        return aggregate(&series(var), period, stat);
    }
    match indicator {
        Pet => aggregate(&pet_series(weather, region, thresholds), period, stat),
        WaterBalance => aggregate(&balance_series(weather, region, thresholds), period, stat),
        FrostDays => count_threshold_days(
            &series(WeatherVar::Tmin),
            Comparator::Lt,
            thresholds.frost_tmin,
            period,
        ),
        HeatDays => count_threshold_days(
            &series(WeatherVar::Tmax),
            Comparator::Ge,
            thresholds.heat_tmax,
            period,
        ),
        HotDays => percentile_threshold_days(
            &series(WeatherVar::Tmax),
            thresholds.hot_percentile,
            reference,
            Side::Above,
            period,
        ),
        HighRadiationDays => count_threshold_days(
            &series(WeatherVar::Radiation),
            Comparator::Gt,
            thresholds.radiation_mj,
            period,
        ),
        PrecipP99Days => percentile_threshold_days(
            &series(WeatherVar::Precip),
            thresholds.precip_percentile,
            reference,
            Side::Above,
            period,
        ),
        WindP99Days => percentile_threshold_days(
            &series(WeatherVar::Wind),
            thresholds.wind_percentile,
            reference,
            Side::Above,
            period,
        ),
        WechselfrostDays => {
            wechselfrost_days(&series(WeatherVar::Tmin), &series(WeatherVar::Tmax), period)
        }
        GewitterDays => gewitter_days(
            &series(WeatherVar::Precip),
            &series(WeatherVar::Wind),
            period,
            thresholds.gewitter_precip_min,
            thresholds.gewitter_wind_percentile,
            reference,
        ),
        Spi | Spei => {
            let scale = scale.unwrap_or(FeatureEntry::default_scale(period));
            let monthly = if indicator == Spi {
                aggregate(&series(WeatherVar::Precip), PeriodKind::Monthly, Stat::Sum)?
            } else {
                aggregate(
                    &balance_series(weather, region, thresholds),
                    PeriodKind::Monthly,
                    Stat::Sum,
                )?
            };
            let idx = if indicator == Spi {
                spi(&monthly, scale, reference)?
            } else {
                spei(&monthly, scale, reference)?
            };
            match period {
                PeriodKind::Monthly => Ok(idx),
                PeriodKind::Quarterly => Ok(quarterly_sample(&idx)),
                PeriodKind::Weekly => Err(Error::ConfigInvalid(
                    "standardized indices are monthly or quarterly".into(),
                )),
            }
        }
        RegionMeanYield => Err(Error::ConfigInvalid(
            "region mean yield is not a weather indicator".into(),
        )),
        _ => unreachable!("weather variables handled above"),
    }
}

fn pet_series(weather: &WeatherPanel, region: &RegionWeather, t: &Thresholds) -> DailySeries {
    let start = weather.start();
    let values = region
        .days
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let date = start + chrono::Duration::days(i as i64);
            pet_penman_monteith(d, t.latitude, date.ordinal(), t.elevation)
        })
        .collect();
    DailySeries::new(start, values)
}

fn balance_series(weather: &WeatherPanel, region: &RegionWeather, t: &Thresholds) -> DailySeries {
    let mut pet = pet_series(weather, region, t);
    for (v, d) in pet.values.iter_mut().zip(&region.days) {
        *v = d.precip - *v;
    }
    pet
}

type SeriesKey = (IndicatorKind, PeriodKind, Option<Stat>, Option<usize>);

/// Weather-derived columns for one region, keyed by year.
fn region_weather_columns(
    weather: &WeatherPanel,
    region: &RegionWeather,
    spec: &FeatureSpec,
    reference: YearRange,
) -> Result<BTreeMap<i32, Vec<Option<f64>>>> {
    let mut cache: HashMap<SeriesKey, IndicatorSeries> = HashMap::new();
    let years = weather.years();
    let mut out: BTreeMap<i32, Vec<Option<f64>>> =
        years.years().map(|y| (y, Vec::new())).collect();
    for entry in &spec.entries {
        if entry.indicator == IndicatorKind::RegionMeanYield {
            for v in out.values_mut() {
                v.push(None);
            }
            continue;
        }
        let period = entry.period.expect("validated");
        let [a, b] = entry.range.expect("validated");
        let stat = entry
            .stat
            .filter(|s| *s != entry.indicator.default_stat());
        let key = (entry.indicator, period, stat, entry.scale);
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
            let s = indicator_series(
                weather,
                region,
                entry.indicator,
                period,
                stat,
                entry.scale,
                &spec.thresholds,
                reference,
            )?;
            e.insert(s);
        }
        let s = &cache[&key];
        for (year, vals) in out.iter_mut() {
            for k in a..=b {
                vals.push(s.get(*year, k));
            }
        }
    }
    Ok(out)
}

/// Mean detrended yield per region over `cells` (or every yield cell).
fn region_mean_yields(
    yields: &YieldPanel,
    train_cells: Option<&BTreeSet<Cell>>,
) -> Result<BTreeMap<RegionId, f64>> {
    let window = yields.year_range().ok_or(Error::EmptySeries)?;
    let trend = targets::fit_national_trend(yields, window)?;
    let det = targets::detrend(yields, &trend)?;
    let mut acc: BTreeMap<RegionId, (f64, usize)> = BTreeMap::new();
    for (cell, v) in det.iter() {
        if train_cells.is_none_or(|t| t.contains(cell)) {
            let e = acc.entry(cell.0.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(r, (s, n))| (r, s / n as f64))
        .collect())
}

/// Builds the (region, year) feature matrix for `spec`. Rows are the yield
/// cells whose region and year are covered by the weather panel; rows with an
/// undefined feature are dropped and counted. The region-mean-yield column
/// averages detrended yields over `train_cells` only (all cells if `None`).
pub fn build_feature_table(
    weather: &WeatherPanel,
    yields: &YieldPanel,
    spec: &FeatureSpec,
    reference: YearRange,
    train_cells: Option<&BTreeSet<Cell>>,
) -> Result<FeatureTable> {
    spec.validate()?;
    let region_means = if spec.uses_region_mean() {
        Some(region_mean_yields(yields, train_cells)?)
    } else {
        None
    };
    let by_region = yields.by_region();
    let weather_years = weather.years();
    let mut regions: Vec<&RegionWeather> = weather
        .regions()
        .iter()
        .filter(|r| by_region.contains_key(&r.region))
        .collect();
    regions.sort_by(|a, b| a.region.cmp(&b.region));

    let per_region = par::map(&regions, |r| -> Result<(Vec<Cell>, Vec<Vec<f64>>, usize)> {
        let cols = region_weather_columns(weather, r, spec, reference)?;
        let mean = region_means.as_ref().and_then(|m| m.get(&r.region).copied());
        let mut cells = Vec::new();
        let mut values = Vec::new();
        let mut dropped = 0;
        for &year in by_region[&r.region].keys() {
            if !weather_years.contains(year) {
                dropped += 1;
                continue;
            }
            let mut row = Vec::new();
            let mut ok = true;
            let mut raw = cols[&year].iter();
            for entry in &spec.entries {
                if entry.indicator == IndicatorKind::RegionMeanYield {
                    raw.next();
                    match mean {
                        Some(m) => row.push(m),
                        None => ok = false,
                    }
                } else {
                    for _ in entry.columns() {
                        match raw.next().copied().flatten() {
                            Some(v) if v.is_finite() => row.push(v),
                            _ => ok = false,
                        }
                    }
                }
            }
            if ok {
                cells.push((r.region.clone(), year));
                values.push(row);
            } else {
                dropped += 1;
            }
        }
        Ok((cells, values, dropped))
    });

    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0;
    for part in per_region {
        let (c, v, d) = part?;
        rows.extend(c);
        values.extend(v);
        dropped += d;
    }
    if rows.is_empty() {
        return Err(Error::NoRowsEmitted { dropped });
    }
    let columns = spec
        .entries
        .iter()
        .flat_map(|e| {
            e.columns().into_iter().map(move |name| ColumnMeta {
                name,
                unit: e.indicator.unit().to_string(),
                source: e.indicator,
            })
        })
        .collect();
    Ok(FeatureTable {
        spec_name: spec.name.clone(),
        columns,
        rows,
        values,
        dropped,
    })
}
