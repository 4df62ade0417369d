//! Seeded synthetic panels with known yield drivers.
//!
//! Weather is a seasonal cycle plus a nation-wide AR(1) anomaly shared by all
//! regions, a weaker regional AR(1) anomaly and per-region offsets. Yield is a
//! national quadratic trend plus a region effect plus weighted, standardized
//! driver indicators, Gaussian noise and an optional level shift in the
//! designated shift years. Driver weights may take different values in those
//! years, which is how regime shifts are engineered.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{DailyWeather, RegionId, RegionWeather, WeatherPanel, YieldPanel};
use crate::calendar::YearRange;
use crate::error::{Error, Result};
use crate::indicators::drought::MIN_REFERENCE;
use crate::indicators::{indicator_series, FeatureEntry, IndicatorKind, Thresholds};
use crate::par;

/// Floor applied to generated yields so the panel stays valid.
const MIN_YIELD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    /// Must describe exactly one feature column.
    pub entry: FeatureEntry,
    /// t/ha per standard deviation of the indicator.
    pub weight: f64,
    /// Weight used in the shift years instead of `weight`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_weight: Option<f64>,
}

/// Additive temperature change and multiplicative precipitation change over
/// a block of months in one year, applied to every region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherShock {
    pub year: i32,
    pub months: [u32; 2],
    #[serde(default)]
    pub tmean_delta: f64,
    #[serde(default = "one")]
    pub precip_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub seed: u64,
    pub drivers: Vec<Driver>,
    pub noise_sd: f64,
    /// Coefficients (a, b, c) of a·s² + b·s + c with s = year - first_year.
    pub trend: [f64; 3],
    pub region_sd: f64,
    pub shift_years: Vec<i32>,
    /// t/ha added to every yield in the shift years.
    pub validation_shift: f64,
    pub shocks: Vec<WeatherShock>,
    /// Share of the daily temperature anomaly that is common to all regions.
    pub national_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_regions: 20,
            first_year: 1979,
            last_year: 2022,
            seed: 0,
            drivers: vec![
                Driver {
                    entry: FeatureEntry::new(
                        IndicatorKind::Tmean,
                        crate::calendar::PeriodKind::Monthly,
                        6,
                        6,
                    ),
                    weight: -0.3,
                    shift_weight: None,
                },
                Driver {
                    entry: FeatureEntry::new(
                        IndicatorKind::Spi,
                        crate::calendar::PeriodKind::Monthly,
                        5,
                        5,
                    ),
                    weight: 0.3,
                    shift_weight: None,
                },
            ],
            noise_sd: 0.25,
            trend: [-0.0015, 0.09, 5.5],
            region_sd: 0.5,
            shift_years: vec![2004, 2018],
            validation_shift: 0.0,
            shocks: Vec::new(),
            national_share: 0.8,
        }
    }
}

impl SynthConfig {
    /// Parses a config. A `[synth]` table is accepted as well as top-level
    /// keys, so an experiment config can be passed directly.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text)?;
        let cfg: SynthConfig = match value.get("synth") {
            Some(inner) => inner.clone().try_into()?,
            None => value.try_into()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn years(&self) -> YearRange {
        YearRange::new(self.first_year, self.last_year)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.n_regions < 2 {
            return bad(format!("n_regions must be >= 2, got {}", self.n_regions));
        }
        // Drivers are computed against the full span as reference period.
        if self.years().len() < MIN_REFERENCE {
            return bad(format!(
                "year range {}:{} must span at least {MIN_REFERENCE} years",
                self.first_year, self.last_year
            ));
        }
        if !(self.noise_sd >= 0.0) || !(self.region_sd >= 0.0) {
            return bad("noise_sd and region_sd must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.national_share) {
            return bad("national_share must lie in [0, 1]".into());
        }
        for d in &self.drivers {
            if d.entry.indicator == IndicatorKind::RegionMeanYield {
                return bad("region mean yield cannot drive synthetic yield".into());
            }
            if d.entry.columns().len() != 1 {
                return bad(format!(
                    "driver {} must select exactly one period",
                    d.entry.indicator
                ));
            }
            if !d.weight.is_finite() || d.shift_weight.is_some_and(|w| !w.is_finite()) {
                return bad("driver weights must be finite".into());
            }
        }
        for s in &self.shocks {
            if s.months[0] < 1 || s.months[1] > 12 || s.months[0] > s.months[1] {
                return bad(format!("shock months {:?} out of range", s.months));
            }
            if !(s.precip_factor >= 0.0) {
                return bad("shock precip_factor must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn trend_at(&self, year: i32) -> f64 {
        let s = (year - self.first_year) as f64;
        let [a, b, c] = self.trend;
        a * s * s + b * s + c
    }

    pub fn region_ids(&self) -> Vec<RegionId> {
        (1..=self.n_regions)
            .map(|i| RegionId(format!("DE{i:03}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverTruth {
    pub column: String,
    pub weight: f64,
    pub shift_weight: f64,
}

/// What the generator actually did, for checking recovered signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub drivers: Vec<DriverTruth>,
    pub shift_years: Vec<i32>,
    pub validation_shift: f64,
    pub shocks: Vec<WeatherShock>,
    pub trend: [f64; 3],
    pub region_effects: BTreeMap<RegionId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub weather: WeatherPanel,
    pub yields: YieldPanel,
    pub truth: GroundTruth,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label))
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Nation-wide daily anomalies shared by every region.
struct National {
    temp: Vec<f64>,
    wet: Vec<f64>,
}

fn national_anomalies(seed: u64, n_days: usize) -> National {
    let mut rng = stream(seed, "__national__");
    let innov_t = Normal::new(0.0, 1.2).expect("valid sd");
    let innov_w = Normal::new(0.0, 0.7).expect("valid sd");
    let (mut t, mut w) = (0.0, 0.0);
    let mut temp = Vec::with_capacity(n_days);
    let mut wet = Vec::with_capacity(n_days);
    for _ in 0..n_days {
        t = 0.85 * t + innov_t.sample(&mut rng);
        w = 0.6 * w + innov_w.sample(&mut rng);
        temp.push(t);
        wet.push(w);
    }
    National { temp, wet }
}

fn shock_for(shocks: &[WeatherShock], date: NaiveDate) -> (f64, f64) {
    let mut delta = 0.0;
    let mut factor = 1.0;
    for s in shocks {
        if s.year == date.year() && (s.months[0]..=s.months[1]).contains(&date.month()) {
            delta += s.tmean_delta;
            factor *= s.precip_factor;
        }
    }
    (delta, factor)
}

fn region_weather(
    cfg: &SynthConfig,
    region: &RegionId,
    start: NaiveDate,
    national: &National,
) -> RegionWeather {
    let mut rng = stream(cfg.seed, region.as_str());
    let std_normal = Normal::new(0.0, 1.0).expect("valid sd");
    let temp_offset = rng.random_range(-1.5..1.5);
    let precip_scale = rng.random_range(3.5..6.0);
    let wind_median = rng.random_range(2.5..4.5);
    let latitude = rng.random_range(48.0..54.0);
    let wet_cut = rng.random_range(0.0..0.3);
    let amount = Gamma::new(0.75, 1.0).expect("valid gamma");

    let share = cfg.national_share;
    let regional_sd = 1.2 * (1.0 - share * share).max(0.0).sqrt();
    let mut reg_t = 0.0;
    let mut days = Vec::with_capacity(national.temp.len());
    for (i, (&nat_t, &nat_w)) in national.temp.iter().zip(&national.wet).enumerate() {
        let date = start + chrono::Duration::days(i as i64);
        let doy = date.ordinal();
        let season = (2.0 * PI * (doy as f64 - 110.0) / 365.25).sin();
        let (delta, factor) = shock_for(&cfg.shocks, date);

        reg_t = 0.85 * reg_t + regional_sd * std_normal.sample(&mut rng);
        let tmean = 9.0 + temp_offset + 9.5 * season + share * nat_t + reg_t + delta;
        let dtr = (7.5 + 2.5 * season + std_normal.sample(&mut rng)).max(1.0);

        let wet = nat_w + 0.5 * std_normal.sample(&mut rng) > wet_cut;
        let precip = if wet {
            amount.sample(&mut rng) * precip_scale * factor
        } else {
            0.0
        };
        let wind = wind_median * (0.35 * std_normal.sample(&mut rng)).exp() * (1.0 - 0.15 * season);
        let ra = crate::indicators::pet::extraterrestrial_radiation(latitude, doy);
        let sun: f64 = if wet {
            rng.random_range(0.05..0.4)
        } else {
            rng.random_range(0.4..0.95)
        };
        let radiation = ra * (0.25 + 0.5 * sun);
        let rhum = (76.0 - 10.0 * season + if wet { 10.0 } else { 0.0 }
            + 6.0 * std_normal.sample(&mut rng))
        .clamp(25.0, 100.0);

        let tmean = round1(tmean);
        let tmax = round1(tmean + 0.55 * dtr).max(tmean);
        let tmin = round1(tmean - 0.45 * dtr).min(tmean);
        days.push(DailyWeather {
            tmean,
            tmax,
            tmin,
            precip: round1(precip),
            wind: round1(wind),
            radiation: round1(radiation),
            rhum: round1(rhum),
        });
    }
    RegionWeather {
        region: region.clone(),
        days,
    }
}

/// Standardized driver values per (region, year); undefined cells read as 0.
fn driver_scores(
    weather: &WeatherPanel,
    driver: &Driver,
    years: YearRange,
) -> Result<BTreeMap<(RegionId, i32), f64>> {
    let period = driver.entry.period.expect("validated");
    let [k, _] = driver.entry.range.expect("validated");
    let thresholds = Thresholds::default();
    let per_region = par::map(weather.regions(), |r| {
        indicator_series(
            weather,
            r,
            driver.entry.indicator,
            period,
            driver.entry.stat,
            driver.entry.scale,
            &thresholds,
            years,
        )
        .map(|s| {
            years
                .years()
                .filter_map(|y| s.get(y, k).map(|v| ((r.region.clone(), y), v)))
                .collect::<Vec<_>>()
        })
    });
    let mut raw = BTreeMap::new();
    for part in per_region {
        raw.extend(part?);
    }
    let n = raw.len() as f64;
    if n < 2.0 {
        return Err(Error::ConfigInvalid(format!(
            "driver {} is undefined on the panel",
            driver.entry.indicator
        )));
    }
    let mean = raw.values().sum::<f64>() / n;
    let var = raw.values().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok(raw
        .into_iter()
        .map(|(c, v)| (c, if sd > 0.0 { (v - mean) / sd } else { 0.0 }))
        .collect())
}

/// Generates weather and yield panels. Output depends only on `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let years = cfg.years();
    let start = NaiveDate::from_ymd_opt(cfg.first_year, 1, 1)
        .ok_or_else(|| Error::ConfigInvalid(format!("bad first year {}", cfg.first_year)))?;
    let end = NaiveDate::from_ymd_opt(cfg.last_year, 12, 31)
        .ok_or_else(|| Error::ConfigInvalid(format!("bad last year {}", cfg.last_year)))?;
    let n_days = (end - start).num_days() as usize + 1;

    let national = national_anomalies(cfg.seed, n_days);
    let ids = cfg.region_ids();
    let regions = par::map(&ids, |r| region_weather(cfg, r, start, &national));
    let weather = WeatherPanel::new(start, regions)?;

    let mut effect_rng = stream(cfg.seed, "__region_effects__");
    let effect_dist = Normal::new(0.0, cfg.region_sd).expect("validated sd");
    let region_effects: BTreeMap<RegionId, f64> = ids
        .iter()
        .map(|r| (r.clone(), effect_dist.sample(&mut effect_rng)))
        .collect();

    let scores = cfg
        .drivers
        .iter()
        .map(|d| driver_scores(&weather, d, years))
        .collect::<Result<Vec<_>>>()?;

    let noise = Normal::new(0.0, cfg.noise_sd).expect("validated sd");
    let mut yields = YieldPanel::new();
    for r in &ids {
        let mut rng = stream(cfg.seed, &format!("__yield__{r}"));
        for year in years.years() {
            let shifted = cfg.shift_years.contains(&year);
            let mut y = cfg.trend_at(year) + region_effects[r];
            for (d, s) in cfg.drivers.iter().zip(&scores) {
                let w = if shifted {
                    d.shift_weight.unwrap_or(d.weight)
                } else {
                    d.weight
                };
                y += w * s.get(&(r.clone(), year)).copied().unwrap_or(0.0);
            }
            if cfg.noise_sd > 0.0 {
                y += noise.sample(&mut rng);
            }
            if shifted {
                y += cfg.validation_shift;
            }
            yields.insert(r.clone(), year, y.max(MIN_YIELD))?;
        }
    }

    let truth = GroundTruth {
        seed: cfg.seed,
        drivers: cfg
            .drivers
            .iter()
            .map(|d| DriverTruth {
                column: d.entry.columns().remove(0),
                weight: d.weight,
                shift_weight: d.shift_weight.unwrap_or(d.weight),
            })
            .collect(),
        shift_years: cfg.shift_years.clone(),
        validation_shift: cfg.validation_shift,
        shocks: cfg.shocks.clone(),
        trend: cfg.trend,
        region_effects,
    };
    Ok(SynthOutput {
        weather,
        yields,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::validate_panels;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_regions: 3,
            first_year: 1990,
            last_year: 2014,
            seed,
            shift_years: vec![2004],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identical_config_gives_identical_panels() {
        let a = synth_generate(&small(7)).unwrap();
        let b = synth_generate(&small(7)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(8)).unwrap();
        assert_ne!(a.yields, c.yields);
    }

    #[test]
    fn generated_panels_validate_cleanly() {
        let out = synth_generate(&small(1)).unwrap();
        let report = validate_panels(&out.weather, &out.yields);
        assert!(report.is_clean());
        assert_eq!(report.missing_fraction, 0.0);
        assert_eq!(out.weather.years(), YearRange::new(1990, 2014));
    }

    #[test]
    fn no_drivers_no_noise_is_trend_plus_region_effect() {
        let cfg = SynthConfig {
            drivers: vec![],
            noise_sd: 0.0,
            ..small(3)
        };
        let out = synth_generate(&cfg).unwrap();
        for ((r, y), v) in out.yields.iter() {
            assert_eq!(v, cfg.trend_at(*y) + out.truth.region_effects[r]);
        }
    }

    #[test]
    fn level_shift_moves_national_mean() {
        let base = small(5);
        let shifted = SynthConfig {
            validation_shift: -1.0,
            ..base.clone()
        };
        let a = synth_generate(&base).unwrap().yields.national_means();
        let b = synth_generate(&shifted).unwrap().yields.national_means();
        assert!((a[&2004] - b[&2004] - 1.0).abs() < 1e-12);
        assert_eq!(a[&2003], b[&2003]);
    }

    #[test]
    fn shock_changes_only_its_window() {
        let base = small(9);
        let shocked = SynthConfig {
            shocks: vec![WeatherShock {
                year: 2000,
                months: [6, 7],
                tmean_delta: 3.0,
                precip_factor: 1.0,
            }],
            drivers: vec![],
            ..base.clone()
        };
        let base = SynthConfig {
            drivers: vec![],
            ..base
        };
        let a = synth_generate(&base).unwrap().weather;
        let b = synth_generate(&shocked).unwrap().weather;
        let start = a.start();
        for (ra, rb) in a.regions().iter().zip(b.regions()) {
            for (i, (da, db)) in ra.days.iter().zip(&rb.days).enumerate() {
                let d = start + chrono::Duration::days(i as i64);
                if d.year() == 2000 && (6..=7).contains(&d.month()) {
                    assert!((db.tmean - da.tmean - 3.0).abs() < 0.11);
                } else {
                    assert_eq!(da, db);
                }
            }
        }
    }

    #[test]
    fn config_errors() {
        let c = SynthConfig {
            n_regions: 1,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&c), Err(Error::ConfigInvalid(_))));
        let c = SynthConfig {
            first_year: 2000,
            last_year: 2010,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&c), Err(Error::ConfigInvalid(_))));
        let c = SynthConfig {
            noise_sd: -1.0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&c), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
            n_regions = 4
            first_year = 1990
            last_year = 2010
            seed = 11
            shift_years = [2004]
            validation_shift = -0.5

            [[drivers]]
            weight = 0.4
            shift_weight = -0.4
            entry = { indicator = "spi", period = "monthly", range = [5, 5] }
        "#;
        let cfg: SynthConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.n_regions, 4);
        assert_eq!(cfg.drivers.len(), 1);
        assert_eq!(cfg.drivers[0].shift_weight, Some(-0.4));
        assert_eq!(cfg.noise_sd, SynthConfig::default().noise_sd);
    }
}
