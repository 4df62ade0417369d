use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};

use super::{DailyWeather, RegionId, RegionWeather, WeatherPanel, YieldPanel};
use crate::error::{Error, Result};

pub const WEATHER_HEADER: [&str; 9] = [
    "region", "date", "tmean", "tmax", "tmin", "precip", "wind", "radiation", "rhum",
];

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, column: &str) -> Result<&'r str> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| malformed(line_of(rec), column, "missing field"))
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, column: &str) -> Result<f64> {
    let s = field(rec, idx, column)?;
    s.parse::<f64>()
        .map_err(|_| malformed(line_of(rec), column, format!("not a number: `{s}`")))
}

pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<WeatherPanel> {
    read_weather_csv(open(path.as_ref())?)
}

pub fn read_weather_csv(input: impl Read) -> Result<WeatherPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != WEATHER_HEADER {
        return Err(malformed(1, "header", format!("expected `{}`", WEATHER_HEADER.join(","))));
    }

    let mut order: Vec<RegionId> = Vec::new();
    let mut rows: BTreeMap<RegionId, Vec<(NaiveDate, DailyWeather, u64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != WEATHER_HEADER.len() {
            return Err(malformed(line, "row", format!("expected 9 fields, got {}", rec.len())));
        }
        let region = RegionId::new(field(&rec, 0, "region")?)
            .map_err(|_| malformed(line, "region", "empty region code"))?;
        let date_s = field(&rec, 1, "date")?;
        let date = NaiveDate::parse_from_str(date_s, "%Y-%m-%d")
            .map_err(|_| malformed(line, "date", format!("not an ISO date: `{date_s}`")))?;
        let day = DailyWeather {
            tmean: parse_f64(&rec, 2, "tmean")?,
            tmax: parse_f64(&rec, 3, "tmax")?,
            tmin: parse_f64(&rec, 4, "tmin")?,
            precip: parse_f64(&rec, 5, "precip")?,
            wind: parse_f64(&rec, 6, "wind")?,
            radiation: parse_f64(&rec, 7, "radiation")?,
            rhum: parse_f64(&rec, 8, "rhum")?,
        };
        if let Some(message) = day.violation() {
            return Err(Error::InvariantViolation { line, message });
        }
        if !rows.contains_key(&region) {
            order.push(region.clone());
        }
        rows.entry(region).or_default().push((date, day, line));
    }
    if order.is_empty() {
        return Err(Error::EmptySeries);
    }

    for series in rows.values_mut() {
        series.sort_by_key(|(d, _, _)| *d);
    }
    let start = rows.values().map(|s| s[0].0).min().expect("non-empty");
    let end = rows.values().map(|s| s[s.len() - 1].0).max().expect("non-empty");

    let mut regions = Vec::with_capacity(order.len());
    for id in order {
        let series = rows.remove(&id).expect("present");
        let mut expected = start;
        let mut days = Vec::with_capacity(series.len());
        for (date, day, line) in series {
            if date < expected {
                return Err(Error::InvariantViolation {
                    line,
                    message: format!("duplicate date {date} for region {id}"),
                });
            }
            if date > expected {
                return Err(Error::DateGap {
                    region: id.to_string(),
                    missing: expected,
                });
            }
            days.push(day);
            expected = date + Duration::days(1);
        }
        if expected <= end {
            return Err(Error::DateGap {
                region: id.to_string(),
                missing: expected,
            });
        }
        regions.push(RegionWeather { region: id, days });
    }
    WeatherPanel::new(start, regions)
}

/// Canonical form: header, regions in panel order, dates ascending, shortest
/// round-trip float formatting, LF line endings.
pub fn write_weather_csv(panel: &WeatherPanel, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("<weather csv>", e);
    writeln!(out, "{}", WEATHER_HEADER.join(",")).map_err(io)?;
    for r in panel.regions() {
        for (i, d) in r.days.iter().enumerate() {
            let date = panel.start() + Duration::days(i as i64);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.region,
                date.format("%Y-%m-%d"),
                d.tmean,
                d.tmax,
                d.tmin,
                d.precip,
                d.wind,
                d.radiation,
                d.rhum
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

pub fn load_yield_csv(path: impl AsRef<Path>) -> Result<YieldPanel> {
    read_yield_csv(open(path.as_ref())?)
}

pub fn read_yield_csv(input: impl Read) -> Result<YieldPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let factor = match cols.as_slice() {
        ["region", "year", "yield_t_ha"] => 1.0,
        ["region", "year", "yield_kg_ha"] => 1e-3,
        _ => {
            return Err(malformed(
                1,
                "header",
                "expected `region,year,yield_t_ha` or `region,year,yield_kg_ha`",
            ))
        }
    };
    let value_col = cols[2].to_string();
    let mut panel = YieldPanel::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(malformed(line, "row", format!("expected 3 fields, got {}", rec.len())));
        }
        let region = RegionId::new(field(&rec, 0, "region")?)
            .map_err(|_| malformed(line, "region", "empty region code"))?;
        let year_s = field(&rec, 1, "year")?;
        let year: i32 = year_s
            .parse()
            .map_err(|_| malformed(line, "year", format!("not an integer: `{year_s}`")))?;
        let value = parse_f64(&rec, 2, &value_col)? * factor;
        panel.insert(region, year, value)?;
    }
    Ok(panel)
}

pub fn write_yield_csv(panel: &YieldPanel, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("<yield csv>", e);
    writeln!(out, "region,year,yield_t_ha").map_err(io)?;
    for ((r, y), v) in panel.iter() {
        writeln!(out, "{r},{y},{v}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "region,date,tmean,tmax,tmin,precip,wind,radiation,rhum
DE1,2020-01-01,1.5,4,-1,0.2,3.1,2.5,88
DE1,2020-01-02,2,5.5,-0.5,0,2.9,3,85
DE1,2020-01-03,0.5,3,-2,1.25,4,1.5,90
DE2,2020-01-01,3,6,0,0,5,2,80
DE2,2020-01-02,2.5,5,1,3,4.5,2.2,82
DE2,2020-01-03,1,2,0.5,0,3.3,2.8,79
";

    #[test]
    fn parses_well_formed_file() {
        let p = read_weather_csv(GOOD.as_bytes()).unwrap();
        assert_eq!(p.regions().len(), 2);
        assert_eq!(p.n_days(), 3);
        assert_eq!(p.start(), NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
    }

    #[test]
    fn canonical_file_round_trips_bytes() {
        let p = read_weather_csv(GOOD.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_weather_csv(&p, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), GOOD);
    }

    #[test]
    fn tmin_above_tmax_names_row() {
        let bad = GOOD.replace("DE2,2020-01-02,2.5,5,1", "DE2,2020-01-02,4,3,5");
        match read_weather_csv(bad.as_bytes()) {
            Err(Error::InvariantViolation { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn date_gap_detected() {
        let bad: String = GOOD
            .lines()
            .filter(|l| !l.starts_with("DE1,2020-01-02"))
            .map(|l| format!("{l}\n"))
            .collect();
        match read_weather_csv(bad.as_bytes()) {
            Err(Error::DateGap { region, missing }) => {
                assert_eq!(region, "DE1");
                assert_eq!(missing, NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn region_with_shorter_range_is_a_gap() {
        let bad: String = GOOD
            .lines()
            .filter(|l| !l.starts_with("DE2,2020-01-03"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            read_weather_csv(bad.as_bytes()),
            Err(Error::DateGap { .. })
        ));
    }

    #[test]
    fn malformed_number_reports_column() {
        let bad = GOOD.replace("3.1,2.5,88", "fast,2.5,88");
        match read_weather_csv(bad.as_bytes()) {
            Err(Error::MalformedRow { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "wind");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn yield_csv_basic_and_errors() {
        let p = read_yield_csv("region,year,yield_t_ha\nDE1,2000,7.2\nDE1,2001,7.5\n".as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        let dup = read_yield_csv("region,year,yield_t_ha\nDE1,2000,7.2\nDE1,2000,7.5\n".as_bytes());
        assert!(matches!(dup, Err(Error::DuplicateRecord { .. })));
        let zero = read_yield_csv("region,year,yield_t_ha\nDE1,2000,0\n".as_bytes());
        assert!(matches!(zero, Err(Error::NonPositiveYield { .. })));
        let bad = read_yield_csv("region,year,yield_t_ha\nDE1,20x0,7\n".as_bytes());
        assert!(matches!(bad, Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn kg_per_hectare_converted() {
        let p = read_yield_csv("region,year,yield_kg_ha\nDE1,2000,7200\n".as_bytes()).unwrap();
        let r = RegionId::new("DE1").unwrap();
        assert!((p.get(&r, 2000).unwrap() - 7.2).abs() < 1e-12);
    }
}
