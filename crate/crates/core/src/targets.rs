//! Prediction targets derived from the yield panel: detrended yield, absolute
//! yield gap, yield gap ratio and lagged rolling-mean anomaly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::YearRange;
use crate::error::{Error, Result};
use crate::ingest::{Cell, RegionId, YieldPanel};

/// National quadratic trend p(t) = a·s² + b·s + c with s = t - center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTrend {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Year the polynomial is centered on (midpoint of the fit window).
    pub center: f64,
    pub window: YearRange,
    /// Maximum of p over the integer years of the window.
    pub p_max: f64,
}

impl QuadraticTrend {
    pub fn eval(&self, year: i32) -> f64 {
        let s = year as f64 - self.center;
        (self.a * s + self.b) * s + self.c
    }

    /// The amount added to every yield of `year` when detrending.
    pub fn offset(&self, year: i32) -> f64 {
        self.p_max - self.eval(year)
    }
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Least-squares quadratic through the unweighted national mean yield of each
/// year in `window`.
pub fn fit_national_trend(y: &YieldPanel, window: YearRange) -> Result<QuadraticTrend> {
    let means: Vec<(i32, f64)> = y
        .national_means()
        .into_iter()
        .filter(|(yr, _)| window.contains(*yr))
        .collect();
    if means.len() < 3 {
        return Err(Error::InsufficientYears {
            needed: 3,
            found: means.len(),
        });
    }
    let center = (window.first as f64 + window.last as f64) / 2.0;
    // Normal equations in the basis (s², s, 1).
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for &(yr, v) in &means {
        let s = yr as f64 - center;
        let basis = [s * s, s, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            rhs[i] += basis[i] * v;
        }
    }
    let [a, b, c] = solve3(m, rhs).ok_or(Error::InsufficientYears {
        needed: 3,
        found: means.len(),
    })?;
    let mut trend = QuadraticTrend {
        a,
        b,
        c,
        center,
        window,
        p_max: f64::NEG_INFINITY,
    };
    trend.p_max = window
        .years()
        .map(|t| trend.eval(t))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(trend)
}

/// y_det(r, t) = y(r, t) + (p_max - p(t)).
pub fn detrend(y: &YieldPanel, trend: &QuadraticTrend) -> Result<YieldPanel> {
    if let Some(&(_, year)) = y.iter().map(|(c, _)| c).find(|(_, t)| !trend.window.contains(*t)) {
        return Err(Error::YearOutsideTrend {
            year,
            first: trend.window.first,
            last: trend.window.last,
        });
    }
    Ok(y.map_values(|(_, t), v| v + trend.offset(*t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Yield,
    GapAbs,
    GapRatio,
    Anomaly,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [
        TargetKind::Yield,
        TargetKind::GapAbs,
        TargetKind::GapRatio,
        TargetKind::Anomaly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Yield => "yield",
            TargetKind::GapAbs => "gap_abs",
            TargetKind::GapRatio => "gap_ratio",
            TargetKind::Anomaly => "anomaly",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            TargetKind::Yield | TargetKind::GapAbs => "t/ha",
            TargetKind::GapRatio | TargetKind::Anomaly => "percent",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown target kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    /// Trend and gap window; defaults to the panel's year span.
    pub window: Option<YearRange>,
    pub lag: i32,
    pub anomaly_window: i32,
    pub min_window_years: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            window: None,
            lag: 2,
            anomaly_window: 10,
            min_window_years: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTable {
    pub kind: TargetKind,
    pub values: BTreeMap<Cell, f64>,
    pub trend: QuadraticTrend,
    pub window: YearRange,
    /// Rows dropped for lack of history (anomaly only).
    pub dropped: usize,
}

impl TargetTable {
    pub fn get(&self, cell: &Cell) -> Option<f64> {
        self.values.get(cell).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io("<target csv>", e);
        writeln!(out, "region,year,kind,value").map_err(io)?;
        for ((r, y), v) in &self.values {
            writeln!(out, "{r},{y},{},{v}", self.kind).map_err(io)?;
        }
        Ok(())
    }

    /// Reads `region,year,kind,value` rows. All rows must share one kind.
    pub fn read_csv(input: impl std::io::Read, trend: QuadraticTrend) -> Result<TargetTable> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut kind = None;
        let mut values = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |column: &str, message: String| Error::MalformedRow {
                line,
                column: column.into(),
                message,
            };
            if rec.len() != 4 {
                return Err(bad("*", format!("expected 4 fields, got {}", rec.len())));
            }
            let region = RegionId::new(&rec[0]).map_err(|e| bad("region", e.to_string()))?;
            let year: i32 = rec[1].parse().map_err(|_| bad("year", rec[1].to_string()))?;
            let k: TargetKind = rec[2].parse().map_err(|_| bad("kind", rec[2].to_string()))?;
            if kind.is_some_and(|prev| prev != k) {
                return Err(bad("kind", "mixed target kinds".into()));
            }
            kind = Some(k);
            let v: f64 = rec[3].parse().map_err(|_| bad("value", rec[3].to_string()))?;
            values.insert((region, year), v);
        }
        Ok(TargetTable {
            kind: kind.ok_or(Error::Empty)?,
            values,
            window: trend.window,
            trend,
            dropped: 0,
        })
    }
}

fn in_window(det: &YieldPanel, window: YearRange) -> BTreeMap<RegionId, BTreeMap<i32, f64>> {
    det.by_region()
        .into_iter()
        .map(|(r, s)| (r, s.into_iter().filter(|(y, _)| window.contains(*y)).collect()))
        .collect()
}

/// gap_abs(r, t) = max over window of y_det(r, ·) - y_det(r, t).
pub fn yield_gap_abs(det: &YieldPanel, window: YearRange) -> Result<BTreeMap<Cell, f64>> {
    let mut out = BTreeMap::new();
    for (region, series) in in_window(det, window) {
        let max = series
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if series.is_empty() {
            return Err(Error::EmptyRegionSeries(region.to_string()));
        }
        for (y, v) in series {
            out.insert((region.clone(), y), max - v);
        }
    }
    Ok(out)
}

/// gap_ratio(r, t) = 100·(y_det(r, t) - m_r)/m_r, m_r the window mean.
/// Years above the regional mean are positive.
pub fn yield_gap_ratio(det: &YieldPanel, window: YearRange) -> Result<BTreeMap<Cell, f64>> {
    let mut out = BTreeMap::new();
    for (region, series) in in_window(det, window) {
        if series.is_empty() {
            return Err(Error::EmptyRegionSeries(region.to_string()));
        }
        let mean = series.values().sum::<f64>() / series.len() as f64;
        if !(mean > 0.0) {
            return Err(Error::NonPositiveMean {
                region: region.to_string(),
                mean,
            });
        }
        for (y, v) in series {
            out.insert((region.clone(), y), 100.0 * (v - mean) / mean);
        }
    }
    Ok(out)
}

/// anomaly(r, t) = 100·(y_det(r, t) - m)/m where m averages the available
/// detrended yields of years t-lag-window+1 ..= t-lag. Rows with fewer than
/// `min_years` such values are dropped; the count is returned alongside.
pub fn yield_anomaly(
    det: &YieldPanel,
    lag: i32,
    window: i32,
    min_years: usize,
) -> Result<(BTreeMap<Cell, f64>, usize)> {
    if window < 1 || lag < 0 || min_years == 0 {
        return Err(Error::ConfigInvalid(format!(
            "anomaly needs window >= 1, lag >= 0, min_years >= 1 (got {window}, {lag}, {min_years})"
        )));
    }
    let mut out = BTreeMap::new();
    let mut dropped = 0;
    for (region, series) in det.by_region() {
        for (&t, &v) in &series {
            let hist: Vec<f64> = series
                .range(t - lag - window + 1..=t - lag)
                .map(|(_, v)| *v)
                .collect();
            if hist.len() < min_years {
                dropped += 1;
                continue;
            }
            let m = hist.iter().sum::<f64>() / hist.len() as f64;
            if !(m > 0.0) {
                return Err(Error::NonPositiveMean {
                    region: region.to_string(),
                    mean: m,
                });
            }
            out.insert((region.clone(), t), 100.0 * (v - m) / m);
        }
    }
    Ok((out, dropped))
}

/// Fits the national trend, detrends, and derives the requested target.
pub fn build_target_table(y: &YieldPanel, kind: TargetKind, cfg: &TargetConfig) -> Result<TargetTable> {
    let window = match cfg.window {
        Some(w) => w,
        None => y.year_range().ok_or(Error::InsufficientYears { needed: 3, found: 0 })?,
    };
    let trend = fit_national_trend(y, window)?;
    let det = detrend(&restrict(y, window), &trend)?;
    let (values, dropped) = match kind {
        TargetKind::Yield => (det.iter().map(|(c, v)| (c.clone(), v)).collect(), 0),
        TargetKind::GapAbs => (yield_gap_abs(&det, window)?, 0),
        TargetKind::GapRatio => (yield_gap_ratio(&det, window)?, 0),
        TargetKind::Anomaly => yield_anomaly(&det, cfg.lag, cfg.anomaly_window, cfg.min_window_years)?,
    };
    Ok(TargetTable {
        kind,
        values,
        trend,
        window,
        dropped,
    })
}

fn restrict(y: &YieldPanel, window: YearRange) -> YieldPanel {
    let mut out = YieldPanel::new();
    for ((r, t), v) in y.iter() {
        if window.contains(*t) {
            out.insert(r.clone(), *t, v).expect("source panel is valid");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rid(s: &str) -> RegionId {
        RegionId::new(s).unwrap()
    }

    fn panel(rows: &[(&str, i32, f64)]) -> YieldPanel {
        let mut p = YieldPanel::new();
        for &(r, y, v) in rows {
            p.insert(rid(r), y, v).unwrap();
        }
        p
    }

    /// Cramer's-rule solution of the normal equations, used as an oracle.
    fn cramer_fit(points: &[(f64, f64)]) -> [f64; 3] {
        let mut s = [0.0; 5];
        let mut t = [0.0; 3];
        for &(x, y) in points {
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += x.powi(k as i32);
            }
            for (k, tk) in t.iter_mut().enumerate() {
                *tk += x.powi(k as i32) * y;
            }
        }
        let m = [[s[4], s[3], s[2]], [s[3], s[2], s[1]], [s[2], s[1], s[0]]];
        let rhs = [t[2], t[1], t[0]];
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(m);
        let mut out = [0.0; 3];
        for (col, o) in out.iter_mut().enumerate() {
            let mut mc = m;
            for row in 0..3 {
                mc[row][col] = rhs[row];
            }
            *o = det(mc) / d;
        }
        out
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let window = YearRange::new(1990, 2010);
        let mut rows = Vec::new();
        for y in window.years() {
            let s = y as f64 - 2000.0;
            rows.push(("A", y, 0.01 * s * s + 5.0));
        }
        let t = fit_national_trend(&panel(&rows), window).unwrap();
        assert!((t.a - 0.01).abs() < 1e-9);
        assert!(t.b.abs() < 1e-9);
        assert!((t.c - 5.0).abs() < 1e-9);
        assert!((t.p_max - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_trend() {
        let rows: Vec<_> = (2000..2010).map(|y| ("A", y, 7.0)).collect();
        let t = fit_national_trend(&panel(&rows), YearRange::new(2000, 2009)).unwrap();
        assert!(t.a.abs() < 1e-12 && t.b.abs() < 1e-12);
        assert!((t.c - 7.0).abs() < 1e-12);
        assert!((t.p_max - 7.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_quadratic_matches_cramer_oracle() {
        let window = YearRange::new(1979, 2022);
        let mut rows = Vec::new();
        let mut state = 12345u64;
        for y in window.years() {
            for r in ["A", "B", "C"] {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let noise = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                let s = (y - 1979) as f64;
                rows.push((r, y, 5.0 + 0.08 * s - 0.001 * s * s + noise));
            }
        }
        let p = panel(&rows);
        let t = fit_national_trend(&p, window).unwrap();
        let pts: Vec<(f64, f64)> = p
            .national_means()
            .into_iter()
            .map(|(y, v)| (y as f64 - t.center, v))
            .collect();
        let [a, b, c] = cramer_fit(&pts);
        assert!((t.a - a).abs() < 1e-8);
        assert!((t.b - b).abs() < 1e-8);
        assert!((t.c - c).abs() < 1e-8);
    }

    #[test]
    fn too_few_years() {
        let p = panel(&[("A", 2000, 5.0), ("A", 2001, 5.5)]);
        assert!(matches!(
            fit_national_trend(&p, YearRange::new(2000, 2001)),
            Err(Error::InsufficientYears { found: 2, .. })
        ));
    }

    #[test]
    fn detrend_arithmetic_and_identity() {
        let trend = QuadraticTrend {
            a: 0.0,
            b: 0.0,
            c: 6.5,
            center: 2000.0,
            window: YearRange::new(1990, 2010),
            p_max: 8.0,
        };
        let p = panel(&[("A", 2000, 6.0)]);
        assert_eq!(detrend(&p, &trend).unwrap().get(&rid("A"), 2000), Some(7.5));

        let flat = QuadraticTrend { p_max: 6.5, ..trend };
        let q = panel(&[("A", 2000, 6.1), ("B", 2001, 9.3)]);
        assert_eq!(detrend(&q, &flat).unwrap(), q);

        let outside = panel(&[("A", 1980, 6.0)]);
        assert!(matches!(
            detrend(&outside, &trend),
            Err(Error::YearOutsideTrend { year: 1980, .. })
        ));
    }

    #[test]
    fn region_on_trend_detrends_to_p_max() {
        let window = YearRange::new(2000, 2015);
        let rows: Vec<_> = window
            .years()
            .map(|y| {
                let s = (y - 2000) as f64;
                ("A", y, 5.0 + 0.1 * s - 0.004 * s * s)
            })
            .collect();
        let p = panel(&rows);
        let t = fit_national_trend(&p, window).unwrap();
        for (_, v) in detrend(&p, &t).unwrap().iter() {
            assert!((v - t.p_max).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_abs_definition() {
        let det = panel(&[("A", 2000, 6.0), ("A", 2001, 7.0), ("A", 2002, 8.0)]);
        let g = yield_gap_abs(&det, YearRange::new(2000, 2002)).unwrap();
        let v: Vec<f64> = g.values().copied().collect();
        assert_eq!(v, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn gap_ratio_sign_and_value() {
        let det = panel(&[("A", 2000, 8.0), ("A", 2001, 6.0), ("A", 2002, 7.0)]);
        let g = yield_gap_ratio(&det, YearRange::new(2000, 2002)).unwrap();
        assert!((g[&(rid("A"), 2000)] - 100.0 / 7.0).abs() < 1e-12);
        assert_eq!(g[&(rid("A"), 2002)], 0.0);
    }

    #[test]
    fn anomaly_window_rule() {
        // Window mean 5.0, current 5.5 -> +10 %.
        let mut rows: Vec<_> = (1990..2000).map(|y| ("A", y, 5.0)).collect();
        rows.push(("A", 2001, 5.5));
        let det = panel(&rows);
        let (a, dropped) = yield_anomaly(&det, 2, 10, 7).unwrap();
        assert!((a[&(rid("A"), 2001)] - 10.0).abs() < 1e-12);
        // 1990..=1996 lack 7 lagged years; 1997 sees 1990..=1995 (6); 1998 sees 7.
        assert_eq!(a.keys().next().unwrap().1, 1998);
        assert_eq!(dropped, 8);
    }

    #[test]
    fn anomaly_first_row_on_full_panel() {
        let rows: Vec<_> = (1979..=2022).map(|y| ("A", y, 6.0 + (y % 3) as f64)).collect();
        let t = build_target_table(&panel(&rows), TargetKind::Anomaly, &TargetConfig::default()).unwrap();
        let first = t.values.keys().next().unwrap().1;
        assert_eq!(first, 1979 + 2 + 7 - 1);
    }

    #[test]
    fn targets_are_deterministic_and_round_trip() {
        let rows: Vec<_> = (1990..=2010)
            .flat_map(|y| [("A", y, 5.0 + 0.1 * (y % 4) as f64), ("B", y, 6.0 + 0.05 * (y % 5) as f64)])
            .collect();
        let p = panel(&rows);
        for kind in TargetKind::ALL {
            let a = build_target_table(&p, kind, &TargetConfig::default()).unwrap();
            let b = build_target_table(&p, kind, &TargetConfig::default()).unwrap();
            assert_eq!(a, b);
            let mut buf = Vec::new();
            a.write_csv(&mut buf).unwrap();
            let back = TargetTable::read_csv(&buf[..], a.trend).unwrap();
            assert_eq!(back.values, a.values);
            assert_eq!(back.kind, kind);
        }
    }

    #[test]
    fn trend_json_round_trip() {
        let t = QuadraticTrend {
            a: -0.00123,
            b: 0.0456,
            c: 7.25,
            center: 2000.5,
            window: YearRange::new(1979, 2022),
            p_max: 7.6,
        };
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"window\":[1979,2022]"));
        assert_eq!(serde_json::from_str::<QuadraticTrend>(&s).unwrap(), t);
    }
}
