//! Standardized drought indices. SPI fits a zero-inflated gamma per calendar
//! month, SPEI a three-parameter log-logistic (Hosking's generalized logistic
//! parameterization); both are fitted by sample L-moments and mapped through
//! the standard-normal quantile function.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use statrs::function::gamma::gamma_lr;

use super::normal::norm_ppf;
use crate::calendar::{IndicatorSeries, Period, PeriodKind, YearRange};
use crate::error::{Error, Result};

/// Minimum number of reference values per calendar month.
pub const MIN_REFERENCE: usize = 20;
/// Index values are clamped to `[-CLAMP, CLAMP]`.
pub const CLAMP: f64 = 5.0;

/// First three sample L-moments from unbiased probability-weighted moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LMoments {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl LMoments {
    pub fn from_sample(values: &[f64]) -> Option<LMoments> {
        let n = values.len();
        if n < 3 {
            return None;
        }
        let mut x = values.to_vec();
        x.sort_by(f64::total_cmp);
        let nf = n as f64;
        let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let j = i as f64; // (rank - 1)
            b0 += v;
            b1 += j / (nf - 1.0) * v;
            b2 += j * (j - 1.0) / ((nf - 1.0) * (nf - 2.0)) * v;
        }
        b0 /= nf;
        b1 /= nf;
        b2 /= nf;
        Some(LMoments {
            l1: b0,
            l2: 2.0 * b1 - b0,
            l3: 6.0 * b2 - 6.0 * b1 + b0,
        })
    }

    pub fn tau3(&self) -> f64 {
        self.l3 / self.l2
    }
}

pub trait FittedCdf {
    fn cdf(&self, x: f64) -> f64;
}

/// Gamma distribution with a point mass at zero: H(x) = q + (1 - q) G(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub shape: f64,
    pub scale: f64,
    pub zero_prob: f64,
}

impl GammaFit {
    /// Fits the nonzero values by L-moments; `q = zeros / (n + 1)`.
    pub fn fit(values: &[f64]) -> Result<GammaFit> {
        let n = values.len();
        let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
        let zeros = n - nonzero.len();
        let lm = LMoments::from_sample(&nonzero).ok_or_else(|| {
            Error::DegenerateFit(format!("only {} nonzero values", nonzero.len()))
        })?;
        if !(lm.l2 > 0.0) || !(lm.l1 > 0.0) {
            return Err(Error::DegenerateFit("zero variance".into()));
        }
        let t = lm.l2 / lm.l1;
        let shape = if t < 0.5 {
            let z = PI * t * t;
            (1.0 - 0.3080 * z) / (z - 0.05812 * z * z + 0.01765 * z * z * z)
        } else {
            let z = 1.0 - t;
            (0.7213 * z - 0.5947 * z * z) / (1.0 - 2.1817 * z + 1.2113 * z * z)
        };
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::DegenerateFit(format!("gamma shape {shape}")));
        }
        Ok(GammaFit {
            shape,
            scale: lm.l1 / shape,
            zero_prob: zeros as f64 / (n as f64 + 1.0),
        })
    }
}

impl FittedCdf for GammaFit {
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.zero_prob;
        }
        self.zero_prob + (1.0 - self.zero_prob) * gamma_lr(self.shape, x / self.scale)
    }
}

/// Three-parameter log-logistic in generalized-logistic form: location `xi`,
/// scale `alpha`, shape `k` (with `tau3 = -k`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogisticFit {
    pub xi: f64,
    pub alpha: f64,
    pub k: f64,
}

impl LogLogisticFit {
    pub fn fit(values: &[f64]) -> Result<LogLogisticFit> {
        let lm = LMoments::from_sample(values)
            .ok_or_else(|| Error::DegenerateFit(format!("only {} values", values.len())))?;
        if !(lm.l2 > 0.0) {
            return Err(Error::DegenerateFit("zero variance".into()));
        }
        let k = -lm.tau3();
        if !(k.abs() < 1.0) {
            return Err(Error::DegenerateFit(format!("log-logistic shape {k}")));
        }
        if k.abs() < 1e-8 {
            return Ok(LogLogisticFit {
                xi: lm.l1,
                alpha: lm.l2,
                k: 0.0,
            });
        }
        let kpi = k * PI;
        let alpha = lm.l2 * kpi.sin() / kpi;
        let xi = lm.l1 - alpha * (1.0 / k - PI / kpi.sin());
        Ok(LogLogisticFit { xi, alpha, k })
    }
}

impl FittedCdf for LogLogisticFit {
    fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.xi) / self.alpha;
        let y = if self.k == 0.0 {
            z
        } else {
            let arg = 1.0 - self.k * z;
            if arg <= 0.0 {
                return if self.k > 0.0 { 1.0 } else { 0.0 };
            }
            -arg.ln() / self.k
        };
        1.0 / (1.0 + (-y).exp())
    }
}

/// Maps a probability to a clamped standard-normal deviate.
pub fn standardize(p: f64) -> f64 {
    norm_ppf(p).clamp(-CLAMP, CLAMP)
}

fn month_index(p: &Period) -> i64 {
    p.year as i64 * 12 + p.ordinal as i64 - 1
}

/// `scale`-month running sums; months without `scale - 1` contiguous
/// predecessors are omitted.
pub fn rolling_sums(monthly: &IndicatorSeries, scale: usize) -> Result<IndicatorSeries> {
    if monthly.kind != PeriodKind::Monthly {
        return Err(Error::ConfigInvalid("rolling sums need a monthly series".into()));
    }
    if scale == 0 {
        return Err(Error::ConfigInvalid("accumulation scale must be >= 1".into()));
    }
    let entries: Vec<(Period, f64)> = monthly.values.iter().map(|(p, v)| (*p, *v)).collect();
    let mut out = IndicatorSeries::new(PeriodKind::Monthly);
    for i in 0..entries.len() {
        if i + 1 < scale {
            continue;
        }
        let window = &entries[i + 1 - scale..=i];
        let contiguous = month_index(&window[scale - 1].0) - month_index(&window[0].0)
            == scale as i64 - 1;
        if contiguous {
            out.values
                .insert(entries[i].0, window.iter().map(|(_, v)| v).sum());
        }
    }
    Ok(out)
}

fn standardized_index<F, D>(
    monthly: &IndicatorSeries,
    scale: usize,
    reference: YearRange,
    fit: F,
) -> Result<IndicatorSeries>
where
    F: Fn(&[f64]) -> Result<D>,
    D: FittedCdf,
{
    let sums = rolling_sums(monthly, scale)?;
    let mut by_month: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (p, v) in &sums.values {
        if reference.contains(p.year) {
            by_month.entry(p.ordinal).or_default().push(*v);
        }
    }
    let mut fits = BTreeMap::new();
    for month in 1..=12u32 {
        let refs = by_month.get(&month).map(Vec::as_slice).unwrap_or(&[]);
        if refs.len() < MIN_REFERENCE {
            return Err(Error::InsufficientReference(format!(
                "calendar month {month}: {} reference values, need {MIN_REFERENCE}",
                refs.len()
            )));
        }
        fits.insert(month, fit(refs)?);
    }
    let mut out = IndicatorSeries::new(PeriodKind::Monthly);
    for (p, v) in &sums.values {
        out.values.insert(*p, standardize(fits[&p.ordinal].cdf(*v)));
    }
    Ok(out)
}

/// Standardized Precipitation Index from monthly precipitation totals.
pub fn spi(monthly_precip: &IndicatorSeries, scale: usize, reference: YearRange) -> Result<IndicatorSeries> {
    standardized_index(monthly_precip, scale, reference, GammaFit::fit)
}

/// Standardized Precipitation-Evapotranspiration Index from monthly P - PET.
pub fn spei(monthly_balance: &IndicatorSeries, scale: usize, reference: YearRange) -> Result<IndicatorSeries> {
    standardized_index(monthly_balance, scale, reference, LogLogisticFit::fit)
}

/// Samples a monthly index at quarter-end months (3, 6, 9, 12).
pub fn quarterly_sample(monthly: &IndicatorSeries) -> IndicatorSeries {
    let mut out = IndicatorSeries::new(PeriodKind::Quarterly);
    for (p, v) in &monthly.values {
        if p.ordinal % 3 == 0 {
            out.values
                .insert(Period::new(PeriodKind::Quarterly, p.year, p.ordinal / 3), *v);
        }
    }
    out
}
