//! Three-way partition of (region, year) cells: whole validation years held
//! out in time, a random test sample of the remaining pool cells, and the rest
//! for training with expanding-window folds over training years.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::YearRange;
use crate::error::{Error, Result};
use crate::ingest::{Cell, YieldPanel};
use crate::targets;

/// How validation years are chosen. Serialized as `"auto"` or a year list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValidationMode {
    Fixed(Vec<i32>),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl ValidationMode {
    pub fn auto() -> Self {
        ValidationMode::Auto(AutoTag::Auto)
    }

    /// Parses `auto` or a comma-separated year list.
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Self::auto());
        }
        s.split(',')
            .map(|y| {
                y.trim()
                    .parse::<i32>()
                    .map_err(|_| Error::ConfigInvalid(format!("bad validation year `{y}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ValidationMode::Fixed)
    }
}

impl Default for ValidationMode {
    fn default() -> Self {
        ValidationMode::Fixed(vec![2004, 2018])
    }
}

/// Fixed mode returns the listed years (each must have data). Auto mode picks
/// the years of highest and lowest national mean detrended yield within
/// `pool` (or the whole panel); ties go to the earliest year, and the low year
/// is chosen among the years other than the high year.
pub fn select_validation_years(
    y: &YieldPanel,
    mode: &ValidationMode,
    pool: Option<YearRange>,
) -> Result<BTreeSet<i32>> {
    let years = y.years();
    match mode {
        ValidationMode::Fixed(list) => {
            for yr in list {
                if !years.contains(yr) {
                    return Err(Error::YearNotInPanel(*yr));
                }
            }
            Ok(list.iter().copied().collect())
        }
        ValidationMode::Auto(_) => {
            let span = y.year_range().ok_or(Error::InsufficientYears { needed: 3, found: 0 })?;
            if years.len() < 3 {
                return Err(Error::InsufficientYears {
                    needed: 3,
                    found: years.len(),
                });
            }
            let trend = targets::fit_national_trend(y, span)?;
            let det = targets::detrend(y, &trend)?;
            let means: BTreeMap<i32, f64> = det
                .national_means()
                .into_iter()
                .filter(|(yr, _)| pool.is_none_or(|p| p.contains(*yr)))
                .collect();
            if means.len() < 2 {
                return Err(Error::InsufficientYears {
                    needed: 2,
                    found: means.len(),
                });
            }
            let mut hi: Option<(i32, f64)> = None;
            for (&yr, &v) in &means {
                if hi.is_none_or(|(_, best)| v > best + tie_tol(best)) {
                    hi = Some((yr, v));
                }
            }
            let hi = hi.expect("non-empty").0;
            let mut lo: Option<(i32, f64)> = None;
            for (&yr, &v) in means.iter().filter(|(yr, _)| **yr != hi) {
                if lo.is_none_or(|(_, best)| v < best - tie_tol(best)) {
                    lo = Some((yr, v));
                }
            }
            Ok([hi, lo.expect("at least two years").0].into_iter().collect())
        }
    }
}

/// Differences below this are treated as ties (detrending leaves rounding
/// noise on otherwise equal means).
fn tie_tol(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub validation_years: BTreeSet<i32>,
    pub pool_years: YearRange,
    pub test_frac: f64,
    #[serde(rename = "test")]
    pub test_cells: BTreeSet<Cell>,
    #[serde(rename = "train")]
    pub train_cells: BTreeSet<Cell>,
}

impl SplitPlan {
    pub fn is_validation(&self, cell: &Cell) -> bool {
        self.validation_years.contains(&cell.1)
    }

    /// Cells of `available` that fall in a validation year.
    pub fn validation_cells<'a>(&self, available: impl IntoIterator<Item = &'a Cell>) -> BTreeSet<Cell> {
        available
            .into_iter()
            .filter(|c| self.is_validation(c))
            .cloned()
            .collect()
    }

    /// Sorted, distinct years present among the training cells.
    pub fn train_years(&self) -> Vec<i32> {
        self.train_cells
            .iter()
            .map(|c| c.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Fails if train, test and validation overlap in any cell.
    pub fn check_leakage(&self) -> Result<()> {
        if let Some(c) = self.train_cells.intersection(&self.test_cells).next() {
            return Err(Error::LeakageDetected(format!(
                "cell ({}, {}) is in both train and test",
                c.0, c.1
            )));
        }
        if let Some(c) = self
            .train_cells
            .iter()
            .chain(&self.test_cells)
            .find(|c| self.is_validation(c))
        {
            return Err(Error::LeakageDetected(format!(
                "cell ({}, {}) lies in a validation year",
                c.0, c.1
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SplitPlan> {
        let plan: SplitPlan = serde_json::from_str(text)?;
        plan.check_leakage()?;
        Ok(plan)
    }
}

/// Splits the pool (available cells in `pool_years` outside validation years)
/// into test and train by a seeded shuffle; |test| = round(test_frac·|pool|).
pub fn make_split_plan(
    cells: &BTreeSet<Cell>,
    validation_years: &BTreeSet<i32>,
    pool_years: YearRange,
    test_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "test_frac must lie in (0, 1), got {test_frac}"
        )));
    }
    let available: BTreeSet<i32> = cells.iter().map(|c| c.1).collect();
    if let Some(y) = validation_years.iter().find(|y| !available.contains(y)) {
        return Err(Error::YearNotInPanel(*y));
    }
    let mut pool: Vec<Cell> = cells
        .iter()
        .filter(|c| pool_years.contains(c.1) && !validation_years.contains(&c.1))
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n_test = (test_frac * pool.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let train_cells = pool.split_off(n_test).into_iter().collect();
    let plan = SplitPlan {
        seed,
        validation_years: validation_years.clone(),
        pool_years,
        test_frac,
        test_cells: pool.into_iter().collect(),
        train_cells,
    };
    plan.check_leakage()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFolds {
    pub folds: Vec<Fold>,
}

/// Expanding-window folds with one-year test blocks: fold i trains on the
/// first `n - n_folds + i` years and tests on the next one.
pub fn expanding_window_folds(train_years: &[i32], n_folds: usize) -> Result<CvFolds> {
    let years: Vec<i32> = train_years
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if n_folds == 0 || years.len() < n_folds + 1 {
        return Err(Error::TooFewYears {
            needed: n_folds + 1,
            folds: n_folds,
            found: years.len(),
        });
    }
    let initial = years.len() - n_folds;
    let folds = (0..n_folds)
        .map(|i| Fold {
            train_years: years[..initial + i].to_vec(),
            test_years: vec![years[initial + i]],
        })
        .collect();
    Ok(CvFolds { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RegionId;

    fn grid(regions: usize, years: YearRange) -> BTreeSet<Cell> {
        (0..regions)
            .flat_map(|r| years.years().map(move |y| (RegionId::new(format!("R{r:03}")).unwrap(), y)))
            .collect()
    }

    #[test]
    fn test_size_and_validation_exclusion() {
        let cells = grid(100, YearRange::new(1979, 2022));
        let val: BTreeSet<i32> = [2004, 2018].into();
        let plan = make_split_plan(&cells, &val, YearRange::new(2000, 2022), 0.10, 1).unwrap();
        assert_eq!(plan.test_cells.len(), 210);
        assert_eq!(plan.train_cells.len(), 1890);
        assert!(plan.test_cells.iter().chain(&plan.train_cells).all(|c| c.1 != 2004 && c.1 != 2018));
    }

    #[test]
    fn seeds_differ_but_sizes_match() {
        let cells = grid(20, YearRange::new(2000, 2022));
        let val: BTreeSet<i32> = [2004].into();
        let pool = YearRange::new(2000, 2022);
        let a = make_split_plan(&cells, &val, pool, 0.1, 1).unwrap();
        let b = make_split_plan(&cells, &val, pool, 0.1, 2).unwrap();
        let a2 = make_split_plan(&cells, &val, pool, 0.1, 1).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.test_cells, b.test_cells);
        assert_eq!(a.test_cells.len(), b.test_cells.len());
    }

    #[test]
    fn plan_errors() {
        let cells = grid(3, YearRange::new(2000, 2005));
        let none = BTreeSet::new();
        assert!(matches!(
            make_split_plan(&cells, &none, YearRange::new(2010, 2012), 0.1, 0),
            Err(Error::EmptyPool)
        ));
        assert!(matches!(
            make_split_plan(&cells, &none, YearRange::new(2000, 2005), 1.0, 0),
            Err(Error::ConfigInvalid(_))
        ));
        let missing: BTreeSet<i32> = [1990].into();
        assert!(matches!(
            make_split_plan(&cells, &missing, YearRange::new(2000, 2005), 0.2, 0),
            Err(Error::YearNotInPanel(1990))
        ));
    }

    #[test]
    fn plan_json_round_trip() {
        let cells = grid(5, YearRange::new(2000, 2010));
        let val: BTreeSet<i32> = [2004].into();
        let plan = make_split_plan(&cells, &val, YearRange::new(2000, 2010), 0.2, 9).unwrap();
        let text = plan.to_json().unwrap();
        assert!(text.contains("\"test\""));
        assert_eq!(SplitPlan::from_json(&text).unwrap(), plan);
    }

    #[test]
    fn leaky_plan_rejected() {
        let cells = grid(2, YearRange::new(2000, 2003));
        let val: BTreeSet<i32> = [2001].into();
        let mut plan = make_split_plan(&cells, &val, YearRange::new(2000, 2003), 0.5, 0).unwrap();
        let c = plan.test_cells.iter().next().unwrap().clone();
        plan.train_cells.insert(c);
        assert!(matches!(plan.check_leakage(), Err(Error::LeakageDetected(_))));
    }

    #[test]
    fn folds_construction() {
        let years: Vec<i32> = (2000..2010).collect();
        let f = expanding_window_folds(&years, 3).unwrap();
        let tests: Vec<Vec<i32>> = f.folds.iter().map(|f| f.test_years.clone()).collect();
        assert_eq!(tests, vec![vec![2007], vec![2008], vec![2009]]);
        assert_eq!(f.folds[0].train_years.len(), 7);
        assert_eq!(f.folds[2].train_years.len(), 9);
        for fold in &f.folds {
            assert!(fold.train_years.iter().max() < fold.test_years.iter().min());
        }
        let single = expanding_window_folds(&years, 1).unwrap();
        assert_eq!(single.folds.len(), 1);
        assert_eq!(single.folds[0].test_years, vec![2009]);
        assert!(matches!(
            expanding_window_folds(&years[..3], 3),
            Err(Error::TooFewYears { .. })
        ));
    }

    fn panel(rows: &[(&str, i32, f64)]) -> YieldPanel {
        let mut p = YieldPanel::new();
        for &(r, y, v) in rows {
            p.insert(RegionId::new(r).unwrap(), y, v).unwrap();
        }
        p
    }

    #[test]
    fn fixed_and_auto_validation_years() {
        let mut rows = Vec::new();
        for y in 1990..2010 {
            let v = match y {
                1997 => 9.0,
                2003 => 4.0,
                _ => 6.0 + 0.01 * ((y * 7) % 5) as f64,
            };
            rows.push(("A", y, v));
            rows.push(("B", y, v + 0.5));
        }
        let p = panel(&rows);
        let fixed = select_validation_years(&p, &ValidationMode::Fixed(vec![1995, 2001]), None).unwrap();
        assert_eq!(fixed, [1995, 2001].into());
        let auto = select_validation_years(&p, &ValidationMode::auto(), None).unwrap();
        assert_eq!(auto, [1997, 2003].into());
        assert!(matches!(
            select_validation_years(&p, &ValidationMode::Fixed(vec![1980]), None),
            Err(Error::YearNotInPanel(1980))
        ));
    }

    #[test]
    fn auto_on_constant_panel_takes_earliest_years() {
        let rows: Vec<_> = (2000..2006).map(|y| ("A", y, 7.0)).collect();
        let auto = select_validation_years(&panel(&rows), &ValidationMode::auto(), None).unwrap();
        assert_eq!(auto, [2000, 2001].into());
    }

    #[test]
    fn validation_mode_serde() {
        let m: ValidationMode = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(m, ValidationMode::auto());
        let m: ValidationMode = serde_json::from_str("[2004, 2018]").unwrap();
        assert_eq!(m, ValidationMode::Fixed(vec![2004, 2018]));
        assert_eq!(ValidationMode::parse("2004,2018").unwrap(), m);
    }
}
