use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar::YearRange;
use crate::error::{Error, Result};
use crate::evaluate::{Baseline, DEFAULT_GAP_THRESHOLD};
use crate::indicators::{builtin_spec, FeatureSpec};
use crate::ingest::{load_weather_csv, load_yield_csv, synth_generate, GroundTruth, SynthConfig, WeatherPanel, YieldPanel};
use crate::models::{HyperGrid, ModelKind};
use crate::splits::ValidationMode;
use crate::targets::{TargetConfig, TargetKind};

/// Rows whose SHAP values feed the stored summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapSplit {
    #[default]
    Test,
    Validation,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub validation: ValidationMode,
    /// Years eligible for train/test; defaults to every year with data.
    pub pool: Option<YearRange>,
    pub test_frac: f64,
    pub n_folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            validation: ValidationMode::default(),
            pool: None,
            test_frac: 0.1,
            n_folds: 5,
        }
    }
}

/// Panel files, relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub weather: PathBuf,
    pub yields: PathBuf,
}

fn default_gap() -> f64 {
    DEFAULT_GAP_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Builtin spec names or paths to spec JSON files.
    pub feature_specs: Vec<String>,
    pub targets: Vec<TargetKind>,
    pub models: Vec<ModelKind>,
    /// Target of the two reference runs; defaults to the first target.
    #[serde(default)]
    pub reference_target: Option<TargetKind>,
    #[serde(default = "default_gap")]
    pub gap_threshold: f64,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub shap_split: ShapSplit,
    /// Reference period for percentile thresholds and index fits; defaults to
    /// the weather panel's years.
    #[serde(default)]
    pub indicator_reference: Option<YearRange>,
    /// Output root, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub grid: HyperGrid,
    #[serde(default)]
    pub target: TargetConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Key under which a spec reference is stored: the builtin name, or the
/// file stem of a spec path.
pub(crate) fn spec_label(spec: &str) -> String {
    if builtin_spec(spec).is_some() {
        return spec.to_string();
    }
    Path::new(spec)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn reference_target(&self) -> TargetKind {
        self.reference_target
            .or_else(|| self.targets.first().copied())
            .unwrap_or(TargetKind::Yield)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.name.trim().is_empty() {
            return bad("experiment name is empty");
        }
        if self.feature_specs.is_empty() || self.targets.is_empty() || self.models.is_empty() {
            return bad("feature_specs, targets and models must all be non-empty");
        }
        if !(self.gap_threshold.is_finite() && self.gap_threshold >= 0.0) {
            return bad("gap_threshold must be a finite non-negative number");
        }
        if self.data.is_some() && self.synth.is_some() {
            return bad("give either [data] or [synth], not both");
        }
        let mut labels = BTreeMap::new();
        for s in &self.feature_specs {
            if let Some(prev) = labels.insert(spec_label(s), s) {
                return Err(Error::ConfigInvalid(format!("feature specs `{prev}` and `{s}` share a name")));
            }
        }
        Ok(())
    }

    /// Loads every referenced spec, keyed by its label.
    pub fn resolve_specs(&self) -> Result<BTreeMap<String, FeatureSpec>> {
        self.feature_specs
            .iter()
            .map(|s| {
                let spec = match builtin_spec(s) {
                    Some(spec) => spec,
                    None => FeatureSpec::load(self.resolve(Path::new(s)))?,
                };
                Ok((spec_label(s), spec))
            })
            .collect()
    }

    /// Output root: the configured path or `<name>` beside the config.
    pub fn output_dir(&self) -> PathBuf {
        match &self.output {
            Some(p) => self.resolve(p),
            None => self.base_dir.join(&self.name),
        }
    }
}

/// Loads or generates the panels named by the config. Ground truth is
/// returned for synthetic runs.
pub fn load_panels(cfg: &ExperimentConfig) -> Result<(WeatherPanel, YieldPanel, Option<GroundTruth>)> {
    match (&cfg.data, &cfg.synth) {
        (Some(d), None) => {
            let weather = load_weather_csv(cfg.resolve(&d.weather))?;
            let yields = load_yield_csv(cfg.resolve(&d.yields))?;
            Ok((weather, yields, None))
        }
        (None, Some(s)) => {
            let out = synth_generate(s)?;
            Ok((out.weather, out.yields, Some(out.truth)))
        }
        _ => Err(Error::ConfigInvalid("config needs exactly one of [data] or [synth]".into())),
    }
}
