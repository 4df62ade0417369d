//! Weather indicators: period aggregates, PET, SPI/SPEI, extreme-day counts,
//! and the feature tables assembled from them.

pub mod counts;
pub mod drought;
mod features;
pub mod normal;
pub mod pet;
pub mod quantile;

pub use crate::calendar::{aggregate, IndicatorSeries, Period, PeriodKind, Stat};
pub use counts::{
    count_threshold_days, gewitter_days, percentile_threshold_days, wechselfrost_days, Comparator,
    Side,
};
pub use drought::{spei, spi};
pub use features::{
    build_feature_table, builtin_spec, indicator_series, ColumnMeta, FeatureEntry, FeatureSpec,
    FeatureTable, IndicatorKind, Thresholds, BUILTIN_SPECS,
};
pub use pet::pet_penman_monteith;
