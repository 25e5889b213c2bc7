//! Classification of directions and runs, rate checks and partition checks.

mod landscape;
mod partition;
mod rates;
mod regime;

pub use landscape::{
    classify_direction, limit_loss_for, LandscapeCase, LandscapeReport, DEFAULT_SCALE_GRID,
};
pub use partition::{verify_partition_claims, Partition, PartitionLabel, PartitionReport};
pub use rates::{
    fit_rate, norm_growth, variance_window, verify_variance_bound, RateFit, RateModel, WindowCheck,
    DEFAULT_RATIO_CAP, DEFAULT_VARIANCE_CAP, DEFAULT_WINDOW_FRACTION,
};
pub use regime::{
    classify_trajectory, direction_error_series, ensemble_direction_error_series,
    ensemble_norm_series, global_target, global_target_points, norm_series, unit, Regime,
    RegimeReport, DEFAULT_FLIP_THRESHOLD, MIN_RECORDS,
};

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything an analysis run produced, as written to `report.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rates: Vec<NamedFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<WindowCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_growth: Option<WindowCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partitions: Option<PartitionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// A rate fit together with the quantity it was fitted to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub quantity: String,
    pub fit: RateFit,
}

impl Report {
    pub fn new() -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            ..Default::default()
        }
    }

    /// False if any contained pass flag is false.
    pub fn all_pass(&self) -> bool {
        self.rates.iter().all(|r| r.fit.holds)
            && self.variance.as_ref().is_none_or(|v| v.pass)
            && self.norm_growth.as_ref().is_none_or(|v| v.pass)
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
