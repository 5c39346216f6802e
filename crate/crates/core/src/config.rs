//! Shared analysis settings, read from a flat TOML file.
//!
//! ```toml
//! zone = "Europe/Dublin"
//! step_minutes = 10
//! max_gap = 6
//! min_completeness = 0.8
//! holidays = ["2016-10-31", "2016-12-26"]
//! endpoint = "https://api.jcdecaux.com/vls/v1/stations"
//! contract = "dublin"
//! ```
//!
//! Every key is optional.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::grid::{GridError, ImputationPolicy, TimeGrid, DEFAULT_MIN_COMPLETENESS};

/// Irish public holidays of 2016, including the 27 December day in lieu.
pub const IRISH_PUBLIC_HOLIDAYS_2016: [&str; 10] = [
    "2016-01-01",
    "2016-03-17",
    "2016-03-28",
    "2016-05-02",
    "2016-06-06",
    "2016-08-01",
    "2016-10-31",
    "2016-12-25",
    "2016-12-26",
    "2016-12-27",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub zone: String,
    pub step_minutes: u32,
    pub max_gap: usize,
    pub min_completeness: f64,
    pub holidays: Vec<NaiveDate>,
    pub endpoint: String,
    pub contract: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            zone: "Europe/Dublin".into(),
            step_minutes: 10,
            max_gap: ImputationPolicy::default().max_gap,
            min_completeness: DEFAULT_MIN_COMPLETENESS,
            holidays: Vec::new(),
            endpoint: "https://api.jcdecaux.com/vls/v1/stations".into(),
            contract: "dublin".into(),
        }
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: AnalysisConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        AnalysisConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        if !(0.0..=1.0).contains(&self.min_completeness) {
            return Err(ConfigError::Invalid(format!("min_completeness {} outside [0, 1]", self.min_completeness)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, GridError> {
        TimeGrid::with_zone_name(&self.zone, self.step_minutes)
    }

    pub fn policy(&self) -> ImputationPolicy {
        ImputationPolicy { max_gap: self.max_gap }
    }

    pub fn holiday_set(&self) -> BTreeSet<NaiveDate> {
        self.holidays.iter().copied().collect()
    }

    pub fn irish_2016_holidays() -> Vec<NaiveDate> {
        IRISH_PUBLIC_HOLIDAYS_2016.iter().map(|d| d.parse().expect("valid date literal")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = AnalysisConfig::from_toml("").unwrap();
        assert_eq!(c, AnalysisConfig::default());
        assert_eq!(c.grid().unwrap().slots_per_day(), 144);
        assert_eq!(c.policy().max_gap, 6);
    }

    #[test]
    fn overrides_and_validation() {
        let c = AnalysisConfig::from_toml("zone = \"UTC\"\nstep_minutes = 30\nholidays = [\"2016-10-31\"]\n").unwrap();
        assert_eq!(c.grid().unwrap().slots_per_day(), 48);
        assert_eq!(c.holiday_set().len(), 1);
        assert!(AnalysisConfig::from_toml("step_minutes = 7").is_err());
        assert!(AnalysisConfig::from_toml("min_completeness = 1.5").is_err());
        assert!(AnalysisConfig::from_toml("zone = \"Nowhere/Else\"").is_err());
        assert!(AnalysisConfig::from_toml("colour = \"orange\"").is_err());
    }

    #[test]
    fn sample_holiday_list_parses() {
        let h = AnalysisConfig::irish_2016_holidays();
        assert_eq!(h.len(), 10);
        assert!(h.contains(&NaiveDate::from_ymd_opt(2016, 10, 31).unwrap()));
    }
}
