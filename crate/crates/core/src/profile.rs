//! Per-language configuration: timezone, size class and mobility weighting.

use std::fmt;
use std::str::FromStr;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::mobility::ChangepointPair;

/// Edition size class by yearly edit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Large,
    Medium,
    Small,
}

impl SizeClass {
    /// Edits per year above which an edition is large.
    pub const LARGE_ABOVE: u64 = 5_000_000;
    /// Edits per year at or above which an edition is at least medium.
    pub const MEDIUM_FROM: u64 = 1_500_000;

    /// Classifies an edition from its total edits in the reference year (2019).
    pub fn from_yearly_edits(edits: u64) -> Self {
        if edits > Self::LARGE_ABOVE {
            SizeClass::Large
        } else if edits >= Self::MEDIUM_FROM {
            SizeClass::Medium
        } else {
            SizeClass::Small
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Large => "large",
            SizeClass::Medium => "medium",
            SizeClass::Small => "small",
        })
    }
}

/// A country contributing to a language's mobility series, weighted by population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryWeight {
    /// ISO 3166-1 alpha-2 code as used by the mobility reports.
    pub country: String,
    /// Population (or any positive weight); normalized before use.
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    /// Wiki language code, e.g. `it`.
    pub code: String,
    /// IANA timezone name used to localize timestamps.
    pub timezone: String,
    pub size_class: SizeClass,
    #[serde(default)]
    pub mobility_countries: Vec<CountryWeight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changepoint_override: Option<ChangepointPair>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("language {code}: unknown timezone {timezone:?}")]
    UnknownTimezone { code: String, timezone: String },
    #[error("language {code}: population weight for {country} must be positive and finite, got {value}")]
    BadWeight {
        code: String,
        country: String,
        value: f64,
    },
}

impl LanguageProfile {
    /// Builds a minimal profile with no mobility countries.
    pub fn new(code: impl Into<String>, timezone: impl Into<String>, size_class: SizeClass) -> Self {
        LanguageProfile {
            code: code.into(),
            timezone: timezone.into(),
            size_class,
            mobility_countries: Vec::new(),
            changepoint_override: None,
        }
    }

    pub fn tz(&self) -> Result<Tz, ProfileError> {
        Tz::from_str(&self.timezone).map_err(|_| ProfileError::UnknownTimezone {
            code: self.code.clone(),
            timezone: self.timezone.clone(),
        })
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        self.tz()?;
        for cw in &self.mobility_countries {
            if !(cw.population.is_finite() && cw.population > 0.0) {
                return Err(ProfileError::BadWeight {
                    code: self.code.clone(),
                    country: cw.country.clone(),
                    value: cw.population,
                });
            }
        }
        Ok(())
    }

    /// Country weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Vec<(String, f64)> {
        let total: f64 = self.mobility_countries.iter().map(|c| c.population).sum();
        self.mobility_countries
            .iter()
            .map(|c| (c.country.clone(), c.population / total))
            .collect()
    }
}
