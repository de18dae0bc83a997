use std::fmt;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::metrics::{MetricKind, MetricSeries};

/// One regression observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub language_index: usize,
    pub date: NaiveDate,
    /// Treated (pandemic) year.
    pub y: bool,
    /// Treatment window rather than baseline.
    pub p: bool,
    pub log_value: f64,
}

/// Window `n` covers days `cp+n .. cp+n+window_len-1`; the baseline is the
/// `baseline_len` days ending the day before `cp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub n: usize,
    pub window_len: usize,
    pub baseline_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            n: 0,
            window_len: 7,
            baseline_len: 30,
        }
    }
}

impl WindowSpec {
    /// Day offsets relative to the changepoint, baseline first.
    pub fn offsets(&self) -> impl Iterator<Item = (i64, bool)> + '_ {
        let base = (1..=self.baseline_len as i64).rev().map(|k| (-k, false));
        let treat = (0..self.window_len as i64).map(move |k| (self.n as i64 + k, true));
        base.chain(treat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearSpec {
    pub treated: Vec<i32>,
    pub control: Vec<i32>,
}

impl Default for YearSpec {
    fn default() -> Self {
        YearSpec {
            treated: vec![2020],
            control: vec![2018, 2019],
        }
    }
}

impl YearSpec {
    /// Years in ascending order, each with its treated flag.
    pub fn all(&self) -> Vec<(i32, bool)> {
        let mut v: Vec<(i32, bool)> = self
            .treated
            .iter()
            .map(|y| (*y, true))
            .chain(self.control.iter().map(|y| (*y, false)))
            .collect();
        v.sort_unstable();
        v
    }
}

/// How raw metric values become the regression response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `ln(1 + v)`; keeps zero days.
    Log1p,
    /// `ln(v)`; days with `v <= 0` are dropped.
    Log,
    /// Untransformed (signed byte deltas).
    Identity,
}

impl Transform {
    /// Transform for `kind` given the configured count-metric transform.
    /// Revert rates always use `ln(1 + rate)`; byte deltas stay raw.
    pub fn for_metric(kind: MetricKind, counts: Transform) -> Transform {
        match kind {
            MetricKind::RevertRate => Transform::Log1p,
            MetricKind::ByteDelta => Transform::Identity,
            _ => counts,
        }
    }

    pub fn apply(self, v: f64) -> Option<f64> {
        let out = match self {
            Transform::Log1p => (1.0 + v).ln(),
            Transform::Log if v > 0.0 => v.ln(),
            Transform::Log => return None,
            Transform::Identity => v,
        };
        out.is_finite().then_some(out)
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Log1p => "log1p",
            Transform::Log => "log",
            Transform::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PanelError {
    #[error("language {language}: no data for {}", format_dates(.dates))]
    MissingDates {
        language: String,
        dates: Vec<NaiveDate>,
    },
    #[error("window length and baseline length must be at least 1")]
    BadSpec,
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(" and {} more", dates.len() - SHOWN));
    }
    s
}

/// Same month and day in `year`; Feb 29 maps to Feb 28 in non-leap years.
pub fn map_to_year(date: NaiveDate, year: i32) -> NaiveDate {
    date.with_year(year)
        .or_else(|| NaiveDate::from_ymd_opt(year, date.month(), date.day() - 1))
        .expect("only Feb 29 lacks a counterpart")
}

/// Builds the panel for one window.
///
/// `languages` pairs each language's series with its changepoint (a date in
/// the treated year); the slice position is the language index. Days whose
/// value is undefined or rejected by the transform are left out; days outside
/// a series' coverage are an error.
pub fn build_panel(
    languages: &[(&MetricSeries, NaiveDate)],
    spec: &WindowSpec,
    years: &YearSpec,
    transform: Transform,
) -> Result<Vec<PanelRow>, PanelError> {
    if spec.window_len == 0 || spec.baseline_len == 0 {
        return Err(PanelError::BadSpec);
    }
    let year_list = years.all();
    let mut rows = Vec::with_capacity(languages.len() * year_list.len() * (spec.window_len + spec.baseline_len));
    for (language_index, (series, cp)) in languages.iter().enumerate() {
        let mut missing = Vec::new();
        for &(year, treated) in &year_list {
            for (offset, in_window) in spec.offsets() {
                let anchor = if offset >= 0 {
                    *cp + Days::new(offset as u64)
                } else {
                    *cp - Days::new(offset.unsigned_abs())
                };
                let date = map_to_year(anchor, year);
                match series.get(date) {
                    None => missing.push(date),
                    Some(None) => {}
                    Some(Some(v)) => {
                        if let Some(log_value) = transform.apply(v) {
                            rows.push(PanelRow {
                                language_index,
                                date,
                                y: treated,
                                p: in_window,
                                log_value,
                            });
                        }
                    }
                }
            }
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(PanelError::MissingDates {
                language: series.language.clone(),
                dates: missing,
            });
        }
    }
    Ok(rows)
}
