//! Mobility reports, population-weighted aggregation, and changepoint detection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::metrics::rolling_mean_values;
use crate::profile::LanguageProfile;

/// Location categories reported by the Google Community Mobility Reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityCategory {
    RetailAndRecreation,
    GroceryAndPharmacy,
    Parks,
    TransitStations,
    Workplaces,
    Residential,
}

impl MobilityCategory {
    pub const ALL: [MobilityCategory; 6] = [
        MobilityCategory::RetailAndRecreation,
        MobilityCategory::GroceryAndPharmacy,
        MobilityCategory::Parks,
        MobilityCategory::TransitStations,
        MobilityCategory::Workplaces,
        MobilityCategory::Residential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MobilityCategory::RetailAndRecreation => "retail_and_recreation",
            MobilityCategory::GroceryAndPharmacy => "grocery_and_pharmacy",
            MobilityCategory::Parks => "parks",
            MobilityCategory::TransitStations => "transit_stations",
            MobilityCategory::Workplaces => "workplaces",
            MobilityCategory::Residential => "residential",
        }
    }

    pub fn column(self) -> String {
        format!("{}_percent_change_from_baseline", self.name())
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MobilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MobilityCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        MobilityCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown mobility category {s:?}"))
    }
}

/// One country-level row: percent change from the pre-pandemic baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityObservation {
    pub country: String,
    pub date: NaiveDate,
    pct_change: [Option<f64>; 6],
}

impl MobilityObservation {
    pub fn new(country: impl Into<String>, date: NaiveDate) -> Self {
        MobilityObservation {
            country: country.into(),
            date,
            pct_change: [None; 6],
        }
    }

    pub fn with(mut self, category: MobilityCategory, value: f64) -> Self {
        self.pct_change[category.index()] = Some(value);
        self
    }

    pub fn get(&self, category: MobilityCategory) -> Option<f64> {
        self.pct_change[category.index()]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MobilityError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("mobility CSV lacks required column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: bad {column} value {value:?}")]
    Value {
        row: usize,
        column: String,
        value: String,
    },
}

/// Parses the global Google Community Mobility Reports CSV, keeping only
/// country-level rows (empty sub-region and metro fields).
pub fn load_google_mobility<R: io::Read>(reader: R) -> Result<Vec<MobilityObservation>, MobilityError> {
    let mut r = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let req = |name: &str| col(name).ok_or_else(|| MobilityError::MissingColumn(name.to_owned()));
    let country_col = req("country_region_code")?;
    let date_col = req("date")?;
    let region_cols: Vec<usize> = ["sub_region_1", "sub_region_2", "metro_area"]
        .iter()
        .filter_map(|n| col(n))
        .collect();
    if !region_cols.iter().any(|&i| &headers[i] == "sub_region_1") {
        return Err(MobilityError::MissingColumn("sub_region_1".into()));
    }
    let category_cols: Vec<(MobilityCategory, usize)> = MobilityCategory::ALL
        .iter()
        .filter_map(|c| col(&c.column()).map(|i| (*c, i)))
        .collect();

    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if region_cols.iter().any(|&i| !rec.get(i).unwrap_or("").is_empty()) {
            continue;
        }
        let date_field = rec.get(date_col).unwrap_or("");
        let date = date_field.parse().map_err(|_| MobilityError::Value {
            row,
            column: "date".into(),
            value: date_field.to_owned(),
        })?;
        let mut obs = MobilityObservation::new(rec.get(country_col).unwrap_or(""), date);
        for &(cat, i) in &category_cols {
            let v = rec.get(i).unwrap_or("");
            if v.is_empty() {
                continue;
            }
            let x: f64 = v.parse().map_err(|_| MobilityError::Value {
                row,
                column: cat.column(),
                value: v.to_owned(),
            })?;
            if x.is_finite() {
                obs = obs.with(cat, x);
            }
        }
        out.push(obs);
    }
    Ok(out)
}

/// A population-weighted series plus the dates where weights had to be
/// renormalized because a country had no value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedSeries {
    pub values: BTreeMap<NaiveDate, f64>,
    pub warnings: Vec<String>,
}

impl WeightedSeries {
    pub fn points(&self) -> Vec<(NaiveDate, f64)> {
        self.values.iter().map(|(d, v)| (*d, *v)).collect()
    }
}

/// `value(d) = Σ wᵢ · pctᵢ(d)` over the profile's countries with weights
/// normalized to one. Countries missing on a date are dropped for that date
/// and the remaining weights renormalized.
pub fn aggregate_weighted(
    observations: &[MobilityObservation],
    profile: &LanguageProfile,
    category: MobilityCategory,
) -> WeightedSeries {
    let weights: HashMap<String, f64> = profile.normalized_weights().into_iter().collect();
    let mut by_date: BTreeMap<NaiveDate, Vec<(&str, f64)>> = BTreeMap::new();
    for o in observations {
        if let (Some(_), Some(v)) = (weights.get(&o.country), o.get(category)) {
            by_date.entry(o.date).or_default().push((&o.country, v));
        }
    }
    let mut out = WeightedSeries::default();
    for (date, vals) in by_date {
        let wsum: f64 = vals.iter().map(|(c, _)| weights[*c]).sum();
        let value = vals.iter().map(|(c, v)| weights[*c] * v).sum::<f64>() / wsum;
        if vals.len() < weights.len() {
            let mut missing: Vec<&str> = weights
                .keys()
                .map(String::as_str)
                .filter(|c| !vals.iter().any(|(vc, _)| vc == c))
                .collect();
            missing.sort_unstable();
            out.warnings.push(format!(
                "{}: {date}: no {category} value for {}; weights renormalized",
                profile.code,
                missing.join(",")
            ));
        }
        out.values.insert(date, value);
    }
    out
}

/// Prefix sums for O(1) L2 segment costs.
struct SegmentCost {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl SegmentCost {
    fn new(series: &[f64]) -> Self {
        // Centering keeps the prefix sums of squares well conditioned.
        let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
        let mut s1 = Vec::with_capacity(series.len() + 1);
        let mut s2 = Vec::with_capacity(series.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for x in series {
            let c = x - mean;
            s1.push(s1.last().unwrap() + c);
            s2.push(s2.last().unwrap() + c * c);
        }
        SegmentCost { s1, s2 }
    }

    /// Sum of squared deviations from the mean over `[a, b)`.
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let s = self.s1[b] - self.s1[a];
        (self.s2[b] - self.s2[a] - s * s / n).max(0.0)
    }

    /// Split of `[a, b)` with the largest cost reduction; earliest on ties.
    fn best_split(&self, a: usize, b: usize, min_segment: usize) -> Option<(usize, f64)> {
        if b - a < 2 * min_segment {
            return None;
        }
        let whole = self.cost(a, b);
        let mut best: Option<(usize, f64)> = None;
        for k in a + min_segment..=b - min_segment {
            let gain = whole - self.cost(a, k) - self.cost(k, b);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        best
    }
}

/// Greedy binary segmentation under an L2 cost.
///
/// Each round splits the segment whose best admissible split lowers the total
/// within-segment sum of squares the most, until `max_changepoints` are placed
/// or no split helps. A changepoint `k` means a new segment starts at index `k`;
/// every segment keeps at least `min_segment` points.
pub fn binary_segment(series: &[f64], max_changepoints: usize, min_segment: usize) -> Vec<usize> {
    let min_segment = min_segment.max(1);
    if series.len() < 2 * min_segment || max_changepoints == 0 {
        return Vec::new();
    }
    let costs = SegmentCost::new(series);
    let tolerance = 1e-12 * series.iter().map(|x| x * x).sum::<f64>();
    let mut segments = vec![(0usize, series.len())];
    let mut changepoints = Vec::new();
    while changepoints.len() < max_changepoints {
        let mut best: Option<(usize, usize, f64)> = None;
        for (si, &(a, b)) in segments.iter().enumerate() {
            if let Some((k, gain)) = costs.best_split(a, b, min_segment) {
                if best.is_none_or(|(_, bk, bg)| gain > bg || (gain == bg && k < bk)) {
                    best = Some((si, k, gain));
                }
            }
        }
        match best {
            Some((si, k, gain)) if gain > tolerance && gain > 0.0 => {
                let (a, b) = segments[si];
                segments[si] = (a, k);
                segments.insert(si + 1, (k, b));
                changepoints.push(k);
            }
            _ => break,
        }
    }
    changepoints.sort_unstable();
    changepoints
}

/// Total L2 cost of a segmentation; used to check monotonicity.
pub fn segmentation_cost(series: &[f64], changepoints: &[usize]) -> f64 {
    let costs = SegmentCost::new(series);
    let mut bounds = vec![0];
    bounds.extend_from_slice(changepoints);
    bounds.push(series.len());
    bounds.windows(2).map(|w| costs.cost(w[0], w[1])).sum()
}

/// Mobility and normality dates delimiting the restriction period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangepointPair {
    pub mobility_date: NaiveDate,
    #[serde(default)]
    pub normality_date: Option<NaiveDate>,
}

impl ChangepointPair {
    pub fn new(mobility_date: NaiveDate, normality_date: Option<NaiveDate>) -> Result<Self, ChangepointError> {
        if normality_date.is_some_and(|n| n <= mobility_date) {
            return Err(ChangepointError::NormalityBeforeMobility);
        }
        Ok(ChangepointPair {
            mobility_date,
            normality_date,
        })
    }

    /// Both dates moved by `days` (may be negative).
    pub fn shifted(&self, days: i64) -> Self {
        let shift = |d: NaiveDate| {
            if days >= 0 {
                d + Days::new(days as u64)
            } else {
                d - Days::new(days.unsigned_abs())
            }
        };
        ChangepointPair {
            mobility_date: shift(self.mobility_date),
            normality_date: self.normality_date.map(shift),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChangepointError {
    #[error("no downward mobility changepoint between {from} and {to}")]
    NotFound { from: NaiveDate, to: NaiveDate },
    #[error("mobility series is empty")]
    EmptySeries,
    #[error("normality date must be after the mobility date")]
    NormalityBeforeMobility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangepointParams {
    pub category: MobilityCategory,
    pub smoothing_window: usize,
    pub min_segment: usize,
    pub max_changepoints: usize,
    pub search_start: NaiveDate,
    pub search_end: NaiveDate,
    /// Normality band half-width as a fraction of 100 percentage points.
    pub band: f64,
}

impl Default for ChangepointParams {
    fn default() -> Self {
        ChangepointParams {
            category: MobilityCategory::Workplaces,
            smoothing_window: 7,
            min_segment: 7,
            max_changepoints: 4,
            search_start: NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
            search_end: NaiveDate::from_ymd_opt(2020, 5, 31).unwrap(),
            band: 0.10,
        }
    }
}

/// Rolling mean over `w` points, each value dated at the window's center.
pub fn centered_rolling_mean(points: &[(NaiveDate, f64)], w: usize) -> Vec<(NaiveDate, f64)> {
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let offset = (w.max(1) - 1) / 2;
    rolling_mean_values(&values, w.max(1))
        .into_iter()
        .enumerate()
        .map(|(i, v)| (points[i + offset].0, v))
        .collect()
}

/// Among binary-segmentation changepoints dated inside `search_window`, the
/// one whose following segment mean falls furthest below the preceding one.
pub fn detect_mobility_changepoint(
    points: &[(NaiveDate, f64)],
    search_window: (NaiveDate, NaiveDate),
    max_changepoints: usize,
    min_segment: usize,
) -> Result<NaiveDate, ChangepointError> {
    if points.is_empty() {
        return Err(ChangepointError::EmptySeries);
    }
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let cps = binary_segment(&values, max_changepoints, min_segment);
    let mean = |a: usize, b: usize| values[a..b].iter().sum::<f64>() / (b - a) as f64;
    let mut best: Option<(usize, f64)> = None;
    for (i, &k) in cps.iter().enumerate() {
        let date = points[k].0;
        if date < search_window.0 || date > search_window.1 {
            continue;
        }
        let lo = if i == 0 { 0 } else { cps[i - 1] };
        let hi = cps.get(i + 1).copied().unwrap_or(values.len());
        let shift = mean(k, hi) - mean(lo, k);
        if shift < 0.0 && best.is_none_or(|(_, s)| shift < s) {
            best = Some((k, shift));
        }
    }
    best.map(|(k, _)| points[k].0).ok_or(ChangepointError::NotFound {
        from: search_window.0,
        to: search_window.1,
    })
}

/// Earliest date after `mobility_date` from which the mean of the rest of the
/// series lies within `baseline ± half_width`.
pub fn detect_normality_changepoint(
    points: &[(NaiveDate, f64)],
    mobility_date: NaiveDate,
    baseline: f64,
    half_width: f64,
) -> Option<NaiveDate> {
    let n = points.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + points[i].1;
    }
    (0..n)
        .filter(|&i| points[i].0 > mobility_date)
        .find(|&i| {
            let m = suffix[i] / (n - i) as f64;
            (m - baseline).abs() <= half_width
        })
        .map(|i| points[i].0)
}

/// Smooths a weighted series and detects both changepoints.
///
/// Mobility reports express change relative to a pre-pandemic baseline, so the
/// normality band is centered on zero with a half-width of `band · 100` points.
pub fn detect_changepoints(
    points: &[(NaiveDate, f64)],
    params: &ChangepointParams,
) -> Result<ChangepointPair, ChangepointError> {
    let smooth = centered_rolling_mean(points, params.smoothing_window);
    let mobility = detect_mobility_changepoint(
        &smooth,
        (params.search_start, params.search_end),
        params.max_changepoints,
        params.min_segment,
    )?;
    let normality = detect_normality_changepoint(&smooth, mobility, 0.0, params.band * 100.0);
    ChangepointPair::new(mobility, normality)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangepointMethod {
    Detected,
    Override,
}

/// One entry of the changepoints JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointRecord {
    pub language: String,
    pub mobility_date: Option<NaiveDate>,
    pub normality_date: Option<NaiveDate>,
    pub method: ChangepointMethod,
    pub category: MobilityCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChangepointRecord {
    pub fn pair(&self) -> Option<ChangepointPair> {
        self.mobility_date.map(|m| ChangepointPair {
            mobility_date: m,
            normality_date: self.normality_date,
        })
    }
}
