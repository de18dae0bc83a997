use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::build_design;
use super::ols::{fit_ols, DidFit};
use super::panel::{build_panel, Transform, WindowSpec, YearSpec};
use crate::metrics::{MetricKind, MetricSeries};

/// Confidence intervals span this many standard errors on each side.
pub const CI_SE_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effect {
    /// Log-scale post-changepoint change.
    pub delta: f64,
    pub se: f64,
}

/// `b6 + b7[l]` and its standard error from the coefficient covariance.
pub fn effect_for_language(fit: &DidFit, language: usize) -> Effect {
    let yp = fit.layout.yp();
    let cov = &fit.ols.covariance;
    match fit.layout.slot(language) {
        None => Effect {
            delta: fit.ols.beta[yp],
            se: cov[(yp, yp)].max(0.0).sqrt(),
        },
        Some(s) => {
            let j = fit.layout.ypl(s);
            let var = cov[(yp, yp)] + cov[(j, j)] + 2.0 * cov[(yp, j)];
            Effect {
                delta: fit.ols.beta[yp] + fit.ols.beta[j],
                se: var.max(0.0).sqrt(),
            }
        }
    }
}

/// Percent of the pre-period level implied by a log effect: `100 · e^δ`.
pub fn effect_to_percent(delta: f64) -> f64 {
    100.0 * delta.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub n: usize,
    pub delta: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_rows: usize,
}

impl EffectRecord {
    pub fn new(n: usize, effect: Effect, n_rows: usize) -> Self {
        EffectRecord {
            n,
            delta: effect.delta,
            se: effect.se,
            ci_lo: effect.delta - CI_SE_MULTIPLIER * effect.se,
            ci_hi: effect.delta + CI_SE_MULTIPLIER * effect.se,
            n_rows,
        }
    }

    /// CI excludes zero.
    pub fn is_significant(&self) -> bool {
        self.ci_lo > 0.0 || self.ci_hi < 0.0
    }

    pub fn percent(&self) -> f64 {
        effect_to_percent(self.delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSeries {
    pub language: String,
    pub metric: MetricKind,
    pub records: Vec<EffectRecord>,
}

/// One language's prepared series and its changepoint (in the treated year).
#[derive(Debug, Clone)]
pub struct LanguageInput<'a> {
    pub code: String,
    pub series: &'a MetricSeries,
    pub changepoint: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRunSpec {
    pub window_len: usize,
    pub baseline_len: usize,
    pub n_windows: usize,
    pub years: YearSpec,
    /// Transform for count metrics; see [`Transform::for_metric`].
    pub transform: Transform,
    /// Index of the reference language within the inputs.
    pub baseline: usize,
    /// Days added to every changepoint.
    #[serde(default)]
    pub changepoint_shift: i64,
}

impl Default for WindowRunSpec {
    fn default() -> Self {
        WindowRunSpec {
            window_len: 7,
            baseline_len: 30,
            n_windows: 120,
            years: YearSpec::default(),
            transform: Transform::Log1p,
            baseline: 0,
            changepoint_shift: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowFailure {
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRun {
    pub series: Vec<EffectSeries>,
    pub failures: Vec<WindowFailure>,
}

fn fit_window(
    languages: &[(&MetricSeries, NaiveDate)],
    spec: &WindowRunSpec,
    transform: Transform,
    n: usize,
) -> Result<(DidFit, usize), String> {
    let window = WindowSpec {
        n,
        window_len: spec.window_len,
        baseline_len: spec.baseline_len,
    };
    let rows = build_panel(languages, &window, &spec.years, transform).map_err(|e| e.to_string())?;
    let design = build_design(&rows, languages.len(), spec.baseline).map_err(|e| e.to_string())?;
    let fit = fit_ols(&design).map_err(|e| e.to_string())?;
    Ok((fit, rows.len()))
}

/// Fits one model per window `n = 0 .. n_windows-1` and collects each
/// language's effect series. A failing window is recorded and skipped.
pub fn run_window_sequence(inputs: &[LanguageInput<'_>], spec: &WindowRunSpec, metric: MetricKind) -> WindowRun {
    let transform = Transform::for_metric(metric, spec.transform);
    let languages: Vec<(&MetricSeries, NaiveDate)> = inputs
        .iter()
        .map(|i| {
            let cp = if spec.changepoint_shift >= 0 {
                i.changepoint + chrono::Days::new(spec.changepoint_shift as u64)
            } else {
                i.changepoint - chrono::Days::new(spec.changepoint_shift.unsigned_abs())
            };
            (i.series, cp)
        })
        .collect();

    let results: Vec<(usize, Result<Vec<EffectRecord>, String>)> = (0..spec.n_windows)
        .into_par_iter()
        .map(|n| {
            let out = fit_window(&languages, spec, transform, n).map(|(fit, n_rows)| {
                (0..inputs.len())
                    .map(|l| EffectRecord::new(n, effect_for_language(&fit, l), n_rows))
                    .collect()
            });
            (n, out)
        })
        .collect();

    let mut series: Vec<EffectSeries> = inputs
        .iter()
        .map(|i| EffectSeries {
            language: i.code.clone(),
            metric,
            records: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    for (n, r) in results {
        match r {
            Ok(records) => {
                for (s, rec) in series.iter_mut().zip(records) {
                    s.records.push(rec);
                }
            }
            Err(message) => failures.push(WindowFailure { n, message }),
        }
    }
    WindowRun { series, failures }
}

/// Labeled analysis variants: the default run and its robustness checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Base,
    /// 14-day treatment windows.
    Window14,
    /// Changepoints moved 7 days earlier.
    CpMinus7,
    /// Changepoints moved 7 days later.
    CpPlus7,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Window14, Variant::CpMinus7, Variant::CpPlus7];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Window14 => "window14",
            Variant::CpMinus7 => "cp-minus7",
            Variant::CpPlus7 => "cp-plus7",
        }
    }

    /// Derives this variant's run parameters from the base ones.
    pub fn apply(self, base: &WindowRunSpec) -> WindowRunSpec {
        let mut spec = base.clone();
        match self {
            Variant::Base => {}
            Variant::Window14 => spec.window_len = 14,
            Variant::CpMinus7 => spec.changepoint_shift = base.changepoint_shift - 7,
            Variant::CpPlus7 => spec.changepoint_shift = base.changepoint_shift + 7,
        }
        spec
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected base, window14, cp-minus7 or cp-plus7)"))
    }
}

/// Reruns the window sequence with 14-day windows and with all changepoints
/// shifted by −7 and +7 days.
pub fn robustness_variants(
    inputs: &[LanguageInput<'_>],
    base: &WindowRunSpec,
    metric: MetricKind,
) -> Vec<(Variant, WindowRun)> {
    [Variant::Window14, Variant::CpMinus7, Variant::CpPlus7]
        .into_iter()
        .map(|v| (v, run_window_sequence(inputs, &v.apply(base), metric)))
        .collect()
}
