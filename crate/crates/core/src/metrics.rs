//! Daily activity metrics and their smoothing and outlier policies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dump::{RevisionEvent, UserKind};

/// Registered-editor activity bands by daily edit count: 1–4, 5–24, 25–99, 100+.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "1_4")]
    B1To4,
    #[serde(rename = "5_24")]
    B5To24,
    #[serde(rename = "25_99")]
    B25To99,
    #[serde(rename = "100plus")]
    B100Plus,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::B1To4, Band::B5To24, Band::B25To99, Band::B100Plus];

    pub fn of(daily_edits: u32) -> Option<Band> {
        match daily_edits {
            0 => None,
            1..=4 => Some(Band::B1To4),
            5..=24 => Some(Band::B5To24),
            25..=99 => Some(Band::B25To99),
            _ => Some(Band::B100Plus),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Suffix used in column and metric names.
    pub fn suffix(self) -> &'static str {
        match self {
            Band::B1To4 => "1_4",
            Band::B5To24 => "5_24",
            Band::B25To99 => "25_99",
            Band::B100Plus => "100plus",
        }
    }

    /// Activity-level label used by the statistics REST API.
    pub fn api_label(self) -> &'static str {
        match self {
            Band::B1To4 => "1..4-edits",
            Band::B5To24 => "5..24-edits",
            Band::B25To99 => "25..99-edits",
            Band::B100Plus => "100..-edits",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub date: NaiveDate,
    /// Non-bot article revisions.
    pub edit_volume: u64,
    /// Registered users whose first article edit falls on this date.
    pub newcomers: u64,
    /// Identity reverts by any actor, bots included.
    pub identity_reverts: u64,
    /// Registered non-bot editors per activity band.
    pub editors_band: [u64; 4],
    /// Byte delta summed over all revisions, bots included.
    pub byte_delta_sum: i64,
}

impl DailyMetrics {
    pub fn empty(date: NaiveDate) -> Self {
        DailyMetrics {
            date,
            edit_volume: 0,
            newcomers: 0,
            identity_reverts: 0,
            editors_band: [0; 4],
            byte_delta_sum: 0,
        }
    }

    /// `identity_reverts / edit_volume`, undefined on days without human edits.
    pub fn revert_rate(&self) -> Option<f64> {
        (self.edit_volume > 0).then(|| self.identity_reverts as f64 / self.edit_volume as f64)
    }

    pub fn active_editors(&self) -> u64 {
        self.editors_band.iter().sum()
    }

    pub fn value(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::EditVolume => Some(self.edit_volume as f64),
            MetricKind::Newcomers => Some(self.newcomers as f64),
            MetricKind::RevertRate => self.revert_rate(),
            MetricKind::Editors(b) => Some(self.editors_band[b.index()] as f64),
            MetricKind::ByteDelta => Some(self.byte_delta_sum as f64),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("event for {date} arrived after that day was closed (latest date seen {latest}); input must be sorted by time")]
    OutOfOrder { date: NaiveDate, latest: NaiveDate },
    #[error("event for language {found:?} in a {expected:?} aggregation")]
    MixedLanguages { expected: String, found: String },
}

#[derive(Default)]
struct DayAccum {
    edit_volume: u64,
    identity_reverts: u64,
    byte_delta_sum: i64,
    edits_by_user: HashMap<u64, u32>,
}

impl DayAccum {
    fn close(self, date: NaiveDate) -> DailyMetrics {
        let mut editors_band = [0u64; 4];
        for &n in self.edits_by_user.values() {
            if let Some(b) = Band::of(n) {
                editors_band[b.index()] += 1;
            }
        }
        DailyMetrics {
            date,
            edit_volume: self.edit_volume,
            newcomers: 0,
            identity_reverts: self.identity_reverts,
            editors_band,
            byte_delta_sum: self.byte_delta_sum,
        }
    }
}

/// Sequential fold of one language's events into daily metrics.
///
/// Per-user daily counts are kept only for days that may still receive
/// events: a day closes once an event at least `tolerance_days` later has
/// been seen. An event for a closed day is an ordering error.
///
/// Newcomers are attributed at [`finish`](Self::finish) from each registered
/// user's earliest article edit over the whole input.
pub struct DailyAggregator {
    language: Option<String>,
    tolerance_days: u64,
    open: BTreeMap<NaiveDate, DayAccum>,
    closed: BTreeMap<NaiveDate, DailyMetrics>,
    first_edit: HashMap<u64, NaiveDate>,
    latest: Option<NaiveDate>,
}

impl Default for DailyAggregator {
    fn default() -> Self {
        Self::new(0)
    }
}

impl DailyAggregator {
    pub fn new(tolerance_days: u64) -> Self {
        DailyAggregator {
            language: None,
            tolerance_days,
            open: BTreeMap::new(),
            closed: BTreeMap::new(),
            first_edit: HashMap::new(),
            latest: None,
        }
    }

    pub fn push(&mut self, event: &RevisionEvent) -> Result<(), AggregateError> {
        match &self.language {
            None => self.language = Some(event.language.clone()),
            Some(l) if *l != event.language => {
                return Err(AggregateError::MixedLanguages {
                    expected: l.clone(),
                    found: event.language.clone(),
                })
            }
            Some(_) => {}
        }
        let date = event.local_date;
        if let Some(latest) = self.latest {
            if self.closed.contains_key(&date)
                || date < latest.checked_sub_days(Days::new(self.tolerance_days)).unwrap_or(date)
            {
                return Err(AggregateError::OutOfOrder { date, latest });
            }
        }
        if self.latest.is_none_or(|l| date > l) {
            self.latest = Some(date);
            self.close_before(date);
        }

        let day = self.open.entry(date).or_default();
        day.byte_delta_sum += event.byte_delta;
        if event.is_identity_revert {
            day.identity_reverts += 1;
        }
        match event.user_kind {
            UserKind::Bot => {}
            UserKind::Anonymous => day.edit_volume += 1,
            UserKind::Registered => {
                day.edit_volume += 1;
                let uid = event.user_id.expect("registered events carry a user id");
                *day.edits_by_user.entry(uid).or_insert(0) += 1;
                self.first_edit
                    .entry(uid)
                    .and_modify(|d| *d = (*d).min(date))
                    .or_insert(date);
            }
        }
        Ok(())
    }

    fn close_before(&mut self, latest: NaiveDate) {
        let Some(horizon) = latest.checked_sub_days(Days::new(self.tolerance_days)) else {
            return;
        };
        let keep = self.open.split_off(&horizon);
        for (date, acc) in std::mem::replace(&mut self.open, keep) {
            self.closed.insert(date, acc.close(date));
        }
    }

    /// Number of distinct registered non-bot users seen so far.
    pub fn seen_users(&self) -> usize {
        self.first_edit.len()
    }

    /// Closes all days and returns a gap-free series.
    ///
    /// `coverage` widens the output to at least the given inclusive range,
    /// filling days without events with zeros.
    pub fn finish(mut self, coverage: Option<(NaiveDate, NaiveDate)>) -> Vec<DailyMetrics> {
        for (date, acc) in std::mem::take(&mut self.open) {
            self.closed.insert(date, acc.close(date));
        }
        let mut newcomers: HashMap<NaiveDate, u64> = HashMap::new();
        for d in self.first_edit.values() {
            *newcomers.entry(*d).or_insert(0) += 1;
        }

        let first = self.closed.keys().next().copied();
        let last = self.closed.keys().next_back().copied();
        let (start, end) = match (first, last, coverage) {
            (Some(f), Some(l), Some((cs, ce))) => (f.min(cs), l.max(ce)),
            (Some(f), Some(l), None) => (f, l),
            (None, None, Some(range)) => range,
            _ => return Vec::new(),
        };
        start
            .iter_days()
            .take_while(|d| *d <= end)
            .map(|d| {
                let mut m = self.closed.remove(&d).unwrap_or_else(|| DailyMetrics::empty(d));
                m.newcomers = newcomers.get(&d).copied().unwrap_or(0);
                m
            })
            .collect()
    }
}

/// Aggregates one language's events (sorted by time) into daily metrics.
pub fn aggregate_daily<'a, I>(events: I) -> Result<Vec<DailyMetrics>, AggregateError>
where
    I: IntoIterator<Item = &'a RevisionEvent>,
{
    let mut agg = DailyAggregator::new(0);
    for e in events {
        agg.push(e)?;
    }
    Ok(agg.finish(None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MetricKind {
    EditVolume,
    Newcomers,
    RevertRate,
    Editors(Band),
    ByteDelta,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::EditVolume,
        MetricKind::Newcomers,
        MetricKind::RevertRate,
        MetricKind::Editors(Band::B1To4),
        MetricKind::Editors(Band::B5To24),
        MetricKind::Editors(Band::B25To99),
        MetricKind::Editors(Band::B100Plus),
        MetricKind::ByteDelta,
    ];

    /// Count metrics are materialized as explicit zeros on empty days.
    pub fn is_count(self) -> bool {
        !matches!(self, MetricKind::RevertRate | MetricKind::ByteDelta)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::EditVolume => f.write_str("edit_volume"),
            MetricKind::Newcomers => f.write_str("newcomers"),
            MetricKind::RevertRate => f.write_str("revert_rate"),
            MetricKind::Editors(b) => write!(f, "editors_{}", b.suffix()),
            MetricKind::ByteDelta => f.write_str("byte_delta"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

impl From<MetricKind> for String {
    fn from(k: MetricKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for MetricKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Gap-free daily series of one metric for one language.
///
/// `values[i]` belongs to `start + i` days; `None` marks an undefined value
/// (revert rate on a day without human edits).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub language: String,
    pub kind: MetricKind,
    pub start: NaiveDate,
    pub values: Vec<Option<f64>>,
    pub outlier_flags: BTreeSet<NaiveDate>,
}

impl MetricSeries {
    pub fn new(language: impl Into<String>, kind: MetricKind, start: NaiveDate, values: Vec<Option<f64>>) -> Self {
        MetricSeries {
            language: language.into(),
            kind,
            start,
            values,
            outlier_flags: BTreeSet::new(),
        }
    }

    pub fn from_daily(language: &str, kind: MetricKind, daily: &[DailyMetrics]) -> Self {
        let start = daily.first().map(|d| d.date).unwrap_or_default();
        debug_assert!(daily.windows(2).all(|w| w[1].date == w[0].date.succ_opt().unwrap()));
        MetricSeries::new(language, kind, start, daily.iter().map(|d| d.value(kind)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Days::new(i as u64)
    }

    pub fn end(&self) -> Option<NaiveDate> {
        (!self.is_empty()).then(|| self.date_at(self.len() - 1))
    }

    /// Value on `date`: `None` outside coverage, `Some(None)` when undefined.
    pub fn get(&self, date: NaiveDate) -> Option<Option<f64>> {
        let offset = date.signed_duration_since(self.start).num_days();
        usize::try_from(offset).ok().and_then(|i| self.values.get(i).copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, Option<f64>)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (self.date_at(i), *v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        MetricSeries {
            values: self.values.iter().map(|v| v.map(|x| x * c)).collect(),
            ..self.clone()
        }
    }
}

/// Trailing mean over `w` days; the first `w - 1` dates are dropped.
///
/// A window containing an undefined value is undefined.
pub fn rolling_mean(series: &MetricSeries, w: usize) -> MetricSeries {
    assert!(w >= 1, "window length must be at least 1");
    let mut out = MetricSeries {
        start: series.date_at(w - 1),
        values: Vec::with_capacity(series.len().saturating_sub(w - 1)),
        ..series.clone()
    };
    if series.len() < w {
        out.values.clear();
        return out;
    }
    out.outlier_flags.clear();
    out.values = series
        .values
        .windows(w)
        .map(|win| {
            win.iter()
                .try_fold(0.0, |acc, v| v.map(|x| acc + x))
                .map(|s| s / w as f64)
        })
        .collect();
    out
}

/// Trailing mean over plain values; output has `len - w + 1` entries.
pub fn rolling_mean_values(values: &[f64], w: usize) -> Vec<f64> {
    assert!(w >= 1, "window length must be at least 1");
    values.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}

/// Median of a non-empty slice; averages the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Raw median absolute deviation around `center` (no consistency constant).
pub fn mad(values: &[f64], center: f64) -> Option<f64> {
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

/// Replaces values further than `k · MAD` from their calendar month's median
/// by that median, recording the dates in `outlier_flags`.
///
/// Each month is swept until no new value qualifies. Already flagged dates
/// are not reconsidered, so applying the policy to its own output is a no-op.
/// Months with MAD = 0 replace every value that differs from the median.
pub fn monthly_mad_replace(series: &MetricSeries, k: f64) -> MetricSeries {
    assert!(k > 0.0, "MAD threshold must be positive");
    let mut out = series.clone();
    let mut months: BTreeMap<(i32, u32), Vec<usize>> = BTreeMap::new();
    for i in 0..out.len() {
        if out.values[i].is_some() {
            let d = out.date_at(i);
            months.entry((d.year(), d.month())).or_default().push(i);
        }
    }
    for idx in months.values() {
        loop {
            let vals: Vec<f64> = idx.iter().map(|&i| out.values[i].unwrap()).collect();
            let m = median(&vals).expect("month has values");
            let spread = mad(&vals, m).expect("month has values");
            let limit = k * spread;
            let mut changed = false;
            for &i in idx {
                let d = out.date_at(i);
                let x = out.values[i].unwrap();
                if !out.outlier_flags.contains(&d) && (x - m).abs() > limit {
                    out.values[i] = Some(m);
                    out.outlier_flags.insert(d);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    out
}

pub const METRICS_CSV_HEADER: [&str; 11] = [
    "date",
    "edit_volume",
    "newcomers",
    "identity_reverts",
    "revert_rate",
    "editors_1_4",
    "editors_5_24",
    "editors_25_99",
    "editors_100plus",
    "byte_delta_sum",
    "outlier_replaced",
];

/// Writes daily metrics as CSV. `outliers` maps a date to the metrics the
/// outlier policy replaced on it; they are listed `;`-separated.
pub fn write_metrics_csv<W: io::Write>(
    writer: W,
    daily: &[DailyMetrics],
    outliers: &BTreeMap<NaiveDate, Vec<MetricKind>>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_CSV_HEADER)?;
    for d in daily {
        let flags = outliers
            .get(&d.date)
            .map(|ks| ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.write_record([
            d.date.to_string(),
            d.edit_volume.to_string(),
            d.newcomers.to_string(),
            d.identity_reverts.to_string(),
            d.revert_rate().map(|r| r.to_string()).unwrap_or_default(),
            d.editors_band[0].to_string(),
            d.editors_band[1].to_string(),
            d.editors_band[2].to_string(),
            d.editors_band[3].to_string(),
            d.byte_delta_sum.to_string(),
            flags,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}: bad value {value:?} in column {column}")]
    Value {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: date {date} does not follow {previous}")]
    Gap {
        row: usize,
        date: NaiveDate,
        previous: NaiveDate,
    },
}

/// Reads a CSV written by [`write_metrics_csv`]. The revert-rate and
/// outlier columns are derived data and ignored.
pub fn read_metrics_csv<R: io::Read>(reader: R) -> Result<Vec<DailyMetrics>, MetricsCsvError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_CSV_HEADER {
        return Err(MetricsCsvError::Header(header));
    }
    let mut out: Vec<DailyMetrics> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        fn field<T: FromStr>(rec: &csv::StringRecord, row: usize, i: usize) -> Result<T, MetricsCsvError> {
            let v = rec.get(i).unwrap_or("");
            v.parse().map_err(|_| MetricsCsvError::Value {
                row,
                column: METRICS_CSV_HEADER[i],
                value: v.to_owned(),
            })
        }
        let m = DailyMetrics {
            date: field(&rec, row, 0)?,
            edit_volume: field(&rec, row, 1)?,
            newcomers: field(&rec, row, 2)?,
            identity_reverts: field(&rec, row, 3)?,
            editors_band: [
                field(&rec, row, 5)?,
                field(&rec, row, 6)?,
                field(&rec, row, 7)?,
                field(&rec, row, 8)?,
            ],
            byte_delta_sum: field(&rec, row, 9)?,
        };
        if let Some(prev) = out.last() {
            if prev.date.succ_opt() != Some(m.date) {
                return Err(MetricsCsvError::Gap {
                    row,
                    date: m.date,
                    previous: prev.date,
                });
            }
        }
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dump::utc;
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn ev(day: u32, kind: UserKind, uid: Option<u64>, revert: bool, bytes: i64) -> RevisionEvent {
        let ts = utc(2020, 3, day, 12, 0, 0);
        RevisionEvent {
            language: "xx".into(),
            timestamp: ts,
            local_date: ts.date_naive(),
            user_kind: kind,
            user_id: uid,
            is_identity_revert: revert,
            byte_delta: bytes,
            page_id: 1,
        }
    }

    #[test]
    fn empty_days_are_zero() {
        let events = [
            ev(1, UserKind::Anonymous, None, false, 1),
            ev(3, UserKind::Anonymous, None, false, 1),
        ];
        let daily = aggregate_daily(&events).unwrap();
        assert_eq!(daily.len(), 3);
        assert_eq!(daily[1], DailyMetrics::empty(date(2020, 3, 2)));
        assert_eq!(daily[1].revert_rate(), None);
    }

    #[test]
    fn first_edit_and_anonymous_edit() {
        let events = [
            ev(1, UserKind::Registered, Some(5), false, 10),
            ev(1, UserKind::Anonymous, None, false, -3),
        ];
        let daily = aggregate_daily(&events).unwrap();
        assert_eq!(daily.len(), 1);
        let d = &daily[0];
        assert_eq!(d.edit_volume, 2);
        assert_eq!(d.newcomers, 1);
        assert_eq!(d.editors_band, [1, 0, 0, 0]);
        assert_eq!(d.byte_delta_sum, 7);
    }

    #[test]
    fn newcomer_counted_on_first_day_only() {
        let events = [
            ev(1, UserKind::Registered, Some(9), false, 0),
            ev(5, UserKind::Registered, Some(9), false, 0),
        ];
        let daily = aggregate_daily(&events).unwrap();
        let nc: Vec<u64> = daily.iter().map(|d| d.newcomers).collect();
        assert_eq!(nc, [1, 0, 0, 0, 0]);
    }

    #[test]
    fn revert_rate_counts_bot_reverts_over_human_edits() {
        let mut events = Vec::new();
        for i in 0..10 {
            events.push(ev(2, UserKind::Registered, Some(i), i == 0, 1));
        }
        events.push(ev(2, UserKind::Bot, Some(100), true, 50));
        events.push(ev(2, UserKind::Bot, Some(100), true, 50));
        let daily = aggregate_daily(&events).unwrap();
        assert_eq!(daily[0].edit_volume, 10);
        assert_eq!(daily[0].identity_reverts, 3);
        assert_eq!(daily[0].revert_rate(), Some(0.3));
        assert_eq!(daily[0].byte_delta_sum, 110);
    }

    #[test]
    fn bands_partition_editors() {
        let mut events = Vec::new();
        for (uid, n) in [(1u64, 1), (2, 4), (3, 5), (4, 24), (5, 25), (6, 99), (7, 100), (8, 150)] {
            for _ in 0..n {
                events.push(ev(4, UserKind::Registered, Some(uid), false, 0));
            }
        }
        let daily = aggregate_daily(&events).unwrap();
        assert_eq!(daily[0].editors_band, [2, 2, 2, 2]);
        assert_eq!(daily[0].active_editors(), 8);
    }

    #[test]
    fn out_of_order_input_is_rejected() {
        let events = [
            ev(3, UserKind::Anonymous, None, false, 0),
            ev(1, UserKind::Anonymous, None, false, 0),
        ];
        assert_eq!(
            aggregate_daily(&events),
            Err(AggregateError::OutOfOrder {
                date: date(2020, 3, 1),
                latest: date(2020, 3, 3)
            })
        );
        // Within tolerance the late event is accepted.
        let mut agg = DailyAggregator::new(2);
        for e in &events {
            agg.push(e).unwrap();
        }
        assert_eq!(agg.finish(None).iter().map(|d| d.edit_volume).sum::<u64>(), 2);
    }

    #[test]
    fn coverage_pads_series() {
        let events = [ev(2, UserKind::Anonymous, None, false, 0)];
        let mut agg = DailyAggregator::default();
        agg.push(&events[0]).unwrap();
        let daily = agg.finish(Some((date(2020, 3, 1), date(2020, 3, 4))));
        assert_eq!(daily.len(), 4);
        assert_eq!(daily[1].edit_volume, 1);
    }

    fn series(vals: &[f64]) -> MetricSeries {
        MetricSeries::new("xx", MetricKind::EditVolume, date(2020, 1, 1), vals.iter().map(|v| Some(*v)).collect())
    }

    #[test]
    fn rolling_mean_examples() {
        let s = rolling_mean(&series(&[0.0, 7.0, 14.0]), 2);
        assert_eq!(s.values, vec![Some(3.5), Some(10.5)]);
        assert_eq!(s.start, date(2020, 1, 2));
        let c = rolling_mean(&series(&[4.0; 10]), 7);
        assert!(c.values.iter().all(|v| *v == Some(4.0)));
        assert!(rolling_mean(&series(&[1.0, 2.0]), 3).is_empty());
    }

    #[test]
    fn rolling_mean_propagates_undefined() {
        let mut s = series(&[1.0, 2.0, 3.0, 4.0]);
        s.values[1] = None;
        let r = rolling_mean(&s, 2);
        assert_eq!(r.values, vec![None, None, Some(3.5)]);
    }

    #[test]
    fn mad_examples() {
        let out = monthly_mad_replace(&series(&[10.0, 10.0, 10.0, 10.0, 100.0]), 5.0);
        assert_eq!(out.values, series(&[10.0; 5]).values);
        assert_eq!(out.outlier_flags, BTreeSet::from([date(2020, 1, 5)]));

        let same = series(&[3.0; 6]);
        assert_eq!(monthly_mad_replace(&same, 5.0), same);

        let ramp = series(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(monthly_mad_replace(&ramp, 5.0), ramp);
    }

    #[test]
    fn mad_is_per_month() {
        // 31 January values of 1, then February values of 1000 with one 1.
        let mut vals = vec![1.0; 31];
        vals.extend(std::iter::repeat_n(1000.0, 28));
        vals[40] = 1.0;
        let out = monthly_mad_replace(&series(&vals), 5.0);
        assert_eq!(out.outlier_flags, BTreeSet::from([date(2020, 2, 10)]));
        assert_eq!(out.values[40], Some(1000.0));
        assert_eq!(out.values[0], Some(1.0));
    }

    #[test]
    fn mad_skips_undefined() {
        let mut s = series(&[10.0, 10.0, 10.0, 100.0]);
        s.values[0] = None;
        let out = monthly_mad_replace(&s, 5.0);
        assert_eq!(out.values, vec![None, Some(10.0), Some(10.0), Some(10.0)]);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let events = [
            ev(1, UserKind::Registered, Some(5), true, 10),
            ev(3, UserKind::Anonymous, None, false, -3),
        ];
        let daily = aggregate_daily(&events).unwrap();
        let outliers = BTreeMap::from([(date(2020, 3, 1), vec![MetricKind::EditVolume, MetricKind::Newcomers])]);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &daily, &outliers).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,edit_volume,newcomers,identity_reverts,revert_rate,"));
        assert!(text.contains("2020-03-01,1,1,1,1,1,0,0,0,10,edit_volume;newcomers"));
        // Undefined revert rate is an empty cell.
        assert!(text.contains("2020-03-02,0,0,0,,0,0,0,0,0,"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), daily);
    }

    #[test]
    fn metric_names_round_trip() {
        for k in MetricKind::ALL {
            assert_eq!(k.to_string().parse::<MetricKind>(), Ok(k));
        }
    }

    proptest! {
        #[test]
        fn rolling_mean_matches_brute_force(vals in proptest::collection::vec(-1e3f64..1e3, 0..60), w in 1usize..10) {
            let out = rolling_mean(&series(&vals), w);
            prop_assert_eq!(out.len(), vals.len().saturating_sub(w - 1));
            for (i, v) in out.values.iter().enumerate() {
                let mut s = 0.0;
                for x in &vals[i..i + w] { s += x; }
                prop_assert!((v.unwrap() - s / w as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn rolling_mean_commutes_with_scaling(vals in proptest::collection::vec(-1e3f64..1e3, 7..40), c in -10f64..10.0) {
            let s = series(&vals);
            let a = rolling_mean(&s.scaled(c), 7);
            let b = rolling_mean(&s, 7).scaled(c);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x.unwrap() - y.unwrap()).abs() <= 1e-9 * (1.0 + y.unwrap().abs()));
            }
        }

        #[test]
        fn aggregation_conserves_and_partitions(
            raw in proptest::collection::vec((1u32..8, 0u8..3, 0u64..6, any::<bool>(), -50i64..50), 0..200)
        ) {
            let mut raw = raw;
            raw.sort_by_key(|r| r.0);
            let events: Vec<_> = raw.iter().map(|&(day, k, uid, rev, b)| {
                let kind = [UserKind::Anonymous, UserKind::Registered, UserKind::Bot][k as usize];
                ev(day, kind, (kind != UserKind::Anonymous).then_some(uid), rev, b)
            }).collect();
            let daily = aggregate_daily(&events).unwrap();
            let human = events.iter().filter(|e| e.is_human()).count() as u64;
            prop_assert_eq!(daily.iter().map(|d| d.edit_volume).sum::<u64>(), human);
            prop_assert_eq!(daily.iter().map(|d| d.byte_delta_sum).sum::<i64>(), events.iter().map(|e| e.byte_delta).sum::<i64>());
            let mut cumulative = 0u64;
            let mut seen = std::collections::HashSet::new();
            for d in &daily {
                let active: std::collections::HashSet<u64> = events.iter()
                    .filter(|e| e.local_date == d.date && e.user_kind == UserKind::Registered)
                    .map(|e| e.user_id.unwrap()).collect();
                prop_assert_eq!(d.active_editors(), active.len() as u64);
                seen.extend(active);
                cumulative += d.newcomers;
                prop_assert_eq!(cumulative, seen.len() as u64);
                prop_assert!(d.edit_volume >= d.newcomers);
            }
        }

        #[test]
        fn mad_replace_is_idempotent(vals in proptest::collection::vec(-1e3f64..1e3, 1..90), k in 0.5f64..8.0) {
            let once = monthly_mad_replace(&series(&vals), k);
            let twice = monthly_mad_replace(&once, k);
            prop_assert_eq!(once, twice);
        }
    }
}
