//! Deterministic inputs shared by the benchmarks.

use chrono::NaiveDate;
use editshock_core::did::{build_design, build_panel, Design, Transform, WindowSpec, YearSpec};
use editshock_core::metrics::MetricSeries;
use editshock_core::synth::{edit_volume_series, gen_mobility, gen_revision_log, write_dump, SynthConfig, SynthLanguage};
use editshock_core::MetricKind;

pub const LANGUAGES: [(&str, &str); 12] = [
    ("en", "UTC"),
    ("fr", "Europe/Paris"),
    ("de", "Europe/Berlin"),
    ("it", "Europe/Rome"),
    ("sv", "Europe/Stockholm"),
    ("ko", "Asia/Seoul"),
    ("ja", "Asia/Tokyo"),
    ("nl", "Europe/Amsterdam"),
    ("sr", "Europe/Belgrade"),
    ("no", "Europe/Oslo"),
    ("da", "Europe/Copenhagen"),
    ("fi", "Europe/Helsinki"),
];

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

/// Uncompressed dump text for one language over `days` days.
pub fn dump_text(lambda: f64, days: u64) -> Vec<u8> {
    let cfg = SynthConfig {
        seed: 11,
        languages: vec![SynthLanguage::new("fr", "Europe/Paris", lambda)],
        start: d(2020, 1, 1),
        end: d(2020, 1, 1) + chrono::Days::new(days - 1),
    };
    let log = gen_revision_log(&cfg, None);
    let mut out = Vec::new();
    write_dump(&mut out, log.events[0].iter(), "frwiki").unwrap();
    out
}

/// Twelve-language edit volume series covering 2018-2020.
pub fn volume_series() -> Vec<MetricSeries> {
    let cfg = SynthConfig {
        seed: 5,
        languages: LANGUAGES.iter().map(|(c, tz)| SynthLanguage::new(c, tz, 500.0)).collect(),
        start: d(2018, 1, 1),
        end: d(2020, 12, 31),
    };
    edit_volume_series(&cfg, None).0
}

/// Design matrix for window `n` of the twelve-language panel.
pub fn window_design(series: &[MetricSeries], n: usize) -> Design {
    let cp = d(2020, 3, 16);
    let langs: Vec<(&MetricSeries, NaiveDate)> = series.iter().map(|s| (s, cp)).collect();
    let spec = WindowSpec { n, ..WindowSpec::default() };
    let rows = build_panel(&langs, &spec, &YearSpec::default(), Transform::for_metric(MetricKind::EditVolume, Transform::Log1p)).unwrap();
    build_design(&rows, series.len(), 10).unwrap()
}

/// Mobility values with a drop on day 70.
pub fn mobility_values(days: usize) -> Vec<f64> {
    gen_mobility(d(2020, 1, 1), days, d(2020, 3, 11), -45.0, 3.0, 9).into_iter().map(|(_, v)| v).collect()
}
