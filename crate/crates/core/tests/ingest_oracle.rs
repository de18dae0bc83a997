use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use editshock_core::dump::{fixture_row, open_dump_stream, RevisionEvent, UserKind};
use editshock_core::metrics::{aggregate_daily, DailyMetrics};
use editshock_core::profile::{LanguageProfile, SizeClass};
use editshock_core::synth::{gen_revision_log, write_dump, SynthConfig, SynthLanguage};
use flate2::write::GzEncoder;
use flate2::Compression;

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

/// Recount of every daily metric straight from the definitions.
fn brute_force(events: &[RevisionEvent]) -> BTreeMap<NaiveDate, DailyMetrics> {
    let mut out: BTreeMap<NaiveDate, DailyMetrics> = BTreeMap::new();
    let dates: HashSet<NaiveDate> = events.iter().map(|e| e.local_date).collect();
    for date in dates {
        let day: Vec<&RevisionEvent> = events.iter().filter(|e| e.local_date == date).collect();
        let mut per_user: HashMap<u64, u32> = HashMap::new();
        for e in day.iter().filter(|e| e.user_kind == UserKind::Registered) {
            *per_user.entry(e.user_id.unwrap()).or_default() += 1;
        }
        let mut bands = [0u64; 4];
        for n in per_user.values() {
            let i = match n {
                1..=4 => 0,
                5..=24 => 1,
                25..=99 => 2,
                _ => 3,
            };
            bands[i] += 1;
        }
        let newcomers = per_user
            .keys()
            .filter(|u| {
                !events
                    .iter()
                    .any(|e| e.user_kind == UserKind::Registered && e.user_id == Some(**u) && e.local_date < date)
            })
            .count() as u64;
        out.insert(
            date,
            DailyMetrics {
                date,
                edit_volume: day.iter().filter(|e| e.user_kind != UserKind::Bot).count() as u64,
                newcomers,
                identity_reverts: day.iter().filter(|e| e.is_identity_revert).count() as u64,
                editors_band: bands,
                byte_delta_sum: day.iter().map(|e| e.byte_delta).sum(),
            },
        );
    }
    out
}

#[test]
fn compressed_synthetic_dump_matches_recount() {
    let mut lang = SynthLanguage::new("fr", "Europe/Paris", 40.0);
    lang.revert_prob = 0.2;
    lang.bot_fraction = 0.3;
    let config = SynthConfig { seed: 77, languages: vec![lang], start: d(2020, 3, 25), end: d(2020, 4, 3) };
    let log = gen_revision_log(&config, None);
    let events = &log.events[0];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fr.tsv.gz");
    let mut gz = GzEncoder::new(Vec::new(), Compression::fast());
    write_dump(&mut gz, events.iter(), "frwiki").unwrap();
    // Lines the reader must skip or count as errors.
    writeln!(gz, "{}", fixture_row(&[("wiki_db", "frwiki"), ("event_entity", "page"), ("event_type", "create")])).unwrap();
    writeln!(gz, "not\ta\tdump\tline").unwrap();
    std::fs::write(&path, gz.finish().unwrap()).unwrap();

    let profile = LanguageProfile::new("fr", "Europe/Paris", SizeClass::Large);
    let mut stream = open_dump_stream(&path, &profile).unwrap();
    let read: Vec<RevisionEvent> = stream.by_ref().collect::<Result<_, _>>().unwrap();
    let stats = stream.stats();
    assert_eq!(&read, events);
    assert_eq!(stats.lines_read, events.len() as u64 + 2);
    assert_eq!((stats.records_skipped, stats.parse_errors), (1, 1));

    let daily = aggregate_daily(read.iter()).unwrap();
    let expected = brute_force(events);
    assert_eq!(daily.len(), expected.len());
    for m in &daily {
        assert_eq!(m, &expected[&m.date], "{}", m.date);
        if m.edit_volume > 0 {
            let rate = m.revert_rate().unwrap();
            assert_eq!(rate, m.identity_reverts as f64 / m.edit_volume as f64);
        }
    }
    // Bot reverts land in the numerator, bot edits stay out of the volume.
    let bot_reverts = events.iter().filter(|e| e.user_kind == UserKind::Bot && e.is_identity_revert).count();
    assert!(bot_reverts > 0);
    let total_bands: u64 = daily.iter().map(|m| m.editors_band.iter().sum::<u64>()).sum();
    assert!(total_bands > 0);
}
