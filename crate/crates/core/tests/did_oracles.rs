use chrono::{Days, NaiveDate};
use editshock_core::did::{
    build_design, build_panel, effect_for_language, fit_ols, run_window_sequence, LanguageInput, PanelRow,
    Transform, WindowRunSpec, WindowSpec, YearSpec,
};
use editshock_core::metrics::{MetricKind, MetricSeries};
use editshock_core::synth::{edit_volume_series, ShockSpec, SynthConfig, SynthLanguage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;
use rand_distr::{Distribution, Normal};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

/// Balanced panel: every language has 30 baseline and 7 window days in each
/// of three years, with language/year/period cell offsets plus noise.
fn random_panel(rng: &mut StdRng, n_lang: usize, noise: f64) -> Vec<PanelRow> {
    let normal = Normal::new(0.0, noise).unwrap();
    let mut rows = Vec::new();
    for l in 0..n_lang {
        let cell: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        for (yi, year) in [2018, 2019, 2020].into_iter().enumerate() {
            let treated = yi == 2;
            for k in 0..37 {
                let p = k >= 30;
                let c = usize::from(treated) * 2 + usize::from(p);
                rows.push(PanelRow {
                    language_index: l,
                    date: d(year, 2, 1) + Days::new(k as u64),
                    y: treated,
                    p,
                    log_value: 5.0 + cell[c] + normal.sample(rng),
                });
            }
        }
    }
    rows
}

/// Cell means for one language, pooled over years sharing a treated flag.
fn cell_mean(rows: &[PanelRow], l: usize, y: bool, p: bool) -> (f64, usize) {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.language_index == l && r.y == y && r.p == p)
        .map(|r| r.log_value)
        .collect();
    (v.iter().sum::<f64>() / v.len() as f64, v.len())
}

/// Difference-in-differences of cell means and its saturated-model standard
/// error `σ · sqrt(Σ 1/n_cell)`, σ² from within-cell residuals.
fn oracle(rows: &[PanelRow], n_lang: usize, l: usize) -> (f64, f64) {
    let m = |y, p| cell_mean(rows, l, y, p);
    let delta = (m(true, true).0 - m(true, false).0) - (m(false, true).0 - m(false, false).0);
    let mut rss = 0.0;
    for r in rows {
        let (mu, _) = cell_mean(rows, r.language_index, r.y, r.p);
        rss += (r.log_value - mu).powi(2);
    }
    let sigma2 = rss / (rows.len() - 4 * n_lang) as f64;
    let inv_n: f64 = [(true, true), (true, false), (false, true), (false, false)]
        .iter()
        .map(|&(y, p)| 1.0 / m(y, p).1 as f64)
        .sum();
    (delta, (sigma2 * inv_n).sqrt())
}

fn effects(rows: &[PanelRow], n_lang: usize, baseline: usize) -> Vec<(f64, f64)> {
    let fit = fit_ols(&build_design(rows, n_lang, baseline).unwrap()).unwrap();
    (0..n_lang)
        .map(|l| {
            let e = effect_for_language(&fit, l);
            (e.delta, e.se)
        })
        .collect()
}

#[test]
fn saturated_fit_equals_cell_mean_oracle() {
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..20 {
        let rows = random_panel(&mut rng, 12, 0.3);
        assert_eq!(rows.len(), 1332);
        let got = effects(&rows, 12, 10);
        for (l, (delta, se)) in got.iter().enumerate() {
            let (od, ose) = oracle(&rows, 12, l);
            assert!((delta - od).abs() < 1e-9, "language {l}: {delta} vs {od}");
            assert!((se - ose).abs() < 1e-9 * ose.max(1.0), "language {l}: se {se} vs {ose}");
        }
    }
}

#[test]
fn unbalanced_panel_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(2);
    let mut rows = random_panel(&mut rng, 4, 0.5);
    // Drop scattered days, keeping every cell populated.
    let mut i = 0;
    rows.retain(|_| {
        i += 1;
        i % 5 != 0
    });
    let got = effects(&rows, 4, 0);
    for (l, (delta, se)) in got.iter().enumerate() {
        let (od, ose) = oracle(&rows, 4, l);
        assert!((delta - od).abs() < 1e-9);
        assert!((se - ose).abs() < 1e-9);
    }
}

#[test]
fn fitted_values_are_cell_means() {
    let mut rng = StdRng::seed_from_u64(3);
    let rows = random_panel(&mut rng, 3, 1.0);
    let design = build_design(&rows, 3, 1).unwrap();
    let fit = fit_ols(&design).unwrap();
    let fitted = fit.ols.fitted(&design.x);
    for (r, f) in rows.iter().zip(fitted.iter()) {
        assert!((cell_mean(&rows, r.language_index, r.y, r.p).0 - f).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn baseline_choice_does_not_matter(seed in any::<u64>(), n_lang in 2usize..6) {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows = random_panel(&mut rng, n_lang, 0.4);
        let reference = effects(&rows, n_lang, 0);
        for b in 1..n_lang {
            for (a, c) in reference.iter().zip(effects(&rows, n_lang, b)) {
                prop_assert!((a.0 - c.0).abs() < 1e-9 && (a.1 - c.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn row_and_language_order_do_not_matter(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows = random_panel(&mut rng, 4, 0.4);
        let reference = effects(&rows, 4, 0);
        // Reverse rows and relabel languages l -> 3 - l.
        let permuted: Vec<PanelRow> = rows
            .iter()
            .rev()
            .map(|r| PanelRow { language_index: 3 - r.language_index, ..r.clone() })
            .collect();
        let got = effects(&permuted, 4, 3);
        for l in 0..4 {
            prop_assert!((reference[l].0 - got[3 - l].0).abs() <= 1e-12);
            prop_assert!((reference[l].1 - got[3 - l].1).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_shift_leaves_effects_alone(seed in any::<u64>(), c in -50.0f64..50.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows = random_panel(&mut rng, 3, 0.4);
        let shifted: Vec<PanelRow> = rows.iter().map(|r| PanelRow { log_value: r.log_value + c, ..r.clone() }).collect();
        for (a, b) in effects(&rows, 3, 0).iter().zip(effects(&shifted, 3, 0)) {
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }
}

#[test]
fn standard_error_matches_monte_carlo_spread() {
    // Fixed cell structure, fresh noise per replicate.
    let sims = 2000;
    let mut rng = StdRng::seed_from_u64(9);
    let template = random_panel(&mut rng, 2, 0.0);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut deltas = Vec::with_capacity(sims);
    let mut ses = Vec::with_capacity(sims);
    for _ in 0..sims {
        let rows: Vec<PanelRow> = template
            .iter()
            .map(|r| PanelRow { log_value: r.log_value + noise.sample(&mut rng), ..r.clone() })
            .collect();
        let e = effects(&rows, 2, 0)[1];
        deltas.push(e.0);
        ses.push(e.1);
    }
    let mean = deltas.iter().sum::<f64>() / sims as f64;
    let sd = (deltas.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (sims - 1) as f64).sqrt();
    let mean_se = ses.iter().sum::<f64>() / sims as f64;
    assert!((mean_se / sd - 1.0).abs() < 0.05, "mean se {mean_se} vs empirical sd {sd}");
}

fn synth_languages(n: usize) -> Vec<SynthLanguage> {
    (0..n).map(|i| SynthLanguage::new(&format!("l{i}"), "UTC", 1000.0)).collect()
}

fn window_run(seed: u64, shock: Option<&ShockSpec>, n_windows: usize) -> editshock_core::did::WindowRun {
    let config = SynthConfig {
        seed,
        languages: synth_languages(4),
        start: d(2018, 1, 1),
        end: d(2020, 8, 31),
    };
    let (series, _) = edit_volume_series(&config, shock);
    let inputs: Vec<LanguageInput> = series
        .iter()
        .map(|s| LanguageInput { code: s.language.clone(), series: s, changepoint: d(2020, 3, 15) })
        .collect();
    let spec = WindowRunSpec { n_windows, ..WindowRunSpec::default() };
    run_window_sequence(&inputs, &spec, MetricKind::EditVolume)
}

#[test]
fn injected_shock_is_recovered_only_where_injected() {
    let shock = ShockSpec {
        start_date: d(2020, 3, 15),
        end_date: d(2020, 4, 30),
        multiplier: 0.3f64.exp(),
        affected_languages: ["l2".to_string()].into(),
    };
    let run = window_run(5, Some(&shock), 60);
    assert!(run.failures.is_empty());
    for s in &run.series {
        for r in &s.records {
            // Windows fully inside the shock for the shocked language.
            let inside = r.n + 6 <= 46;
            if s.language == "l2" && inside {
                assert!(r.is_significant() && (r.delta - 0.3).abs() < 0.05, "{} {r:?}", s.language);
            }
            if s.language != "l2" {
                assert!(r.delta.abs() < 0.05, "{} {r:?}", s.language);
            }
        }
    }
}

#[test]
fn null_corpus_is_mostly_insignificant() {
    let mut flagged = 0;
    let mut total = 0;
    for seed in 0..10 {
        let run = window_run(100 + seed, None, 120);
        assert!(run.failures.is_empty());
        for s in &run.series {
            for r in s.records.iter().step_by(10) {
                total += 1;
                flagged += usize::from(r.is_significant());
            }
        }
    }
    assert!(flagged as f64 / total as f64 <= 0.10, "{flagged}/{total}");
}

#[test]
fn window_sequence_reports_gaps_per_window() {
    let config = SynthConfig { seed: 1, languages: synth_languages(2), start: d(2018, 1, 1), end: d(2020, 4, 10) };
    let (series, _) = edit_volume_series(&config, None);
    let inputs: Vec<LanguageInput> = series
        .iter()
        .map(|s| LanguageInput { code: s.language.clone(), series: s, changepoint: d(2020, 3, 15) })
        .collect();
    let spec = WindowRunSpec { n_windows: 30, ..WindowRunSpec::default() };
    let run = run_window_sequence(&inputs, &spec, MetricKind::EditVolume);
    // Windows reaching past 2020-04-10 fail; 2020-03-15 + n + 6 <= 2020-04-10 holds for n <= 20.
    assert_eq!(run.failures.iter().map(|f| f.n).collect::<Vec<_>>(), (21..30).collect::<Vec<_>>());
    assert!(run.failures[0].message.contains("2020-04-11"));
    assert!(run.series.iter().all(|s| s.records.len() == 21));
}

#[test]
fn panel_from_series_feeds_the_oracle() {
    // End-to-end from series: the effect equals the oracle computed on the
    // transformed panel rows.
    let config = SynthConfig { seed: 3, languages: synth_languages(3), start: d(2018, 1, 1), end: d(2020, 6, 30) };
    let (series, _) = edit_volume_series(&config, None);
    let langs: Vec<(&MetricSeries, NaiveDate)> = series.iter().map(|s| (s, d(2020, 3, 1))).collect();
    let rows = build_panel(&langs, &WindowSpec { n: 4, ..WindowSpec::default() }, &YearSpec::default(), Transform::Log1p).unwrap();
    assert_eq!(rows.len(), 3 * 3 * 37);
    let got = effects(&rows, 3, 0);
    for (l, (delta, _)) in got.iter().enumerate() {
        assert!((delta - oracle(&rows, 3, l).0).abs() < 1e-9);
    }
}
