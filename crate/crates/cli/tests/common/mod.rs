#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use editshock_cli::PipelineConfig;
use serde_json::{json, Value};

pub fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

pub fn language(code: &str, tz: &str) -> Value {
    json!({"code": code, "timezone": tz, "size_class": "small"})
}

pub fn with_override(mut lang: Value, mobility: &str, normality: Option<&str>) -> Value {
    lang["changepoint_override"] = json!({"mobility_date": mobility, "normality_date": normality});
    lang
}

pub fn with_countries(mut lang: Value, countries: &[(&str, f64)]) -> Value {
    lang["mobility_countries"] = countries.iter().map(|(c, p)| json!({"country": c, "population": p})).collect();
    lang
}

/// Config rooted at `root` with dumps in `root/dumps` and outputs in `root/out`.
pub fn config_value(root: &Path, languages: Vec<Value>, baseline: &str) -> Value {
    json!({
        "schema_version": 1,
        "snapshot": "2021-01",
        "baseline_language": baseline,
        "languages": languages,
        "paths": {
            "dumps": root.join("dumps"),
            "mobility_csv": root.join("mobility.csv"),
            "cache_dir": root.join("cache"),
            "output_dir": root.join("out"),
        },
    })
}

pub fn write_config(root: &Path, value: &Value) -> PathBuf {
    fs::create_dir_all(root.join("dumps")).unwrap();
    let path = root.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

pub fn load(root: &Path, value: &Value) -> PipelineConfig {
    PipelineConfig::load(&write_config(root, value)).unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}
