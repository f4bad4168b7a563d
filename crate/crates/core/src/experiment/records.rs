//! Result records, their JSON-lines persistence and mean ± std tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::TrainMode;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.tsv";

/// One measured number. Carries no timing so reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// `SL`, `FSL`, `LabelDP(p)`, `DP(σ)`, `Comb(σ,p)`, `baseline-features`
    /// or `baseline-output`.
    pub scenario: String,
    pub mode: TrainMode,
    /// `model`, an attack variant (`exact`, `topk:5`) or `knn:5`.
    pub method: String,
    /// `auc`, `f1`, `accuracy`, `mean_feature_f1` or `label_dp_epsilon`.
    pub metric: String,
    pub feature: Option<String>,
    pub value: f64,
    pub seed: u64,
    pub repetition: usize,
    pub config_hash: String,
}

type RecordKey = (String, String, &'static str, String, String, Option<String>, usize, u64);

/// (scenario, mode, method, metric, feature)
type GroupKey<'a> = (String, &'static str, &'a str, &'a str, Option<&'a str>);

/// (method, metric, feature) → (scenario, mode) → cell
type Cells = BTreeMap<(String, String, String), BTreeMap<(String, &'static str), String>>;

impl ResultRecord {
    /// Identity of a record; a newer record with the same key replaces an
    /// older one on merge.
    fn key(&self) -> RecordKey {
        (
            self.config_hash.clone(),
            self.scenario.clone(),
            mode_str(self.mode),
            self.method.clone(),
            self.metric.clone(),
            self.feature.clone(),
            self.repetition,
            self.seed,
        )
    }
}

fn mode_str(m: TrainMode) -> &'static str {
    match m {
        TrainMode::Sl => "SL",
        TrainMode::Fsl => "FSL",
    }
}

/// Deterministic order: config hash, scenario, mode, method, metric,
/// feature, repetition.
pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by_cached_key(ResultRecord::key);
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Replaces records of `existing` that share a key with one in `new`, adds
/// the rest, and sorts.
pub fn merge_records(existing: Vec<ResultRecord>, new: Vec<ResultRecord>) -> Vec<ResultRecord> {
    let mut map: BTreeMap<RecordKey, ResultRecord> = BTreeMap::new();
    for r in existing.into_iter().chain(new) {
        map.insert(r.key(), r);
    }
    map.into_values().collect()
}

/// Merges `new` into `dir/results.jsonl` and rewrites `dir/summary.tsv`.
pub fn persist(dir: impl AsRef<Path>, new: Vec<ResultRecord>) -> Result<Vec<ResultRecord>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let path = dir.join(RESULTS_FILE);
    let existing = if path.exists() {
        read_records(&path)?
    } else {
        Vec::new()
    };
    let all = merge_records(existing, new);
    write_records(&path, &all)?;
    fs::write(dir.join(SUMMARY_FILE), summary_table(&all))?;
    Ok(all)
}

/// Mean and sample standard deviation (n − 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub mode: TrainMode,
    pub method: String,
    pub metric: String,
    pub feature: Option<String>,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Aggregates repetitions of the same measurement.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey<'_>, (TrainMode, Vec<f64>)> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.scenario.clone(),
                mode_str(r.mode),
                &r.method,
                &r.metric,
                r.feature.as_deref(),
            ))
            .or_insert_with(|| (r.mode, Vec::new()))
            .1
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((scenario, _, method, metric, feature), (mode, values))| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                scenario,
                mode,
                method: method.to_string(),
                metric: metric.to_string(),
                feature: feature.map(str::to_string),
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Tab-separated `mean ± std` table, one row per measurement.
pub fn summary_table(records: &[ResultRecord]) -> String {
    let mut out = String::from("scenario\tmode\tmethod\tmetric\tfeature\tn\tmean\tstd\tmean±std\n");
    for r in summarize(records) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4} ± {:.4}",
            r.scenario,
            r.mode,
            r.method,
            r.metric,
            r.feature.as_deref().unwrap_or("-"),
            r.n,
            r.mean,
            r.std,
            r.mean,
            r.std
        );
    }
    out
}

/// Wide comparison table: one row per (method, metric, feature), one column
/// per (scenario, mode) setting, cells `mean ± std`.
pub fn comparison_table(records: &[ResultRecord]) -> String {
    let rows = summarize(records);
    let mut columns: Vec<(String, &'static str)> =
        rows.iter().map(|r| (r.scenario.clone(), mode_str(r.mode))).collect();
    columns.sort();
    columns.dedup();
    let mut cells = Cells::new();
    for r in &rows {
        cells
            .entry((
                r.method.clone(),
                r.metric.clone(),
                r.feature.clone().unwrap_or_else(|| "-".into()),
            ))
            .or_default()
            .insert(
                (r.scenario.clone(), mode_str(r.mode)),
                format!("{:.4} ± {:.4}", r.mean, r.std),
            );
    }
    let mut out = String::from("method\tmetric\tfeature");
    for (s, m) in &columns {
        let _ = write!(out, "\t{s}/{m}");
    }
    out.push('\n');
    for ((method, metric, feature), row) in &cells {
        let _ = write!(out, "{method}\t{metric}\t{feature}");
        for c in &columns {
            let _ = write!(out, "\t{}", row.get(c).map_or("-", String::as_str));
        }
        out.push('\n');
    }
    out
}
