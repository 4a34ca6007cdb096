use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cv::{Aggregate, RunReport, SeedMetrics};
use crate::error::{Error, Result};

/// Version of the metrics JSON layout.
pub const METRICS_SCHEMA: u32 = 1;

/// The metrics JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub model: String,
    pub database: String,
    pub seeds: Vec<SeedMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsFile {
    pub fn of(report: &RunReport) -> Self {
        MetricsFile {
            schema_version: METRICS_SCHEMA,
            config_hash: report.config_hash.clone(),
            model: report.model.to_string(),
            database: report.database.clone(),
            seeds: report.seeds.clone(),
            aggregate: report.aggregate,
        }
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<model>.metrics.json`, `<model>.speakers.csv` and one
/// `<model>.roc.seed<S>.csv` per seed into `dir`. Returns the paths.
pub fn export_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = report.model.to_string();
    let mut paths = Vec::new();

    let metrics = dir.join(format!("{model}.metrics.json"));
    let json = serde_json::to_string_pretty(&MetricsFile::of(report))
        .map_err(|e| Error::Format(format!("cannot encode metrics: {e}")))?;
    write(&metrics, json.as_bytes())?;
    paths.push(metrics);

    let speakers = dir.join(format!("{model}.speakers.csv"));
    let mut csv = String::from("seed,fold,speaker_id,label,score,n_votes\n");
    for fs in &report.scores {
        for s in &fs.speakers {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fs.seed,
                fs.fold,
                s.speaker_id,
                s.label.index(),
                s.score,
                s.n_votes
            ));
        }
    }
    write(&speakers, csv.as_bytes())?;
    paths.push(speakers);

    for (seed, points) in &report.roc {
        let path = dir.join(format!("{model}.roc.seed{seed}.csv"));
        let mut csv = String::from("fpr,tpr,threshold\n");
        for p in points {
            csv.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        write(&path, csv.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads a metrics JSON, rejecting other schema versions.
pub fn load_metrics(path: &Path) -> Result<MetricsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(METRICS_SCHEMA as u64) {
        return Err(Error::Format(format!(
            "{}: schema version {version:?}, expected {METRICS_SCHEMA}",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads a ROC CSV back into points.
pub fn load_roc(path: &Path) -> Result<Vec<super::metrics::RocPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Model × database table of mean ± std values, one row per metrics file,
/// as (text table, CSV).
pub fn comparison_table(runs: &[MetricsFile]) -> (String, String) {
    let mut text = format!(
        "{:<10} {:<16} {:>17} {:>19}\n",
        "model", "database", "AUC", "accuracy (%)"
    );
    let mut csv = String::from("model,database,auc_mean,auc_std,acc_mean,acc_std\n");
    for r in runs {
        let a = &r.aggregate;
        text.push_str(&format!(
            "{:<10} {:<16} {:>17} {:>19}\n",
            r.model,
            r.database,
            format!("{} ± {}", a.auc_mean, a.auc_std),
            format!("{} ± {}", a.acc_mean, a.acc_std)
        ));
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model, r.database, a.auc_mean, a.auc_std, a.acc_mean, a.acc_std
        ));
    }
    (text, csv)
}
