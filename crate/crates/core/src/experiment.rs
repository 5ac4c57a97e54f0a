//! Multi-run experiments, report persistence, run comparison and curve export.

use crate::config::TrainConfig;
use crate::error::{config, Error, Result};
use crate::events::EventStream;
use crate::metrics::{mann_whitney_u, summarize, Alternative, MannWhitney, Summary};
use crate::train::{train_and_evaluate, MetricsReport, RunOutcome};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use tgn_seal_autograd::checkpoint::{read_checkpoint, write_checkpoint};
use tgn_seal_autograd::Tensor;

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ApSeen,
    ApUnseen,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ap_seen" => Ok(Metric::ApSeen),
            "ap_unseen" => Ok(Metric::ApUnseen),
            other => Err(config(format!("unknown metric `{other}` (expected ap_seen or ap_unseen)"))),
        }
    }

    pub fn of(self, report: &MetricsReport) -> Option<f64> {
        match self {
            Metric::ApSeen => report.ap_seen,
            Metric::ApUnseen => report.ap_unseen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: String,
    pub seeds: Vec<u64>,
    pub ap_seen: Option<Summary>,
    pub ap_unseen: Option<Summary>,
}

pub fn summarize_reports(reports: &[MetricsReport]) -> ExperimentSummary {
    let collect = |m: Metric| -> Vec<f64> { reports.iter().filter_map(|r| m.of(r)).collect() };
    ExperimentSummary {
        model: reports.first().map(|r| r.model.clone()).unwrap_or_default(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        ap_seen: summarize(&collect(Metric::ApSeen)),
        ap_unseen: summarize(&collect(Metric::ApUnseen)),
    }
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn write_report(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    fs::write(path, report_json(report)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes `report.json` and `checkpoint.txt` into `dir`.
pub fn persist_run(dir: impl AsRef<Path>, run: &RunOutcome) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_report(dir.join(REPORT_FILE), &run.report)?;
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join(CHECKPOINT_FILE))?);
    write_checkpoint(&mut out, &run.checkpoint)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f64>)>> {
    let file = fs::File::open(path)?;
    Ok(read_checkpoint(std::io::BufReader::new(file))?)
}

/// Runs seeds `cfg.seed, cfg.seed + 1, …`. With `out`, each run is persisted
/// as soon as it finishes (one run directly in `out`, several in `seed_<n>`
/// subdirectories plus `summary.json`), so a failure keeps earlier runs.
pub fn run_experiment(
    stream: &EventStream,
    cfg: &TrainConfig,
    n_runs: usize,
    out: Option<&Path>,
) -> Result<(Vec<MetricsReport>, ExperimentSummary)> {
    if n_runs == 0 {
        return Err(config("n_runs must be at least 1"));
    }
    let mut reports = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i as u64;
        let run = train_and_evaluate(stream, &run_cfg)?;
        if let Some(out) = out {
            let dir = if n_runs == 1 {
                out.to_path_buf()
            } else {
                out.join(format!("seed_{}", run_cfg.seed))
            };
            persist_run(&dir, &run)?;
        }
        reports.push(run.report);
    }
    let summary = summarize_reports(&reports);
    if let (Some(out), true) = (out, n_runs > 1) {
        fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok((reports, summary))
}

/// `report.json` in `dir` itself or in its immediate subdirectories, sorted
/// by path.
pub fn find_reports(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut found = Vec::new();
    let direct = dir.join(REPORT_FILE);
    if direct.is_file() {
        found.push(direct);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let p = sub.join(REPORT_FILE);
        if p.is_file() {
            found.push(p);
        }
    }
    if found.is_empty() {
        return Err(config(format!("no {REPORT_FILE} under {}", dir.display())));
    }
    Ok(found)
}

pub fn metric_values(reports: &[MetricsReport], metric: Metric) -> Result<Vec<f64>> {
    reports
        .iter()
        .map(|r| {
            metric.of(r).ok_or_else(|| {
                Error::Empty(format!("run with seed {} has no {metric:?} value", r.seed))
            })
        })
        .collect()
}

/// Mann–Whitney U comparison of a metric between two sets of runs.
pub fn compare_dirs(a: impl AsRef<Path>, b: impl AsRef<Path>, metric: Metric) -> Result<MannWhitney> {
    let load = |d: &Path| -> Result<Vec<MetricsReport>> {
        find_reports(d)?.iter().map(read_report).collect()
    };
    let xs = metric_values(&load(a.as_ref())?, metric)?;
    let ys = metric_values(&load(b.as_ref())?, metric)?;
    mann_whitney_u(&xs, &ys, Alternative::TwoSided)
}

pub const CURVE_HEADER: [&str; 3] = ["epoch_or_batch", "series", "value"];

/// Rows `batch,train_loss,value` then `epoch,val_ap,value`, zero-based.
pub fn write_curves_csv<W: Write>(out: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for (i, v) in report.loss_curve.iter().enumerate() {
        w.write_record([i.to_string(), "train_loss".into(), v.to_string()])?;
    }
    for (i, v) in report.val_ap_curve.iter().enumerate() {
        w.write_record([i.to_string(), "val_ap".into(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
