use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::pipeline::{EpochResult, EvalReport};
use crate::error::{Error, Result};
use crate::estimator::TrainedModel;
use crate::types::Epoch;

pub const CDF_FILE: &str = "cdf.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const REPORT_FILE: &str = "report.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `horizontal_error,cumulative_fraction`, sorted ascending.
pub fn cdf_csv(report: &EvalReport) -> String {
    let mut he = report.horizontal_errors();
    he.sort_by(f64::total_cmp);
    let n = he.len() as f64;
    let mut out = String::from("horizontal_error,cumulative_fraction\n");
    for (i, e) in he.iter().enumerate() {
        writeln!(out, "{e},{}", (i + 1) as f64 / n).unwrap();
    }
    out
}

pub fn summary_csv(report: &EvalReport) -> String {
    let s = report.error_stats;
    let mut out = String::from(
        "method,selector,oracle_errors,epochs,p50,p95,mean_abs_error_pre,median_abs_error_pre,\
         mean_abs_error_post,median_abs_error_post,nonconverged,solver_failures,regulation_fallbacks\n",
    );
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        report.method,
        report.use_selector,
        report.oracle_errors,
        report.epochs.len(),
        report.p50,
        report.p95,
        opt(s.map(|s| s.mean_abs_pre)),
        opt(s.map(|s| s.median_abs_pre)),
        opt(s.map(|s| s.mean_abs_post)),
        opt(s.map(|s| s.median_abs_post)),
        report.nonconverged,
        report.solver_failures,
        report.regulation_fallbacks,
    )
    .unwrap();
    out
}

/// `epoch_id,mean_abs_error,mean_abs_prediction_error` per epoch.
pub fn trace_csv(rows: &[EpochResult]) -> String {
    let mut out = String::from("epoch_id,region,mean_abs_error,mean_abs_prediction_error\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.epoch_id,
            r.region_id,
            r.mean_abs_error,
            opt(r.mean_abs_prediction_error)
        )
        .unwrap();
    }
    out
}

pub fn epochs_csv(rows: &[EpochResult]) -> String {
    let mut out = String::from("epoch_id,region,horizontal_error,status,used,regulation_fallback\n");
    for r in rows {
        let status = serde_json::to_value(r.status).unwrap();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch_id,
            r.region_id,
            r.horizontal_error,
            status.as_str().unwrap_or_default(),
            r.used,
            r.regulation_fallback
        )
        .unwrap();
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `cdf.csv`, `summary.csv`, `trace.csv`, `epochs.csv` and `report.json`.
pub fn emit_reports(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json("report", e))?;
    Ok(vec![
        write(out_dir, CDF_FILE, &cdf_csv(report))?,
        write(out_dir, SUMMARY_FILE, &summary_csv(report))?,
        write(out_dir, TRACE_FILE, &trace_csv(&report.epochs))?,
        write(out_dir, EPOCHS_FILE, &epochs_csv(&report.epochs))?,
        write(out_dir, REPORT_FILE, &(json + "\n"))?,
    ])
}

/// Per-epoch prediction quality of `model` on labeled epochs.
pub fn trace_rows(model: &TrainedModel, epochs: &[Epoch]) -> Result<Vec<EpochResult>> {
    use rayon::prelude::*;
    epochs
        .par_iter()
        .map(|epoch| {
            let errors = epoch
                .truth_errors()
                .ok_or_else(|| Error::Data(format!("epoch {} has no truth errors", epoch.epoch_id)))?;
            let predicted = model.params.predict(epoch)?;
            let n = errors.len() as f64;
            Ok(EpochResult {
                epoch_id: epoch.epoch_id,
                region_id: epoch.region_id.clone(),
                horizontal_error: f64::NAN,
                status: super::pipeline::FixStatus::Converged,
                used: errors.len(),
                regulation_fallback: false,
                mean_abs_error: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
                mean_abs_prediction_error: Some(
                    errors.iter().zip(&predicted).map(|(e, h)| (e - h).abs()).sum::<f64>() / n,
                ),
            })
        })
        .collect()
}
