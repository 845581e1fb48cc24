//! Report files: trace, CSVs and a JSON summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::runner::RunReport;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const PAYOUTS_FILE: &str = "payouts.csv";
pub const REPUTATION_FILE: &str = "reputation.csv";
pub const DESIGNS_FILE: &str = "designs.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_owned(), source }
}

pub fn write_trace(lines: &[String], path: &Path) -> Result<(), ReportError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io(path))?);
    for l in lines {
        writeln!(f, "{l}").map_err(io(path))?;
    }
    f.flush().map_err(io(path))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv { path: path.to_owned(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io(path))
}

#[derive(Serialize)]
struct DesignRow {
    j: u64,
    fs_e: Option<f64>,
    r_e: Option<i64>,
    fs_f: Option<f64>,
    r_f: Option<i64>,
    final_state: String,
}

#[derive(Serialize)]
struct PayoutCsv<'a> {
    player: &'a str,
    design: u64,
    phase: String,
    amount: String,
    reason: String,
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

/// Summary document; designs are listed with their `<r_j, FS_f(j)>` tuples.
pub fn summary(report: &RunReport) -> serde_json::Value {
    let designs: Vec<_> = report
        .designs
        .iter()
        .map(|d| {
            let r = d.feedback.as_ref().or(d.evaluation.as_ref()).map(|p| p.result.value());
            json!({
                "j": d.index,
                "valid": d.valid,
                "tampered": d.tampered,
                "collateral": d.collateral,
                "evaluation": d.evaluation,
                "feedback": d.feedback,
                "output": [r, d.feedback.as_ref().map(|f| f.final_score)],
                "final_state": label(&d.final_state),
            })
        })
        .collect();
    json!({
        "seed": report.seed,
        "payment_variant": report.payment_variant.to_string(),
        "reward": report.schedule.reward,
        "penalty": report.schedule.penalty,
        "designs": designs,
        "players": report.players,
        "conservation": report.conservation,
        "event_log": TRACE_FILE,
    })
}

/// Writes every report file into `dir` and records the trace path.
pub fn write_outputs(report: &mut RunReport, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let trace_path = dir.join(TRACE_FILE);
    write_trace(&report.trace, &trace_path)?;

    write_csv(
        &dir.join(PAYOUTS_FILE),
        report.payouts.iter().map(|p| PayoutCsv {
            player: p.player.as_str(),
            design: p.design,
            phase: label(&p.phase),
            amount: p.amount.to_string(),
            reason: label(&p.reason),
        }),
    )?;
    write_csv(&dir.join(REPUTATION_FILE), &report.reputation)?;
    write_csv(
        &dir.join(DESIGNS_FILE),
        report.designs.iter().map(|d| DesignRow {
            j: d.index,
            fs_e: d.evaluation.as_ref().map(|p| p.final_score),
            r_e: d.evaluation.as_ref().map(|p| p.result.value()),
            fs_f: d.feedback.as_ref().map(|p| p.final_score),
            r_f: d.feedback.as_ref().map(|p| p.result.value()),
            final_state: label(&d.final_state),
        }),
    )?;
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary(report)).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    report.event_log = Some(trace_path);
    Ok(())
}
