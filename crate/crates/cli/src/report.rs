//! `results.csv`, `report.json` and `converted_samples.csv`.

use std::path::Path;

use serde_json::{json, Map, Value};
use transmat::metrics::MetricsReport;
use transmat::pipeline::{ExperimentReport, ResultRow, StageLog};

use crate::config::{all_keys, get, RunConfig};
use crate::error::{io_err, write, CliResult};

pub const RESULTS_HEADER: [&str; 8] = ["b", "method", "frequency", "delay", "miss", "score", "accuracy", "seed"];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()).into())
}

/// One line per reference row and grid point, in run order.
pub fn results_csv(report: &ExperimentReport) -> CliResult<Vec<u8>> {
    csv_bytes(
        &RESULTS_HEADER,
        report.rows.iter().map(|r| {
            vec![
                r.b.to_string(),
                r.method.clone(),
                opt(r.frequency),
                opt(r.delay),
                opt(r.miss),
                opt(r.score),
                opt(r.accuracy),
                r.seed.to_string(),
            ]
        }),
    )
}

/// Long format: one line per value of every recorded sample. `row` and
/// `col` are frame and feature for sequences, pixel row and column for images.
pub fn converted_samples_csv(report: &ExperimentReport) -> CliResult<Vec<u8>> {
    let header = ["b", "method", "seed", "sample", "label", "row", "col", "input", "converted", "partner"];
    let mut rows = Vec::new();
    for r in &report.rows {
        for s in &r.samples {
            for (k, ((x, y), p)) in s.input.iter().zip(&s.converted).zip(&s.partner).enumerate() {
                rows.push(vec![
                    r.b.to_string(),
                    r.method.clone(),
                    r.seed.to_string(),
                    s.index.to_string(),
                    s.label.clone(),
                    (k / s.width).to_string(),
                    (k % s.width).to_string(),
                    x.to_string(),
                    y.to_string(),
                    if p.is_nan() { String::new() } else { p.to_string() },
                ]);
            }
        }
    }
    csv_bytes(&header, rows)
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn log_json(l: &StageLog) -> Value {
    json!({
        "stage": l.stage,
        "initial_loss": num(l.initial_loss),
        "train_loss": l.train_loss.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        "val_loss": l.val_loss.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        "best_epoch": l.best_epoch,
        "diverged": l.diverged,
    })
}

fn metrics_json(m: &MetricsReport) -> Value {
    json!({
        "frequency": num(m.frequency),
        "delay_s": num(m.delay_s),
        "miss": num(m.miss),
        "accuracy": m.accuracy.map(num),
        "events": m.events,
        "detected": m.detected,
        "false_episodes": m.false_episodes,
        "follow_frames": m.follow_frames,
        "lane_change_frames": m.lane_change_frames,
    })
}

fn row_json(r: &ResultRow) -> Value {
    json!({
        "b": r.b,
        "method": r.method,
        "seed": r.seed,
        "frequency": r.frequency.map(num),
        "delay": r.delay.map(num),
        "miss": r.miss.map(num),
        "score": r.score.map(num),
        "accuracy": r.accuracy.map(num),
        "counts": r.report.as_ref().map(metrics_json),
        "stages": r.logs.iter().map(log_json).collect::<Vec<_>>(),
    })
}

/// The configuration as nested sections of strings, as a config file would hold them.
pub fn config_json(cfg: &RunConfig) -> Value {
    let mut root = Map::new();
    for (section, key) in all_keys() {
        let v = Value::String(get(cfg, section, key).unwrap_or_default());
        if section.is_empty() {
            root.insert(key.into(), v);
        } else {
            let entry = root.entry(section).or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(m) = entry {
                m.insert(key.into(), v);
            }
        }
    }
    Value::Object(root)
}

pub fn report_json(cfg: &RunConfig, report: &ExperimentReport) -> CliResult<Vec<u8>> {
    let mut echo = cfg.clone();
    echo.experiment = report.config.clone();
    let v = json!({
        "config": config_json(&echo),
        "rows": report.rows.iter().map(row_json).collect::<Vec<_>>(),
        "failures": report.failures.iter().map(|(p, e)| json!({"point": p, "error": e.to_string()})).collect::<Vec<_>>(),
    });
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes all three report files into `dir`, creating it if needed.
pub fn emit_report(cfg: &RunConfig, report: &ExperimentReport, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join("results.csv"), &results_csv(report)?)?;
    write(&dir.join("report.json"), &report_json(cfg, report)?)?;
    write(&dir.join("converted_samples.csv"), &converted_samples_csv(report)?)?;
    Ok(())
}

/// `results.csv` as an aligned text table.
pub fn format_table(csv_text: &[u8]) -> CliResult<String> {
    let mut r = csv::Reader::from_reader(csv_text);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = vec![header];
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|f| match f.parse::<f64>() {
                    Ok(v) if f.contains('.') || f.contains('e') => format!("{v:.3}"),
                    _ => f.to_string(),
                })
                .collect(),
        );
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r.get(c).map_or(0, String::len)).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(f, w)| format!("{f:>w$}")).collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    Ok(s)
}
