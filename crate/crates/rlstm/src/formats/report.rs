//! Evaluation reports: a `key=value` block and a JSON record using the same
//! column names.

use std::fmt::Write as _;

use rlstm_core::eval::{EvalReport, RECALL_NOTE};
use serde_json::{json, Map, Value};

/// `Acc=0.751800` style lines in table column order, then counts and the
/// recall reading.
pub fn format_report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    for (name, value) in report.columns() {
        writeln!(out, "{name}={value:.6}").unwrap();
    }
    writeln!(out, "samples={}", report.samples).unwrap();
    writeln!(out, "groups={}", report.groups.len()).unwrap();
    writeln!(out, "note={RECALL_NOTE}").unwrap();
    out
}

pub fn report_json(report: &EvalReport, manifest: &str) -> Value {
    let mut metrics = Map::new();
    for (name, value) in report.columns() {
        metrics.insert(name, json!(value));
    }
    let ranks: Vec<Value> = report
        .groups
        .iter()
        .map(|g| json!({"group": g.group_id, "size": g.size, "rank": g.rank}))
        .collect();
    json!({
        "metrics": metrics,
        "samples": report.samples,
        "groups": report.groups.len(),
        "note": RECALL_NOTE,
        "ranks": ranks,
        "manifest": manifest,
    })
}
