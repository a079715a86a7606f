//! CSV and text reports of a training run.

use std::fmt::Write as _;

use sspc_core::train::{EventKind, Metrics, RunLog};
use sspc_core::SuperpointGraph;

/// Per-epoch losses, set sizes and training metrics, after `# key=value` header lines.
pub fn run_log_csv(log: &RunLog, header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out.push_str("epoch,L_s,L_es,L_ese,L_final,|S|,|E|,|U|,OA,mIoU,mAcc,OA_es\n");
    for r in &log.epochs {
        let oa_es = r.oa_extended.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch, r.loss_s, r.loss_es, r.loss_ese, r.loss_final, r.supervised, r.extended, r.unsupervised, r.overall_accuracy, r.mean_iou, r.mean_accuracy, oa_es
        )
        .unwrap();
    }
    out
}

/// One row per extension or drop. Drops have source `-1`; `cloud` indexes
/// the input clouds, since superpoint ids are local to their cloud.
pub fn events_csv(log: &RunLog) -> String {
    let mut out = String::from("epoch,event,source,target,class,score,cloud\n");
    for e in &log.events {
        let kind = match e.kind {
            EventKind::Extend => "extend",
            EventKind::Drop => "drop",
        };
        let source = e.source.map_or(-1, |s| s as i64);
        writeln!(out, "{},{},{},{},{},{},{}", e.epoch, kind, source, e.target, e.class, e.score, e.cloud).unwrap();
    }
    out
}

/// Set sizes per epoch with their share of all superpoints, in percent.
pub fn set_sizes_csv(log: &RunLog) -> String {
    let mut out = String::from("epoch,S,E,U,S_pct,E_pct,U_pct\n");
    for r in &log.epochs {
        let total = (r.supervised + r.extended + r.unsupervised) as f64;
        let pct = |x: usize| 100.0 * x as f64 / total;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.supervised,
            r.extended,
            r.unsupervised,
            pct(r.supervised),
            pct(r.extended),
            pct(r.unsupervised)
        )
        .unwrap();
    }
    out
}

/// `(metric, value)` pairs; per-class entries are empty when undefined.
pub fn metric_rows(m: &Metrics) -> Vec<(String, String)> {
    let mut rows = vec![
        ("OA".to_string(), m.overall_accuracy.to_string()),
        ("mIoU".to_string(), m.mean_iou.to_string()),
        ("mAcc".to_string(), m.mean_accuracy.to_string()),
    ];
    for (c, iou) in m.class_iou.iter().enumerate() {
        rows.push((format!("IoU_{c}"), iou.map(|v| v.to_string()).unwrap_or_default()));
    }
    let points: u64 = m.confusion.iter().flatten().sum();
    rows.push(("points".to_string(), points.to_string()));
    rows
}

pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in metric_rows(m) {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

/// `node id size label_or_-1` lines, then `edge i j` lines.
pub fn graph_dump(graph: &SuperpointGraph, labels: &[Option<usize>]) -> String {
    let mut out = String::new();
    for (sp, label) in graph.nodes().iter().zip(labels) {
        let label = label.map_or(-1, |l| l as i64);
        writeln!(out, "node {} {} {}", sp.id, sp.len(), label).unwrap();
    }
    for &(i, j) in graph.edges() {
        writeln!(out, "edge {i} {j}").unwrap();
    }
    out
}
