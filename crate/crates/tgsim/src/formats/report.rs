use serde_json::{json, Map, Value};
use tgsim_core::analysis::MetricsReport;

/// JSON with keys `metrics` (name → value), `histogram`, `scaling`, `fit`.
pub fn report_to_json(r: &MetricsReport) -> String {
    let metrics: Map<String, Value> = r.metrics.iter().map(|m| (m.name.clone(), json!(m.value))).collect();
    let histogram = match &r.histogram {
        Some(h) => json!({ "edges": h.edges, "centers": h.centers(), "mass": h.mass, "samples": h.samples }),
        None => Value::Null,
    };
    let value = json!({
        "metrics": metrics,
        "histogram": histogram,
        "scaling": r.scaling,
        "fit": r.fit,
    });
    let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_to_text(r: &MetricsReport) -> String {
    r.to_string()
}
