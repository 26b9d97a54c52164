use mbi::mechanism::RunReport;
use mbi::scenario::ScenarioReport;

/// Per-cycle records as CSV. Loss and signal columns use the shortest
/// round-trippable float form, so identical runs yield identical bytes;
/// wall_nanos is the only column that varies between repeats.
pub fn trace_csv(report: &RunReport<f64>) -> String {
    let mut out = String::from("cycle,loss,grad_norm,total_effort,wall_nanos\n");
    for c in &report.cycles {
        out.push_str(&format!(
            "{},{:e},{:e},{},{}\n",
            c.cycle, c.loss, c.grad_norm, c.total_effort, c.wall_nanos
        ));
    }
    out
}

/// Whole numbers print as integers, everything else in exponent form; both
/// parse back with `f64::from_str`.
pub fn fmt_value(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

pub fn print_scenario(report: &ScenarioReport) {
    println!("scenario: {}", report.name);
    println!("-- params --");
    for (k, v) in &report.resolved {
        println!("{k}={}", fmt_value(*v));
    }
    println!("-- metrics --");
    for (k, v) in &report.metrics {
        println!("{k}={}", fmt_value(*v));
    }
    if !report.labels.is_empty() {
        println!("-- labels --");
        for (k, v) in &report.labels {
            println!("{k}={v}");
        }
    }
}
