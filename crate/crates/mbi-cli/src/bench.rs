use std::collections::BTreeMap;

use anyhow::{bail, Context};
use mbi::scenario::run_scenario;

pub struct BenchRow {
    pub agents: usize,
    pub median_cycle_nanos: f64,
}

pub fn parse_sizes(raw: &str) -> anyhow::Result<Vec<usize>> {
    let mut sizes = Vec::new();
    for part in raw.split(',') {
        let n: usize = part
            .trim()
            .parse()
            .with_context(|| format!("bad agent count `{part}`"))?;
        if n == 0 {
            bail!("agent counts must be positive");
        }
        sizes.push(n);
    }
    if sizes.len() < 2 {
        bail!("need at least two agent counts to fit a slope");
    }
    Ok(sizes)
}

/// Times the independent-units scenario at each size with the stop rule
/// disabled, so every run executes exactly `cycles` cycles.
pub fn run_bench(sizes: &[usize], cycles: u64, seed: u64) -> anyhow::Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &agents in sizes {
        let mut over = BTreeMap::new();
        over.insert("agents".to_string(), agents as f64);
        over.insert("max_cycles".to_string(), cycles as f64);
        over.insert("epsilon".to_string(), 0.0);
        over.insert("tau".to_string(), -1.0);
        over.insert("record".to_string(), 0.0);
        over.insert("seed".to_string(), seed as f64);
        let report = run_scenario("scaling", &over)?;
        let median = report
            .metric("median_cycle_nanos")
            .context("scaling scenario did not report cycle timings")?;
        rows.push(BenchRow {
            agents,
            median_cycle_nanos: median,
        });
    }
    Ok(rows)
}

/// Least-squares slope of log(median cycle time) against log(agent count):
/// 1.0 is perfectly linear scaling.
pub fn fit_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.agents as f64).ln(), r.median_cycle_nanos.ln()))
        .collect();
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    cov / var
}
