use std::collections::BTreeMap;

use anyhow::Context;
use mbi::graph::Graph;
use mbi::mechanism::{incentive_audit, pivot_path_integral, vcg_equivalence_audit};
use mbi::scenario::{run_scenario, scenario_graph};
use mbi::vector::Vector;

use crate::emit::fmt_value;

/// Graph plus the action profile to audit: the scenario's starting point,
/// or its converged profile when `converged` is set.
fn mechanism_state(
    scenario: &str,
    overrides: &BTreeMap<String, f64>,
    converged: bool,
) -> anyhow::Result<(Graph<f64>, Vec<Vector<f64>>)> {
    let graph = scenario_graph(scenario, overrides)?
        .with_context(|| format!("scenario `{scenario}` has no mechanism graph to audit"))?;
    let state = if converged {
        let report = run_scenario(scenario, overrides)?;
        let run = report
            .run
            .with_context(|| format!("scenario `{scenario}` produced no run"))?;
        graph
            .slot_agents()
            .iter()
            .map(|&ai| run.final_actions[&graph.agents()[ai].id].clone())
            .collect()
    } else {
        graph.initial_slots()
    };
    Ok((graph, state))
}

/// Does following the delivered signal beat same-sized deviations, for every
/// agent at the probed profile?
pub fn incentive(
    scenario: &str,
    overrides: &BTreeMap<String, f64>,
    eta: f64,
    samples: usize,
    seed: u64,
    converged: bool,
) -> anyhow::Result<bool> {
    let (graph, state) = mechanism_state(scenario, overrides, converged)?;
    let mut all = true;
    for slot in 0..state.len() {
        let rep = incentive_audit(&graph, &state, slot, eta, samples, seed, 1e-9)?;
        println!(
            "slot={slot} signal_drop={} best_alternative_drop={} dominated={}",
            fmt_value(rep.signal_drop),
            fmt_value(rep.best_alternative_drop),
            rep.dominated
        );
        all &= rep.dominated;
    }
    println!("incentive_audit={}", if all { "PASS" } else { "FAIL" });
    Ok(all)
}

/// Path payments vs marginal contributions, plus a re-routed path as a
/// cross-check that the integral is path independent.
pub fn vcg(
    scenario: &str,
    overrides: &BTreeMap<String, f64>,
    steps: usize,
    tol: f64,
    corrupt: Option<usize>,
    converged: bool,
) -> anyhow::Result<bool> {
    let (graph, state) = mechanism_state(scenario, overrides, converged)?;
    let report = vcg_equivalence_audit(&graph, &state, steps, tol, corrupt)?;
    let mut max_reroute = 0.0f64;
    for check in &report.per_agent {
        let detour_point = state[check.slot].scale(1.5);
        let rerouted =
            pivot_path_integral(&graph, &state, check.slot, steps, &[detour_point])?;
        let reroute_gap = (rerouted - check.path_payment).abs();
        max_reroute = max_reroute.max(reroute_gap);
        println!(
            "slot={} path_payment={} marginal_contribution={} abs_err={} reroute_gap={}",
            check.slot,
            fmt_value(check.path_payment),
            fmt_value(check.marginal_contribution),
            fmt_value(check.abs_err),
            fmt_value(reroute_gap)
        );
    }
    let passed = report.passed && max_reroute <= tol;
    println!("max_abs_err={}", fmt_value(report.max_abs_err));
    println!("max_reroute_gap={}", fmt_value(max_reroute));
    println!("vcg_audit={}", if passed { "PASS" } else { "FAIL" });
    Ok(passed)
}

/// Truth-telling audit of the report-indexed payment schedule.
pub fn bic(overrides: &BTreeMap<String, f64>) -> anyhow::Result<bool> {
    let report = run_scenario("bic", overrides)?;
    for (k, v) in &report.metrics {
        println!("{k}={}", fmt_value(*v));
    }
    let verdict = report
        .labels
        .get("verdict")
        .context("bic scenario reported no verdict")?;
    println!("verdict={verdict}");
    let passed = verdict == "Truthful";
    println!("bic_audit={}", if passed { "PASS" } else { "FAIL" });
    Ok(passed)
}
