//! Named experiment setups with pinned, overridable parameters.
//!
//! Every scenario is reproducible from its name, its parameter map, and a
//! seed. `catalog()` lists what exists, `run_scenario` resolves overrides
//! against the declared parameters (unknown keys are errors, not typos to
//! ignore) and returns a uniform report: the mechanism run where there is
//! one, plus flat metric and label maps for everything else.

use std::collections::BTreeMap;

use crate::agent::AgentBehavior;
use crate::bayes::{
    asymmetric_info_experiment, bic_audit, myerson_transfer_schedule, BayesError, BicVerdict,
    QuadraticFamily, ReportPolicy, TypePrior,
};
use crate::expr::{ExprBuilder, ExprError, NodeRef};
use crate::graph::{Graph, GraphBuilder, GraphError};
use crate::mechanism::{MechanismError, Run, RunParams, RunReport};
use crate::vector::Vector;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{name}`; available: {available}")]
    UnknownScenario { name: String, available: String },
    #[error("scenario `{scenario}` has no parameter `{param}`; available: {available}")]
    UnknownParam {
        scenario: String,
        param: String,
        available: String,
    },
    #[error("parameter `{param}` = {value} is invalid: {reason}")]
    InvalidParam {
        param: String,
        value: f64,
        reason: String,
    },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
}

/// One overridable knob: name, default, and what it means.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub doc: &'static str,
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamSpec>,
}

fn p(name: &'static str, default: f64, doc: &'static str) -> ParamSpec {
    ParamSpec { name, default, doc }
}

pub fn catalog() -> Vec<ScenarioSpec> {
    vec![
        ScenarioSpec {
            name: "assembly_line",
            summary: "Two coupled units chase a shared output target; one pays a private cost.",
            params: vec![
                p("y_star", 10.0, "shared output target"),
                p("lambda", 0.5, "private cost curvature of the first unit"),
                p("eta", 0.4, "gradient-follower step size"),
                p("start1", 1.0, "initial action of the first unit"),
                p("start2", 1.0, "initial action of the second unit"),
                p("epsilon", 1e-10, "loss-change stopping tolerance"),
                p("tau", 1e-6, "signal-norm stopping tolerance"),
                p("max_cycles", 200.0, "cycle budget"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "quadratic_n",
            summary: "N units with heterogeneous quadratic costs split one production target.",
            params: vec![
                p("agents", 100.0, "number of units"),
                p("y_star", 50.0, "shared output target"),
                p("eta", 0.0, "step size; 0 picks a safe value from the curvature bound"),
                p("epsilon", 1e-12, "loss-change stopping tolerance"),
                p("tau", 1e-6, "signal-norm stopping tolerance"),
                p("max_cycles", 20000.0, "cycle budget"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "scaling",
            summary: "Independent units with one common target; cycle cost should grow linearly in N.",
            params: vec![
                p("agents", 100.0, "number of units"),
                p("target", 1.0, "per-unit target"),
                p("lambda", 0.5, "per-unit cost curvature"),
                p("eta", 0.2, "gradient-follower step size"),
                p("epsilon", 1e-10, "loss-change stopping tolerance"),
                p("tau", 1e-6, "signal-norm stopping tolerance"),
                p("max_cycles", 500.0, "cycle budget"),
                p("record", 0.0, "1 keeps per-agent traces; 0 keeps only cycle records"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "effort_tradeoff",
            summary: "Deliberating units pay per thinking step and stop when thinking stops paying.",
            params: vec![
                p("agents", 4.0, "number of units"),
                p("target", 3.0, "per-unit target"),
                p("lambda", 2.0, "per-unit cost curvature (known to the unit itself)"),
                p("inner_eta", 0.2, "deliberation step size"),
                p("inner_budget", 50.0, "hard cap on thinking steps per cycle"),
                p("think_cost", 0.0, "utility charge per thinking step"),
                p("epsilon", 1e-10, "loss-change stopping tolerance"),
                p("tau", 1e-6, "signal-norm stopping tolerance"),
                p("max_cycles", 300.0, "cycle budget"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "noisy",
            summary: "The two-unit line with Gaussian jitter on delivered signals.",
            params: vec![
                p("y_star", 10.0, "shared output target"),
                p("lambda", 0.5, "private cost curvature of the first unit"),
                p("eta", 0.4, "gradient-follower step size"),
                p("start1", 1.0, "initial action of the first unit"),
                p("start2", 1.0, "initial action of the second unit"),
                p("noise", 0.01, "signal noise standard deviation; 0 reproduces assembly_line"),
                p("epsilon", 1e-10, "loss-change stopping tolerance"),
                p("tau", 1e-6, "signal-norm stopping tolerance"),
                p("max_cycles", 200.0, "cycle budget"),
                p("seed", 0.0, "noise seed"),
            ],
        },
        ScenarioSpec {
            name: "tracking",
            summary: "A scripted setter moves the target mid-run; followers must resettle.",
            params: vec![
                p("y_star", 5.0, "target before the step"),
                p("y_step", 8.0, "target after the step"),
                p("step_cycle", 200.0, "cycle at which the setter moves"),
                p("lambda", 0.5, "private cost curvature of the first unit"),
                p("eta", 0.4, "gradient-follower step size"),
                p("max_cycles", 400.0, "fixed horizon (the stop rule is disabled)"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "nonconvex",
            summary: "Double-well objective with two symmetric optima; the start picks the basin.",
            params: vec![
                p("start1", 0.5, "initial action of the first unit"),
                p("start2", 0.0, "initial action of the second unit"),
                p("eta", 0.05, "gradient-follower step size"),
                p("epsilon", 1e-12, "loss-change stopping tolerance"),
                p("tau", 1e-8, "signal-norm stopping tolerance"),
                p("max_cycles", 2000.0, "cycle budget"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
        ScenarioSpec {
            name: "asymmetric_info",
            summary: "Value of knowing unit costs versus modeling them from a prior.",
            params: vec![
                p("agents", 3.0, "number of units"),
                p("y_star", 6.0, "shared output target"),
                p("prior_lo", 0.5, "lower edge of the cost prior"),
                p("prior_hi", 1.5, "upper edge of the cost prior"),
                p("trials", 200.0, "sampled cost profiles"),
                p("seed", 0.0, "sampling seed"),
            ],
        },
        ScenarioSpec {
            name: "bic",
            summary: "Report-indexed payments audited for truthful cost revelation.",
            params: vec![
                p("agents", 3.0, "number of units"),
                p("y_star", 6.0, "shared output target"),
                p("prior_lo", 1.0, "lower edge of the cost prior"),
                p("prior_hi", 2.0, "upper edge of the cost prior"),
                p("grid", 17.0, "report grid points"),
                p("samples", 32.0, "common-random-number draws for the other units"),
                p("ignore_reports", 0.0, "1 makes the planner ignore reports (negative control)"),
                p("tie_tol", 1e-9, "utility difference treated as a tie"),
                p("seed", 11.0, "sampling seed"),
            ],
        },
        ScenarioSpec {
            name: "heterogeneous",
            summary: "Followers, a deliberator, and a pinned unit share one separable objective.",
            params: vec![
                p("eta1", 0.2, "step size of the first follower"),
                p("eta2", 0.1, "step size of the second follower"),
                p("inner_eta", 0.1, "deliberation step size of the third unit"),
                p("inner_budget", 60.0, "thinking-step cap of the third unit"),
                p("think_cost", 0.0, "thinking charge of the third unit"),
                p("pinned", 0.3, "action the fourth unit holds for the whole run"),
                p("max_cycles", 150.0, "fixed horizon (the pinned unit keeps residual pressure)"),
                p("seed", 0.0, "noise seed (unused while noise is zero)"),
            ],
        },
    ]
}

pub fn scenario_names() -> Vec<&'static str> {
    catalog().iter().map(|s| s.name).collect()
}

/// Resolved parameter values for one scenario run.
struct Resolved {
    scenario: &'static str,
    values: BTreeMap<&'static str, f64>,
}

impl Resolved {
    fn get(&self, name: &str) -> f64 {
        *self
            .values
            .get(name)
            .unwrap_or_else(|| panic!("scenario {} has no param {name}", self.scenario))
    }

    /// Positive whole number, returned as a count.
    fn count(&self, name: &str, at_least: usize) -> Result<usize, ScenarioError> {
        let v = self.get(name);
        if !v.is_finite() || v.fract() != 0.0 || v < at_least as f64 {
            return Err(ScenarioError::InvalidParam {
                param: name.to_string(),
                value: v,
                reason: format!("must be a whole number >= {at_least}"),
            });
        }
        Ok(v as usize)
    }

    fn seed(&self, name: &str) -> Result<u64, ScenarioError> {
        let v = self.get(name);
        if !v.is_finite() || v.fract() != 0.0 || v < 0.0 {
            return Err(ScenarioError::InvalidParam {
                param: name.to_string(),
                value: v,
                reason: "must be a non-negative whole number".to_string(),
            });
        }
        Ok(v as u64)
    }
}

fn resolve(
    spec: &ScenarioSpec,
    overrides: &BTreeMap<String, f64>,
) -> Result<Resolved, ScenarioError> {
    let mut values: BTreeMap<&'static str, f64> =
        spec.params.iter().map(|p| (p.name, p.default)).collect();
    for (key, value) in overrides {
        let slot = spec.params.iter().find(|p| p.name == key);
        match slot {
            Some(param) => {
                values.insert(param.name, *value);
            }
            None => {
                return Err(ScenarioError::UnknownParam {
                    scenario: spec.name.to_string(),
                    param: key.clone(),
                    available: spec
                        .params
                        .iter()
                        .map(|p| p.name)
                        .collect::<Vec<_>>()
                        .join(", "),
                })
            }
        }
    }
    Ok(Resolved {
        scenario: spec.name,
        values,
    })
}

/// Uniform result shape across mechanism runs and audit-style scenarios.
#[derive(Debug)]
pub struct ScenarioReport {
    pub name: String,
    /// Every parameter after overrides, echoed for reproducibility.
    pub resolved: BTreeMap<String, f64>,
    /// Present for scenarios that drive the mechanism.
    pub run: Option<RunReport<f64>>,
    pub metrics: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, String>,
}

impl ScenarioReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

pub fn run_scenario(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<ScenarioReport, ScenarioError> {
    let specs = catalog();
    let spec = specs.iter().find(|s| s.name == name).ok_or_else(|| {
        ScenarioError::UnknownScenario {
            name: name.to_string(),
            available: specs.iter().map(|s| s.name).collect::<Vec<_>>().join(", "),
        }
    })?;
    let r = resolve(spec, overrides)?;
    let mut report = match spec.name {
        "assembly_line" => assembly_line(&r, 0.0)?,
        "quadratic_n" => quadratic_n(&r)?,
        "scaling" => scaling(&r)?,
        "effort_tradeoff" => effort_tradeoff(&r)?,
        "noisy" => assembly_line(&r, r.get("noise"))?,
        "tracking" => tracking(&r)?,
        "nonconvex" => nonconvex(&r)?,
        "asymmetric_info" => asymmetric_info(&r)?,
        "bic" => bic(&r)?,
        "heterogeneous" => heterogeneous(&r)?,
        other => unreachable!("scenario {other} is in the catalog but not dispatched"),
    };
    report.name = spec.name.to_string();
    report.resolved = r
        .values
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    Ok(report)
}

/// Builds the differentiable graph a mechanism scenario runs on, at resolved
/// parameters; `None` for the audit-style scenarios that have no graph.
/// Exposed so gradient checkers can probe every catalog loss directly.
pub fn scenario_graph(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<Option<Graph<f64>>, ScenarioError> {
    let specs = catalog();
    let spec = specs.iter().find(|s| s.name == name).ok_or_else(|| {
        ScenarioError::UnknownScenario {
            name: name.to_string(),
            available: specs.iter().map(|s| s.name).collect::<Vec<_>>().join(", "),
        }
    })?;
    let r = resolve(spec, overrides)?;
    build_graph(spec.name, &r)
}

const HET_TARGETS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
const HET_LAMBDAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

fn quadratic_n_lambdas(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 1.0 + i as f64 / n as f64).collect()
}

fn build_graph(name: &str, r: &Resolved) -> Result<Option<Graph<f64>>, ScenarioError> {
    let graph = match name {
        "assembly_line" | "noisy" => sum_target_graph(
            &padded_ids(2),
            r.get("y_star"),
            &[r.get("lambda"), 0.0],
            &[r.get("start1"), r.get("start2")],
        )?,
        "quadratic_n" => {
            let n = r.count("agents", 1)?;
            sum_target_graph(
                &padded_ids(n),
                r.get("y_star"),
                &quadratic_n_lambdas(n),
                &vec![0.0; n],
            )?
        }
        "scaling" => {
            let n = r.count("agents", 1)?;
            separable_graph(
                &padded_ids(n),
                &vec![r.get("target"); n],
                &vec![r.get("lambda"); n],
                &vec![0.0; n],
            )?
        }
        "effort_tradeoff" => {
            let n = r.count("agents", 1)?;
            separable_graph(
                &padded_ids(n),
                &vec![r.get("target"); n],
                &vec![r.get("lambda"); n],
                &vec![0.0; n],
            )?
        }
        "tracking" => tracking_graph(r)?,
        "nonconvex" => nonconvex_graph(r)?,
        "heterogeneous" => separable_graph(
            &padded_ids(4),
            &HET_TARGETS,
            &HET_LAMBDAS,
            &[0.0, 0.0, 0.0, r.get("pinned")],
        )?,
        _ => return Ok(None),
    };
    Ok(Some(graph))
}

fn blank_report() -> ScenarioReport {
    ScenarioReport {
        name: String::new(),
        resolved: BTreeMap::new(),
        run: None,
        metrics: BTreeMap::new(),
        labels: BTreeMap::new(),
    }
}

fn run_metrics(report: &RunReport<f64>) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("initial_loss".to_string(), report.initial_loss);
    m.insert("final_loss".to_string(), report.final_loss);
    m.insert("cycles".to_string(), report.cycles_run() as f64);
    m.insert(
        "converged".to_string(),
        if report.converged { 1.0 } else { 0.0 },
    );
    m.insert(
        "final_grad_norm".to_string(),
        report.final_grad_norm().unwrap_or(f64::NAN),
    );
    m.insert("total_effort".to_string(), report.total_effort() as f64);
    m
}

/// Zero-padded unit ids: stable widths keep lexicographic and numeric order
/// identical, so slot order never depends on the agent count's digits.
fn padded_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("a{i:0width$}")).collect()
}

/// `(sum_i x_i - y_star)^2 + sum_i lambda_i x_i^2`, zero-cost terms skipped.
fn sum_target_graph(
    ids: &[String],
    y_star: f64,
    lambdas: &[f64],
    starts: &[f64],
) -> Result<Graph<f64>, ScenarioError> {
    let mut eb = ExprBuilder::new();
    let sums: Vec<NodeRef> = ids
        .iter()
        .map(|id| {
            let v = eb.var(id);
            eb.sum(v)
        })
        .collect();
    let total = eb.add(&sums);
    let target = eb.constant(y_star);
    let gap = eb.sub(total, target);
    let mut terms = vec![eb.square(gap)];
    for (s, lambda) in sums.iter().zip(lambdas) {
        if *lambda != 0.0 {
            let sq = eb.square(*s);
            terms.push(eb.scale(*lambda, sq));
        }
    }
    let root = eb.add(&terms);
    let loss = eb.finish(root)?;

    let mut gb = GraphBuilder::new();
    for (id, x0) in ids.iter().zip(starts) {
        gb.agent(id, &format!("unit {id}"), Vector::scalar(*x0)?);
    }
    gb.loss("objective", "shared objective", loss);
    Ok(gb.build()?)
}

/// `sum_i (x_i - t_i)^2 + lambda_i x_i^2` with target constants deduplicated.
fn separable_graph(
    ids: &[String],
    targets: &[f64],
    lambdas: &[f64],
    starts: &[f64],
) -> Result<Graph<f64>, ScenarioError> {
    let mut eb = ExprBuilder::new();
    let mut consts: BTreeMap<u64, NodeRef> = BTreeMap::new();
    let mut terms = Vec::with_capacity(ids.len() * 2);
    for ((id, t), lambda) in ids.iter().zip(targets).zip(lambdas) {
        let v = eb.var(id);
        let s = eb.sum(v);
        let c = *consts
            .entry(t.to_bits())
            .or_insert_with(|| eb.constant(*t));
        let gap = eb.sub(s, c);
        terms.push(eb.square(gap));
        if *lambda != 0.0 {
            let sq = eb.square(s);
            terms.push(eb.scale(*lambda, sq));
        }
    }
    let root = eb.add(&terms);
    let loss = eb.finish(root)?;

    let mut gb = GraphBuilder::new();
    for (id, x0) in ids.iter().zip(starts) {
        gb.agent(id, &format!("unit {id}"), Vector::scalar(*x0)?);
    }
    gb.loss("objective", "separable objective", loss);
    Ok(gb.build()?)
}

fn assembly_line(r: &Resolved, noise: f64) -> Result<ScenarioReport, ScenarioError> {
    let ids = padded_ids(2);
    let graph = build_graph("assembly_line", r)?.expect("mechanism scenario");
    let eta = r.get("eta");
    let behaviors = vec![AgentBehavior::GradientFollower { eta }; 2];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: r.get("epsilon"),
            tau: r.get("tau"),
            max_cycles: r.seed("max_cycles")?,
            noise_sigma: noise,
            seed: r.seed("seed")?,
            record_agents: true,
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    for (i, id) in ids.iter().enumerate() {
        out.metrics
            .insert(format!("x{}", i + 1), report.final_actions[id].get(0));
    }
    out.run = Some(report);
    Ok(out)
}

fn quadratic_n(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let n = r.count("agents", 1)?;
    let y_star = r.get("y_star");
    let lambdas = quadratic_n_lambdas(n);
    let ids = padded_ids(n);
    let graph = build_graph("quadratic_n", r)?.expect("mechanism scenario");
    // curvature of the full objective is bounded by 2(n + max lambda), so
    // 0.7/(n + 2) stays well inside the stable-step region
    let mut eta = r.get("eta");
    if eta == 0.0 {
        eta = 0.7 / (n as f64 + 2.0);
    }
    let behaviors = vec![AgentBehavior::GradientFollower { eta }; n];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: r.get("epsilon"),
            tau: r.get("tau"),
            max_cycles: r.seed("max_cycles")?,
            seed: r.seed("seed")?,
            record_agents: false,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    let (opt_actions, opt_loss) = crate::oracle::quadratic_kkt_solution(&lambdas, y_star);
    out.metrics.insert("optimal_loss".to_string(), opt_loss);
    let worst = ids
        .iter()
        .zip(&opt_actions)
        .map(|(id, x)| (report.final_actions[id].get(0) - x).abs())
        .fold(0.0f64, f64::max);
    out.metrics.insert("max_coord_error".to_string(), worst);
    out.metrics.insert("eta".to_string(), eta);
    out.run = Some(report);
    Ok(out)
}

fn scaling(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let n = r.count("agents", 1)?;
    let graph = build_graph("scaling", r)?.expect("mechanism scenario");
    let behaviors = vec![AgentBehavior::GradientFollower { eta: r.get("eta") }; n];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: r.get("epsilon"),
            tau: r.get("tau"),
            max_cycles: r.seed("max_cycles")?,
            seed: r.seed("seed")?,
            record_agents: r.get("record") != 0.0,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    let mut nanos: Vec<u128> = report.cycles.iter().map(|c| c.wall_nanos).collect();
    nanos.sort_unstable();
    if !nanos.is_empty() {
        out.metrics.insert(
            "median_cycle_nanos".to_string(),
            nanos[nanos.len() / 2] as f64,
        );
    }
    out.run = Some(report);
    Ok(out)
}

fn effort_tradeoff(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let n = r.count("agents", 1)?;
    let lambda = r.get("lambda");
    let graph = build_graph("effort_tradeoff", r)?.expect("mechanism scenario");
    let behaviors = vec![
        AgentBehavior::BestResponse {
            lambda,
            inner_eta: r.get("inner_eta"),
            inner_budget: r.count("inner_budget", 1)? as u64,
            think_cost: r.get("think_cost"),
        };
        n
    ];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: r.get("epsilon"),
            tau: r.get("tau"),
            max_cycles: r.seed("max_cycles")?,
            seed: r.seed("seed")?,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    out.metrics.insert(
        "mean_effort_per_agent".to_string(),
        report.total_effort() as f64 / n as f64,
    );
    out.run = Some(report);
    Ok(out)
}

fn tracking(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let max_cycles = r.seed("max_cycles")?;
    let step_cycle = r.seed("step_cycle")?;
    if step_cycle < 2 || step_cycle >= max_cycles {
        return Err(ScenarioError::InvalidParam {
            param: "step_cycle".to_string(),
            value: step_cycle as f64,
            reason: format!("must lie strictly inside the horizon (2..{max_cycles})"),
        });
    }
    let graph = build_graph("tracking", r)?.expect("mechanism scenario");
    let eta = r.get("eta");
    let behaviors = vec![
        AgentBehavior::GradientFollower { eta },
        AgentBehavior::GradientFollower { eta },
        AgentBehavior::Scripted {
            schedule: vec![(step_cycle, Vector::scalar(r.get("y_step"))?)],
        },
    ];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: 0.0,
            // negative tolerance disables the stop rule: a tracking run must
            // sit still at the optimum until the setter moves
            tau: -1.0,
            max_cycles,
            seed: r.seed("seed")?,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    let step = step_cycle as usize;
    out.metrics.insert(
        "pre_step_loss".to_string(),
        report.cycles[step - 2].loss,
    );
    out.metrics
        .insert("step_loss".to_string(), report.cycles[step - 1].loss);
    out.run = Some(report);
    Ok(out)
}

fn tracking_graph(r: &Resolved) -> Result<Graph<f64>, ScenarioError> {
    let mut eb = ExprBuilder::new();
    let a1 = eb.var("a1");
    let a2 = eb.var("a2");
    let tgt = eb.var("tgt");
    let s1 = eb.sum(a1);
    let s2 = eb.sum(a2);
    let st = eb.sum(tgt);
    let total = eb.add(&[s1, s2]);
    let gap = eb.sub(total, st);
    let gap2 = eb.square(gap);
    let s1sq = eb.square(s1);
    let cost = eb.scale(r.get("lambda"), s1sq);
    let root = eb.add(&[gap2, cost]);
    let loss = eb.finish(root)?;

    let mut gb = GraphBuilder::new();
    gb.agent("a1", "unit a1", Vector::scalar(0.0)?);
    gb.agent("a2", "unit a2", Vector::scalar(0.0)?);
    gb.agent("tgt", "target setter", Vector::scalar(r.get("y_star"))?);
    gb.loss("objective", "moving-target objective", loss);
    Ok(gb.build()?)
}

/// (x1^2 - 1)^2 + (x1 + x2)^2: minima at (1,-1) and (-1,1).
fn nonconvex_graph(r: &Resolved) -> Result<Graph<f64>, ScenarioError> {
    let mut eb = ExprBuilder::new();
    let a1 = eb.var("a1");
    let a2 = eb.var("a2");
    let s1 = eb.sum(a1);
    let s2 = eb.sum(a2);
    let s1sq = eb.square(s1);
    let one = eb.constant(1.0);
    let well = eb.sub(s1sq, one);
    let well2 = eb.square(well);
    let pair = eb.add(&[s1, s2]);
    let pair2 = eb.square(pair);
    let root = eb.add(&[well2, pair2]);
    let loss = eb.finish(root)?;

    let mut gb = GraphBuilder::new();
    gb.agent("a1", "unit a1", Vector::scalar(r.get("start1"))?);
    gb.agent("a2", "unit a2", Vector::scalar(r.get("start2"))?);
    gb.loss("objective", "double-well objective", loss);
    Ok(gb.build()?)
}

fn nonconvex(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let graph = build_graph("nonconvex", r)?.expect("mechanism scenario");
    let behaviors = vec![AgentBehavior::GradientFollower { eta: r.get("eta") }; 2];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: r.get("epsilon"),
            tau: r.get("tau"),
            max_cycles: r.seed("max_cycles")?,
            seed: r.seed("seed")?,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    out.metrics
        .insert("x1".to_string(), report.final_actions["a1"].get(0));
    out.metrics
        .insert("x2".to_string(), report.final_actions["a2"].get(0));
    out.run = Some(report);
    Ok(out)
}

fn asymmetric_info(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let family = QuadraticFamily {
        n: r.count("agents", 1)?,
        y_star: r.get("y_star"),
    };
    let prior = TypePrior::uniform(r.get("prior_lo"), r.get("prior_hi"))?;
    let exp = asymmetric_info_experiment(&family, &prior, r.count("trials", 1)?, r.seed("seed")?);
    let mut out = blank_report();
    out.metrics
        .insert("informed_mean".to_string(), exp.informed_mean);
    out.metrics.insert(
        "prior_mean_model_mean".to_string(),
        exp.prior_mean_model_mean,
    );
    out.metrics.insert(
        "optimistic_model_mean".to_string(),
        exp.optimistic_model_mean,
    );
    out.metrics.insert(
        "bayes_regret".to_string(),
        exp.prior_mean_model_mean - exp.informed_mean,
    );
    out.metrics.insert(
        "optimistic_regret".to_string(),
        exp.optimistic_model_mean - exp.informed_mean,
    );
    Ok(out)
}

fn bic(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let family = QuadraticFamily {
        n: r.count("agents", 2)?,
        y_star: r.get("y_star"),
    };
    let prior = TypePrior::uniform(r.get("prior_lo"), r.get("prior_hi"))?;
    let policy = if r.get("ignore_reports") != 0.0 {
        ReportPolicy::IgnoreReports
    } else {
        ReportPolicy::UseReports
    };
    let schedule = myerson_transfer_schedule(
        &family,
        0,
        &prior,
        r.count("grid", 2)?,
        r.count("samples", 1)?,
        r.seed("seed")?,
        policy,
    )?;
    let audit = bic_audit(&schedule, r.get("tie_tol"));
    let mut out = blank_report();
    out.metrics.insert(
        "max_gain_over_truth".to_string(),
        audit.max_gain_over_truth,
    );
    out.metrics.insert(
        "monotone_allocation".to_string(),
        if audit.monotone_allocation { 1.0 } else { 0.0 },
    );
    let truthful = audit
        .best_report
        .iter()
        .enumerate()
        .filter(|(truth, best)| truth == *best)
        .count();
    out.metrics
        .insert("truthful_types".to_string(), truthful as f64);
    out.metrics
        .insert("grid_points".to_string(), schedule.grid.len() as f64);
    out.labels.insert(
        "verdict".to_string(),
        match audit.verdict {
            BicVerdict::Truthful => "Truthful",
            BicVerdict::NonInformative => "NonInformative",
            BicVerdict::Manipulable => "Manipulable",
        }
        .to_string(),
    );
    Ok(out)
}

fn heterogeneous(r: &Resolved) -> Result<ScenarioReport, ScenarioError> {
    let ids = padded_ids(4);
    let graph = build_graph("heterogeneous", r)?.expect("mechanism scenario");
    let behaviors = vec![
        AgentBehavior::GradientFollower { eta: r.get("eta1") },
        AgentBehavior::GradientFollower { eta: r.get("eta2") },
        AgentBehavior::BestResponse {
            lambda: HET_LAMBDAS[2],
            inner_eta: r.get("inner_eta"),
            inner_budget: r.count("inner_budget", 1)? as u64,
            think_cost: r.get("think_cost"),
        },
        AgentBehavior::Scripted { schedule: vec![] },
    ];
    let report = Run::new(
        graph,
        behaviors,
        RunParams {
            epsilon: 0.0,
            // the pinned unit keeps a residual signal, so the stop rule can
            // never fire; run the fixed horizon instead
            tau: -1.0,
            max_cycles: r.seed("max_cycles")?,
            seed: r.seed("seed")?,
            ..RunParams::default()
        },
    )?
    .run()?;
    let mut out = blank_report();
    out.metrics = run_metrics(&report);
    for (i, id) in ids.iter().enumerate() {
        out.metrics
            .insert(format!("x{}", i + 1), report.final_actions[id].get(0));
    }
    out.run = Some(report);
    Ok(out)
}
