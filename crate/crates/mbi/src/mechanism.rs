//! The coordination mechanism: repeated act / evaluate / price cycles.
//!
//! Each cycle runs in four phases. Agents first act on the signals delivered
//! at the end of the previous cycle (none exist before the first cycle, so
//! everyone holds). The planner then evaluates the compiled loss forward,
//! prices every agent's action with one reverse pass — agent `i` is quoted
//! `g_i = -dL/dx_i`, the system's marginal value for its action — and
//! finally delivers those signals, optionally with Gaussian reporting noise.
//! The run stops once a cycle both moved the loss by at most `epsilon` and
//! left the clean gradient norm at or below `tau`, or when `max_cycles` is
//! spent.
//!
//! Payments: integrating a signal along an agent's realized action path
//! measures how much system improvement that agent was paid for. Summed over
//! agents the integrals telescope to the total loss drop, which is what
//! `externality_integral` and the audits below check.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::agent::AgentBehavior;
use crate::expr::{Bindings, ExprError};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MechanismError {
    #[error("graph has {agents} agents but {behaviors} behaviors were supplied")]
    BehaviorCountMismatch { agents: usize, behaviors: usize },
    #[error("agent `{id}` changed action dimension from {want} to {got}")]
    ActionDimensionChanged { id: String, want: usize, got: usize },
    #[error("noise standard deviation must be finite and non-negative")]
    InvalidNoise,
    #[error("slot {slot} out of range: loss has {slots} action slots")]
    BadSlot { slot: usize, slots: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Knobs for one mechanism run.
#[derive(Debug, Clone)]
pub struct RunParams<S: Scalar> {
    /// A cycle's loss must move by at most this ...
    pub epsilon: S,
    /// ... while the clean gradient norm is at most this, for the run to
    /// count as converged. Both must hold in the same cycle. A negative
    /// value can never be met and so disables stopping: the run plays its
    /// whole `max_cycles` horizon (useful for tracking moving targets).
    pub tau: S,
    pub max_cycles: u64,
    /// Standard deviation of Gaussian noise added to delivered signals.
    /// Exactly zero means the noise path is never touched.
    pub noise_sigma: S,
    pub seed: u64,
    /// Keep per-agent action/signal traces. Costs memory proportional to
    /// agents x cycles; turn off for very large populations.
    pub record_agents: bool,
}

impl<S: Scalar> Default for RunParams<S> {
    fn default() -> Self {
        RunParams {
            epsilon: S::from_f(1e-10),
            tau: S::from_f(1e-6),
            max_cycles: 10_000,
            noise_sigma: S::zero(),
            seed: 0,
            record_agents: true,
        }
    }
}

/// Loss, gradient norm, total deliberation effort, and wall time of one
/// cycle.
#[derive(Debug, Clone)]
pub struct CycleRecord<S: Scalar> {
    pub cycle: u64,
    pub loss: S,
    pub grad_norm: S,
    pub total_effort: u64,
    pub wall_nanos: u128,
}

/// Per-agent history. `actions[0]` is the initial action and `signals[0]`
/// the clean pre-run signal, so segment `t` of the path runs from
/// `actions[t]` to `actions[t+1]` with endpoint signals to match;
/// `efforts[t]` and `utilities[t]` belong to cycle `t+1`.
#[derive(Debug, Clone)]
pub struct AgentTrace<S: Scalar> {
    pub actions: Vec<Vector<S>>,
    pub signals: Vec<Vector<S>>,
    pub efforts: Vec<u64>,
    pub utilities: Vec<Option<S>>,
}

#[derive(Debug, Clone)]
pub struct RunReport<S: Scalar> {
    pub agent_ids: Vec<String>,
    pub cycles: Vec<CycleRecord<S>>,
    pub converged: bool,
    pub initial_loss: S,
    pub final_loss: S,
    /// Final action per agent id.
    pub final_actions: Bindings<S>,
    /// Slot-aligned traces when `record_agents` was set.
    pub traces: Option<Vec<AgentTrace<S>>>,
}

impl<S: Scalar> RunReport<S> {
    pub fn cycles_run(&self) -> u64 {
        self.cycles.len() as u64
    }

    pub fn final_grad_norm(&self) -> Option<S> {
        self.cycles.last().map(|c| c.grad_norm)
    }

    pub fn total_effort(&self) -> u64 {
        self.cycles.iter().map(|c| c.total_effort).sum()
    }
}

/// One mechanism execution over a compiled graph. Slot order (the compiled
/// loss's variable order) indexes actions, signals, and traces throughout.
pub struct Run<S: Scalar> {
    graph: Graph<S>,
    behaviors: Vec<AgentBehavior<S>>,
    params: RunParams<S>,
    actions: Vec<Vector<S>>,
    signals: Vec<Vector<S>>,
    cycle: u64,
    prev_loss: S,
    initial_loss: S,
    records: Vec<CycleRecord<S>>,
    traces: Option<Vec<AgentTrace<S>>>,
}

impl<S: Scalar> std::fmt::Debug for Run<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Run")
            .field("agents", &self.behaviors.len())
            .field("cycle", &self.cycle)
            .field("loss", &self.prev_loss)
            .finish()
    }
}

impl<S: Scalar> Run<S> {
    /// Prepares a run: checks the behavior list against the graph and
    /// evaluates the loss at the initial actions so the first cycle has a
    /// baseline to compare against. No signals are delivered here — agents
    /// start uninformed.
    pub fn new(
        graph: Graph<S>,
        behaviors: Vec<AgentBehavior<S>>,
        params: RunParams<S>,
    ) -> Result<Self, MechanismError> {
        if behaviors.len() != graph.agent_count() {
            return Err(MechanismError::BehaviorCountMismatch {
                agents: graph.agent_count(),
                behaviors: behaviors.len(),
            });
        }
        if !(params.noise_sigma >= S::zero()) || !params.noise_sigma.is_finite() {
            return Err(MechanismError::InvalidNoise);
        }
        let actions = graph.initial_slots();
        let eval = graph.loss_expr().forward_slots(actions.clone())?;
        let initial_loss = eval.loss();
        let signals: Vec<Vector<S>> = actions.iter().map(|a| Vector::zeros(a.dim())).collect();

        let traces = if params.record_agents {
            // the pre-run signal completes the first path segment's endpoints
            let grads = graph.loss_expr().backward_slots(&eval, &actions)?;
            Some(
                actions
                    .iter()
                    .zip(grads.into_iter())
                    .map(|(a, g)| AgentTrace {
                        actions: vec![a.clone()],
                        signals: vec![g.scale(-S::one())],
                        efforts: Vec::new(),
                        utilities: Vec::new(),
                    })
                    .collect(),
            )
        } else {
            None
        };

        Ok(Run {
            graph,
            behaviors,
            params,
            actions,
            signals,
            cycle: 0,
            prev_loss: initial_loss,
            initial_loss,
            records: Vec::new(),
            traces,
        })
    }

    /// Runs cycles until convergence or the cycle budget, whichever first.
    pub fn run(mut self) -> Result<RunReport<S>, MechanismError> {
        let mut converged = false;
        while self.cycle < self.params.max_cycles {
            if self.step()? {
                converged = true;
                break;
            }
        }
        let final_actions: Bindings<S> = self
            .graph
            .loss_expr()
            .var_names()
            .iter()
            .zip(self.actions.iter())
            .map(|(id, a)| (id.clone(), a.clone()))
            .collect();
        let agent_ids = self
            .graph
            .loss_expr()
            .var_names()
            .to_vec();
        Ok(RunReport {
            agent_ids,
            converged,
            initial_loss: self.initial_loss,
            final_loss: self.prev_loss,
            final_actions,
            cycles: self.records,
            traces: self.traces,
        })
    }

    /// One full cycle; returns whether the stop rule fired.
    fn step(&mut self) -> Result<bool, MechanismError> {
        let started = Instant::now();
        self.cycle += 1;
        let slot_agents = self.graph.slot_agents();

        // Act on last cycle's signals.
        let mut total_effort = 0u64;
        let mut efforts: Vec<u64> = Vec::new();
        let mut utilities: Vec<Option<S>> = Vec::new();
        for (slot, agent_idx) in slot_agents.iter().enumerate() {
            let behavior = &self.behaviors[*agent_idx];
            let out = behavior.act(self.cycle, &self.actions[slot], &self.signals[slot]);
            if out.action.dim() != self.actions[slot].dim() {
                return Err(MechanismError::ActionDimensionChanged {
                    id: self.graph.agents()[*agent_idx].id.clone(),
                    want: self.actions[slot].dim(),
                    got: out.action.dim(),
                });
            }
            total_effort += out.effort_steps;
            if self.traces.is_some() {
                efforts.push(out.effort_steps);
                utilities.push(out.private_utility);
            }
            self.actions[slot] = out.action;
        }

        // Evaluate and price.
        let eval = self
            .graph
            .loss_expr()
            .forward_slots(self.actions.clone())?;
        let loss = eval.loss();
        let grads = self
            .graph
            .loss_expr()
            .backward_slots(&eval, &self.actions)?;
        let grad_norm = grads
            .iter()
            .fold(S::zero(), |acc, g| acc + g.dot(g))
            .sqrt();

        // Deliver, with optional reporting noise. Sigma of exactly zero
        // never touches the generator, so noiseless runs are bit-identical
        // to runs of the noise-free code path.
        let sigma = self.params.noise_sigma;
        for (slot, g) in grads.into_iter().enumerate() {
            let mut signal = g.scale(-S::one());
            if sigma > S::zero() {
                let mut rng = derive_rng(self.params.seed, self.cycle, slot as u64);
                let normal = Normal::new(0.0, sigma.to_f()).expect("sigma validated");
                for c in 0..signal.dim() {
                    let draw = S::from_f(normal.sample(&mut rng));
                    signal.set(c, signal.get(c) + draw);
                }
            }
            self.signals[slot] = signal;
        }

        if let Some(traces) = &mut self.traces {
            for (slot, trace) in traces.iter_mut().enumerate() {
                trace.actions.push(self.actions[slot].clone());
                trace.signals.push(self.signals[slot].clone());
                trace.efforts.push(efforts[slot]);
                trace.utilities.push(utilities[slot]);
            }
        }

        let delta = (loss - self.prev_loss).abs();
        self.prev_loss = loss;
        self.records.push(CycleRecord {
            cycle: self.cycle,
            loss,
            grad_norm,
            total_effort,
            wall_nanos: started.elapsed().as_nanos(),
        });
        Ok(delta <= self.params.epsilon && grad_norm <= self.params.tau)
    }
}

/// Splitmix-style avalanche; good enough to decorrelate noise streams.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent noise stream per (run seed, cycle, slot).
fn derive_rng(seed: u64, cycle: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(cycle ^ mix64(slot))))
}

/// Trapezoid value of the signal along one agent's realized path:
/// `sum_t (s_t + s_{t+1})/2 . (x_{t+1} - x_t)`. This is what the mechanism
/// paid the agent for its movement. Over all agents these telescope to the
/// total loss drop (exactly so for quadratic losses, where the integrand is
/// linear on every segment).
pub fn externality_integral<S: Scalar>(trace: &AgentTrace<S>) -> S {
    let mut total = S::zero();
    let half = S::one() / S::two();
    for t in 0..trace.actions.len().saturating_sub(1) {
        let step = trace.actions[t + 1].sub(&trace.actions[t]);
        let mean_sig = trace.signals[t].add(&trace.signals[t + 1]).scale(half);
        total = total + mean_sig.dot(&step);
    }
    total
}

/// Sum of all agents' path payments, comparable against
/// `initial_loss - final_loss`.
pub fn path_payment_sum<S: Scalar>(report: &RunReport<S>) -> Option<S> {
    report.traces.as_ref().map(|traces| {
        traces
            .iter()
            .fold(S::zero(), |acc, t| acc + externality_integral(t))
    })
}

#[derive(Debug, Clone)]
pub struct IncentiveReport<S: Scalar> {
    pub slot: usize,
    /// Loss drop from stepping `eta` along the agent's own signal.
    pub signal_drop: S,
    /// Best loss drop over sampled same-length deviations.
    pub best_alternative_drop: S,
    pub samples: usize,
    pub dominated: bool,
}

/// Checks that an agent can do no better than follow its signal: a step of
/// `eta` along the delivered direction must reduce the loss at least as much
/// as any sampled deviation of the same length, up to `slack`. Sound for
/// steps small relative to the loss curvature.
pub fn incentive_audit<S: Scalar>(
    graph: &Graph<S>,
    actions: &[Vector<S>],
    slot: usize,
    eta: S,
    samples: usize,
    seed: u64,
    slack: S,
) -> Result<IncentiveReport<S>, MechanismError> {
    let expr = graph.loss_expr();
    let slots = expr.var_names().len();
    if slot >= slots {
        return Err(MechanismError::BadSlot { slot, slots });
    }
    let base = actions.to_vec();
    let eval = expr.forward_slots(base.clone())?;
    let loss0 = eval.loss();
    let grads = expr.backward_slots(&eval, &base)?;
    let signal = grads[slot].scale(-S::one());
    let step = signal.scale(eta);
    let radius = step.norm();

    let loss_with = |replacement: Vector<S>| -> Result<S, ExprError> {
        let mut probe = base.clone();
        probe[slot] = replacement;
        Ok(expr.forward_slots(probe)?.loss())
    };

    let signal_drop = loss0 - loss_with(base[slot].add(&step))?;

    let dim = base[slot].dim();
    let mut rng = derive_rng(seed, 0, slot as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit sigma");
    let mut best_alternative_drop = S::neg_infinity();
    for _ in 0..samples {
        let mut d = Vector::zeros(dim);
        loop {
            for c in 0..dim {
                d.set(c, S::from_f(normal.sample(&mut rng)));
            }
            if d.norm() > S::from_f(1e-9) {
                break;
            }
        }
        let d = d.scale(radius / d.norm());
        let drop = loss0 - loss_with(base[slot].add(&d))?;
        best_alternative_drop = best_alternative_drop.max(drop);
    }
    Ok(IncentiveReport {
        slot,
        signal_drop,
        best_alternative_drop,
        samples,
        dominated: signal_drop >= best_alternative_drop - slack,
    })
}

#[derive(Debug, Clone)]
pub struct VcgAgentCheck<S: Scalar> {
    pub slot: usize,
    /// Signal integrated along the agent's own axis from a null action to
    /// its equilibrium action, others held at equilibrium.
    pub path_payment: S,
    /// Loss at the null action minus loss at equilibrium: the agent's
    /// marginal contribution to realized welfare.
    pub marginal_contribution: S,
    pub abs_err: S,
}

#[derive(Debug, Clone)]
pub struct VcgAuditReport<S: Scalar> {
    pub per_agent: Vec<VcgAgentCheck<S>>,
    pub max_abs_err: S,
    pub passed: bool,
}

/// Audits the pivot-style equivalence at a state: for every agent, the
/// integrated incentive signal from "absent" (zero action) to its actual
/// action — holding everyone else fixed — must equal its marginal
/// contribution to welfare, i.e. the loss increase the system would suffer
/// without it. `corrupt_sign` flips one payment as a self-test that the
/// audit can actually fail.
pub fn vcg_equivalence_audit<S: Scalar>(
    graph: &Graph<S>,
    state: &[Vector<S>],
    integral_steps: usize,
    tol: S,
    corrupt_sign: Option<usize>,
) -> Result<VcgAuditReport<S>, MechanismError> {
    assert!(integral_steps >= 1, "need at least one trapezoid segment");
    let expr = graph.loss_expr();
    let slots = expr.var_names().len();
    if let Some(slot) = corrupt_sign {
        if slot >= slots {
            return Err(MechanismError::BadSlot { slot, slots });
        }
    }
    let base = state.to_vec();
    let loss_at = |probe: Vec<Vector<S>>| -> Result<S, ExprError> {
        Ok(expr.forward_slots(probe)?.loss())
    };
    let loss_star = loss_at(base.clone())?;

    let mut per_agent = Vec::with_capacity(slots);
    let mut max_abs_err = S::zero();
    let mut passed = true;
    for slot in 0..slots {
        let target = base[slot].clone();
        let dim = target.dim();
        let signal_at = |alpha: S| -> Result<Vector<S>, MechanismError> {
            let mut probe = base.clone();
            probe[slot] = target.scale(alpha);
            let eval = expr.forward_slots(probe.clone())?;
            let grads = expr.backward_slots(&eval, &probe)?;
            Ok(grads[slot].scale(-S::one()))
        };
        let m = integral_steps;
        let seg = target.scale(S::one() / S::from_f(m as f64));
        let mut payment = S::zero();
        let half = S::one() / S::two();
        let mut prev = signal_at(S::zero())?;
        for k in 1..=m {
            let here = signal_at(S::from_f(k as f64 / m as f64))?;
            payment = payment + prev.add(&here).scale(half).dot(&seg);
            prev = here;
        }
        if corrupt_sign == Some(slot) {
            payment = -payment;
        }

        let mut absent = base.clone();
        absent[slot] = Vector::zeros(dim);
        let marginal_contribution = loss_at(absent)? - loss_star;

        let abs_err = (payment - marginal_contribution).abs();
        max_abs_err = max_abs_err.max(abs_err);
        if abs_err > tol {
            passed = false;
        }
        per_agent.push(VcgAgentCheck {
            slot,
            path_payment: payment,
            marginal_contribution,
            abs_err,
        });
    }
    Ok(VcgAuditReport {
        per_agent,
        max_abs_err,
        passed,
    })
}

/// Integrates the delivered signal for `slot` along a polyline from the null
/// action through the given waypoints to the agent's current action, the
/// other agents held at `state`. Signals form a gradient field, so every
/// route must price out identically; disagreement between routes means the
/// payment rule leaks path dependence.
pub fn pivot_path_integral<S: Scalar>(
    graph: &Graph<S>,
    state: &[Vector<S>],
    slot: usize,
    steps_per_leg: usize,
    waypoints: &[Vector<S>],
) -> Result<S, MechanismError> {
    assert!(steps_per_leg >= 1, "need at least one trapezoid segment");
    let expr = graph.loss_expr();
    let slots = expr.var_names().len();
    if slot >= slots {
        return Err(MechanismError::BadSlot { slot, slots });
    }
    let target = state[slot].clone();
    let dim = target.dim();
    let signal_at = |point: &Vector<S>| -> Result<Vector<S>, MechanismError> {
        let mut probe = state.to_vec();
        probe[slot] = point.clone();
        let eval = expr.forward_slots(probe.clone())?;
        let grads = expr.backward_slots(&eval, &probe)?;
        Ok(grads[slot].scale(-S::one()))
    };

    let mut route: Vec<Vector<S>> = Vec::with_capacity(waypoints.len() + 2);
    route.push(Vector::zeros(dim));
    for w in waypoints {
        assert_eq!(w.dim(), dim, "waypoint dimension must match the action");
        route.push(w.clone());
    }
    route.push(target);

    let half = S::one() / S::two();
    let inv = S::one() / S::from_f(steps_per_leg as f64);
    let mut total = S::zero();
    for leg in route.windows(2) {
        let span = leg[1].sub(&leg[0]);
        let seg = span.scale(inv);
        let mut prev = signal_at(&leg[0])?;
        for k in 1..=steps_per_leg {
            let t = S::from_f(k as f64 / steps_per_leg as f64);
            let point = leg[0].add(&span.scale(t));
            let here = signal_at(&point)?;
            total = total + prev.add(&here).scale(half).dot(&seg);
            prev = here;
        }
    }
    Ok(total)
}
