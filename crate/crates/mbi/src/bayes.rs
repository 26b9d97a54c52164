//! Coordination when the planner does not know agent costs.
//!
//! Agents in the sum-target quadratic family have private cost curvature
//! (their "type"). This module gives the planner a prior over types and two
//! tools built on it:
//!
//! * a direct-revelation payment schedule for one agent, constructed from
//!   the equilibrium allocation: the expected squared allocation `X(r)` for
//!   each possible report `r` (expectation over the other agents' types,
//!   common random numbers across reports), an information rent accumulated
//!   by trapezoid integration of `-X` anchored at the lowest type, and the
//!   transfer `t(r) = rent(r) + r * X(r)`. With a weakly decreasing `X` this
//!   discrete construction makes truth-telling exactly optimal on the grid,
//!   which `bic_audit` verifies — and refutes for corrupted or
//!   report-ignoring schedules;
//! * an experiment measuring the value of cost information: expected true
//!   loss when the planner knows types, models them at the prior mean, or
//!   models them at the prior's optimistic lower edge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::quadratic_kkt_solution;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BayesError {
    #[error("prior bounds must satisfy 0 < lo < hi and be finite")]
    InvalidPrior,
    #[error("agent index {agent} out of range for {n} agents")]
    BadAgent { agent: usize, n: usize },
    #[error("need at least two grid points and one sample")]
    DegenerateSchedule,
}

/// Uniform prior over cost curvatures, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypePrior<S: Scalar> {
    lo: S,
    hi: S,
}

impl<S: Scalar> TypePrior<S> {
    pub fn uniform(lo: S, hi: S) -> Result<Self, BayesError> {
        if !(lo > S::zero() && hi > lo) || !hi.is_finite() {
            return Err(BayesError::InvalidPrior);
        }
        Ok(TypePrior { lo, hi })
    }

    pub fn lo(&self) -> S {
        self.lo
    }

    pub fn hi(&self) -> S {
        self.hi
    }

    pub fn mean(&self) -> S {
        (self.lo + self.hi) / S::two()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> S {
        let t = S::from_f(rng.gen_range(0.0..=1.0));
        self.lo + (self.hi - self.lo) * t
    }

    /// Evenly spaced type grid including both edges.
    pub fn grid(&self, points: usize) -> Vec<S> {
        assert!(points >= 2, "a grid needs both edges");
        (0..points)
            .map(|i| {
                let t = S::from_f(i as f64 / (points - 1) as f64);
                self.lo + (self.hi - self.lo) * t
            })
            .collect()
    }
}

/// Sum-target production environment: `n` agents with scalar actions, system
/// dissonance `(sum_i x_i - y_star)^2`, private costs `lambda_i x_i^2`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticFamily<S: Scalar> {
    pub n: usize,
    pub y_star: S,
}

impl<S: Scalar> QuadraticFamily<S> {
    /// Equilibrium actions when the planner prices costs `lambdas`.
    pub fn equilibrium(&self, lambdas: &[S]) -> Vec<S> {
        assert_eq!(lambdas.len(), self.n, "one cost per agent");
        quadratic_kkt_solution(lambdas, self.y_star).0
    }

    /// Loss under the *true* costs at arbitrary actions.
    pub fn true_loss(&self, true_lambdas: &[S], actions: &[S]) -> S {
        assert_eq!(true_lambdas.len(), self.n);
        assert_eq!(actions.len(), self.n);
        let total = actions.iter().fold(S::zero(), |a, x| a + *x);
        let gap = total - self.y_star;
        let costs = true_lambdas
            .iter()
            .zip(actions.iter())
            .fold(S::zero(), |a, (l, x)| a + *l * *x * *x);
        gap * gap + costs
    }

    /// A cost model that assigns every agent the same curvature.
    pub fn uniform_model(&self, mu: S) -> Vec<S> {
        vec![mu; self.n]
    }
}

/// Whether the planner's allocation actually responds to the agent's report.
/// Ignoring reports is the degenerate control: the schedule then carries no
/// information and the audit must say so.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportPolicy {
    UseReports,
    IgnoreReports,
}

/// Report-indexed payment schedule for one agent.
#[derive(Debug, Clone)]
pub struct TransferSchedule<S: Scalar> {
    /// Type grid the reports live on.
    pub grid: Vec<S>,
    /// Expected squared equilibrium action per report, `X(r)`.
    pub allocation: Vec<S>,
    /// Information rent: `rent(r) = -∫ X` from the lowest type (anchor 0).
    pub rent: Vec<S>,
    /// Payment for each report: `rent(r) + r * X(r)`.
    pub transfer: Vec<S>,
}

impl<S: Scalar> TransferSchedule<S> {
    /// Expected utility of reporting `grid[report]` for a true type
    /// `grid[truth]`: payment minus true expected cost.
    pub fn report_utility(&self, report: usize, truth: usize) -> S {
        self.transfer[report] - self.grid[truth] * self.allocation[report]
    }
}

/// Builds the revelation schedule for `agent`. The expectation over the
/// other agents' types reuses one common set of draws for every grid point,
/// so the allocation inherits the pointwise monotonicity of the closed-form
/// equilibrium instead of drowning it in sampling noise.
pub fn myerson_transfer_schedule<S: Scalar>(
    family: &QuadraticFamily<S>,
    agent: usize,
    prior: &TypePrior<S>,
    grid_points: usize,
    crn_samples: usize,
    seed: u64,
    policy: ReportPolicy,
) -> Result<TransferSchedule<S>, BayesError> {
    if agent >= family.n {
        return Err(BayesError::BadAgent {
            agent,
            n: family.n,
        });
    }
    if grid_points < 2 || crn_samples == 0 {
        return Err(BayesError::DegenerateSchedule);
    }
    let grid = prior.grid(grid_points);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others: Vec<Vec<S>> = (0..crn_samples)
        .map(|_| (0..family.n - 1).map(|_| prior.sample(&mut rng)).collect())
        .collect();

    let allocation: Vec<S> = grid
        .iter()
        .map(|r| {
            let priced = match policy {
                ReportPolicy::UseReports => *r,
                ReportPolicy::IgnoreReports => prior.mean(),
            };
            let mut acc = S::zero();
            for sample in &others {
                let mut lambdas = Vec::with_capacity(family.n);
                lambdas.extend_from_slice(&sample[..agent]);
                lambdas.push(priced);
                lambdas.extend_from_slice(&sample[agent..]);
                let x = family.equilibrium(&lambdas)[agent];
                acc = acc + x * x;
            }
            acc / S::from_f(crn_samples as f64)
        })
        .collect();

    let half = S::one() / S::two();
    let mut rent = Vec::with_capacity(grid.len());
    rent.push(S::zero());
    for k in 1..grid.len() {
        let dz = grid[k] - grid[k - 1];
        let drop = half * (allocation[k - 1] + allocation[k]) * dz;
        let prev = rent[k - 1];
        rent.push(prev - drop);
    }

    let transfer: Vec<S> = grid
        .iter()
        .zip(allocation.iter())
        .zip(rent.iter())
        .map(|((r, x), u)| *u + *r * *x)
        .collect();

    Ok(TransferSchedule {
        grid,
        allocation,
        rent,
        transfer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicVerdict {
    /// Truth-telling is optimal for every type; some type strictly prefers
    /// it over some lie.
    Truthful,
    /// Every report is as good as any other for every type: the schedule
    /// carries no incentive to reveal anything.
    NonInformative,
    /// Some type strictly gains by lying.
    Manipulable,
}

#[derive(Debug, Clone)]
pub struct BicAuditReport<S: Scalar> {
    /// Best report index for each true type on the grid.
    pub best_report: Vec<usize>,
    /// Largest utility gain any type can achieve over truth-telling
    /// (non-positive means truth is never beaten).
    pub max_gain_over_truth: S,
    /// Whether the allocation is weakly decreasing in the report.
    pub monotone_allocation: bool,
    pub verdict: BicVerdict,
}

/// Checks the schedule against every (truth, report) pair on its own grid.
pub fn bic_audit<S: Scalar>(schedule: &TransferSchedule<S>, tie_tol: S) -> BicAuditReport<S> {
    let n = schedule.grid.len();
    let mut best_report = Vec::with_capacity(n);
    let mut max_gain = S::neg_infinity();
    let mut flat = true;
    for truth in 0..n {
        let honest = schedule.report_utility(truth, truth);
        let mut best = honest;
        let mut best_idx = truth;
        let mut lo = honest;
        for report in 0..n {
            let u = schedule.report_utility(report, truth);
            if u > best {
                best = u;
                best_idx = report;
            }
            lo = lo.min(u);
        }
        if best - lo > tie_tol {
            flat = false;
        }
        max_gain = max_gain.max(best - honest);
        best_report.push(best_idx);
    }
    let monotone_allocation = schedule
        .allocation
        .windows(2)
        .all(|w| w[1] <= w[0] + tie_tol);
    let verdict = if max_gain > tie_tol {
        BicVerdict::Manipulable
    } else if flat {
        BicVerdict::NonInformative
    } else {
        BicVerdict::Truthful
    };
    BicAuditReport {
        best_report,
        max_gain_over_truth: max_gain,
        monotone_allocation,
        verdict,
    }
}

/// Expected true loss under three planner information models: knowing every
/// cost, pricing everyone at the prior mean, and pricing everyone at the
/// prior's cheap edge. Deterministic in `seed`.
#[derive(Debug, Clone)]
pub struct AsymmetricInfoReport<S: Scalar> {
    pub trials: usize,
    pub informed_mean: S,
    pub prior_mean_model_mean: S,
    pub optimistic_model_mean: S,
}

pub fn asymmetric_info_experiment<S: Scalar>(
    family: &QuadraticFamily<S>,
    prior: &TypePrior<S>,
    trials: usize,
    seed: u64,
) -> AsymmetricInfoReport<S> {
    assert!(trials > 0, "need at least one trial");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut informed = S::zero();
    let mut bayes = S::zero();
    let mut optimistic = S::zero();
    let mean_model = family.uniform_model(prior.mean());
    let cheap_model = family.uniform_model(prior.lo());
    for _ in 0..trials {
        let truth: Vec<S> = (0..family.n).map(|_| prior.sample(&mut rng)).collect();
        informed = informed + family.true_loss(&truth, &family.equilibrium(&truth));
        bayes = bayes + family.true_loss(&truth, &family.equilibrium(&mean_model));
        optimistic = optimistic + family.true_loss(&truth, &family.equilibrium(&cheap_model));
    }
    let t = S::from_f(trials as f64);
    AsymmetricInfoReport {
        trials,
        informed_mean: informed / t,
        prior_mean_model_mean: bayes / t,
        optimistic_model_mean: optimistic / t,
    }
}
