//! Agent behavior models.
//!
//! Every cycle each agent receives the incentive signal computed from the
//! previous cycle's backward pass (`-dL/dx`, its marginal price) and picks
//! its next action. All behaviors treat a zero signal as "hold", so the
//! first cycle — before any signal exists — leaves actions untouched.
//!
//! `BestResponse` models bounded rationality explicitly: the agent improves
//! a private quadratic utility by inner gradient steps and stops when the
//! marginal improvement of one more step no longer pays for the thinking it
//! costs (or when a hard step budget runs out). With zero thinking cost it
//! deliberates until the budget is exhausted.

use crate::scalar::Scalar;
use crate::vector::Vector;

#[derive(Debug, Clone)]
pub enum AgentBehavior<S: Scalar> {
    /// Trusts the mechanism completely: `x <- x + eta * signal`.
    GradientFollower { eta: S },
    /// Boundedly rational utility maximizer with private cost
    /// `lambda * |x|^2`. The delivered signal already prices that cost
    /// (it is part of the system loss), so the agent first reconstructs the
    /// cost-free price `p = signal + 2 lambda x` and then climbs
    /// `u(x) = p . x - lambda |x|^2` by inner gradient steps.
    BestResponse {
        lambda: S,
        inner_eta: S,
        inner_budget: u64,
        /// Marginal cost of one deliberation step; the agent halts when a
        /// step's utility gain drops to this or below.
        think_cost: S,
    },
    /// Environment node: plays back a cycle-indexed schedule and ignores
    /// signals. Holds its current action before the first entry applies.
    Scripted { schedule: Vec<(u64, Vector<S>)> },
}

/// What acting produced: the next action, how many deliberation steps it
/// took, and (for utility maximizers) the private utility of the result.
#[derive(Debug, Clone)]
pub struct ActOutcome<S: Scalar> {
    pub action: Vector<S>,
    pub effort_steps: u64,
    pub private_utility: Option<S>,
}

impl<S: Scalar> AgentBehavior<S> {
    /// Picks the next action given the current one and the signal delivered
    /// at the end of the previous cycle.
    pub fn act(&self, cycle: u64, current: &Vector<S>, signal: &Vector<S>) -> ActOutcome<S> {
        match self {
            AgentBehavior::GradientFollower { eta } => ActOutcome {
                action: current.add(&signal.scale(*eta)),
                effort_steps: 0,
                private_utility: None,
            },
            AgentBehavior::BestResponse {
                lambda,
                inner_eta,
                inner_budget,
                think_cost,
            } => best_respond(*lambda, *inner_eta, *inner_budget, *think_cost, current, signal),
            AgentBehavior::Scripted { schedule } => {
                let action = schedule
                    .iter()
                    .filter(|(at, _)| *at <= cycle)
                    .last()
                    .map(|(_, v)| v.clone())
                    .unwrap_or_else(|| current.clone());
                ActOutcome {
                    action,
                    effort_steps: 0,
                    private_utility: None,
                }
            }
        }
    }

    /// Private quadratic cost of taking `action`, if this behavior has one.
    pub fn private_cost(&self, action: &Vector<S>) -> Option<S> {
        match self {
            AgentBehavior::BestResponse { lambda, .. } => {
                Some(*lambda * action.dot(action))
            }
            _ => None,
        }
    }
}

fn best_respond<S: Scalar>(
    lambda: S,
    inner_eta: S,
    inner_budget: u64,
    think_cost: S,
    current: &Vector<S>,
    signal: &Vector<S>,
) -> ActOutcome<S> {
    assert!(lambda > S::zero(), "best response needs a positive cost curvature");
    assert!(inner_eta > S::zero(), "inner step must be positive");
    let two_lambda = S::two() * lambda;
    // add the own-cost gradient back so the price reflects system value only
    let price = signal.add(&current.scale(two_lambda));
    let utility = |x: &Vector<S>| price.dot(x) - lambda * x.dot(x);

    let mut x = current.clone();
    let mut u = utility(&x);
    let mut steps = 0u64;
    while steps < inner_budget {
        let grad = price.sub(&x.scale(two_lambda));
        if grad.dot(&grad) == S::zero() {
            break; // already at the unconstrained optimum
        }
        let next = x.add(&grad.scale(inner_eta));
        let nu = utility(&next);
        let gain = nu - u;
        steps += 1;
        if gain > S::zero() {
            x = next;
            u = nu;
        }
        if gain <= think_cost {
            break; // one more thought no longer pays for itself
        }
    }
    let deliberation = think_cost * S::from_f(steps as f64);
    ActOutcome {
        private_utility: Some(u - deliberation),
        action: x,
        effort_steps: steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector<f64> {
        Vector::new(x).unwrap()
    }

    #[test]
    fn gradient_follower_steps_along_signal() {
        let b = AgentBehavior::GradientFollower { eta: 0.25 };
        let out = b.act(3, &v(&[1.0, -2.0]), &v(&[4.0, 8.0]));
        assert_eq!(out.action.components(), &[2.0, 0.0]);
        assert_eq!(out.effort_steps, 0);
    }

    #[test]
    fn zero_signal_means_hold() {
        let cur = v(&[0.7, -0.3]);
        let zero = v(&[0.0, 0.0]);
        for b in [
            AgentBehavior::GradientFollower { eta: 0.5 },
            AgentBehavior::BestResponse {
                lambda: 2.0,
                inner_eta: 0.1,
                inner_budget: 50,
                think_cost: 0.0,
            },
        ] {
            let out = b.act(1, &cur, &zero);
            assert_eq!(out.action.components(), cur.components(), "{b:?}");
        }
    }

    #[test]
    fn best_response_with_exact_step_lands_on_optimum() {
        // inner_eta = 1/(2 lambda) solves the quadratic in one step:
        // optimum is price / (2 lambda), price = signal + 2 lambda x
        let b = AgentBehavior::BestResponse {
            lambda: 2.0,
            inner_eta: 0.25,
            inner_budget: 100,
            think_cost: 0.0,
        };
        let out = b.act(5, &v(&[1.0]), &v(&[8.0]));
        // price = 8 + 4 = 12, optimum 12/4 = 3
        assert_eq!(out.action.components(), &[3.0]);
        assert!(out.effort_steps <= 2, "one productive step, maybe one probe");
        let u = out.private_utility.unwrap();
        assert_eq!(u, 12.0 * 3.0 - 2.0 * 9.0);
    }

    #[test]
    fn best_response_converges_geometrically() {
        let lambda = 2.0;
        let b = AgentBehavior::BestResponse {
            lambda,
            inner_eta: 0.05,
            inner_budget: 200,
            think_cost: 0.0,
        };
        let out = b.act(1, &v(&[0.0]), &v(&[8.0]));
        // price = 8, optimum 2; contraction factor 1 - 2*2*0.05 = 0.8.
        // Near the flat top of the quadratic a step's utility gain is ~d^2,
        // so gains vanish in f64 once the action is within ~sqrt(ulp).
        assert!((out.action.get(0) - 2.0).abs() < 1e-6);
        assert!(out.effort_steps > 30 && out.effort_steps <= 200, "{}", out.effort_steps);
    }

    #[test]
    fn thinking_cost_shortens_deliberation() {
        let mk = |c: f64| AgentBehavior::BestResponse {
            lambda: 1.0,
            inner_eta: 0.1,
            inner_budget: 500,
            think_cost: c,
        };
        let cur = v(&[0.0]);
        let sig = v(&[10.0]);
        let free = mk(0.0).act(1, &cur, &sig).effort_steps;
        let cheap = mk(0.01).act(1, &cur, &sig).effort_steps;
        let pricey = mk(1.0).act(1, &cur, &sig).effort_steps;
        // zero-cost thinking only stops at the f64 fixpoint
        assert!(free > 50, "free {free}");
        assert!(cheap < free, "cheap {cheap}");
        assert!(pricey < cheap, "pricey {pricey} cheap {cheap}");
        assert!(pricey >= 1);
    }

    #[test]
    fn scripted_plays_back_schedule() {
        let b = AgentBehavior::Scripted {
            schedule: vec![(1, v(&[5.0])), (200, v(&[8.0]))],
        };
        let cur = v(&[0.0]);
        let zero = v(&[0.0]);
        assert_eq!(b.act(1, &cur, &zero).action.components(), &[5.0]);
        assert_eq!(b.act(199, &cur, &zero).action.components(), &[5.0]);
        assert_eq!(b.act(200, &cur, &zero).action.components(), &[8.0]);
        assert_eq!(b.act(9_999, &cur, &zero).action.components(), &[8.0]);
    }

    #[test]
    fn scripted_holds_before_first_entry() {
        let b = AgentBehavior::Scripted {
            schedule: vec![(10, v(&[5.0]))],
        };
        let cur = v(&[3.0]);
        assert_eq!(b.act(2, &cur, &v(&[1.0])).action.components(), &[3.0]);
    }

    #[test]
    fn private_cost_is_quadratic() {
        let b = AgentBehavior::BestResponse {
            lambda: 1.5,
            inner_eta: 0.1,
            inner_budget: 10,
            think_cost: 0.0,
        };
        assert_eq!(b.private_cost(&v(&[2.0, 1.0])), Some(7.5));
        let gf = AgentBehavior::<f64>::GradientFollower { eta: 0.1 };
        assert_eq!(gf.private_cost(&v(&[2.0])), None);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// More expensive thinking never yields more deliberation.
            #[test]
            fn deliberation_is_monotone_in_think_cost(
               lambda in 0.5f64..4.0,
               sig in -20.0f64..20.0,
               start in -5.0f64..5.0,
               c1 in 0.0f64..0.5,
               extra in 0.001f64..0.5,
            ) {
                let eta = 0.2 / (2.0 * lambda); // well inside the stable range
                let steps = |c: f64| {
                    AgentBehavior::BestResponse {
                        lambda,
                        inner_eta: eta,
                        inner_budget: 300,
                        think_cost: c,
                    }
                    .act(1, &v(&[start]), &v(&[sig]))
                    .effort_steps
                };
                prop_assert!(steps(c1 + extra) <= steps(c1));
            }

            /// The inner loop never lowers the agent's utility.
            #[test]
            fn deliberation_never_hurts(
                lambda in 0.5f64..4.0,
                sig in -20.0f64..20.0,
                start in -5.0f64..5.0,
                c in 0.0f64..0.5,
            ) {
                let behavior = AgentBehavior::BestResponse {
                    lambda,
                    inner_eta: 0.2 / (2.0 * lambda),
                    inner_budget: 300,
                    think_cost: 0.0, // pure utility, no deliberation charge
                };
                let cur = v(&[start]);
                let out = behavior.act(1, &cur, &v(&[sig]));
                let price = sig + 2.0 * lambda * start;
                let u_stay = price * start - lambda * start * start;
                prop_assert!(out.private_utility.unwrap() >= u_stay - 1e-12);
                let _ = c;
            }
        }
    }
}
