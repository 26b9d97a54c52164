//! Gradient-as-incentive coordination for DAGs of boundedly rational agents.
//!
//! A planner owns a differentiable loss over the actions of many agents.
//! Each optimization cycle the agents act on the incentive signals they
//! received last cycle, the planner evaluates the loss forward, and a
//! reverse pass prices every agent's marginal contribution: agent `i`
//! receives `g_i = -dL/dx_i`, the rate at which system welfare improves per
//! unit of its action. Truthful effort along the signal is each agent's best
//! strategy, which is what the audit and Bayesian modules verify.
//!
//! The crate is generic over the scalar type (`f32`/`f64` via [`Scalar`]);
//! the aliases below fix `f64` for ordinary use.

pub mod agent;
pub mod bayes;
pub mod expr;
pub mod gradcheck;
pub mod graph;
pub mod mechanism;
pub mod oracle;
pub mod scalar;
pub mod scenario;
pub mod vector;

pub use scalar::Scalar;

/// `f64` action/signal vector.
pub type Vector64 = vector::Vector<f64>;
/// `f64` loss expression.
pub type Expr64 = expr::Expr<f64>;
/// `f64` expression builder.
pub type ExprBuilder64 = expr::ExprBuilder<f64>;
/// `f64` name-keyed bindings.
pub type Bindings64 = expr::Bindings<f64>;
/// `f64` coordination graph.
pub type Graph64 = graph::Graph<f64>;
/// `f64` mechanism run.
pub type Run64 = mechanism::Run<f64>;
