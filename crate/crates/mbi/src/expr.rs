//! Loss expressions with reverse-mode differentiation.
//!
//! An `Expr` is an arena of primitive nodes (constants, variable references,
//! add/sub/mul, square, scale, sum-reduce, dot, registered elementwise maps)
//! built bottom-up, so children always precede parents and both evaluation
//! passes are single linear sweeps. The forward pass caches one value per
//! node; the backward pass folds adjoints in reverse arena order, which makes
//! gradient accumulation order deterministic: identical bindings give
//! bit-identical losses and gradients.
//!
//! Values are scalars or vectors. Elementwise ops broadcast a scalar operand
//! across a vector operand; the matching adjoint is reduced back by
//! summation. The root of an expression must evaluate to a scalar.

use std::collections::BTreeMap;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::scalar::Scalar;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("variable `{name}` is not bound")]
    UnboundVariable { name: String },
    #[error("non-finite result in {context}")]
    NonFiniteResult { context: String },
    #[error("bindings changed since the forward pass")]
    StaleCache,
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: String,
        left: usize,
        right: usize,
    },
    #[error("loss expression must evaluate to a scalar")]
    NonScalarLoss,
    #[error("vectors must have at least one component")]
    EmptyVector,
}

/// Handle to a node inside the builder that minted it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(u32);

/// Handle to a registered elementwise map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnaryId(u32);

#[derive(Clone)]
enum Op<S: Scalar> {
    Const(S),
    Var(u32),
    Add,
    Sub,
    Mul,
    Square,
    Scale(S),
    Sum,
    Dot,
    Unary(u32),
}

#[derive(Clone)]
struct Node<S: Scalar> {
    op: Op<S>,
    children: SmallVec<[u32; 2]>,
}

type UnaryFn<S> = Arc<dyn Fn(S) -> S + Send + Sync>;

#[derive(Clone)]
struct UnaryDef<S: Scalar> {
    name: String,
    f: UnaryFn<S>,
    df: UnaryFn<S>,
}

/// Cached per-node value. Variables always evaluate to vectors; reductions
/// and arithmetic over reductions produce scalars.
#[derive(Debug, Clone)]
enum Value<S: Scalar> {
    Scalar(S),
    Vec(Vector<S>),
}

impl<S: Scalar> Value<S> {
    fn is_finite(&self) -> bool {
        match self {
            Value::Scalar(s) => s.is_finite(),
            Value::Vec(v) => v.is_finite(),
        }
    }

    fn map(&self, f: impl Fn(S) -> S) -> Value<S> {
        match self {
            Value::Scalar(s) => Value::Scalar(f(*s)),
            Value::Vec(v) => Value::Vec(Vector::from_smallvec(
                v.components().iter().map(|c| f(*c)).collect(),
            )),
        }
    }

    fn neg(&self) -> Value<S> {
        self.map(|c| -c)
    }

    /// Elementwise combine with scalar broadcast. `context` names the op for
    /// dimension-mismatch errors.
    fn zip(&self, other: &Value<S>, context: &str, f: impl Fn(S, S) -> S) -> Result<Value<S>, ExprError> {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Ok(Value::Scalar(f(*a, *b))),
            (Value::Vec(a), Value::Scalar(b)) => Ok(Value::Vec(Vector::from_smallvec(
                a.components().iter().map(|c| f(*c, *b)).collect(),
            ))),
            (Value::Scalar(a), Value::Vec(b)) => Ok(Value::Vec(Vector::from_smallvec(
                b.components().iter().map(|c| f(*a, *c)).collect(),
            ))),
            (Value::Vec(a), Value::Vec(b)) => {
                if a.dim() != b.dim() {
                    return Err(ExprError::DimensionMismatch {
                        context: context.to_string(),
                        left: a.dim(),
                        right: b.dim(),
                    });
                }
                Ok(Value::Vec(Vector::from_smallvec(
                    a.components()
                        .iter()
                        .zip(b.components().iter())
                        .map(|(x, y)| f(*x, *y))
                        .collect(),
                )))
            }
        }
    }

    /// Reduces an adjoint contribution to the shape of the child it flows
    /// into: a scalar child that was broadcast across a vector op receives
    /// the component sum.
    fn reduce_like(self, child: &Value<S>) -> Value<S> {
        match (&self, child) {
            (Value::Vec(v), Value::Scalar(_)) => Value::Scalar(v.sum()),
            _ => self,
        }
    }

    fn add_assign(&mut self, other: Value<S>) {
        let merged = self
            .zip(&other, "adjoint accumulation", |a, b| a + b)
            .expect("adjoint shapes agree by construction");
        *self = merged;
    }
}

/// Builds expressions bottom-up. `var` deduplicates by name, so two
/// references to the same variable share one node and one gradient slot.
pub struct ExprBuilder<S: Scalar> {
    nodes: Vec<Node<S>>,
    var_names: Vec<String>,
    var_nodes: BTreeMap<String, NodeRef>,
    unaries: Vec<UnaryDef<S>>,
}

impl<S: Scalar> Default for ExprBuilder<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ExprBuilder<S> {
    pub fn new() -> Self {
        ExprBuilder {
            nodes: Vec::new(),
            var_names: Vec::new(),
            var_nodes: BTreeMap::new(),
            unaries: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<S>, children: SmallVec<[u32; 2]>) -> NodeRef {
        let id = u32::try_from(self.nodes.len()).expect("expression too large");
        self.nodes.push(Node { op, children });
        NodeRef(id)
    }

    pub fn var(&mut self, name: &str) -> NodeRef {
        if let Some(r) = self.var_nodes.get(name) {
            return *r;
        }
        let slot = u32::try_from(self.var_names.len()).expect("too many variables");
        self.var_names.push(name.to_string());
        let r = self.push(Op::Var(slot), SmallVec::new());
        self.var_nodes.insert(name.to_string(), r);
        r
    }

    pub fn constant(&mut self, value: S) -> NodeRef {
        self.push(Op::Const(value), SmallVec::new())
    }

    /// N-ary sum of terms. A single term passes through unchanged.
    pub fn add(&mut self, terms: &[NodeRef]) -> NodeRef {
        assert!(!terms.is_empty(), "add requires at least one term");
        if terms.len() == 1 {
            return terms[0];
        }
        self.push(Op::Add, terms.iter().map(|r| r.0).collect())
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.push(Op::Sub, SmallVec::from_slice(&[a.0, b.0]))
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.push(Op::Mul, SmallVec::from_slice(&[a.0, b.0]))
    }

    pub fn square(&mut self, a: NodeRef) -> NodeRef {
        self.push(Op::Square, SmallVec::from_slice(&[a.0]))
    }

    pub fn scale(&mut self, k: S, a: NodeRef) -> NodeRef {
        self.push(Op::Scale(k), SmallVec::from_slice(&[a.0]))
    }

    /// Sum-reduce a vector to a scalar; scalars pass through.
    pub fn sum(&mut self, a: NodeRef) -> NodeRef {
        self.push(Op::Sum, SmallVec::from_slice(&[a.0]))
    }

    pub fn dot(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.push(Op::Dot, SmallVec::from_slice(&[a.0, b.0]))
    }

    /// Registers an elementwise map with its analytic derivative.
    pub fn register_unary(
        &mut self,
        name: &str,
        f: impl Fn(S) -> S + Send + Sync + 'static,
        df: impl Fn(S) -> S + Send + Sync + 'static,
    ) -> UnaryId {
        let id = u32::try_from(self.unaries.len()).expect("too many unary maps");
        self.unaries.push(UnaryDef {
            name: name.to_string(),
            f: Arc::new(f),
            df: Arc::new(df),
        });
        UnaryId(id)
    }

    pub fn unary(&mut self, u: UnaryId, a: NodeRef) -> NodeRef {
        assert!((u.0 as usize) < self.unaries.len(), "unregistered unary map");
        self.push(Op::Unary(u.0), SmallVec::from_slice(&[a.0]))
    }

    pub fn finish(self, root: NodeRef) -> Result<Expr<S>, ExprError> {
        assert!((root.0 as usize) < self.nodes.len(), "root not in this builder");
        for node in &self.nodes {
            let finite = match node.op {
                Op::Const(c) => c.is_finite(),
                Op::Scale(k) => k.is_finite(),
                _ => true,
            };
            if !finite {
                return Err(ExprError::NonFiniteResult {
                    context: "expression constant".to_string(),
                });
            }
        }
        Ok(Expr {
            nodes: self.nodes,
            root: root.0,
            var_names: self.var_names,
            unaries: self.unaries,
        })
    }
}

/// Variable bindings keyed by name. Ordered map so every name-keyed
/// iteration in the crate is deterministic.
pub type Bindings<S> = BTreeMap<String, Vector<S>>;

/// Immutable differentiable expression. Cheap to share across threads; all
/// evaluation state lives in `Evaluation`.
#[derive(Clone)]
pub struct Expr<S: Scalar> {
    nodes: Vec<Node<S>>,
    root: u32,
    var_names: Vec<String>,
    unaries: Vec<UnaryDef<S>>,
}

/// Forward-pass cache: per-node values plus a snapshot of the bindings the
/// pass used. The backward pass verifies its bindings against the snapshot
/// and fails with `StaleCache` on any difference.
pub struct Evaluation<S: Scalar> {
    values: Vec<Value<S>>,
    snapshot: Vec<Vector<S>>,
    loss: S,
}

impl<S: Scalar> Evaluation<S> {
    pub fn loss(&self) -> S {
        self.loss
    }
}

impl<S: Scalar> Expr<S> {
    /// Variable names referenced by the expression, in slot order.
    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn resolve(&self, bindings: &Bindings<S>) -> Result<Vec<Vector<S>>, ExprError> {
        self.var_names
            .iter()
            .map(|name| {
                bindings
                    .get(name)
                    .cloned()
                    .ok_or_else(|| ExprError::UnboundVariable { name: name.clone() })
            })
            .collect()
    }

    /// Evaluates the loss at the given bindings.
    pub fn forward(&self, bindings: &Bindings<S>) -> Result<Evaluation<S>, ExprError> {
        let by_slot = self.resolve(bindings)?;
        self.forward_slots(by_slot)
    }

    /// Slot-indexed forward pass; `values[slot]` binds `var_names()[slot]`.
    /// The vector is kept as the staleness snapshot.
    pub fn forward_slots(&self, bound: Vec<Vector<S>>) -> Result<Evaluation<S>, ExprError> {
        if bound.len() != self.var_names.len() {
            return Err(ExprError::UnboundVariable {
                name: self
                    .var_names
                    .get(bound.len())
                    .cloned()
                    .unwrap_or_else(|| "<extra slot>".to_string()),
            });
        }
        let mut values: Vec<Value<S>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(node, &values, &bound)?;
            if !v.is_finite() {
                return Err(ExprError::NonFiniteResult {
                    context: format!("node {i}"),
                });
            }
            values.push(v);
        }
        let loss = match &values[self.root as usize] {
            Value::Scalar(s) => *s,
            Value::Vec(_) => return Err(ExprError::NonScalarLoss),
        };
        Ok(Evaluation {
            values,
            snapshot: bound,
            loss,
        })
    }

    fn eval_node(
        &self,
        node: &Node<S>,
        values: &[Value<S>],
        bound: &[Vector<S>],
    ) -> Result<Value<S>, ExprError> {
        let child = |k: usize| &values[node.children[k] as usize];
        match &node.op {
            Op::Const(c) => Ok(Value::Scalar(*c)),
            Op::Var(slot) => Ok(Value::Vec(bound[*slot as usize].clone())),
            Op::Add => {
                let mut acc = child(0).clone();
                for k in 1..node.children.len() {
                    acc = acc.zip(child(k), "add", |a, b| a + b)?;
                }
                Ok(acc)
            }
            Op::Sub => child(0).zip(child(1), "sub", |a, b| a - b),
            Op::Mul => child(0).zip(child(1), "mul", |a, b| a * b),
            Op::Square => Ok(child(0).map(|c| c * c)),
            Op::Scale(k) => {
                let k = *k;
                Ok(child(0).map(|c| c * k))
            }
            Op::Sum => Ok(match child(0) {
                Value::Scalar(s) => Value::Scalar(*s),
                Value::Vec(v) => Value::Scalar(v.sum()),
            }),
            Op::Dot => match (child(0), child(1)) {
                (Value::Scalar(a), Value::Scalar(b)) => Ok(Value::Scalar(*a * *b)),
                (Value::Vec(a), Value::Vec(b)) => {
                    if a.dim() != b.dim() {
                        return Err(ExprError::DimensionMismatch {
                            context: "dot".to_string(),
                            left: a.dim(),
                            right: b.dim(),
                        });
                    }
                    Ok(Value::Scalar(a.dot(b)))
                }
                (a, b) => Err(ExprError::DimensionMismatch {
                    context: "dot operands must both be vectors or both scalars".to_string(),
                    left: match a {
                        Value::Scalar(_) => 0,
                        Value::Vec(v) => v.dim(),
                    },
                    right: match b {
                        Value::Scalar(_) => 0,
                        Value::Vec(v) => v.dim(),
                    },
                }),
            },
            Op::Unary(u) => {
                let f = &self.unaries[*u as usize].f;
                Ok(child(0).map(|c| f(c)))
            }
        }
    }

    /// Gradient of the loss with respect to every bound variable. Bindings
    /// must be the ones the forward pass saw (`StaleCache` otherwise).
    /// Variables bound but not referenced get zero gradients.
    pub fn backward(
        &self,
        eval: &Evaluation<S>,
        bindings: &Bindings<S>,
    ) -> Result<Bindings<S>, ExprError> {
        let by_slot = self.resolve(bindings)?;
        let grads = self.backward_slots(eval, &by_slot)?;
        let mut out = Bindings::new();
        for (name, grad) in self.var_names.iter().zip(grads.into_iter()) {
            out.insert(name.clone(), grad);
        }
        for (name, value) in bindings {
            out.entry(name.clone())
                .or_insert_with(|| Vector::zeros(value.dim()));
        }
        Ok(out)
    }

    /// Slot-indexed backward pass; result is aligned with `var_names()`.
    pub fn backward_slots(
        &self,
        eval: &Evaluation<S>,
        bound: &[Vector<S>],
    ) -> Result<Vec<Vector<S>>, ExprError> {
        if bound.len() != eval.snapshot.len()
            || bound
                .iter()
                .zip(eval.snapshot.iter())
                .any(|(a, b)| a != b)
        {
            return Err(ExprError::StaleCache);
        }
        let n = self.nodes.len();
        let mut adjoints: Vec<Option<Value<S>>> = vec![None; n];
        adjoints[self.root as usize] = Some(Value::Scalar(S::one()));

        // Reverse arena order: every parent has a higher index than its
        // children, so each adjoint is final before it is propagated. Leaves
        // keep theirs for extraction below.
        for i in (0..n).rev() {
            if matches!(self.nodes[i].op, Op::Var(_) | Op::Const(_)) {
                continue;
            }
            let Some(up) = adjoints[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let contribute = |adjoints: &mut Vec<Option<Value<S>>>, k: usize, c: Value<S>| {
                let idx = node.children[k] as usize;
                let shaped = c.reduce_like(&eval.values[idx]);
                let slot = &mut adjoints[idx];
                match slot {
                    Some(existing) => existing.add_assign(shaped),
                    None => *slot = Some(shaped),
                }
            };
            match &node.op {
                Op::Const(_) | Op::Var(_) => {}
                Op::Add => {
                    for k in 0..node.children.len() {
                        contribute(&mut adjoints, k, up.clone());
                    }
                }
                Op::Sub => {
                    contribute(&mut adjoints, 0, up.clone());
                    contribute(&mut adjoints, 1, up.neg());
                }
                Op::Mul => {
                    let a = eval.values[node.children[0] as usize].clone();
                    let b = eval.values[node.children[1] as usize].clone();
                    contribute(&mut adjoints, 0, up.zip(&b, "mul adjoint", |u, v| u * v)?);
                    contribute(&mut adjoints, 1, up.zip(&a, "mul adjoint", |u, v| u * v)?);
                }
                Op::Square => {
                    let c = eval.values[node.children[0] as usize].clone();
                    let two = S::two();
                    contribute(
                        &mut adjoints,
                        0,
                        up.zip(&c, "square adjoint", |u, v| u * two * v)?,
                    );
                }
                Op::Scale(k) => {
                    let k = *k;
                    contribute(&mut adjoints, 0, up.map(|u| u * k));
                }
                Op::Sum => {
                    let child_val = &eval.values[node.children[0] as usize];
                    let Value::Scalar(u) = up else {
                        unreachable!("sum produces a scalar");
                    };
                    let c = match child_val {
                        Value::Scalar(_) => Value::Scalar(u),
                        Value::Vec(v) => Value::Vec(Vector::from_smallvec(
                            std::iter::repeat(u).take(v.dim()).collect(),
                        )),
                    };
                    contribute(&mut adjoints, 0, c);
                }
                Op::Dot => {
                    let a = eval.values[node.children[0] as usize].clone();
                    let b = eval.values[node.children[1] as usize].clone();
                    let Value::Scalar(u) = up else {
                        unreachable!("dot produces a scalar");
                    };
                    contribute(&mut adjoints, 0, b.map(|v| u * v));
                    contribute(&mut adjoints, 1, a.map(|v| u * v));
                }
                Op::Unary(uid) => {
                    let df = self.unaries[*uid as usize].df.clone();
                    let c = eval.values[node.children[0] as usize].clone();
                    let dvals = c.map(|v| df(v));
                    contribute(
                        &mut adjoints,
                        0,
                        up.zip(&dvals, "unary adjoint", |u, d| u * d)?,
                    );
                }
            }
        }

        let mut grads = Vec::with_capacity(self.var_names.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Var(slot) = node.op {
                debug_assert_eq!(slot as usize, grads.len(), "vars appear in slot order");
                let dim = bound[slot as usize].dim();
                let g = match adjoints[i].take() {
                    Some(Value::Vec(v)) => v,
                    Some(Value::Scalar(_)) => unreachable!("variables evaluate to vectors"),
                    None => Vector::zeros(dim),
                };
                if !g.is_finite() {
                    return Err(ExprError::NonFiniteResult {
                        context: format!("gradient of `{}`", self.var_names[slot as usize]),
                    });
                }
                grads.push(g);
            }
        }
        Ok(grads)
    }

    /// Copies this expression into `builder`, wiring each variable to the
    /// node `wire` maps its name to. Used to inline function-node templates
    /// into one flat loss expression.
    pub fn inline_into(
        &self,
        builder: &mut ExprBuilder<S>,
        wire: &BTreeMap<String, NodeRef>,
    ) -> Result<NodeRef, ExprError> {
        let mut unary_map: Vec<UnaryId> = Vec::with_capacity(self.unaries.len());
        for def in &self.unaries {
            let f = def.f.clone();
            let df = def.df.clone();
            let id = builder.register_unary(&def.name, move |x| f(x), move |x| df(x));
            unary_map.push(id);
        }
        let mut node_map: Vec<NodeRef> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mapped_children: SmallVec<[u32; 2]> = node
                .children
                .iter()
                .map(|c| node_map[*c as usize].0)
                .collect();
            let r = match &node.op {
                Op::Var(slot) => {
                    let name = &self.var_names[*slot as usize];
                    *wire
                        .get(name)
                        .ok_or_else(|| ExprError::UnboundVariable { name: name.clone() })?
                }
                Op::Const(c) => builder.constant(*c),
                Op::Add => builder.push(Op::Add, mapped_children),
                Op::Sub => builder.push(Op::Sub, mapped_children),
                Op::Mul => builder.push(Op::Mul, mapped_children),
                Op::Square => builder.push(Op::Square, mapped_children),
                Op::Scale(k) => builder.push(Op::Scale(*k), mapped_children),
                Op::Sum => builder.push(Op::Sum, mapped_children),
                Op::Dot => builder.push(Op::Dot, mapped_children),
                Op::Unary(u) => builder.push(Op::Unary(unary_map[*u as usize].0), mapped_children),
            };
            node_map.push(r);
        }
        Ok(node_map[self.root as usize])
    }
}

/// Convenience: evaluate the loss once without keeping the cache.
pub fn forward_eval<S: Scalar>(expr: &Expr<S>, bindings: &Bindings<S>) -> Result<S, ExprError> {
    Ok(expr.forward(bindings)?.loss())
}

/// Convenience: forward plus backward in one call.
pub fn backward_eval<S: Scalar>(
    expr: &Expr<S>,
    bindings: &Bindings<S>,
) -> Result<Bindings<S>, ExprError> {
    let eval = expr.forward(bindings)?;
    expr.backward(&eval, bindings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: &[(&str, &[f64])]) -> Bindings<f64> {
        x.iter()
            .map(|(n, v)| (n.to_string(), Vector::new(v).unwrap()))
            .collect()
    }

    /// (x1 + x2 - y)^2 + lambda * x1^2 over scalar actions.
    fn toy(lambda: f64) -> Expr<f64> {
        let mut eb = ExprBuilder::new();
        let x1 = eb.var("x1");
        let x2 = eb.var("x2");
        let y = eb.var("y");
        let s1 = eb.sum(x1);
        let s2 = eb.sum(x2);
        let sy = eb.sum(y);
        let total = eb.add(&[s1, s2]);
        let gap = eb.sub(total, sy);
        let sq = eb.square(gap);
        let pen = eb.square(s1);
        let pen = eb.scale(lambda, pen);
        let loss = eb.add(&[sq, pen]);
        eb.finish(loss).unwrap()
    }

    #[test]
    fn toy_forward_value() {
        let e = toy(0.5);
        let loss = forward_eval(&e, &b(&[("x1", &[1.0]), ("x2", &[2.0]), ("y", &[3.0])])).unwrap();
        assert_eq!(loss, 0.5);
    }

    #[test]
    fn toy_gradient_at_interior_point() {
        let e = toy(0.5);
        let point = b(&[("x1", &[1.0]), ("x2", &[2.0]), ("y", &[3.0])]);
        let grads = backward_eval(&e, &point).unwrap();
        // residual x1+x2-y = 0, so only the quadratic penalty contributes
        assert_eq!(grads["x1"].components(), &[1.0]);
        assert_eq!(grads["x2"].components(), &[0.0]);
    }

    #[test]
    fn separable_quadratic_gradient() {
        // sum_j lambda_j ||x_j||^2 has gradient 2 lambda_j x_j
        let mut eb = ExprBuilder::new();
        let terms: Vec<NodeRef> = (0..3)
            .map(|j| {
                let x = eb.var(&format!("x{j}"));
                let d = eb.dot(x, x);
                eb.scale(0.5 * (j + 1) as f64, d)
            })
            .collect();
        let root = eb.add(&terms);
        let e = eb.finish(root).unwrap();
        let point = b(&[("x0", &[1.0, 2.0]), ("x1", &[3.0]), ("x2", &[-1.0])]);
        let grads = backward_eval(&e, &point).unwrap();
        assert_eq!(grads["x0"].components(), &[1.0, 2.0]);
        assert_eq!(grads["x1"].components(), &[6.0]);
        assert_eq!(grads["x2"].components(), &[-3.0]);
    }

    #[test]
    fn constant_expression_needs_no_bindings() {
        let mut eb = ExprBuilder::new();
        let c = eb.constant(7.0);
        let e = eb.finish(c).unwrap();
        assert_eq!(forward_eval(&e, &Bindings::new()).unwrap(), 7.0);
    }

    #[test]
    fn unbound_variable_is_reported() {
        let e = toy(0.5);
        let err = forward_eval(&e, &b(&[("x1", &[1.0]), ("x2", &[2.0])])).unwrap_err();
        assert_eq!(
            err,
            ExprError::UnboundVariable {
                name: "y".to_string()
            }
        );
    }

    #[test]
    fn non_finite_intermediate_is_rejected() {
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let s = eb.sum(x);
        let sq = eb.square(s);
        let sq = eb.square(sq);
        let sq = eb.square(sq);
        let sq = eb.square(sq);
        let sq = eb.square(sq);
        let root = eb.square(sq);
        let e = eb.finish(root).unwrap();
        let err = forward_eval(&e, &b(&[("x", &[1e300])])).unwrap_err();
        assert!(matches!(err, ExprError::NonFiniteResult { .. }));
    }

    #[test]
    fn stale_cache_is_detected() {
        let e = toy(0.5);
        let p1 = b(&[("x1", &[1.0]), ("x2", &[2.0]), ("y", &[3.0])]);
        let p2 = b(&[("x1", &[1.0]), ("x2", &[2.5]), ("y", &[3.0])]);
        let eval = e.forward(&p1).unwrap();
        assert!(e.backward(&eval, &p1).is_ok());
        assert_eq!(e.backward(&eval, &p2).unwrap_err(), ExprError::StaleCache);
    }

    #[test]
    fn unreferenced_bound_variable_gets_zero_gradient() {
        let e = toy(0.5);
        let mut point = b(&[("x1", &[1.0]), ("x2", &[2.0]), ("y", &[3.0])]);
        point.insert("spare".to_string(), Vector::new(&[4.0, 5.0]).unwrap());
        let grads = backward_eval(&e, &point).unwrap();
        assert_eq!(grads["spare"].components(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_subexpression_accumulates_both_paths() {
        // loss = (s)^2 + 3*s with s = sum(x): dL/dx = 2s + 3
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let s = eb.sum(x);
        let sq = eb.square(s);
        let lin = eb.scale(3.0, s);
        let root = eb.add(&[sq, lin]);
        let e = eb.finish(root).unwrap();
        let grads = backward_eval(&e, &b(&[("x", &[2.0])])).unwrap();
        assert_eq!(grads["x"].components(), &[7.0]);
    }

    #[test]
    fn self_dot_doubles() {
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let d = eb.dot(x, x);
        let e = eb.finish(d).unwrap();
        let grads = backward_eval(&e, &b(&[("x", &[3.0, -1.0])])).unwrap();
        assert_eq!(grads["x"].components(), &[6.0, -2.0]);
    }

    #[test]
    fn registered_unary_uses_supplied_derivative() {
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let s = eb.sum(x);
        let ex = eb.register_unary("exp", |v: f64| v.exp(), |v: f64| v.exp());
        let root = eb.unary(ex, s);
        let e = eb.finish(root).unwrap();
        let point = b(&[("x", &[0.5])]);
        let loss = forward_eval(&e, &point).unwrap();
        assert!((loss - 0.5f64.exp()).abs() < 1e-15);
        let grads = backward_eval(&e, &point).unwrap();
        assert!((grads["x"].get(0) - 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn vector_root_is_not_a_loss() {
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let sq = eb.square(x);
        let e = eb.finish(sq).unwrap();
        let err = forward_eval(&e, &b(&[("x", &[1.0, 2.0])])).unwrap_err();
        assert_eq!(err, ExprError::NonScalarLoss);
    }

    #[test]
    fn mixed_dimension_add_is_rejected() {
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let y = eb.var("y");
        let a = eb.add(&[x, y]);
        let s = eb.sum(a);
        let e = eb.finish(s).unwrap();
        let err = forward_eval(&e, &b(&[("x", &[1.0, 2.0]), ("y", &[1.0, 2.0, 3.0])])).unwrap_err();
        assert!(matches!(err, ExprError::DimensionMismatch { .. }));
    }

    #[test]
    fn scalar_broadcast_over_vector_reduces_adjoint() {
        // loss = sum((x - m)^2) with scalar m = sum(y): dL/dm = -2 sum(x - m)
        let mut eb = ExprBuilder::new();
        let x = eb.var("x");
        let y = eb.var("y");
        let m = eb.sum(y);
        let d = eb.sub(x, m);
        let sq = eb.square(d);
        let root = eb.sum(sq);
        let e = eb.finish(root).unwrap();
        let point = b(&[("x", &[1.0, 2.0, 6.0]), ("y", &[2.0])]);
        let grads = backward_eval(&e, &point).unwrap();
        // residuals: -1, 0, 4 -> dL/dy = -2 * 3 = -6
        assert_eq!(grads["y"].components(), &[-6.0]);
        assert_eq!(grads["x"].components(), &[-2.0, 0.0, 8.0]);
    }

    #[test]
    fn forward_backward_are_bit_deterministic() {
        let e = toy(0.7);
        let point = b(&[("x1", &[0.3]), ("x2", &[1.7]), ("y", &[2.9])]);
        let l1 = forward_eval(&e, &point).unwrap();
        let l2 = forward_eval(&e, &point).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        let g1 = backward_eval(&e, &point).unwrap();
        let g2 = backward_eval(&e, &point).unwrap();
        for (k, v) in &g1 {
            assert_eq!(v.get(0).to_bits(), g2[k].get(0).to_bits());
        }
    }

    #[test]
    fn inline_substitutes_wired_nodes() {
        // template t(u) = u^2; host: loss = t(sum(x)) + 1
        let mut tb = ExprBuilder::new();
        let u = tb.var("u");
        let su = tb.sum(u);
        let sq = tb.square(su);
        let template = tb.finish(sq).unwrap();

        let mut hb = ExprBuilder::new();
        let x = hb.var("x");
        let wire: BTreeMap<String, NodeRef> = [("u".to_string(), x)].into();
        let inlined = template.inline_into(&mut hb, &wire).unwrap();
        let one = hb.constant(1.0);
        let root = hb.add(&[inlined, one]);
        let e = hb.finish(root).unwrap();
        let point = b(&[("x", &[3.0])]);
        assert_eq!(forward_eval(&e, &point).unwrap(), 10.0);
        let grads = backward_eval(&e, &point).unwrap();
        assert_eq!(grads["x"].components(), &[6.0]);
    }
}
