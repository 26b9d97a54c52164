//! Finite-difference gradient checking.
//!
//! Central differences around a point, one perturbed forward evaluation per
//! component. Deliberately independent of the reverse pass so the two can
//! check each other.

use crate::expr::{Bindings, Expr, ExprError};
use crate::scalar::Scalar;
use crate::vector::Vector;

/// Central-difference gradient of `expr` at `point`, perturbing every
/// component of every bound variable by `±h`.
pub fn finite_diff_grad<S: Scalar>(
    expr: &Expr<S>,
    point: &Bindings<S>,
    h: S,
) -> Result<Bindings<S>, ExprError> {
    assert!(h > S::zero(), "step must be positive");
    let mut grads = Bindings::new();
    let mut work = point.clone();
    let names: Vec<String> = point.keys().cloned().collect();
    for name in names {
        let dim = point[&name].dim();
        let mut g = Vector::zeros(dim);
        for c in 0..dim {
            let base = point[&name].get(c);
            work.get_mut(&name).expect("cloned from point").set(c, base + h);
            let up = expr.forward(&work)?.loss();
            work.get_mut(&name).expect("cloned from point").set(c, base - h);
            let down = expr.forward(&work)?.loss();
            work.get_mut(&name).expect("cloned from point").set(c, base);
            g.set(c, (up - down) / (S::two() * h));
        }
        grads.insert(name, g);
    }
    Ok(grads)
}

/// Worst relative disagreement between two gradient maps over the same
/// variables, with denominator `max(1, |reference|)` so near-zero components
/// compare absolutely.
pub fn max_relative_error<S: Scalar>(got: &Bindings<S>, reference: &Bindings<S>) -> S {
    assert_eq!(
        got.keys().collect::<Vec<_>>(),
        reference.keys().collect::<Vec<_>>(),
        "gradient maps cover the same variables"
    );
    let mut worst = S::zero();
    for (name, r) in reference {
        let g = &got[name];
        assert_eq!(g.dim(), r.dim(), "gradient dims agree for `{name}`");
        for c in 0..r.dim() {
            let denom = S::one().max(r.get(c).abs());
            let err = (g.get(c) - r.get(c)).abs() / denom;
            worst = worst.max(err);
        }
    }
    worst
}

/// Checks the reverse-mode gradient against central differences at `point`.
/// Returns the worst relative error.
pub fn check_gradients<S: Scalar>(
    expr: &Expr<S>,
    point: &Bindings<S>,
    h: S,
) -> Result<S, ExprError> {
    let eval = expr.forward(point)?;
    let analytic = expr.backward(&eval, point)?;
    let numeric = finite_diff_grad(expr, point, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}
