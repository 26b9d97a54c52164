//! Independent checks for optimizer output: exhaustive grid search, the
//! closed-form optimum of the sum-target quadratic family, and sampling
//! probes for convexity and gradient smoothness. Nothing here reuses the
//! reverse-mode engine, so agreement between the two is meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Hard ceiling on grid evaluations; anything above this is a misuse of an
/// exhaustive oracle rather than a bigger machine problem.
pub const GRID_EVAL_LIMIT: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridMin<S: Scalar> {
    pub argmin: Vec<S>,
    pub value: S,
    pub evaluations: u64,
}

/// Exhaustive search of `f` over the axis-aligned box `[lo, hi]` with
/// `points_per_dim` samples per axis (endpoints included). Ties keep the
/// lexicographically smallest grid index, so results are deterministic.
pub fn grid_search_min<S: Scalar>(
    f: impl Fn(&[S]) -> S,
    lo: &[S],
    hi: &[S],
    points_per_dim: usize,
) -> GridMin<S> {
    let dim = lo.len();
    assert_eq!(dim, hi.len(), "bounds must have equal dimension");
    assert!(dim > 0, "empty search domain");
    assert!(points_per_dim >= 2, "need at least the two endpoints per axis");
    for (l, h) in lo.iter().zip(hi.iter()) {
        assert!(l < h, "each lower bound must be below its upper bound");
    }
    let total = (points_per_dim as u64)
        .checked_pow(u32::try_from(dim).expect("dimension fits in u32"))
        .expect("grid size overflow");
    assert!(
        total <= GRID_EVAL_LIMIT,
        "grid of {total} evaluations exceeds the {GRID_EVAL_LIMIT} limit"
    );

    let axis = |d: usize, i: usize| -> S {
        let t = S::from_f(i as f64 / (points_per_dim - 1) as f64);
        lo[d] + (hi[d] - lo[d]) * t
    };

    let mut idx = vec![0usize; dim];
    let mut point: Vec<S> = (0..dim).map(|d| axis(d, 0)).collect();
    let mut best_point = point.clone();
    let mut best = f(&point);
    let mut evaluations = 1u64;

    // Odometer over grid indices, most significant axis first, which makes
    // the visit order lexicographic.
    'outer: loop {
        let mut d = dim;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < points_per_dim {
                point[d] = axis(d, idx[d]);
                break;
            }
            idx[d] = 0;
            point[d] = axis(d, 0);
        }
        let v = f(&point);
        evaluations += 1;
        if v < best {
            best = v;
            best_point.copy_from_slice(&point);
        }
    }

    GridMin {
        argmin: best_point,
        value: best,
        evaluations,
    }
}

/// Closed-form minimizer of `(sum_i x_i - y_star)^2 + sum_i lambda_i x_i^2`
/// over scalar actions with every `lambda_i > 0`: stationarity gives
/// `x_i = c / lambda_i` with `c = y_star / (1 + sum_j 1/lambda_j)`, and the
/// optimal loss is `y_star^2 / (1 + sum_j 1/lambda_j)`.
pub fn quadratic_kkt_solution<S: Scalar>(lambdas: &[S], y_star: S) -> (Vec<S>, S) {
    assert!(!lambdas.is_empty(), "at least one agent");
    assert!(
        lambdas.iter().all(|l| *l > S::zero()),
        "closed form requires strictly positive penalties"
    );
    let inv_sum = lambdas
        .iter()
        .fold(S::zero(), |acc, l| acc + S::one() / *l);
    let c = y_star / (S::one() + inv_sum);
    let actions = lambdas.iter().map(|l| c / *l).collect();
    let loss = y_star * y_star / (S::one() + inv_sum);
    (actions, loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport<S: Scalar> {
    pub pairs: usize,
    pub violations: usize,
    /// Largest observed `f(midpoint) - (f(a)+f(b))/2`; positive means a
    /// midpoint-convexity violation of that size.
    pub worst_gap: S,
}

impl<S: Scalar> ConvexityReport<S> {
    pub fn looks_convex(&self) -> bool {
        self.violations == 0
    }
}

/// Midpoint-convexity sampling probe: for random pairs in the box, convex
/// functions satisfy `f((a+b)/2) <= (f(a)+f(b))/2`. A violation beyond `tol`
/// certifies nonconvexity; zero violations is evidence (not proof) of
/// convexity.
pub fn convexity_probe<S: Scalar>(
    f: impl Fn(&[S]) -> S,
    lo: &[S],
    hi: &[S],
    pairs: usize,
    tol: S,
    seed: u64,
) -> ConvexityReport<S> {
    let dim = lo.len();
    assert_eq!(dim, hi.len(), "bounds must have equal dimension");
    assert!(dim > 0 && pairs > 0, "degenerate probe");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<S> {
        (0..dim)
            .map(|d| {
                let t = S::from_f(rng.gen_range(0.0..=1.0));
                lo[d] + (hi[d] - lo[d]) * t
            })
            .collect()
    };
    let mut violations = 0usize;
    let mut worst_gap = S::neg_infinity();
    let half = S::one() / S::two();
    for _ in 0..pairs {
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let mid: Vec<S> = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (*x + *y) * half)
            .collect();
        let gap = f(&mid) - (f(&a) + f(&b)) * half;
        worst_gap = worst_gap.max(gap);
        if gap > tol {
            violations += 1;
        }
    }
    ConvexityReport {
        pairs,
        violations,
        worst_gap,
    }
}

/// Crude gradient-smoothness estimate: the largest observed ratio
/// `|g(a)-g(b)| / |a-b|` over random pairs, a lower bound on the Lipschitz
/// constant of `g`. Used to sanity-check step sizes (stable gradient
/// stepping needs `eta < 2/L`).
pub fn gradient_lipschitz_probe<S: Scalar>(
    g: impl Fn(&[S]) -> Vec<S>,
    lo: &[S],
    hi: &[S],
    pairs: usize,
    seed: u64,
) -> S {
    let dim = lo.len();
    assert_eq!(dim, hi.len(), "bounds must have equal dimension");
    assert!(dim > 0 && pairs > 0, "degenerate probe");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<S> {
        (0..dim)
            .map(|d| {
                let t = S::from_f(rng.gen_range(0.0..=1.0));
                lo[d] + (hi[d] - lo[d]) * t
            })
            .collect()
    };
    let norm = |v: &[S]| -> S {
        v.iter()
            .fold(S::zero(), |acc, c| acc + *c * *c)
            .sqrt()
    };
    let mut worst = S::zero();
    for _ in 0..pairs {
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let dist: Vec<S> = a.iter().zip(b.iter()).map(|(x, y)| *x - *y).collect();
        let d = norm(&dist);
        if d == S::zero() {
            continue;
        }
        let ga = g(&a);
        let gb = g(&b);
        let diff: Vec<S> = ga.iter().zip(gb.iter()).map(|(x, y)| *x - *y).collect();
        worst = worst.max(norm(&diff) / d);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        (x1 + x2 - 10.0).powi(2) + 0.5 * x1 * x1
    }

    #[test]
    fn grid_finds_toy_optimum() {
        // true optimum (0, 10), loss 0; grid pitch 0.05.
        let m = grid_search_min(toy, &[-1.0, 8.0], &[1.0, 12.0], 81);
        assert_eq!(m.evaluations, 81 * 81);
        assert!((m.argmin[0]).abs() < 1e-12);
        assert!((m.argmin[1] - 10.0).abs() < 1e-12);
        assert!(m.value < 1e-20);
    }

    #[test]
    fn grid_tie_break_is_lexicographic() {
        let m = grid_search_min(|_x: &[f64]| 1.0, &[0.0, 0.0], &[1.0, 1.0], 3);
        assert_eq!(m.argmin, vec![0.0, 0.0]);
        assert_eq!(m.value, 1.0);
        assert_eq!(m.evaluations, 9);
    }

    #[test]
    #[should_panic(expected = "exceeds")]
    fn grid_eval_guard_trips() {
        grid_search_min(|_: &[f64]| 0.0, &[0.0; 5], &[1.0; 5], 100);
    }

    #[test]
    fn kkt_closed_form_matches_grid() {
        let lambdas = [1.0f64, 2.0];
        let (x, l) = quadratic_kkt_solution(&lambdas, 6.0);
        // c = 6 / (1 + 1 + 0.5) = 2.4 -> x = (2.4, 1.2), loss = 36/2.5
        assert!((x[0] - 2.4).abs() < 1e-12);
        assert!((x[1] - 1.2).abs() < 1e-12);
        assert!((l - 14.4).abs() < 1e-12);
        let f = |p: &[f64]| (p[0] + p[1] - 6.0).powi(2) + p[0] * p[0] + 2.0 * p[1] * p[1];
        let m = grid_search_min(f, &[2.0, 0.8], &[2.8, 1.6], 401);
        // grid pitch 0.002 lands exactly on the optimum
        assert!((m.argmin[0] - x[0]).abs() < 1e-9);
        assert!((m.argmin[1] - x[1]).abs() < 1e-9);
        assert!((m.value - l).abs() < 1e-9);
        assert!((f(&x) - l).abs() < 1e-12);
    }

    #[test]
    fn kkt_loss_is_grid_floor() {
        // no grid point anywhere may beat the closed-form loss
        let lambdas = [0.7, 1.3, 2.1];
        let (_, l) = quadratic_kkt_solution(&lambdas, 4.0);
        let f = |p: &[f64]| {
            let s: f64 = p.iter().sum();
            (s - 4.0).powi(2)
                + lambdas
                    .iter()
                    .zip(p.iter())
                    .map(|(lam, x)| lam * x * x)
                    .sum::<f64>()
        };
        let m = grid_search_min(f, &[-1.0; 3], &[3.0; 3], 41);
        assert!(m.value >= l - 1e-12);
    }

    #[test]
    fn convex_function_passes_probe() {
        let r = convexity_probe(toy, &[-5.0, -5.0], &[15.0, 15.0], 500, 1e-9, 7);
        assert!(r.looks_convex());
        assert!(r.worst_gap <= 1e-9);
    }

    #[test]
    fn double_well_fails_probe() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2);
        let r = convexity_probe(f, &[-2.0], &[2.0], 500, 1e-9, 7);
        assert!(!r.looks_convex());
        assert!(r.worst_gap > 0.1);
    }

    #[test]
    fn lipschitz_probe_brackets_quadratic_curvature() {
        // g(x) = 2x has exact Lipschitz constant 2
        let g = |x: &[f64]| vec![2.0 * x[0], 2.0 * x[1]];
        let est = gradient_lipschitz_probe(g, &[-3.0, -3.0], &[3.0, 3.0], 200, 11);
        assert!(est > 1.99 && est <= 2.0 + 1e-12, "estimate {est}");
    }
}
