//! One-dimensional toy with a coupled constraint `y ≤ x`.
//!
//! `f(x, y) = e^{2−y}/(2 + cos 6x) + ½ ln((4x − 2)² + 1)`, `g(x, y) = (y − 2x)²`.
//! Since `g` pushes `y` towards `2x ≥ x`, the constraint is active and
//! `y*(x) = x` on the whole box.

use std::sync::Arc;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::problem::{
    BilevelProblem, Bounds, Evaluation, LinearCoupledConstraint, SecondOrder, SmoothnessConstants,
};

pub const TOY_X_RANGE: (f64, f64) = (0.0, 3.0);

pub fn toy_f(x: f64, y: f64) -> Evaluation {
    let den = 2.0 + (6.0 * x).cos();
    let e = (2.0 - y).exp();
    let s = 4.0 * x - 2.0;
    Evaluation {
        value: e / den + 0.5 * (s * s + 1.0).ln(),
        grad_x: vec![e * 6.0 * (6.0 * x).sin() / (den * den) + 4.0 * s / (s * s + 1.0)],
        grad_y: vec![-e / den],
    }
}

pub fn toy_g(x: f64, y: f64) -> Evaluation {
    let d = y - 2.0 * x;
    Evaluation {
        value: d * d,
        grad_x: vec![-4.0 * d],
        grad_y: vec![2.0 * d],
    }
}

/// `Φ(x) = f(x, x)`.
pub fn toy_hyper_objective(x: f64) -> f64 {
    toy_f(x, x).value
}

pub fn build_toy() -> BilevelProblem {
    let constraint = LinearCoupledConstraint::inequalities(
        DenseMatrix::identity(1),
        DenseMatrix::from_rows(&[vec![-1.0]]).expect("1x1"),
        DenseVector::zeros(1),
    )
    .expect("toy constraint");
    let e2 = 2.0_f64.exp();
    let constants = SmoothnessConstants {
        mu_g: 2.0,
        // sup |∂_y f| for y ∈ [−1, 3]
        l_f0: 3.0_f64.exp(),
        // sup ∂²_yy f for y ∈ [0, 3]
        l_f1: e2,
        // ‖∇²g‖ = ‖[[8, −4], [−4, 2]]‖
        l_g1: 10.0,
    };
    BilevelProblem::new(
        "toy",
        1,
        1,
        Arc::new(|x: &[f64], y: &[f64]| toy_f(x[0], y[0])),
        Arc::new(|x: &[f64], y: &[f64]| toy_g(x[0], y[0])),
        constraint,
        constants,
    )
    .with_hessian(Arc::new(|_x: &[f64], _y: &[f64]| SecondOrder {
        hyy: DenseMatrix::diag(&[2.0]),
        hyx: DenseMatrix::diag(&[-4.0]),
    }))
    .with_x_box(Bounds::uniform(1, TOY_X_RANGE.0, TOY_X_RANGE.1).expect("box"))
}

/// Local minimizers of `Φ` on an `n`-point grid of the box, endpoints included.
pub fn toy_grid_minimizers(n: usize) -> Vec<f64> {
    let (lo, hi) = TOY_X_RANGE;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| toy_hyper_objective(x)).collect();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || vals[i] <= vals[i - 1];
            let right = i == n - 1 || vals[i] <= vals[i + 1];
            left && right
        })
        .map(|i| xs[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_problem;

    #[test]
    fn g_at_one_three() {
        assert_eq!(toy_g(1.0, 3.0).value, 1.0);
    }

    #[test]
    fn reference_delta_is_admissible() {
        let p = build_toy();
        let r = validate_problem(&p, 0.1, Some(11));
        assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn f_at_one_one() {
        let v = toy_hyper_objective(1.0);
        let expected = 1.0_f64.exp() / (2.0 + 6.0_f64.cos()) + 0.5 * 5.0_f64.ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.723_004_583).abs() < 1e-9);
    }

    #[test]
    fn grid_has_interior_minimizers() {
        let mins = toy_grid_minimizers(10_000);
        assert!(mins.len() >= 2);
        assert!(mins.iter().all(|&m| (0.0..=3.0).contains(&m)));
    }
}
