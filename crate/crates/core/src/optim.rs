//! Accelerated projected gradient with adaptive restart, shared by the
//! reference solvers. Not used by the single-loop method itself.

use crate::error::{Error, Result};
use crate::linalg;

/// Minimizes a smooth function over a convex set given its gradient and the
/// Euclidean projection. `step` should be `1/L`. Stops once the gradient
/// mapping norm `‖x⁺ − x̂‖ / step` is at most `tol`.
pub(crate) fn apg<G, P>(
    x0: &[f64],
    step: f64,
    mut grad: G,
    project: P,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    P: Fn(&mut [f64]),
{
    let mut x = x0.to_vec();
    project(&mut x);
    let mut x_prev = x.clone();
    let mut t = 1.0_f64;
    let mut mapping_norm = f64::INFINITY;
    for it in 0..max_iter {
        let beta = if it == 0 { 0.0 } else { (t - 1.0) / (t + 1.0).max(1.0) };
        let xh: Vec<f64> = x
            .iter()
            .zip(&x_prev)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        let g = grad(&xh)?;
        let mut next = xh.clone();
        linalg::axpy(&mut next, -step, &g);
        project(&mut next);
        let gm = linalg::dist(&next, &xh) / step;
        if !gm.is_finite() {
            return Err(Error::Convergence {
                what: "accelerated gradient",
                iterations: it,
                last: gm,
            });
        }
        mapping_norm = gm;
        // Restart when the momentum direction opposes the gradient mapping.
        let restart = linalg::dot(&linalg::sub(&xh, &next), &linalg::sub(&next, &x)) < 0.0;
        x_prev = std::mem::replace(&mut x, next);
        if gm <= tol {
            return Ok(x);
        }
        t = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        if restart {
            x_prev = x.clone();
        }
    }
    Err(Error::Convergence {
        what: "accelerated gradient",
        iterations: max_iter,
        last: mapping_norm,
    })
}
