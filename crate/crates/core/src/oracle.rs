//! High-accuracy reference solver for the lower level.
//!
//! `solve_ll` handles `min_y δf(x,y) + g(x,y)` subject to the linear
//! coupling rows by an augmented-Lagrangian multiplier loop whose strongly
//! convex subproblems are solved to tolerance by accelerated projected
//! gradient. Everything else here (`Φ`, `Φ_δ`, `∇Φ_δ`, LICQ and strict
//! complementarity reports) is assembled from those solves. The solver is
//! deliberately separate from the single-loop iteration so it can serve as
//! ground truth for it.

use crate::error::{Error, Result};
use crate::linalg::{self, DenseVector};
use crate::optim::apg;
use crate::problem::BilevelProblem;

/// Multiplier magnitude beyond which the lower level is declared infeasible.
const INFEASIBLE_MULTIPLIER: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct LLSolution {
    pub y_star: DenseVector,
    pub lambda_star: DenseVector,
    pub kkt_residual: f64,
    /// Rows with `|h_i| ≤ activity_tol` (always including equality rows).
    pub active_set: Vec<usize>,
    pub activity_tol: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LlOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl LlOptions {
    pub fn with_tol(tol: f64) -> Self {
        LlOptions {
            tol,
            max_outer: 2_000,
            max_inner: 200_000,
        }
    }
}

/// Solves the lower level at `x` with penalty weight `delta` (`0` gives `y*(x)`).
pub fn solve_ll(p: &BilevelProblem, x: &[f64], delta: f64, tol: f64) -> Result<LLSolution> {
    solve_ll_with(p, x, delta, &LlOptions::with_tol(tol), None)
}

/// KKT residual of `(y, λ)` for the lower level at `x`: the max of projected
/// stationarity, primal infeasibility, dual infeasibility and complementarity.
pub fn ll_kkt_residual(
    p: &BilevelProblem,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
    delta: f64,
) -> Result<f64> {
    let c = &p.constraint;
    let mut grad = p.eval_g_delta(x, y, delta)?.grad_y;
    if c.rows() > 0 {
        linalg::axpy(&mut grad, 1.0, &c.a().tr_mul_vec(lambda));
    }
    let stationarity = match &p.y_eval_box {
        Some(b) => {
            let stepped = linalg::sub(y, &grad);
            linalg::norm(&linalg::sub(y, &b.project(&stepped)))
        }
        None => linalg::norm(&grad),
    };
    let h = c.h(x, y);
    let mut worst = stationarity;
    for i in 0..c.rows() {
        if c.is_equality(i) {
            worst = worst.max(h[i].abs());
        } else {
            worst = worst
                .max(h[i].max(0.0))
                .max((-lambda[i]).max(0.0))
                .max((lambda[i] * h[i]).abs());
        }
    }
    Ok(worst)
}

pub fn solve_ll_with(
    p: &BilevelProblem,
    x: &[f64],
    delta: f64,
    opts: &LlOptions,
    warm: Option<&LLSolution>,
) -> Result<LLSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if x.len() != p.dx {
        return Err(Error::invalid(format!("x has length {}, expected {}", x.len(), p.dx)));
    }
    let c = &p.constraint;
    let dh = c.rows();
    let k = p.constants;
    let l_g = delta * k.l_f1 + k.l_g1;
    let a_sq = p.a_norm_sq();
    let penalty = if dh > 0 { 10.0 * l_g / a_sq.max(1e-12) } else { 0.0 };
    let step = 1.0 / (l_g + penalty * a_sq);
    let shifted = c.shifted_rhs(x);

    let (mut y, mut lambda) = match warm {
        Some(w) => (w.y_star.to_vec(), w.lambda_star.to_vec()),
        None => {
            let y0 = match &p.y_eval_box {
                Some(b) => b.project(&vec![0.0; p.dy]),
                None => vec![0.0; p.dy],
            };
            (y0, vec![0.0; dh])
        }
    };

    let project = |v: &mut [f64]| {
        if let Some(b) = &p.y_eval_box {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = vi.max(b.lo[i]).min(b.hi[i]);
            }
        }
    };

    let mut kkt = f64::INFINITY;
    for _outer in 0..opts.max_outer {
        // Multiplier estimate implied by y for the current λ.
        let shifted_mult = |y: &[f64], lambda: &[f64]| -> Vec<f64> {
            let ay = c.a().mul_vec(y);
            (0..dh)
                .map(|i| {
                    let w = lambda[i] + penalty * (ay[i] - shifted[i]);
                    if c.is_equality(i) {
                        w
                    } else {
                        w.max(0.0)
                    }
                })
                .collect()
        };
        let inner_tol = (0.1 * opts.tol).max(1e-15);
        let lam_now = lambda.clone();
        let out = apg(
            &y,
            step,
            |yy| {
                let mut g = p.eval_g_delta(x, yy, delta)?.grad_y;
                if dh > 0 {
                    let w = shifted_mult(yy, &lam_now);
                    linalg::axpy(&mut g, 1.0, &c.a().tr_mul_vec(&w));
                }
                Ok(g)
            },
            project,
            inner_tol,
            opts.max_inner,
        );
        y = match out {
            Ok(v) => v,
            // The mapping norm floor can sit just above tiny tolerances; keep
            // the iterate and let the KKT test decide.
            Err(Error::Convergence { .. }) if dh > 0 => y,
            Err(e) => return Err(e),
        };
        if dh > 0 {
            lambda = shifted_mult(&y, &lambda);
        }
        kkt = ll_kkt_residual(p, x, &y, &lambda, delta)?;
        if kkt <= opts.tol {
            break;
        }
        if linalg::norm_inf(&lambda) > INFEASIBLE_MULTIPLIER {
            return Err(Error::Infeasible(format!(
                "multipliers exceed {INFEASIBLE_MULTIPLIER:e} with KKT residual {kkt:e}"
            )));
        }
    }
    if kkt > opts.tol {
        return Err(Error::Convergence {
            what: "lower-level augmented Lagrangian",
            iterations: opts.max_outer,
            last: kkt,
        });
    }
    let activity_tol = 10.0 * opts.tol;
    let h = c.h(x, &y);
    let active_set = (0..dh)
        .filter(|&i| c.is_equality(i) || h[i].abs() <= activity_tol)
        .collect();
    Ok(LLSolution {
        y_star: y.into(),
        lambda_star: lambda.into(),
        kkt_residual: kkt,
        active_set,
        activity_tol,
    })
}

/// `Φ(x) = f(x, y*(x))`
pub fn hyper_objective(p: &BilevelProblem, x: &[f64], tol: f64) -> Result<f64> {
    let sol = solve_ll(p, x, 0.0, tol)?;
    Ok(p.eval_f(x, &sol.y_star)?.value)
}

/// `Φ_δ(x) = f(x, y*_δ) + (g(x, y*_δ) − g(x, y*)) / δ`
pub fn penalty_objective(p: &BilevelProblem, x: &[f64], delta: f64, tol: f64) -> Result<f64> {
    let (y_delta, y_star) = both_solutions(p, x, delta, tol)?;
    penalty_value(p, x, delta, &y_delta.y_star, &y_star.y_star)
}

fn penalty_value(
    p: &BilevelProblem,
    x: &[f64],
    delta: f64,
    y_delta: &[f64],
    y_star: &[f64],
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("penalty objective needs delta > 0"));
    }
    let f = p.eval_f(x, y_delta)?.value;
    let gd = p.eval_g(x, y_delta)?.value;
    let g0 = p.eval_g(x, y_star)?.value;
    Ok(f + (gd - g0) / delta)
}

/// `(solve_ll(δ), solve_ll(0))`
pub fn both_solutions(
    p: &BilevelProblem,
    x: &[f64],
    delta: f64,
    tol: f64,
) -> Result<(LLSolution, LLSolution)> {
    let y_star = solve_ll(p, x, 0.0, tol)?;
    let opts = LlOptions::with_tol(tol);
    let y_delta = solve_ll_with(p, x, delta, &opts, Some(&y_star))?;
    Ok((y_delta, y_star))
}

/// Gradient of `Φ_δ` from the two lower-level solutions and their multipliers:
///
/// `∇_x f(x, y*_δ) + (1/δ)[∇_x g(x, y*_δ) + Bᵀλ*_δ − ∇_x g(x, y*) − Bᵀλ*]`
pub fn grad_phi_delta(p: &BilevelProblem, x: &[f64], delta: f64, tol: f64) -> Result<Vec<f64>> {
    let (sd, s0) = both_solutions(p, x, delta, tol)?;
    grad_phi_delta_from(p, x, delta, &sd, &s0)
}

pub fn grad_phi_delta_from(
    p: &BilevelProblem,
    x: &[f64],
    delta: f64,
    y_delta: &LLSolution,
    y_star: &LLSolution,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::invalid("gradient of the penalty objective needs delta > 0"));
    }
    let c = &p.constraint;
    let fd = p.eval_f(x, &y_delta.y_star)?;
    let gd = p.eval_g(x, &y_delta.y_star)?;
    let g0 = p.eval_g(x, &y_star.y_star)?;
    let mut inner = linalg::sub(&gd.grad_x, &g0.grad_x);
    if c.rows() > 0 {
        let dl = linalg::sub(&y_delta.lambda_star, &y_star.lambda_star);
        linalg::axpy(&mut inner, 1.0, &c.b().tr_mul_vec(&dl));
    }
    let mut out = fd.grad_x;
    linalg::axpy(&mut out, 1.0 / delta, &inner);
    Ok(out)
}

/// `‖∇Φ_δ(x)‖`, or the projected-gradient residual `‖x − Π(x − ∇Φ_δ(x))‖`
/// when the problem declares an `x` box.
pub fn stationarity_gap(p: &BilevelProblem, x: &[f64], delta: f64, tol: f64) -> Result<f64> {
    let g = grad_phi_delta(p, x, delta, tol)?;
    Ok(match &p.x_box {
        Some(b) => linalg::dist(x, &b.project(&linalg::sub(x, &g))),
        None => linalg::norm(&g),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LicqScReport {
    pub active_rows: Vec<usize>,
    /// Smallest singular value of the active rows of `A`; `None` when no row is active.
    pub active_sigma_min: Option<f64>,
    /// Smallest multiplier over active inequality rows.
    pub min_active_multiplier: Option<f64>,
    /// Smallest slack `−h_i` over inactive inequality rows.
    pub min_inactive_slack: Option<f64>,
    pub licq: bool,
    pub strict_complementarity: bool,
    pub inactive: bool,
}

/// LICQ and strict complementarity at `y*_δ(x)`.
pub fn check_licq_sc(p: &BilevelProblem, x: &[f64], delta: f64, tol: f64) -> Result<LicqScReport> {
    let sol = solve_ll(p, x, delta, tol)?;
    Ok(licq_sc_report(p, x, &sol))
}

pub fn licq_sc_report(p: &BilevelProblem, x: &[f64], sol: &LLSolution) -> LicqScReport {
    let c = &p.constraint;
    let threshold = sol.activity_tol;
    let active = sol.active_set.clone();
    let h = c.h(x, &sol.y_star);
    let min_inactive_slack = (0..c.rows())
        .filter(|i| !active.contains(i))
        .map(|i| -h[i])
        .reduce(f64::min);
    if active.is_empty() {
        return LicqScReport {
            active_rows: active,
            active_sigma_min: None,
            min_active_multiplier: None,
            min_inactive_slack,
            licq: true,
            strict_complementarity: true,
            inactive: true,
        };
    }
    let sub = c.a().select_rows(&active);
    let sigma = linalg::min_singular_value(&sub, 1e-10).unwrap_or(0.0);
    let min_mult = active
        .iter()
        .filter(|&&i| !c.is_equality(i))
        .map(|&i| sol.lambda_star[i])
        .reduce(f64::min);
    LicqScReport {
        licq: sigma > threshold,
        strict_complementarity: min_mult.is_none_or(|m| m > threshold),
        active_sigma_min: Some(sigma),
        min_active_multiplier: min_mult,
        min_inactive_slack,
        active_rows: active,
        inactive: false,
    }
}
