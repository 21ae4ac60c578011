//! Numerical checks of the penalty reformulation: finite differences,
//! value and gradient gap sweeps, the exact hypergradient of quadratic
//! instances and the potential function of the single-loop method.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lagrangian::{eval_k, PenaltyConfig, SaddleState};
use crate::linalg::{self, DenseMatrix};
use crate::optim::apg;
use crate::oracle::{self, licq_sc_report, solve_ll, LlOptions};
use crate::problem::BilevelProblem;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient gaps below this are treated as numerically zero.
pub const GAP_NOISE_FLOOR: f64 = 1e-7;
/// Minimum fitted log-log slope for the gradient gap.
pub const MIN_GRAD_GAP_SLOPE: f64 = 0.8;

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn fd_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!("finite difference at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub x_index: usize,
    pub delta: f64,
    pub measured: f64,
    /// `NaN` when the check has no absolute bound.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub test: String,
    pub samples: Vec<BoundSample>,
    /// Fitted slope of `log(measured)` against `log(δ)`; the minimum over
    /// points when fitted per point.
    pub slope: Option<f64>,
    /// Slope the report must reach, if any.
    pub min_slope: Option<f64>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    fn new(test: &str) -> Self {
        BoundReport {
            test: test.to_string(),
            samples: Vec::new(),
            slope: None,
            min_slope: None,
            warnings: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        let slope_ok = match self.min_slope {
            None => true,
            Some(m) => match self.slope {
                Some(s) => s >= m,
                None => self.warnings.iter().any(|w| w.contains("noise floor")),
            },
        };
        slope_ok && self.samples.iter().all(|s| s.pass)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "test,x_index,delta,measured,bound,pass")?;
        }
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{}",
                self.test, s.x_index, s.delta, s.measured, s.bound, s.pass
            )?;
        }
        Ok(())
    }
}

/// Least-squares slope of `ys` on `xs`, with the coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, my - slope * mx, r2))
}

/// Slope of `log(values)` against `log(deltas)` over positive values.
fn log_log_slope(deltas: &[f64], values: &[f64], floor: f64) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = deltas
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > floor)
        .map(|(d, v)| (d.ln(), v.ln()))
        .unzip();
    linear_fit(&lx, &ly).map(|(s, _, _)| s)
}

/// `max ‖∇_y f(x, ·)‖` over 41 points of the segment `[a, b]`.
fn local_lf0(p: &BilevelProblem, x: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    let mut best = 0.0_f64;
    for k in 0..=40 {
        let t = k as f64 / 40.0;
        let y: Vec<f64> = a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect();
        best = best.max(linalg::norm(&p.eval_f(x, &y)?.grad_y));
    }
    Ok(best)
}

fn warn_delta(p: &BilevelProblem, deltas: &[f64], report: &mut BoundReport) {
    let max = p.constants.max_delta();
    for &d in deltas {
        if d > max {
            report.warnings.push(format!(
                "delta {d} exceeds mu_g/(2*l_f1) = {max}; outside the theory regime"
            ));
        }
    }
}

/// Value-gap and solution-gap sweeps, `0 ≤ Φ − Φ_δ ≤ δ l²/(2μ_g)` and
/// `‖y*_δ − y*‖ ≤ 2δ l/μ_g`, where `l` is the largest `‖∇_y f‖` on the
/// segment between the two solutions. Both checks allow `10·tol` slack;
/// lower-level solves run at `tol/100`.
pub fn check_value_gap(
    p: &BilevelProblem,
    xs: &[Vec<f64>],
    deltas: &[f64],
    tol: f64,
) -> Result<(BoundReport, BoundReport)> {
    let mut value = BoundReport::new("value_gap");
    let mut sol = BoundReport::new("solution_gap");
    warn_delta(p, deltas, &mut value);
    let mu = p.constants.mu_g;
    let slack = 10.0 * tol;
    let tol = 0.01 * tol;
    let mut gaps = Vec::new();
    for (xi, x) in xs.iter().enumerate() {
        let y_star = solve_ll(p, x, 0.0, tol)?;
        let phi = p.eval_f(x, &y_star.y_star)?.value;
        let g0 = p.eval_g(x, &y_star.y_star)?.value;
        for &delta in deltas {
            let yd = oracle::solve_ll_with(p, x, delta, &LlOptions::with_tol(tol), Some(&y_star))?;
            let phi_d = p.eval_f(x, &yd.y_star)?.value + (p.eval_g(x, &yd.y_star)?.value - g0) / delta;
            let l = local_lf0(p, x, &yd.y_star, &y_star.y_star)?;
            let gap = phi - phi_d;
            let bound = delta * l * l / (2.0 * mu);
            value.samples.push(BoundSample {
                x_index: xi,
                delta,
                measured: gap,
                bound,
                pass: gap >= -slack && gap <= bound + slack,
            });
            let dist = linalg::dist(&yd.y_star, &y_star.y_star);
            let dbound = 2.0 * delta * l / mu;
            sol.samples.push(BoundSample {
                x_index: xi,
                delta,
                measured: dist,
                bound: dbound,
                pass: dist <= dbound + slack,
            });
            gaps.push((delta, gap));
        }
    }
    let (d, g): (Vec<f64>, Vec<f64>) = gaps.into_iter().unzip();
    value.slope = log_log_slope(&d, &g, 1e-14);
    Ok((value, sol))
}

/// Gradient-gap sweep: `‖∇Φ(x) − ∇Φ_δ(x)‖` against `δ` with `∇Φ` by central
/// differences of `Φ`. Points where LICQ or strict complementarity fails
/// are excluded with a warning. Passes when every per-point log-log slope
/// reaches [`MIN_GRAD_GAP_SLOPE`].
pub fn check_grad_gap(
    p: &BilevelProblem,
    xs: &[Vec<f64>],
    deltas: &[f64],
    tol: f64,
) -> Result<BoundReport> {
    let mut report = BoundReport::new("grad_gap");
    report.min_slope = Some(MIN_GRAD_GAP_SLOPE);
    warn_delta(p, deltas, &mut report);
    let mut slopes = Vec::new();
    let mut all_at_floor = true;
    let mut used = 0usize;
    for (xi, x) in xs.iter().enumerate() {
        let y_star = solve_ll(p, x, 0.0, tol)?;
        let mut regular = licq_sc_ok(p, x, &y_star);
        let mut per_delta = Vec::new();
        for &delta in deltas {
            let yd = oracle::solve_ll_with(p, x, delta, &LlOptions::with_tol(tol), Some(&y_star))?;
            regular &= licq_sc_ok(p, x, &yd);
            per_delta.push(yd);
        }
        if !regular {
            report
                .warnings
                .push(format!("x[{xi}] excluded: LICQ or strict complementarity fails"));
            continue;
        }
        used += 1;
        let fd = fd_gradient(|xx| oracle::hyper_objective(p, xx, tol), x, FD_STEP)?;
        let mut gaps = Vec::new();
        for (&delta, yd) in deltas.iter().zip(&per_delta) {
            let g = oracle::grad_phi_delta_from(p, x, delta, yd, &y_star)?;
            let gap = linalg::dist(&g, &fd);
            all_at_floor &= gap <= GAP_NOISE_FLOOR;
            report.samples.push(BoundSample {
                x_index: xi,
                delta,
                measured: gap,
                bound: f64::NAN,
                pass: gap.is_finite(),
            });
            gaps.push(gap);
        }
        if let Some(s) = log_log_slope(deltas, &gaps, GAP_NOISE_FLOOR) {
            slopes.push(s);
        }
    }
    if deltas.len() < 2 {
        report.warnings.push("slope unavailable: fewer than two deltas".into());
    } else if used == 0 {
        report.warnings.push("no point satisfies LICQ and strict complementarity".into());
    } else if all_at_floor {
        report
            .warnings
            .push("slope unavailable: gap at noise floor at every point".into());
    } else if slopes.len() < used {
        report.warnings.push("slope unavailable at some points".into());
    } else {
        report.slope = slopes.into_iter().reduce(f64::min);
    }
    Ok(report)
}

fn licq_sc_ok(p: &BilevelProblem, x: &[f64], sol: &oracle::LLSolution) -> bool {
    let r = licq_sc_report(p, x, sol);
    r.licq && r.strict_complementarity
}

/// `∇Φ(x)` from the KKT system of the lower level at `y*(x)`:
///
/// ```text
/// [H_yy  Āᵀ] [∇y ]     [H_yx]
/// [Ā     0 ] [∇λ̄] = − [B̄   ]
/// ```
///
/// with `Ā`, `B̄` the active rows; then `∇Φ = ∇_x f + ∇yᵀ ∇_y f`.
pub fn exact_hypergradient_qp(p: &BilevelProblem, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    let hess = p
        .hessian
        .as_ref()
        .ok_or_else(|| Error::Precondition("problem has no Hessian oracle".into()))?;
    let sol = solve_ll(p, x, 0.0, tol)?;
    let report = licq_sc_report(p, x, &sol);
    if !report.licq {
        return Err(Error::Precondition(format!(
            "LICQ fails at y*(x): active rows have sigma_min {:?}",
            report.active_sigma_min
        )));
    }
    if !report.strict_complementarity {
        return Err(Error::Precondition(format!(
            "strict complementarity fails at y*(x): min active multiplier {:?}",
            report.min_active_multiplier
        )));
    }
    let (dx, dy) = (p.dx, p.dy);
    let active = &report.active_rows;
    let na = active.len();
    let h = hess.hessians(x, &sol.y_star);
    let a = p.constraint.a().select_rows(active);
    let b = p.constraint.b().select_rows(active);
    let n = dy + na;
    let mut kkt = DenseMatrix::zeros(n, n);
    let mut rhs = DenseMatrix::zeros(n, dx);
    for i in 0..dy {
        for j in 0..dy {
            kkt[(i, j)] = h.hyy[(i, j)];
        }
        for j in 0..dx {
            rhs[(i, j)] = -h.hyx[(i, j)];
        }
    }
    for r in 0..na {
        for j in 0..dy {
            kkt[(dy + r, j)] = a[(r, j)];
            kkt[(j, dy + r)] = a[(r, j)];
        }
        for j in 0..dx {
            rhs[(dy + r, j)] = -b[(r, j)];
        }
    }
    let d = linalg::solve_matrix(&kkt, &rhs).map_err(|e| match e {
        Error::Singular(m) => Error::Singular(format!(
            "KKT matrix of the lower level is singular ({m}); LICQ or invertibility of the Hessian fails"
        )),
        other => other,
    })?;
    let fe = p.eval_f(x, &sol.y_star)?;
    let mut out = fe.grad_x;
    for j in 0..dx {
        for i in 0..dy {
            out[j] += d[(i, j)] * fe.grad_y[i];
        }
    }
    Ok(out)
}

fn project_slack(p: &BilevelProblem, s: &mut [f64]) {
    for (i, v) in s.iter_mut().enumerate() {
        *v = if p.constraint.is_equality(i) { 0.0 } else { v.min(0.0) };
    }
}

/// `(y'*, ·)` minimizing `K` over `y' ∈ P_y` at fixed `x`, `u`.
fn argmin_yprime(
    p: &BilevelProblem,
    x: &[f64],
    u: &[f64],
    pen: &PenaltyConfig,
    start: (&[f64], &[f64]),
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dy, c) = (p.dy, &p.constraint);
    let k = p.constants;
    let lip = pen.delta * k.l_f1 + k.l_g1 + pen.rho1 * (p.a_norm_sq() + 1.0);
    let mut w0 = start.0.to_vec();
    w0.extend_from_slice(start.1);
    let out = apg(
        &w0,
        1.0 / lip,
        |w| {
            let (y, alpha) = w.split_at(dy);
            let mut r = c.h(x, y);
            linalg::axpy(&mut r, -1.0, alpha);
            let m: Vec<f64> = u.iter().zip(&r).map(|(ui, ri)| ui + pen.rho1 * ri).collect();
            let mut gy = p.eval_g_delta(x, y, pen.delta)?.grad_y;
            linalg::axpy(&mut gy, 1.0, &c.a().tr_mul_vec(&m));
            gy.extend(m.iter().enumerate().map(|(i, mi)| if c.is_equality(i) { 0.0 } else { -mi }));
            Ok(gy)
        },
        |w| project_slack(p, &mut w[dy..]),
        tol,
        2_000_000,
    )?;
    let (y, a) = out.split_at(dy);
    Ok((y.to_vec(), a.to_vec()))
}

/// `(z'*, ·)` maximizing `K` over `z' ∈ P_y` at fixed `x`, `v`.
fn argmax_zprime(
    p: &BilevelProblem,
    x: &[f64],
    v: &[f64],
    pen: &PenaltyConfig,
    start: (&[f64], &[f64]),
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dy, c) = (p.dy, &p.constraint);
    let lip = p.constants.l_g1 + pen.rho2 * (p.a_norm_sq() + 1.0);
    let mut w0 = start.0.to_vec();
    w0.extend_from_slice(start.1);
    let out = apg(
        &w0,
        1.0 / lip,
        |w| {
            let (z, beta) = w.split_at(dy);
            let mut r = c.h(x, z);
            linalg::axpy(&mut r, -1.0, beta);
            let m: Vec<f64> = v.iter().zip(&r).map(|(vi, ri)| vi + pen.rho2 * ri).collect();
            let mut gz = p.eval_g(x, z)?.grad_y;
            linalg::axpy(&mut gz, 1.0, &c.a().tr_mul_vec(&m));
            gz.extend(m.iter().enumerate().map(|(i, mi)| if c.is_equality(i) { 0.0 } else { -mi }));
            Ok(gz)
        },
        |w| project_slack(p, &mut w[dy..]),
        tol,
        2_000_000,
    )?;
    let (z, b) = out.split_at(dy);
    Ok((z.to_vec(), b.to_vec()))
}

/// Components of the potential at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub value: f64,
    pub k: f64,
    pub d: f64,
    pub q: f64,
}

/// `V = ¼K(s) + 2q(x, v) − d(x, z', u, v)`.
pub fn eval_potential(
    p: &BilevelProblem,
    s: &SaddleState,
    pen: &PenaltyConfig,
    tol: f64,
) -> Result<f64> {
    Ok(potential_parts(p, s, pen, tol)?.value)
}

pub fn potential_parts(
    p: &BilevelProblem,
    s: &SaddleState,
    pen: &PenaltyConfig,
    tol: f64,
) -> Result<Potential> {
    if p.dh() > 0 && !(pen.rho1 > 0.0 && pen.rho2 > 0.0) {
        return Err(Error::invalid("the potential needs rho1, rho2 > 0"));
    }
    let x = &s.x;
    let k = eval_k(p, s, pen)?;

    let (y, alpha) = argmin_yprime(p, x, &s.u, pen, (&s.y, &s.alpha), tol)?;
    let d_state = SaddleState {
        y: y.into(),
        alpha: alpha.into(),
        ..s.clone()
    };
    let d = eval_k(p, &d_state, pen)?;

    let y_delta = solve_ll(p, x, pen.delta, tol)?;
    let (z, beta) = argmax_zprime(p, x, &s.v, pen, (&s.z, &s.beta), tol)?;
    let mut r = p.constraint.h(x, &z);
    linalg::axpy(&mut r, -1.0, &beta);
    let q = pen.delta * p.eval_f(x, &y_delta.y_star)?.value + p.eval_g(x, &y_delta.y_star)?.value
        - p.eval_g(x, &z)?.value
        - linalg::dot(&s.v, &r)
        - 0.5 * pen.rho2 * linalg::dot(&r, &r);

    Ok(Potential {
        value: 0.25 * k + 2.0 * q - d,
        k,
        d,
        q,
    })
}

/// `(5/4)(δΦ* − δ² l_f0²/(2μ_g))`.
pub fn potential_lower_bound(p: &BilevelProblem, delta: f64, phi_star: f64) -> f64 {
    let k = p.constants;
    1.25 * (delta * phi_star - delta * delta * k.l_f0 * k.l_f0 / (2.0 * k.mu_g))
}

/// Smallest `Φ` found by projected gradient descent with backtracking from
/// each start, using central-difference gradients of `Φ`.
pub fn estimate_hyper_min(
    p: &BilevelProblem,
    starts: &[Vec<f64>],
    tol: f64,
    iters: usize,
) -> Result<f64> {
    let phi = |x: &[f64]| oracle::hyper_objective(p, x, tol);
    let mut best = f64::INFINITY;
    for x0 in starts {
        let mut x = p.project_x(x0);
        let mut fx = phi(&x)?;
        let mut step = 1.0;
        for _ in 0..iters {
            let g = fd_gradient(phi, &x, FD_STEP)?;
            let mut accepted = false;
            while step > 1e-12 {
                let cand = p.project_x(&linalg::sub(&x, &linalg::scale(&g, step)));
                let fc = phi(&cand)?;
                let dec = linalg::dist(&cand, &x);
                if fc <= fx - 1e-4 * dec * dec / step {
                    accepted = dec > 0.0;
                    x = cand;
                    fx = fc;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step *= 2.0;
        }
        best = best.min(fx);
    }
    Ok(best)
}
