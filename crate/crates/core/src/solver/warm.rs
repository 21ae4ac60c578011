//! Warm starts for the lower-level blocks at a fixed `x₀`.

use crate::error::{Error, Result};
use crate::lagrangian::{natural_slack, SaddleState};
use crate::linalg;
use crate::optim::apg;
use crate::problem::BilevelProblem;

use super::{step_impl, SolverConfig};

#[derive(Debug, Clone)]
pub struct DualWarmStart {
    pub state: SaddleState,
    /// Dual gradient-mapping norm after each outer step.
    pub residuals: Vec<f64>,
}

/// Projected dual ascent on `max_{v ≥ 0} min_z g(x₀, z) + vᵀ(Bx₀ + Az − b)`.
///
/// Returns `y = z = ẑ`, `u = v = v̂` and slacks `min(h, 0)`.
pub fn warm_start_dual_pgd(
    p: &BilevelProblem,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
    v_init: Option<&[f64]>,
) -> Result<DualWarmStart> {
    let c = &p.constraint;
    let dh = c.rows();
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if dh == 0 {
        return Err(Error::Precondition("dual warm start needs constraint rows".into()));
    }
    let smin = linalg::min_singular_value(c.a(), 1e-12)?;
    if !(smin > 1e-8) {
        return Err(Error::Precondition(format!(
            "A must have full row rank (sigma_min = {smin:e})"
        )));
    }
    let k = p.constants;
    let inner_step = 1.0 / k.l_g1;
    let dual_step = k.mu_g / p.a_norm_sq();
    let mut v: Vec<f64> = match v_init {
        Some(v) if v.len() == dh => v.to_vec(),
        Some(v) => return Err(Error::invalid(format!("v has length {}, expected {dh}", v.len()))),
        None => vec![0.0; dh],
    };
    let project = |w: &mut [f64]| {
        for (i, wi) in w.iter_mut().enumerate() {
            if !c.is_equality(i) {
                *wi = wi.max(0.0);
            }
        }
    };
    let inner_tol = (1e-3 * tol).max(1e-14);
    let mut z = vec![0.0; p.dy];
    let mut residuals = Vec::new();
    for _ in 0..max_iters {
        let atv = c.a().tr_mul_vec(&v);
        z = apg(
            &z,
            inner_step,
            |zz| {
                let mut g = p.eval_g(x0, zz)?.grad_y;
                linalg::axpy(&mut g, 1.0, &atv);
                Ok(g)
            },
            |_| {},
            inner_tol,
            1_000_000,
        )?;
        let h = c.h(x0, &z);
        let mut next = v.clone();
        linalg::axpy(&mut next, dual_step, &h);
        project(&mut next);
        let res = linalg::dist(&next, &v) / dual_step;
        residuals.push(res);
        if res <= tol {
            let state = SaddleState {
                alpha: natural_slack(c, x0, &z),
                beta: natural_slack(c, x0, &z),
                x: x0.into(),
                y: z.clone().into(),
                z: z.into(),
                u: v.clone().into(),
                v: v.into(),
            };
            return Ok(DualWarmStart { state, residuals });
        }
        v = next;
    }
    Err(Error::Convergence {
        what: "dual projected gradient warm start",
        iterations: max_iters,
        last: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[derive(Debug, Clone)]
pub struct FixedXWarmStart {
    pub state: SaddleState,
    pub iterations: usize,
}

/// Runs the single-loop iteration with `x` frozen at `init.x` until the
/// `y'` and `z'` steps and both residuals are at most `tol`.
pub fn warm_start_fixed_x(
    p: &BilevelProblem,
    init: SaddleState,
    cfg: &SolverConfig,
    tol: f64,
    max_iters: usize,
) -> Result<FixedXWarmStart> {
    cfg.validate()?;
    init.validate(p)?;
    let mut s = init;
    let mut last = f64::INFINITY;
    for it in 0..max_iters {
        let (next, info) = step_impl(p, &s, &cfg.penalty, &cfg.steps, false)?;
        if !next.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                trace: None,
            });
        }
        let dy = linalg::dist(&next.y, &s.y).hypot(linalg::dist(&next.alpha, &s.alpha));
        let dz = linalg::dist(&next.z, &s.z).hypot(linalg::dist(&next.beta, &s.beta));
        last = dy.max(dz).max(info.res_y).max(info.res_z);
        if last <= tol {
            return Ok(FixedXWarmStart { state: s, iterations: it });
        }
        s = next;
    }
    Err(Error::Convergence {
        what: "fixed-x warm start",
        iterations: max_iters,
        last,
    })
}
