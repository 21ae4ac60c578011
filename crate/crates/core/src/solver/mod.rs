//! The single-loop iteration, its driver and trace recording.

mod theory;
mod trace;
mod warm;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::lagrangian::{eval_k_full, residual, PenaltyConfig, SaddleState};
use crate::linalg::{self, DenseVector};
use crate::oracle;
use crate::problem::{BilevelProblem, LinearCoupledConstraint};
use crate::verification;

pub use theory::{rho_bounds, theory_step_sizes, theory_step_sizes_with, TheoryConstants, TheoryMode};
pub use trace::{IterationTrace, TraceRecord, TRACE_COLUMNS};
pub use warm::{warm_start_dual_pgd, warm_start_fixed_x, DualWarmStart, FixedXWarmStart};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_z: f64,
    pub eta_u: f64,
    pub eta_v: f64,
}

impl StepSizes {
    pub fn uniform(eta: f64) -> Self {
        StepSizes {
            eta_x: eta,
            eta_y: eta,
            eta_z: eta,
            eta_u: eta,
            eta_v: eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub penalty: PenaltyConfig,
    pub steps: StepSizes,
    pub max_iters: usize,
    /// Estimate `‖∇Φ_δ‖` every this many iterations; 0 disables the check.
    pub stationarity_check_every: usize,
    pub stationarity_tol: f64,
    /// Lower-level tolerance for stationarity and potential estimates.
    pub inner_tol: f64,
    pub record_potential: bool,
}

impl SolverConfig {
    pub fn new(penalty: PenaltyConfig, steps: StepSizes, max_iters: usize) -> Self {
        SolverConfig {
            penalty,
            steps,
            max_iters,
            stationarity_check_every: 0,
            stationarity_tol: 0.0,
            inner_tol: 1e-10,
            record_potential: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.steps;
        for (name, v) in [
            ("eta_x", s.eta_x),
            ("eta_y", s.eta_y),
            ("eta_z", s.eta_z),
            ("eta_u", s.eta_u),
            ("eta_v", s.eta_v),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite (got {v})")));
            }
        }
        let pen = self.penalty;
        if !(pen.delta > 0.0) || !(pen.rho1 >= 0.0) || !(pen.rho2 >= 0.0) {
            return Err(Error::invalid("need delta > 0 and rho1, rho2 >= 0"));
        }
        if (self.stationarity_check_every > 0 || self.record_potential) && !(self.inner_tol > 0.0) {
            return Err(Error::invalid("inner_tol must be positive"));
        }
        Ok(())
    }
}

/// Projection onto `P_y` for a slack block.
fn project_slack(c: &LinearCoupledConstraint, slack: &mut [f64]) {
    for (i, s) in slack.iter_mut().enumerate() {
        *s = if c.is_equality(i) { 0.0 } else { s.min(0.0) };
    }
}

/// Everything a single step produces besides the next state.
#[derive(Debug, Clone, Copy)]
struct StepInfo {
    k_value: f64,
    res_y: f64,
    res_z: f64,
}

fn step_impl(
    p: &BilevelProblem,
    s: &SaddleState,
    pen: &PenaltyConfig,
    eta: &StepSizes,
    move_x: bool,
) -> Result<(SaddleState, StepInfo)> {
    let c = &p.constraint;
    let r_y = residual(c, &s.x, &s.y, &s.alpha)?;
    let r_z = residual(c, &s.x, &s.z, &s.beta)?;

    let mut mid = s.clone();
    linalg::axpy(&mut mid.u, eta.eta_u, &r_y);
    linalg::axpy(&mut mid.v, eta.eta_v, &r_z);

    let ke = eval_k_full(p, &mid, pen)?;
    let g = &ke.grad;
    let ry2 = linalg::dot(&r_y, &r_y);
    let rz2 = linalg::dot(&r_z, &r_z);
    // K at the pre-update multipliers.
    let k_value = ke.value - eta.eta_u * ry2 + eta.eta_v * rz2;

    let mut next = mid;
    if move_x {
        linalg::axpy(&mut next.x, -eta.eta_x, &g.x);
        if let Some(b) = &p.x_box {
            next.x = b.project(&next.x).into();
        }
    }
    linalg::axpy(&mut next.y, -eta.eta_y, &g.y);
    linalg::axpy(&mut next.alpha, -eta.eta_y, &g.alpha);
    project_slack(c, &mut next.alpha);
    linalg::axpy(&mut next.z, eta.eta_z, &g.z);
    linalg::axpy(&mut next.beta, eta.eta_z, &g.beta);
    project_slack(c, &mut next.beta);

    Ok((
        next,
        StepInfo {
            k_value,
            res_y: ry2.sqrt(),
            res_z: rz2.sqrt(),
        },
    ))
}

/// One iteration of the single-loop method.
pub fn sflcb_step(p: &BilevelProblem, s: &SaddleState, cfg: &SolverConfig) -> Result<SaddleState> {
    let (next, _) = step_impl(p, s, &cfg.penalty, &cfg.steps, true)?;
    if !next.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            trace: None,
        });
    }
    Ok(next)
}

/// Called after each record with the iteration index and the state it describes.
pub trait Observer {
    fn observe(&mut self, iter: usize, s: &SaddleState);
}

impl<F: FnMut(usize, &SaddleState)> Observer for F {
    fn observe(&mut self, iter: usize, s: &SaddleState) {
        self(iter, s)
    }
}

pub fn run(
    p: &BilevelProblem,
    cfg: &SolverConfig,
    init: SaddleState,
) -> Result<(SaddleState, IterationTrace)> {
    run_observed(p, cfg, init, |_: usize, _: &SaddleState| {})
}

/// Runs up to `max_iters` steps from `init`, recording one trace row per
/// visited state. Stops early when a periodic `‖∇Φ_δ‖` estimate drops to
/// `stationarity_tol`.
pub fn run_observed<O: Observer>(
    p: &BilevelProblem,
    cfg: &SolverConfig,
    init: SaddleState,
    mut observer: O,
) -> Result<(SaddleState, IterationTrace)> {
    cfg.validate()?;
    init.validate(p)?;
    let started = Instant::now();
    let mut trace = IterationTrace::default();
    let mut s = init;
    let mut prev_x: Option<DenseVector> = None;
    let mut t = 0usize;
    loop {
        let last = t == cfg.max_iters;
        let check = cfg.stationarity_check_every > 0 && t % cfg.stationarity_check_every == 0;
        let stat_gap = if check || (last && cfg.stationarity_check_every > 0) {
            oracle::stationarity_gap(p, &s.x, cfg.penalty.delta, cfg.inner_tol).ok()
        } else {
            None
        };
        let potential = if cfg.record_potential {
            Some(verification::eval_potential(p, &s, &cfg.penalty, cfg.inner_tol)?)
        } else {
            None
        };
        let x_step_norm = prev_x
            .as_ref()
            .map(|px| linalg::dist(&s.x, px) / cfg.steps.eta_x);

        let outcome = if last {
            None
        } else {
            Some(step_impl(p, &s, &cfg.penalty, &cfg.steps, true))
        };
        let (k_value, res_y, res_z, stepped) = match outcome {
            Some(Ok((next, info))) => (info.k_value, info.res_y, info.res_z, Some(next)),
            Some(Err(Error::Oracle(_))) => {
                return Err(Error::Diverged {
                    iteration: t,
                    trace: Some(Box::new(trace)),
                })
            }
            Some(Err(e)) => return Err(e),
            None => {
                let ke = eval_k_full(p, &s, &cfg.penalty)?;
                (ke.value, ke.r_y.norm(), ke.r_z.norm(), None)
            }
        };
        trace.records.push(TraceRecord {
            iter: t,
            k_value,
            res_y,
            res_z,
            x_step_norm,
            stat_gap,
            potential,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        observer.observe(t, &s);

        if stat_gap.is_some_and(|g| g <= cfg.stationarity_tol) {
            trace.stopped_early = !last;
            break;
        }
        let Some(next) = stepped else { break };
        if !next.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                trace: Some(Box::new(trace)),
            });
        }
        prev_x = Some(std::mem::replace(&mut s, next).x);
        t += 1;
    }
    Ok((s, trace))
}
