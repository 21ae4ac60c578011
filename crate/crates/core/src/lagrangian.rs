//! Penalty surrogate `φ_δ` and the augmented Lagrangian
//!
//! ```text
//! K = φ_δ(x, y, z) + uᵀ r_y − vᵀ r_z + (ρ₁/2)‖r_y‖² − (ρ₂/2)‖r_z‖²
//! r_y = Bx + Ay − b − α,   r_z = Bx + Az − b − β
//! ```
//!
//! Slack components belonging to equality rows are structurally zero: their
//! gradient blocks are zeroed and the solver never moves them.

use crate::error::{Error, Result};
use crate::linalg::{self, DenseVector};
use crate::problem::{BilevelProblem, LinearCoupledConstraint};

/// Full iterate of the single-loop method: `(x, y' = (y, α), z' = (z, β), u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub x: DenseVector,
    pub y: DenseVector,
    pub alpha: DenseVector,
    pub z: DenseVector,
    pub beta: DenseVector,
    pub u: DenseVector,
    pub v: DenseVector,
}

/// Natural slack for a primal point: `h(x, y)` clamped to be nonpositive,
/// zero on equality rows.
pub fn natural_slack(c: &LinearCoupledConstraint, x: &[f64], y: &[f64]) -> DenseVector {
    c.h(x, y)
        .into_iter()
        .enumerate()
        .map(|(i, hi)| if c.is_equality(i) { 0.0 } else { hi.min(0.0) })
        .collect()
}

impl SaddleState {
    /// State at `(x, y, z)` with slacks `α = h(x,y)`, `β = h(x,z)` (clamped,
    /// zero on equality rows) and the given multipliers.
    pub fn from_primal(
        p: &BilevelProblem,
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
    ) -> Self {
        let c = &p.constraint;
        SaddleState {
            alpha: natural_slack(c, &x, &y),
            beta: natural_slack(c, &x, &z),
            x: x.into(),
            y: y.into(),
            z: z.into(),
            u: u.into(),
            v: v.into(),
        }
    }

    /// `y = z = y0`, zero multipliers.
    pub fn primal_start(p: &BilevelProblem, x: Vec<f64>, y0: Vec<f64>) -> Self {
        let dh = p.dh();
        Self::from_primal(p, x, y0.clone(), y0, vec![0.0; dh], vec![0.0; dh])
    }

    pub fn is_finite(&self) -> bool {
        [&self.x, &self.y, &self.alpha, &self.z, &self.beta, &self.u, &self.v]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Dimensions, finiteness and slack sign constraints.
    pub fn validate(&self, p: &BilevelProblem) -> Result<()> {
        let dh = p.dh();
        let dims = [
            ("x", self.x.len(), p.dx),
            ("y", self.y.len(), p.dy),
            ("z", self.z.len(), p.dy),
            ("alpha", self.alpha.len(), dh),
            ("beta", self.beta.len(), dh),
            ("u", self.u.len(), dh),
            ("v", self.v.len(), dh),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::invalid(format!("{name} has length {got}, expected {want}")));
            }
        }
        if !self.is_finite() {
            return Err(Error::invalid("state has non-finite entries"));
        }
        let c = &p.constraint;
        for i in 0..dh {
            let (a, b) = (self.alpha[i], self.beta[i]);
            if c.is_equality(i) {
                if a != 0.0 || b != 0.0 {
                    return Err(Error::invalid(format!("slack on equality row {i} is nonzero")));
                }
            } else if a > 0.0 || b > 0.0 {
                return Err(Error::invalid(format!("slack on row {i} is positive")));
            }
        }
        Ok(())
    }

    /// Euclidean distance over all blocks.
    pub fn distance(&self, other: &SaddleState) -> f64 {
        let blocks = [
            (&self.x, &other.x),
            (&self.y, &other.y),
            (&self.alpha, &other.alpha),
            (&self.z, &other.z),
            (&self.beta, &other.beta),
            (&self.u, &other.u),
            (&self.v, &other.v),
        ];
        blocks
            .iter()
            .map(|(a, b)| {
                let d = linalg::dist(a, b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub delta: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl PenaltyConfig {
    pub fn new(delta: f64, rho1: f64, rho2: f64) -> Self {
        PenaltyConfig { delta, rho1, rho2 }
    }

    /// Violations of `δ > 0`, `δ ≤ μ_g/(2 l_f1)`, `ρ ≥ 0`, and (when `theory`
    /// is set) the upper bounds on `ρ₁`, `ρ₂` that keep `K` strongly
    /// convex-concave.
    pub fn violations(&self, p: &BilevelProblem, theory: bool) -> Vec<String> {
        let mut out = Vec::new();
        let k = p.constants;
        if !(self.delta > 0.0) {
            out.push(format!("delta must be positive (got {})", self.delta));
        } else if self.delta > k.max_delta() {
            out.push(format!(
                "delta exceeds mu_g/(2*l_f1): {} > {}",
                self.delta,
                k.max_delta()
            ));
        }
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0) {
            out.push("rho1 and rho2 must be nonnegative".into());
        }
        if theory && p.dh() > 0 {
            let s = p.a_norm_sq();
            let rho1_max = (k.mu_g - self.delta * k.l_f1) / s;
            let rho2_max = k.mu_g / s;
            if self.rho1 > rho1_max {
                out.push(format!("rho1 {} exceeds {rho1_max}", self.rho1));
            }
            if self.rho2 > rho2_max {
                out.push(format!("rho2 {} exceeds {rho2_max}", self.rho2));
            }
        }
        out
    }
}

/// `δ f(x,y) + g(x,y) − g(x,z)`
pub fn phi_delta_pointwise(
    p: &BilevelProblem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    delta: f64,
) -> Result<f64> {
    let gy = p.eval_g(x, y)?.value;
    let gz = p.eval_g(x, z)?.value;
    let f = if delta != 0.0 { p.eval_f(x, y)?.value } else { 0.0 };
    Ok(delta * f + gy - gz)
}

/// `Bx + Ay − b − slack`
pub fn residual(
    c: &LinearCoupledConstraint,
    x: &[f64],
    y: &[f64],
    slack: &[f64],
) -> Result<DenseVector> {
    if y.len() != c.a().cols() || slack.len() != c.rows() || (c.rows() > 0 && x.len() != c.b().cols())
    {
        return Err(Error::invalid(format!(
            "residual: got x {}, y {}, slack {} for a {}-row constraint on ({}, {})",
            x.len(),
            y.len(),
            slack.len(),
            c.rows(),
            c.b().cols(),
            c.a().cols()
        )));
    }
    let mut r = c.h(x, y);
    linalg::axpy(&mut r, -1.0, slack);
    Ok(r.into())
}

/// Gradient of `K` split into the blocks the solver updates separately.
#[derive(Debug, Clone, PartialEq)]
pub struct KGradient {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub z: Vec<f64>,
    pub beta: Vec<f64>,
}

/// `K` together with the pieces it is assembled from.
#[derive(Debug, Clone)]
pub struct KEvaluation {
    pub value: f64,
    pub phi: f64,
    pub r_y: DenseVector,
    pub r_z: DenseVector,
    pub grad: KGradient,
}

/// Value and all gradient blocks of `K` at `s`.
pub fn eval_k_full(p: &BilevelProblem, s: &SaddleState, cfg: &PenaltyConfig) -> Result<KEvaluation> {
    let c = &p.constraint;
    let delta = cfg.delta;
    let r_y = residual(c, &s.x, &s.y, &s.alpha)?;
    let r_z = residual(c, &s.x, &s.z, &s.beta)?;

    let gy = p.eval_g(&s.x, &s.y)?;
    let gz = p.eval_g(&s.x, &s.z)?;
    let fy = p.eval_f(&s.x, &s.y)?;
    let phi = delta * fy.value + gy.value - gz.value;

    let value = phi + linalg::dot(&s.u, &r_y) - linalg::dot(&s.v, &r_z)
        + 0.5 * cfg.rho1 * linalg::dot(&r_y, &r_y)
        - 0.5 * cfg.rho2 * linalg::dot(&r_z, &r_z);

    // Multiplier-like combinations that multiply A and B.
    let wy: Vec<f64> = s.u.iter().zip(r_y.iter()).map(|(u, r)| u + cfg.rho1 * r).collect();
    let wz: Vec<f64> = s.v.iter().zip(r_z.iter()).map(|(v, r)| v + cfg.rho2 * r).collect();

    let mut gx = linalg::sub(&gy.grad_x, &gz.grad_x);
    linalg::axpy(&mut gx, delta, &fy.grad_x);
    if c.rows() > 0 {
        let wdiff = linalg::sub(&wy, &wz);
        linalg::axpy(&mut gx, 1.0, &c.b().tr_mul_vec(&wdiff));
    }

    let mut gyb = gy.grad_y.clone();
    linalg::axpy(&mut gyb, delta, &fy.grad_y);
    let mut gzb = linalg::scale(&gz.grad_y, -1.0);
    if c.rows() > 0 {
        linalg::axpy(&mut gyb, 1.0, &c.a().tr_mul_vec(&wy));
        linalg::axpy(&mut gzb, -1.0, &c.a().tr_mul_vec(&wz));
    }

    let galpha = (0..c.rows())
        .map(|i| if c.is_equality(i) { 0.0 } else { -wy[i] })
        .collect();
    let gbeta = (0..c.rows())
        .map(|i| if c.is_equality(i) { 0.0 } else { wz[i] })
        .collect();

    Ok(KEvaluation {
        value,
        phi,
        r_y,
        r_z,
        grad: KGradient {
            x: gx,
            y: gyb,
            alpha: galpha,
            z: gzb,
            beta: gbeta,
        },
    })
}

pub fn eval_k(p: &BilevelProblem, s: &SaddleState, cfg: &PenaltyConfig) -> Result<f64> {
    let c = &p.constraint;
    let r_y = residual(c, &s.x, &s.y, &s.alpha)?;
    let r_z = residual(c, &s.x, &s.z, &s.beta)?;
    let phi = phi_delta_pointwise(p, &s.x, &s.y, &s.z, cfg.delta)?;
    Ok(phi + linalg::dot(&s.u, &r_y) - linalg::dot(&s.v, &r_z)
        + 0.5 * cfg.rho1 * linalg::dot(&r_y, &r_y)
        - 0.5 * cfg.rho2 * linalg::dot(&r_z, &r_z))
}

pub fn grad_x_k(p: &BilevelProblem, s: &SaddleState, cfg: &PenaltyConfig) -> Result<Vec<f64>> {
    Ok(eval_k_full(p, s, cfg)?.grad.x)
}

/// `(∇_y K, ∇_α K)`
pub fn grad_yprime_k(
    p: &BilevelProblem,
    s: &SaddleState,
    cfg: &PenaltyConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = eval_k_full(p, s, cfg)?.grad;
    Ok((g.y, g.alpha))
}

/// `(∇_z K, ∇_β K)`
pub fn grad_zprime_k(
    p: &BilevelProblem,
    s: &SaddleState,
    cfg: &PenaltyConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = eval_k_full(p, s, cfg)?.grad;
    Ok((g.z, g.beta))
}
