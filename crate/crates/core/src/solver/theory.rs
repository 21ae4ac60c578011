//! Step sizes and constants from the convergence analysis.

use crate::error::{Error, Result};
use crate::lagrangian::PenaltyConfig;
use crate::linalg::{self, DenseMatrix};
use crate::problem::BilevelProblem;

use super::StepSizes;

/// Largest `d_h + d_y` for which `θ̄` is enumerated.
const THETA_ENUMERATION_LIMIT: usize = 8;

/// `(ρ₁_max, ρ₂_max) = ((μ_g − δ l_f1)/σ_max²(A), μ_g/σ_max²(A))`.
///
/// Both are infinite when there are no constraint rows.
pub fn rho_bounds(p: &BilevelProblem, delta: f64) -> Result<(f64, f64)> {
    let k = p.constants;
    if !(delta >= 0.0) || delta > k.max_delta() {
        return Err(Error::invalid(format!(
            "delta must lie in [0, mu_g/(2*l_f1)] = [0, {}] (got {delta})",
            k.max_delta()
        )));
    }
    if p.dh() == 0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let s = p.a_norm_sq();
    Ok(((k.mu_g - delta * k.l_f1) / s, k.mu_g / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryMode {
    /// `B ≠ 0`; requires full row rank `A`.
    Coupled,
    /// `B = 0`.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConstants {
    pub mode: TheoryMode,
    pub l_delta: f64,
    pub l_k: f64,
    pub l_phi: f64,
    pub l_g: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    pub l_d: f64,
    pub l_q: f64,
    pub sigma_a_sq: f64,
    pub sigma_a_min: f64,
    pub sigma_b: f64,
    pub sigma_yx: f64,
    pub sigma_zx: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub theta_bar: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub steps: StepSizes,
}

/// Theory step sizes with `θ̄` enumerated from the constraint matrix.
pub fn theory_step_sizes(
    p: &BilevelProblem,
    pen: &PenaltyConfig,
    mode: TheoryMode,
) -> Result<TheoryConstants> {
    theory_step_sizes_with(p, pen, mode, None)
}

/// As [`theory_step_sizes`], taking `θ̄` from `theta_override` when given.
pub fn theory_step_sizes_with(
    p: &BilevelProblem,
    pen: &PenaltyConfig,
    mode: TheoryMode,
    theta_override: Option<f64>,
) -> Result<TheoryConstants> {
    let k = p.constants;
    let dh = p.dh();
    if dh == 0 {
        return Err(Error::invalid("theory step sizes need at least one constraint row"));
    }
    let bad = pen.violations(p, true);
    if !bad.is_empty() {
        return Err(Error::invalid(bad.join("; ")));
    }
    let a = p.constraint.a();
    let b = p.constraint.b();
    let sa2 = p.a_norm_sq();
    let sa_min = linalg::min_singular_value(a, 1e-12)?;
    if mode == TheoryMode::Coupled && !(sa_min > 1e-10) {
        return Err(Error::Precondition(
            "coupled step sizes need A with full row rank".into(),
        ));
    }
    let sb2 = if b.is_zero() { 0.0 } else { linalg::spectral_norm_sq(b, 1e-12)? };
    let sap2 = sa2 + 1.0;
    let rho_max = pen.rho1.max(pen.rho2);

    let l_delta = k.mu_g / 2.0;
    let l_k = match mode {
        TheoryMode::Coupled => {
            l_delta + 2.0 * k.l_g1 + rho_max * sap2.max(sb2).max((sb2 * sap2).sqrt())
        }
        TheoryMode::Decoupled => l_delta + 2.0 * k.l_g1 + rho_max * sap2,
    };
    let mu_y = (k.mu_g - l_delta - pen.rho1 * sa2).min(pen.rho1 / 2.0);
    let mu_z = (k.mu_g - pen.rho2 * sa2).min(pen.rho2 / 2.0);
    if !(mu_y > 0.0 && mu_z > 0.0) {
        return Err(Error::invalid(format!(
            "K is not strongly convex-concave for these penalties (mu_y = {mu_y}, mu_z = {mu_z})"
        )));
    }
    let l_phi = l_delta + 2.0 * k.l_g1;
    let l_g = l_delta + k.l_g1;

    let theta_bar = match theta_override {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::invalid(format!("theta override must be positive (got {t})"))),
        None => theta_bar(a)?,
    };
    let sigma_y = std::f64::consts::SQRT_2 * (theta_bar * l_k * l_k + 1.0) / mu_y;
    let sigma_z = std::f64::consts::SQRT_2 * (theta_bar * l_k * l_k + 1.0) / mu_z;

    let eta_y = 1.0 / (4.0 * l_k);
    let sigma_yx = l_k / mu_y;
    let sigma_zx = l_k / mu_z;
    let sigma_alpha = 2.0 / (mu_y * eta_y);

    let (l_d, l_q, eta_z, eta_u, eta_v, eta_x, sigma_beta) = match mode {
        TheoryMode::Coupled => {
            let l_d = (l_k + l_k * sigma_yx).max(l_k);
            let sigma_yb = sa2.sqrt() * sigma_y + sigma_yx;
            let sigma_ub = l_g * sigma_yb / sa_min;
            let l_q = l_k + l_k * sigma_zx + l_k * sigma_yb + sb2.sqrt() * sigma_ub;
            let eta_z = 2.0 / (l_k + 4.0 * l_d);
            let sigma_beta = 2.0 / (mu_z * eta_z);
            let eta_u = eta_y * mu_y * mu_y / (256.0 * sa2);
            let eta_v = eta_z * mu_z * mu_z / (256.0 * sa2);
            let s_uy = (1.0 / eta_y + sigma_alpha * k.l_g1) / sa_min;
            let s_u1 = pen.rho1;
            let s_u2 = sigma_y * k.l_g1 / sa_min;
            let s_vz = (1.0 / eta_z + sigma_beta * k.l_g1) / sa_min;
            let s_v1 = pen.rho2;
            let s_v2 = sigma_z * k.l_g1 / sa_min;
            let lk2 = l_k * l_k;
            let eta_x = [
                eta_y * mu_y * mu_y / (640.0 * lk2),
                eta_z * mu_z * mu_z / (640.0 * lk2),
                eta_u / (240.0 * (sigma_y * sigma_y + s_u2 * s_u2 + s_u1 * s_u1) * lk2),
                eta_v / (240.0 * (sigma_z * sigma_z + s_v2 * s_v2 + s_v1 * s_v1) * lk2),
                2.0 / (l_k + 4.0 * l_d + 8.0 * l_q),
                1.0 / (1920.0 * eta_y * lk2 * s_uy * s_uy),
                1.0 / (1920.0 * eta_z * lk2 * s_vz * s_vz),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            (l_d, l_q, eta_z, eta_u, eta_v, eta_x, sigma_beta)
        }
        TheoryMode::Decoupled => {
            let l_d = (l_phi + l_phi * sigma_yx).max(l_k);
            let sigma_ys = 2.0 * l_k / k.mu_g;
            let l_q = l_phi + l_phi * sigma_zx + l_phi * sigma_ys;
            let eta_z = 2.0 / (l_k + 4.0 * l_d);
            let sigma_beta = 2.0 / (mu_z * eta_z);
            let eta_u = eta_y * mu_y * mu_y / (32.0 * sa2);
            let eta_v = eta_z * mu_z * mu_z / (32.0 * sa2);
            let lp2 = l_phi * l_phi;
            let eta_x = [
                eta_y * mu_y * mu_y / (512.0 * lp2),
                eta_z * mu_z * mu_z / (96.0 * lp2),
                eta_u / (64.0 * sigma_y * sigma_y * lp2),
                eta_v / (4.0 * sigma_z * sigma_z * lp2),
                2.0 / (l_k + 4.0 * l_d + 8.0 * l_q),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            (l_d, l_q, eta_z, eta_u, eta_v, eta_x, sigma_beta)
        }
    };

    Ok(TheoryConstants {
        mode,
        l_delta,
        l_k,
        l_phi,
        l_g,
        mu_y,
        mu_z,
        l_d,
        l_q,
        sigma_a_sq: sa2,
        sigma_a_min: sa_min,
        sigma_b: sb2.sqrt(),
        sigma_yx,
        sigma_zx,
        sigma_alpha,
        sigma_beta,
        theta_bar,
        sigma_y,
        sigma_z,
        steps: StepSizes {
            eta_x,
            eta_y,
            eta_z,
            eta_u,
            eta_v,
        },
    })
}

/// `M = [[A'ᵀ, Cᵀ], [0, I]]` with `A' = [A, −I]` and `C = [0, I]` selecting
/// the slack block.
fn hoffman_matrix(a: &DenseMatrix) -> DenseMatrix {
    let (dh, dy) = (a.rows(), a.cols());
    let rows = dy + 2 * dh;
    let cols = 2 * dh;
    let mut m = DenseMatrix::zeros(rows, cols);
    for i in 0..dh {
        for j in 0..dy {
            m[(j, i)] = a[(i, j)];
        }
        m[(dy + i, i)] = -1.0;
        m[(dy + i, dh + i)] = 1.0;
        m[(dy + dh + i, dh + i)] = 1.0;
    }
    m
}

/// `max σ_max²(M̄)/σ_min⁴(M̄)` over all full-row-rank submatrices `M̄`.
fn theta_bar(a: &DenseMatrix) -> Result<f64> {
    let (dh, dy) = (a.rows(), a.cols());
    if dh + dy > THETA_ENUMERATION_LIMIT {
        return Err(Error::TheoryConstantsUnavailable(format!(
            "theta-bar enumeration is limited to d_h + d_y <= {THETA_ENUMERATION_LIMIT} \
             (got {}); supply an override",
            dh + dy
        )));
    }
    let m = hoffman_matrix(a);
    let (nr, nc) = (m.rows(), m.cols());
    let mut best = 0.0_f64;
    for rmask in 1u32..(1 << nr) {
        let rows: Vec<usize> = (0..nr).filter(|i| rmask >> i & 1 == 1).collect();
        for cmask in 1u32..(1 << nc) {
            let cols: Vec<usize> = (0..nc).filter(|j| cmask >> j & 1 == 1).collect();
            if rows.len() > cols.len() {
                continue;
            }
            let sub = m.select(&rows, &cols);
            if rows.iter().enumerate().any(|(i, _)| sub.row(i).iter().all(|&v| v == 0.0)) {
                continue;
            }
            let smax2 = linalg::spectral_norm_sq(&sub, 1e-12)?;
            let smin = linalg::min_singular_value(&sub, 1e-12)?;
            if smin <= 1e-10 * smax2.sqrt().max(1.0) {
                continue;
            }
            best = best.max(smax2 / smin.powi(4));
        }
    }
    Ok(best)
}
