//! Seeded quadratic test instances.
//!
//! `f(x, y) = ½‖y − Px − p‖² + ½‖x‖²` and `g(x, y) = ½ yᵀQy + (Rx + r)ᵀy`,
//! with `Q` having smallest eigenvalue exactly `μ_g` and `A` built from
//! orthogonal rows so its singular values are known in advance.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    BilevelProblem, Evaluation, LinearCoupledConstraint, SecondOrder, SmoothnessConstants,
};
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};

/// Spectral norm the generator gives to `P`, keeping `l_f1` near 2.
const P_NORM: f64 = 0.5;
/// Radius of the ball over which `l_f0` bounds `‖∇f‖`.
const LF0_RADIUS: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub p_mat: DenseMatrix,
    pub p_vec: DenseVector,
    pub q: DenseMatrix,
    pub r_mat: DenseMatrix,
    pub r_vec: DenseVector,
    pub constraint: LinearCoupledConstraint,
    pub mu_g: f64,
    /// Singular values assigned to the rows of `A`.
    pub a_singular_values: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix::new(rows, cols, data).expect("sized")
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DenseVector {
    (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Rows of a random `k × n` matrix with orthonormal rows (`k ≤ n`).
fn orthonormal_rows(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        // Two Gram-Schmidt passes for numerical orthogonality.
        for _ in 0..2 {
            for r in &rows {
                let c = linalg::dot(&v, r);
                linalg::axpy(&mut v, -c, r);
            }
        }
        let nv = linalg::norm(&v);
        if nv > 1e-8 {
            rows.push(linalg::scale(&v, 1.0 / nv));
        }
    }
    rows
}

impl QuadraticInstance {
    pub fn random(
        seed: u64,
        dx: usize,
        dy: usize,
        dh: usize,
        mu_g: f64,
        coupled: bool,
    ) -> Result<Self> {
        if dx == 0 || dy == 0 {
            return Err(Error::invalid("d_x and d_y must be positive"));
        }
        if dh > dy {
            return Err(Error::invalid(format!(
                "full-row-rank A needs d_h <= d_y (got d_h = {dh}, d_y = {dy})"
            )));
        }
        if !(mu_g > 0.0) {
            return Err(Error::invalid("mu_g must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let p_raw = gaussian_matrix(&mut rng, dy, dx, 1.0);
        let p_norm = linalg::spectral_norm_sq(&p_raw, 1e-12)?.sqrt();
        let p_mat = p_raw.scaled(P_NORM / p_norm.max(1e-12));
        let p_vec = gaussian_vector(&mut rng, dy, 0.5);

        let u = DenseMatrix::from_rows(&orthonormal_rows(&mut rng, dy, dy))?;
        let mut eig = vec![mu_g];
        eig.extend((1..dy).map(|_| mu_g + rng.random_range(0.0..2.0 * mu_g)));
        let q_raw = u.transpose().matmul(&DenseMatrix::diag(&eig)).matmul(&u);
        // Symmetrize away rounding asymmetry.
        let q = DenseMatrix::new(
            dy,
            dy,
            (0..dy * dy)
                .map(|k| 0.5 * (q_raw[(k / dy, k % dy)] + q_raw[(k % dy, k / dy)]))
                .collect(),
        )?;

        let r_mat = gaussian_matrix(&mut rng, dy, dx, 0.5);
        let r_vec = gaussian_vector(&mut rng, dy, 0.5);

        let a_singular_values: Vec<f64> =
            (0..dh).map(|_| rng.random_range(0.5..1.5)).collect();
        let a_rows: Vec<Vec<f64>> = orthonormal_rows(&mut rng, dh, dy)
            .into_iter()
            .zip(&a_singular_values)
            .map(|(r, &s)| linalg::scale(&r, s))
            .collect();
        let a = if dh == 0 {
            DenseMatrix::zeros(0, dy)
        } else {
            DenseMatrix::from_rows(&a_rows)?
        };
        let b = if coupled {
            gaussian_matrix(&mut rng, dh, dx, 0.5)
        } else {
            DenseMatrix::zeros(dh, dx)
        };
        let rhs = gaussian_vector(&mut rng, dh, 0.5);
        let constraint = LinearCoupledConstraint::inequalities(a, b, rhs)?;

        Ok(QuadraticInstance {
            p_mat,
            p_vec,
            q,
            r_mat,
            r_vec,
            constraint,
            mu_g,
            a_singular_values,
        })
    }

    pub fn dx(&self) -> usize {
        self.p_mat.cols()
    }

    pub fn dy(&self) -> usize {
        self.q.rows()
    }

    /// Joint Hessian of `f` over `(x, y)`.
    pub fn f_hessian(&self) -> DenseMatrix {
        let (dx, dy) = (self.dx(), self.dy());
        let n = dx + dy;
        let ptp = self.p_mat.gram_cols();
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..dx {
            for j in 0..dx {
                h[(i, j)] = ptp[(i, j)] + if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..dy {
            h[(dx + i, dx + i)] = 1.0;
            for j in 0..dx {
                h[(dx + i, j)] = -self.p_mat[(i, j)];
                h[(j, dx + i)] = -self.p_mat[(i, j)];
            }
        }
        h
    }

    pub fn constants(&self) -> Result<SmoothnessConstants> {
        let l_f1 = linalg::spectral_norm_sq(&self.f_hessian(), 1e-12)?.sqrt();
        let q_norm = linalg::spectral_norm_sq(&self.q, 1e-12)?.sqrt();
        let r_norm = linalg::spectral_norm_sq(&self.r_mat, 1e-12)?.sqrt();
        let grad0 = self.eval_f(&vec![0.0; self.dx()], &vec![0.0; self.dy()]);
        let g0 = linalg::norm(&grad0.grad_x).hypot(linalg::norm(&grad0.grad_y));
        Ok(SmoothnessConstants {
            mu_g: self.mu_g,
            l_f0: g0 + l_f1 * LF0_RADIUS,
            l_f1,
            l_g1: q_norm + r_norm,
        })
    }

    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> Evaluation {
        let px = self.p_mat.mul_vec(x);
        let resid: Vec<f64> = y
            .iter()
            .zip(px.iter().zip(self.p_vec.iter()))
            .map(|(yi, (pxi, pi))| yi - pxi - pi)
            .collect();
        let mut grad_x = self.p_mat.tr_mul_vec(&resid);
        grad_x.iter_mut().zip(x).for_each(|(gx, xi)| *gx = xi - *gx);
        Evaluation {
            value: 0.5 * linalg::dot(&resid, &resid) + 0.5 * linalg::dot(x, x),
            grad_x,
            grad_y: resid,
        }
    }

    pub fn eval_g(&self, x: &[f64], y: &[f64]) -> Evaluation {
        let qy = self.q.mul_vec(y);
        let mut lin = self.r_mat.mul_vec(x);
        linalg::axpy(&mut lin, 1.0, &self.r_vec);
        let value = 0.5 * linalg::dot(y, &qy) + linalg::dot(&lin, y);
        Evaluation {
            value,
            grad_x: self.r_mat.tr_mul_vec(y),
            grad_y: linalg::add(&qy, &lin),
        }
    }

    pub fn problem(&self) -> Result<BilevelProblem> {
        let constants = self.constants()?;
        let fi = self.clone();
        let gi = self.clone();
        let q = self.q.clone();
        let r = self.r_mat.clone();
        let name = format!(
            "qp(dx={},dy={},dh={},coupled={})",
            self.dx(),
            self.dy(),
            self.constraint.rows(),
            self.constraint.is_coupled()
        );
        Ok(BilevelProblem::new(
            name,
            self.dx(),
            self.dy(),
            Arc::new(move |x: &[f64], y: &[f64]| fi.eval_f(x, y)),
            Arc::new(move |x: &[f64], y: &[f64]| gi.eval_g(x, y)),
            self.constraint.clone(),
            constants,
        )
        .with_hessian(Arc::new(move |_x: &[f64], _y: &[f64]| SecondOrder {
            hyy: q.clone(),
            hyx: r.clone(),
        })))
    }
}

/// Seeded quadratic bilevel instance; `coupled` selects a nonzero `B`.
pub fn random_qp_instance(
    seed: u64,
    dx: usize,
    dy: usize,
    dh: usize,
    mu_g: f64,
    coupled: bool,
) -> Result<BilevelProblem> {
    QuadraticInstance::random(seed, dx, dy, dh, mu_g, coupled)?.problem()
}
