//! Reference implementations for the integration tests. Nothing here calls
//! into the library's numerical routines.

#![allow(dead_code)]

use sflcb_core::problem::QuadraticInstance;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| dot(r, v)).collect()
}

pub fn tr_matvec(m: &[Vec<f64>], v: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, vi) in m.iter().zip(v) {
        for (o, a) in out.iter_mut().zip(r) {
            *o += a * vi;
        }
    }
    out
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-13 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Singular values of a dense matrix via the eigenvalues of `MᵀM`, descending.
pub fn singular_values(m: &[Vec<f64>]) -> Vec<f64> {
    let cols = m.first().map_or(0, |r| r.len());
    let gram: Vec<Vec<f64>> = (0..cols)
        .map(|i| (0..cols).map(|j| m.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    let mut s: Vec<f64> = jacobi_eigenvalues(gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    s.reverse();
    s
}

/// `min ½yᵀHy + cᵀy` s.t. `Ay ≤ s`, rows in `eq` held with equality, by
/// trying every active set. Returns `(y, λ)`.
pub fn enumerate_qp(
    h: &[Vec<f64>],
    c: &[f64],
    a: &[Vec<f64>],
    s: &[f64],
    eq: &[bool],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = c.len();
    let m = a.len();
    let ineq: Vec<usize> = (0..m).filter(|&i| !eq[i]).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for mask in 0u32..(1 << ineq.len()) {
        let mut active: Vec<usize> = (0..m).filter(|&i| eq[i]).collect();
        active.extend(
            ineq.iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &i)| i),
        );
        let k = active.len();
        let mut kkt = vec![vec![0.0; n + k]; n + k];
        let mut rhs = vec![0.0; n + k];
        for i in 0..n {
            kkt[i][..n].copy_from_slice(&h[i]);
            rhs[i] = -c[i];
        }
        for (j, &row) in active.iter().enumerate() {
            for i in 0..n {
                kkt[i][n + j] = a[row][i];
                kkt[n + j][i] = a[row][i];
            }
            rhs[n + j] = s[row];
        }
        let Some(sol) = gauss_solve(kkt, rhs) else {
            continue;
        };
        let y = sol[..n].to_vec();
        let mut lambda = vec![0.0; m];
        for (j, &row) in active.iter().enumerate() {
            lambda[row] = sol[n + j];
        }
        let feasible = (0..m).all(|i| eq[i] || dot(&a[i], &y) <= s[i] + 1e-10);
        let dual_ok = (0..m).all(|i| eq[i] || lambda[i] >= -1e-10);
        if feasible && dual_ok {
            let hy = matvec(h, &y);
            let val = 0.5 * dot(&y, &hy) + dot(c, &y);
            if best.as_ref().is_none_or(|b| val < b.0) {
                best = Some((val, y, lambda));
            }
        }
    }
    best.map(|(_, y, l)| (y, l))
}

pub fn rows_of(m: &sflcb_core::linalg::DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// The penalized lower level of a quadratic instance written out by hand:
/// `H = Q + δI`, `c = Rx + r − δ(Px + p)`, `s = b − Bx`.
pub fn quadratic_ll(inst: &QuadraticInstance, x: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    let dy = inst.dy();
    let mut h = rows_of(&inst.q);
    for (i, r) in h.iter_mut().enumerate() {
        r[i] += delta;
    }
    let rx = matvec(&rows_of(&inst.r_mat), x);
    let px = matvec(&rows_of(&inst.p_mat), x);
    let c: Vec<f64> = (0..dy)
        .map(|i| rx[i] + inst.r_vec[i] - delta * (px[i] + inst.p_vec[i]))
        .collect();
    let con = &inst.constraint;
    let bx = matvec(&rows_of(con.b()), x);
    let s: Vec<f64> = (0..con.rows()).map(|i| con.rhs()[i] - bx[i]).collect();
    let eq: Vec<bool> = (0..con.rows()).map(|i| con.is_equality(i)).collect();
    enumerate_qp(&h, &c, &rows_of(con.a()), &s, &eq).expect("strongly convex feasible QP")
}

/// Central-difference gradient.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, 1)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / norm(b).max(1.0)
}
