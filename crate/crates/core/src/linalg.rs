//! Small dense linear-algebra kernel.
//!
//! Everything here works on row-major `f64` storage. Problem sizes in this
//! crate are tiny (tens of rows), so the routines favour clarity over blocking
//! or SIMD: power iteration for extreme singular values, Gaussian elimination
//! with partial pivoting for the verification KKT systems, and the two
//! projections the solver needs.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use crate::error::{Error, Result};

/// Iteration cap shared by the power-iteration routines.
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Absolute floor below which eigenvalue estimates are treated as zero.
const ZERO_FLOOR: f64 = 1e-12;
const SQUARING_CAP: usize = 60;

#[derive(Clone, PartialEq, Default)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        DenseVector(entries)
    }

    /// Like [`DenseVector::new`] but rejects non-finite entries.
    pub fn try_new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().all(|v| v.is_finite()) {
            Ok(DenseVector(entries))
        } else {
            Err(Error::invalid("vector has non-finite entries"))
        }
    }

    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        DenseVector(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl From<&[f64]> for DenseVector {
    fn from(v: &[f64]) -> Self {
        DenseVector(v.to_vec())
    }
}

impl FromIterator<f64> for DenseVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        DenseVector(iter.into_iter().collect())
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = DenseMatrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from equally sized rows. An empty slice yields a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        DenseMatrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `M v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `Mᵀ v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += m * vi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `M Mᵀ`
    pub fn gram_rows(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `Mᵀ M`
    pub fn gram_cols(&self) -> DenseMatrix {
        self.transpose().gram_rows()
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `[self, other]`
    pub fn hstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::invalid("hstack row mismatch"));
        }
        let mut out = DenseMatrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.data[i * out.cols..i * out.cols + self.cols].copy_from_slice(self.row(i));
            out.data[i * out.cols + self.cols..(i + 1) * out.cols].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        for (oi, &i) in rows.iter().enumerate() {
            for (oj, &j) in cols.iter().enumerate() {
                out[(oi, oj)] = self[(i, j)];
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let cols: Vec<usize> = (0..self.cols).collect();
        self.select(rows, &cols)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fixed start vector for power iteration.
///
/// All-ones, with a small deterministic tilt so that it is not orthogonal to
/// the dominant eigenvector of symmetric sign-patterned Gram matrices.
fn start_vector(n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * ((i + 1) as f64).sin()).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
fn psd_max_eigenvalue(g: &DenseMatrix, tol: f64) -> Result<f64> {
    let n = g.rows();
    let mut v = start_vector(n);
    let mut lambda = 0.0;
    for it in 0..POWER_ITERATION_CAP {
        let w = g.mul_vec(&v);
        let next = dot(&v, &w);
        let wn = norm(&w);
        if wn <= ZERO_FLOOR {
            return Ok(0.0);
        }
        v = scale(&w, 1.0 / wn);
        if it > 2 && (next - lambda).abs() <= tol * next.abs().max(ZERO_FLOOR) {
            return Ok(next);
        }
        lambda = next;
    }
    squared_power_iteration(g, v, lambda, tol)
}

/// Continues from `v` on `G^(2^k)`, normalizing after each squaring. Used when
/// plain iteration stalls on a tight cluster at the top of the spectrum.
fn squared_power_iteration(g: &DenseMatrix, mut v: Vec<f64>, mut lambda: f64, tol: f64) -> Result<f64> {
    let mut m = g.clone();
    for _ in 0..SQUARING_CAP {
        m = m.matmul(&m);
        let fro = norm(m.data());
        if !(fro > 0.0 && fro.is_finite()) {
            break;
        }
        m = m.scaled(1.0 / fro);
        let w = m.mul_vec(&v);
        let wn = norm(&w);
        if wn <= ZERO_FLOOR * ZERO_FLOOR {
            break;
        }
        v = scale(&w, 1.0 / wn);
        let next = dot(&v, &g.mul_vec(&v));
        if (next - lambda).abs() <= tol * next.abs().max(ZERO_FLOOR) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::Convergence {
        what: "power iteration",
        iterations: POWER_ITERATION_CAP,
        last: lambda,
    })
}

/// `σ_max(M)²` by power iteration on the smaller of `MᵀM` and `MMᵀ`.
pub fn spectral_norm_sq(m: &DenseMatrix, tol: f64) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::invalid("spectral norm of an empty matrix"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let g = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    };
    psd_max_eigenvalue(&g, tol)
}

/// Smallest singular value over the row space, `sqrt(λ_min(MMᵀ))`.
///
/// Uses inverse iteration on `MMᵀ`; a numerically singular Gram matrix
/// (dependent rows) yields zero.
pub fn min_singular_value(m: &DenseMatrix, tol: f64) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::invalid("singular value of an empty matrix"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if m.rows() > m.cols() {
        return Ok(0.0);
    }
    let g = m.gram_rows();
    let scale_ref = (0..g.rows()).map(|i| g[(i, i)]).fold(0.0, f64::max);
    if scale_ref <= ZERO_FLOOR {
        return Ok(0.0);
    }
    let Some(chol) = Cholesky::factor(&g, 1e-13 * scale_ref) else {
        return Ok(0.0);
    };
    let mut v = start_vector(g.rows());
    let mut mu = f64::INFINITY;
    for it in 0..POWER_ITERATION_CAP {
        let w = chol.solve(&v);
        let wn = norm(&w);
        // vᵀ G⁻¹ v converges to 1/λ_min for unit v.
        let next = 1.0 / dot(&v, &w);
        v = scale(&w, 1.0 / wn);
        if it > 2 && (next - mu).abs() <= tol * next.abs().max(ZERO_FLOOR) {
            return Ok(next.max(0.0).sqrt());
        }
        mu = next;
    }
    let n = g.rows();
    let mut inv = Vec::with_capacity(n * n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        inv.extend(chol.solve(&e));
    }
    let inv = DenseMatrix::new(n, n, inv)?;
    match squared_power_iteration(&inv, v, 1.0 / mu, tol) {
        Ok(top) => Ok((1.0 / top).max(0.0).sqrt()),
        Err(_) => Err(Error::Convergence {
            what: "inverse iteration",
            iterations: POWER_ITERATION_CAP,
            last: mu.max(0.0).sqrt(),
        }),
    }
}

struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    fn factor(a: &DenseMatrix, pivot_floor: f64) -> Option<Cholesky> {
        let n = a.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= pivot_floor {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Cholesky { l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[(i, k)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l[(k, i)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        y
    }
}

/// Solves `M X = B` by Gaussian elimination with partial pivoting.
pub fn solve_matrix(m: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let n = m.rows();
    if m.cols() != n || rhs.rows() != n {
        return Err(Error::invalid("solve: dimension mismatch"));
    }
    let k = rhs.cols();
    let mut a = m.clone();
    let mut x = rhs.clone();
    let scale_ref = m.data().iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let floor = 1e-13 * scale_ref.max(ZERO_FLOOR);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= floor {
            return Err(Error::Singular(format!("pivot {pivot:e} in column {col}")));
        }
        if pivot_row != col {
            for j in 0..n {
                a.data.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..k {
                x.data.swap(col * k + j, pivot_row * k + j);
            }
        }
        let p = a[(col, col)];
        for r in col + 1..n {
            let factor = a[(r, col)] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[(r, j)] -= factor * a[(col, j)];
            }
            for j in 0..k {
                x[(r, j)] -= factor * x[(col, j)];
            }
        }
    }
    for col in (0..n).rev() {
        let p = a[(col, col)];
        for j in 0..k {
            let mut s = x[(col, j)];
            for c in col + 1..n {
                s -= a[(col, c)] * x[(c, j)];
            }
            x[(col, j)] = s / p;
        }
    }
    Ok(x)
}

/// Solves `M x = b` by Gaussian elimination with partial pivoting.
pub fn solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DenseMatrix::new(b.len(), 1, b.to_vec())?;
    Ok(solve_matrix(m, &rhs)?.data)
}

/// Componentwise `min(v, 0)`.
pub fn project_nonpositive(v: &[f64]) -> DenseVector {
    v.iter().map(|&x| x.min(0.0)).collect()
}

/// Componentwise clamp into `[lo, hi]`. Bounds may be infinite.
pub fn project_box(v: &[f64], lo: &[f64], hi: &[f64]) -> Result<DenseVector> {
    if v.len() != lo.len() || v.len() != hi.len() {
        return Err(Error::invalid(format!(
            "box projection: vector has {} entries, bounds have {} and {}",
            v.len(),
            lo.len(),
            hi.len()
        )));
    }
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::invalid("box projection: lo exceeds hi"));
    }
    Ok(v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &h))| x.max(l).min(h))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_small_matrices() {
        let i2 = DenseMatrix::identity(2);
        assert!((spectral_norm_sq(&i2, 1e-10).unwrap() - 1.0).abs() < 1e-10);
        let d = DenseMatrix::diag(&[3.0, 4.0]);
        assert!((spectral_norm_sq(&d, 1e-10).unwrap() - 16.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_norm_with_sign_pattern() {
        // Gram matrix [[2,-2],[-2,2]] has the all-ones vector in its kernel.
        let m = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        assert!((spectral_norm_sq(&m, 1e-12).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn clustered_top_eigenvalues_still_converge() {
        let d = DenseMatrix::diag(&[1.0 + 2e-6, 1.0, 0.5]);
        let got = spectral_norm_sq(&d, 1e-12).unwrap();
        assert!((got - (1.0 + 2e-6) * (1.0 + 2e-6)).abs() < 1e-11, "{got}");
        let d = DenseMatrix::diag(&[1.0 - 2e-6, 1.0, 2.0]);
        let got = min_singular_value(&d, 1e-12).unwrap();
        assert!((got - (1.0 - 2e-6)).abs() < 1e-11, "{got}");
    }

    #[test]
    fn spectral_norm_rejects_bad_input() {
        let m = DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(spectral_norm_sq(&m, 1e-8), Err(Error::InvalidInput(_))));
        assert!(spectral_norm_sq(&DenseMatrix::zeros(0, 0), 1e-8).is_err());
        assert!(spectral_norm_sq(&DenseMatrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        assert_eq!(spectral_norm_sq(&DenseMatrix::zeros(2, 3), 1e-8).unwrap(), 0.0);
        assert_eq!(min_singular_value(&DenseMatrix::zeros(2, 3), 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn min_singular_value_cases() {
        let d = DenseMatrix::diag(&[3.0, 4.0]);
        assert!((min_singular_value(&d, 1e-12).unwrap() - 3.0).abs() < 1e-8);
        let dup = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(min_singular_value(&dup, 1e-10).unwrap() < 1e-8);
        let tall = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(min_singular_value(&tall, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn projections() {
        assert_eq!(project_nonpositive(&[1.0, -2.0, 0.0]).as_slice(), &[0.0, -2.0, 0.0]);
        assert_eq!(project_nonpositive(&[-1.0, -1.0]).as_slice(), &[-1.0, -1.0]);
        assert_eq!(project_box(&[5.0], &[0.0], &[3.0]).unwrap().as_slice(), &[3.0]);
        assert_eq!(project_box(&[1.5], &[0.0], &[3.0]).unwrap().as_slice(), &[1.5]);
        assert_eq!(
            project_box(&[-2.0, 4.0], &[0.0, 0.0], &[3.0, 3.0]).unwrap().as_slice(),
            &[0.0, 3.0]
        );
        assert!(project_box(&[1.0, 2.0], &[0.0], &[3.0]).is_err());
        let unbounded = project_box(&[-1.0, 7.0], &[0.0, 0.0], &[f64::INFINITY; 2]).unwrap();
        assert_eq!(unbounded.as_slice(), &[0.0, 7.0]);
    }

    #[test]
    fn gaussian_elimination_needs_pivoting() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
        let x = solve(&m, &[1.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let singular = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(solve(&singular, &[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn hstack_and_select() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = a.hstack(&DenseMatrix::identity(2).scaled(-1.0)).unwrap();
        assert_eq!(s.row(1), &[3.0, 4.0, 0.0, -1.0]);
        assert_eq!(s.select(&[1], &[0, 3]).data(), &[3.0, -1.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]), vec![4.0, 6.0]);
    }
}
