//! Soft-margin SVM with per-sample margin budgets `c` as hyperparameters.
//!
//! Upper level: `Σ_val exp(1 − l (zᵀw + b)) + ½‖c‖²`.
//! Lower level: `½‖w‖² + (μ_b/2) b²` subject to `l_i (z_iᵀw + b) ≥ 1 − c_i`
//! on the training split, written as `−l_i (z_iᵀ, 1) y − c_i ≤ −1`.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::problem::{
    BilevelProblem, Evaluation, LinearCoupledConstraint, SecondOrder, SmoothnessConstants,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmDataset {
    pub features: DenseMatrix,
    pub labels: Vec<f64>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SvmDataset {
    /// Validates the dataset and standardizes features on the training split.
    pub fn new(
        features: DenseMatrix,
        labels: Vec<f64>,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::invalid(format!("{} labels for {n} samples", labels.len())));
        }
        if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::invalid("labels must be -1 or +1"));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        if train.is_empty() || validation.is_empty() {
            return Err(Error::invalid("training and validation splits must be nonempty"));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&validation).chain(&test) {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("splits do not cover every sample"));
        }
        let mut ds = SvmDataset {
            features,
            labels,
            train,
            validation,
            test,
        };
        ds.standardize();
        Ok(ds)
    }

    fn standardize(&mut self) {
        let d = self.features.cols();
        let nt = self.train.len() as f64;
        for j in 0..d {
            let mean = self.train.iter().map(|&i| self.features[(i, j)]).sum::<f64>() / nt;
            let var = self
                .train
                .iter()
                .map(|&i| (self.features[(i, j)] - mean).powi(2))
                .sum::<f64>()
                / nt;
            let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
            for i in 0..self.features.rows() {
                self.features[(i, j)] = (self.features[(i, j)] - mean) / sd;
            }
        }
    }

    /// Two Gaussian classes with means `±1.5·e₁`, shuffled into the three splits.
    pub fn synthetic(
        seed: u64,
        n_features: usize,
        n_train: usize,
        n_val: usize,
        n_test: usize,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("need at least one feature"));
        }
        let n = n_train + n_val + n_test;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * n_features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let l = if i % 2 == 0 { 1.0 } else { -1.0 };
            labels.push(l);
            for j in 0..n_features {
                let noise: f64 = rng.sample(StandardNormal);
                let shift = if j == 0 { 1.5 * l } else { 0.0 };
                data.push(shift + 0.5 * noise);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let train = order[..n_train].to_vec();
        let validation = order[n_train..n_train + n_val].to_vec();
        let test = order[n_train + n_val..].to_vec();
        Self::new(DenseMatrix::new(n, n_features, data)?, labels, train, validation, test)
    }

    /// Header row, one sample per line, label in the last column (`±1` or `0/1`).
    /// Samples are split in file order.
    pub fn from_csv(path: &Path, n_train: usize, n_val: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, n_train, n_val)
    }

    pub fn parse_csv(text: &str, n_train: usize, n_val: usize) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
            let Some((&label, feats)) = vals.split_last() else {
                continue;
            };
            if feats.is_empty() {
                return Err(Error::invalid(format!("line {}: no feature columns", lineno + 1)));
            }
            labels.push(label);
            rows.push(feats.to_vec());
        }
        if rows.is_empty() {
            return Err(Error::invalid("dataset has no samples"));
        }
        if labels.iter().all(|&l| l == 0.0 || l == 1.0) {
            labels.iter_mut().for_each(|l| *l = 2.0 * *l - 1.0);
        }
        let n = rows.len();
        if n_train + n_val > n {
            return Err(Error::invalid(format!("{n} samples cannot fill the requested splits")));
        }
        let features = DenseMatrix::from_rows(&rows)?;
        Self::new(
            features,
            labels,
            (0..n_train).collect(),
            (n_train..n_train + n_val).collect(),
            (n_train + n_val..n).collect(),
        )
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }
}

/// `(z_i, 1)` scaled by the label.
fn signed_row(ds: &SvmDataset, i: usize) -> Vec<f64> {
    let l = ds.labels[i];
    let mut r: Vec<f64> = ds.features.row(i).iter().map(|v| l * v).collect();
    r.push(l);
    r
}

/// `Σ_val exp(1 − l (zᵀw + b))`.
pub fn validation_loss(ds: &SvmDataset, y: &[f64]) -> f64 {
    ds.validation
        .iter()
        .map(|&i| (1.0 - linalg::dot(&signed_row(ds, i), y)).exp())
        .sum()
}

/// Fraction of test samples classified correctly by `y = (w, b)`.
pub fn test_accuracy(ds: &SvmDataset, y: &[f64]) -> f64 {
    if ds.test.is_empty() {
        return f64::NAN;
    }
    let ok = ds
        .test
        .iter()
        .filter(|&&i| linalg::dot(&signed_row(ds, i), y) > 0.0)
        .count();
    ok as f64 / ds.test.len() as f64
}

pub fn build_svm(ds: &SvmDataset, mu_b: f64) -> Result<BilevelProblem> {
    if !(mu_b > 0.0) {
        return Err(Error::invalid("mu_b must be positive"));
    }
    if ds.train.is_empty() || ds.validation.is_empty() {
        return Err(Error::invalid("training and validation splits must be nonempty"));
    }
    let d = ds.n_features();
    let dy = d + 1;
    let nt = ds.train.len();
    let a_rows: Vec<Vec<f64>> = ds
        .train
        .iter()
        .map(|&i| signed_row(ds, i).iter().map(|v| -v).collect())
        .collect();
    let constraint = LinearCoupledConstraint::inequalities(
        DenseMatrix::from_rows(&a_rows)?,
        DenseMatrix::identity(nt).scaled(-1.0),
        DenseVector::filled(nt, -1.0),
    )?;

    let val_rows: Vec<Vec<f64>> = ds.validation.iter().map(|&i| signed_row(ds, i)).collect();
    let f_rows = val_rows.clone();
    let f = Arc::new(move |x: &[f64], y: &[f64]| {
        let mut value = 0.5 * linalg::dot(x, x);
        let mut grad_y = vec![0.0; y.len()];
        for r in &f_rows {
            let e = (1.0 - linalg::dot(r, y)).exp();
            value += e;
            linalg::axpy(&mut grad_y, -e, r);
        }
        Evaluation {
            value,
            grad_x: x.to_vec(),
            grad_y,
        }
    });
    let g = Arc::new(move |x: &[f64], y: &[f64]| {
        let (w, b) = y.split_at(d);
        let mut grad_y = w.to_vec();
        grad_y.push(mu_b * b[0]);
        Evaluation {
            value: 0.5 * linalg::dot(w, w) + 0.5 * mu_b * b[0] * b[0],
            grad_x: vec![0.0; x.len()],
            grad_y,
        }
    });
    let mut hyy = vec![1.0; dy];
    hyy[d] = mu_b;
    let hyy = DenseMatrix::diag(&hyy);

    // Curvature and slope of the exponential loss at the origin.
    let l_f1 = 1.0_f64.exp() * val_rows.iter().map(|r| linalg::dot(r, r)).sum::<f64>();
    let mut g0 = vec![0.0; dy];
    for r in &val_rows {
        linalg::axpy(&mut g0, -1.0_f64.exp(), r);
    }
    let constants = SmoothnessConstants {
        mu_g: mu_b.min(1.0),
        l_f0: linalg::norm(&g0),
        l_f1: l_f1.max(1.0),
        l_g1: mu_b.max(1.0),
    };
    Ok(BilevelProblem::new(
        format!("svm(train={nt},features={d})"),
        nt,
        dy,
        f,
        g,
        constraint,
        constants,
    )
    .with_hessian(Arc::new(move |x: &[f64], _y: &[f64]| SecondOrder {
        hyy: hyy.clone(),
        hyx: DenseMatrix::zeros(dy, x.len()),
    })))
}
