//! Bilevel problem model: objective oracles, smoothness constants and the
//! linear coupling constraint `h(x, y) = Bx + Ay - b`.

mod quadratic;

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};

pub use quadratic::{random_qp_instance, QuadraticInstance};

/// Value and partial gradients of an objective at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_x.iter().all(|v| v.is_finite())
            && self.grad_y.iter().all(|v| v.is_finite())
    }
}

/// First-order oracle for `f` or `g`. Implementations must be re-entrant.
pub trait Objective: Send + Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> Evaluation;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &[f64]) -> Evaluation + Send + Sync,
{
    fn eval(&self, x: &[f64], y: &[f64]) -> Evaluation {
        self(x, y)
    }
}

/// `∇²_yy g` (d_y × d_y) and the cross block `∇_x(∇_y g)` (d_y × d_x).
#[derive(Debug, Clone)]
pub struct SecondOrder {
    pub hyy: DenseMatrix,
    pub hyx: DenseMatrix,
}

pub trait HessianOracle: Send + Sync {
    fn hessians(&self, x: &[f64], y: &[f64]) -> SecondOrder;
}

impl<F> HessianOracle for F
where
    F: Fn(&[f64], &[f64]) -> SecondOrder + Send + Sync,
{
    fn hessians(&self, x: &[f64], y: &[f64]) -> SecondOrder {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Inequality,
    Equality,
}

/// `Bx + Ay - b` with a per-row inequality/equality flag.
#[derive(Debug, Clone)]
pub struct LinearCoupledConstraint {
    a: DenseMatrix,
    b: DenseMatrix,
    rhs: DenseVector,
    kinds: Vec<RowKind>,
}

impl LinearCoupledConstraint {
    pub fn new(
        a: DenseMatrix,
        b: DenseMatrix,
        rhs: DenseVector,
        kinds: Vec<RowKind>,
    ) -> Result<Self> {
        let dh = a.rows();
        if b.rows() != dh || rhs.len() != dh || kinds.len() != dh {
            return Err(Error::invalid(format!(
                "constraint rows disagree: A has {dh}, B has {}, b has {}, kinds has {}",
                b.rows(),
                rhs.len(),
                kinds.len()
            )));
        }
        if !a.is_finite() || !b.is_finite() || !rhs.is_finite() {
            return Err(Error::invalid("constraint data has non-finite entries"));
        }
        Ok(LinearCoupledConstraint { a, b, rhs, kinds })
    }

    /// All rows are inequalities.
    pub fn inequalities(a: DenseMatrix, b: DenseMatrix, rhs: DenseVector) -> Result<Self> {
        let kinds = vec![RowKind::Inequality; a.rows()];
        Self::new(a, b, rhs, kinds)
    }

    /// Zero rows; the lower level is unconstrained.
    pub fn none(dx: usize, dy: usize) -> Self {
        LinearCoupledConstraint {
            a: DenseMatrix::zeros(0, dy),
            b: DenseMatrix::zeros(0, dx),
            rhs: DenseVector::zeros(0),
            kinds: Vec::new(),
        }
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn rhs(&self) -> &DenseVector {
        &self.rhs
    }

    pub fn kinds(&self) -> &[RowKind] {
        &self.kinds
    }

    pub fn rows(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_equality(&self, i: usize) -> bool {
        self.kinds[i] == RowKind::Equality
    }

    pub fn is_coupled(&self) -> bool {
        !self.b.is_zero()
    }

    /// `h(x, y) = Bx + Ay - b`
    pub fn h(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul_vec(y);
        if self.b.cols() > 0 {
            linalg::axpy(&mut out, 1.0, &self.b.mul_vec(x));
        }
        linalg::axpy(&mut out, -1.0, &self.rhs);
        out
    }

    /// `b - Bx`, the right-hand side seen by the lower level at fixed `x`.
    pub fn shifted_rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.rhs.to_vec();
        if self.b.cols() > 0 {
            linalg::axpy(&mut out, -1.0, &self.b.mul_vec(x));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    /// Strong convexity of `g(x, ·)`.
    pub mu_g: f64,
    /// Lipschitz constant of `f`.
    pub l_f0: f64,
    /// Lipschitz constant of `∇f`.
    pub l_f1: f64,
    /// Lipschitz constant of `∇g`.
    pub l_g1: f64,
}

impl SmoothnessConstants {
    /// Largest penalty parameter for which `δf + g` stays `μ_g/2`-strongly convex.
    pub fn max_delta(&self) -> f64 {
        self.mu_g / (2.0 * self.l_f1)
    }
}

/// Per-coordinate bounds; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::invalid("bounds have different lengths"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
            return Err(Error::invalid("bounds must satisfy lo <= hi"));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&x, (&l, &h))| x.max(l).min(h))
            .collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&l, &h))| x >= l && x <= h)
    }
}

/// A bilevel problem `min_x f(x, y*(x))`, `y*(x) = argmin_{h(x,y) <= 0} g(x, y)`.
#[derive(Clone)]
pub struct BilevelProblem {
    pub name: String,
    pub dx: usize,
    pub dy: usize,
    pub f: Arc<dyn Objective>,
    pub g: Arc<dyn Objective>,
    pub hessian: Option<Arc<dyn HessianOracle>>,
    pub constraint: LinearCoupledConstraint,
    pub constants: SmoothnessConstants,
    pub x_box: Option<Bounds>,
    /// Box `g` is evaluated on; iterates are clamped into it before each oracle call.
    pub y_eval_box: Option<Bounds>,
    a_norm_sq: OnceLock<f64>,
}

impl fmt::Debug for BilevelProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BilevelProblem")
            .field("name", &self.name)
            .field("dx", &self.dx)
            .field("dy", &self.dy)
            .field("dh", &self.dh())
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl BilevelProblem {
    pub fn new(
        name: impl Into<String>,
        dx: usize,
        dy: usize,
        f: Arc<dyn Objective>,
        g: Arc<dyn Objective>,
        constraint: LinearCoupledConstraint,
        constants: SmoothnessConstants,
    ) -> Self {
        BilevelProblem {
            name: name.into(),
            dx,
            dy,
            f,
            g,
            hessian: None,
            constraint,
            constants,
            x_box: None,
            y_eval_box: None,
            a_norm_sq: OnceLock::new(),
        }
    }

    pub fn with_hessian(mut self, h: Arc<dyn HessianOracle>) -> Self {
        self.hessian = Some(h);
        self
    }

    pub fn with_x_box(mut self, b: Bounds) -> Self {
        self.x_box = Some(b);
        self
    }

    pub fn with_y_eval_box(mut self, b: Bounds) -> Self {
        self.y_eval_box = Some(b);
        self
    }

    pub fn dh(&self) -> usize {
        self.constraint.rows()
    }

    /// `σ_max(A)²`, cached. Zero when there are no constraint rows.
    pub fn a_norm_sq(&self) -> f64 {
        *self.a_norm_sq.get_or_init(|| {
            let a = self.constraint.a();
            if a.is_empty() {
                0.0
            } else {
                linalg::spectral_norm_sq(a, 1e-12).unwrap_or_else(|e| match e {
                    Error::Convergence { last, .. } => last,
                    _ => f64::NAN,
                })
            }
        })
    }

    pub fn clamp_y<'a>(&self, y: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.y_eval_box {
            Some(b) if !b.contains(y) => std::borrow::Cow::Owned(b.project(y)),
            _ => std::borrow::Cow::Borrowed(y),
        }
    }

    pub fn project_x(&self, x: &[f64]) -> Vec<f64> {
        match &self.x_box {
            Some(b) => b.project(x),
            None => x.to_vec(),
        }
    }

    fn checked(&self, which: &str, e: Evaluation) -> Result<Evaluation> {
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::Oracle(format!("{which} on problem {}", self.name)))
        }
    }

    /// `f(x, y)` with `y` clamped into the evaluation box.
    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> Result<Evaluation> {
        let y = self.clamp_y(y);
        self.checked("f", self.f.eval(x, &y))
    }

    /// `g(x, y)` with `y` clamped into the evaluation box.
    pub fn eval_g(&self, x: &[f64], y: &[f64]) -> Result<Evaluation> {
        let y = self.clamp_y(y);
        self.checked("g", self.g.eval(x, &y))
    }

    /// `g_δ = δ f + g`.
    pub fn eval_g_delta(&self, x: &[f64], y: &[f64], delta: f64) -> Result<Evaluation> {
        let mut g = self.eval_g(x, y)?;
        if delta != 0.0 {
            let f = self.eval_f(x, y)?;
            g.value += delta * f.value;
            linalg::axpy(&mut g.grad_x, delta, &f.grad_x);
            linalg::axpy(&mut g.grad_y, delta, &f.grad_y);
        }
        Ok(g)
    }
}

/// Outcome of [`validate_problem`]; passes iff there are no violations.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub secant_pairs_checked: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Number of sampled point pairs in the strong-convexity secant check.
pub const SECANT_SAMPLES: usize = 100;

/// Checks dimensions, constants and the penalty condition `δ ≤ μ_g/(2 l_f1)`.
/// When `secant_seed` is given, also samples the strong-convexity secant
/// inequality of `g` at [`SECANT_SAMPLES`] point pairs.
pub fn validate_problem(
    p: &BilevelProblem,
    delta: f64,
    secant_seed: Option<u64>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;
    let c = &p.constraint;
    if c.a().cols() != p.dy {
        v.push(format!("A has {} columns, expected d_y = {}", c.a().cols(), p.dy));
    }
    if c.b().cols() != p.dx && c.rows() > 0 {
        v.push(format!("B has {} columns, expected d_x = {}", c.b().cols(), p.dx));
    }
    for (name, b, n) in [("x_box", &p.x_box, p.dx), ("y_eval_box", &p.y_eval_box, p.dy)] {
        if let Some(b) = b {
            if b.len() != n {
                v.push(format!("{name} has {} entries, expected {n}", b.len()));
            }
        }
    }
    let k = p.constants;
    for (name, value) in [
        ("mu_g", k.mu_g),
        ("l_f0", k.l_f0),
        ("l_f1", k.l_f1),
        ("l_g1", k.l_g1),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            v.push(format!("{name} must be positive and finite (got {value})"));
        }
    }
    if k.mu_g > k.l_g1 {
        v.push(format!("mu_g ({}) exceeds l_g1 ({})", k.mu_g, k.l_g1));
    }
    if !(delta > 0.0) {
        v.push(format!("delta must be positive (got {delta})"));
    } else if delta > k.max_delta() {
        v.push(format!(
            "delta exceeds mu_g/(2*l_f1): {delta} > {}",
            k.max_delta()
        ));
    }
    if let (Some(seed), true) = (secant_seed, v.is_empty()) {
        check_secant(p, seed, &mut report);
    }
    report
}

fn sample_in(rng: &mut ChaCha8Rng, n: usize, bounds: Option<&Bounds>) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let (lo, hi) = bounds
                .map(|b| (b.lo[i].max(-2.0), b.hi[i].min(2.0)))
                .unwrap_or((-2.0, 2.0));
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

fn check_secant(p: &BilevelProblem, seed: u64, report: &mut ValidationReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = p.constants.mu_g;
    for _ in 0..SECANT_SAMPLES {
        let x = sample_in(&mut rng, p.dx, p.x_box.as_ref());
        let y1 = sample_in(&mut rng, p.dy, p.y_eval_box.as_ref());
        let y2 = sample_in(&mut rng, p.dy, p.y_eval_box.as_ref());
        let (g1, g2) = match (p.eval_g(&x, &y1), p.eval_g(&x, &y2)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                report.violations.push(format!("g oracle failed: {e}"));
                return;
            }
        };
        let d = linalg::sub(&y2, &y1);
        let lower = g1.value + linalg::dot(&g1.grad_y, &d) + 0.5 * mu * linalg::dot(&d, &d);
        let slack = 1e-9 * (1.0 + g2.value.abs());
        if g2.value < lower - slack {
            report.violations.push(format!(
                "strong convexity secant inequality fails: g(x,y2) = {} < {lower}",
                g2.value
            ));
            return;
        }
        report.secant_pairs_checked += 1;
    }
}
