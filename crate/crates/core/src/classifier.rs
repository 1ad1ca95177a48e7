//! One-vs-all support vector machines trained in the dual with SMO.
//!
//! Samples are rows. The dual solved for each binary machine is
//!
//! ```text
//! min_α ½ αᵀQα − Σα,  Q_ij = y_i y_j k(x_i, x_j),  0 ≤ α ≤ C,  yᵀα = 0
//! ```
//!
//! using maximal-violating-pair working set selection (ties broken by the
//! lowest index), so training is deterministic.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// `(uᵀv + coef0)^degree`
    Polynomial { degree: u32, coef0: f64 },
}

impl Kernel {
    pub const POLY2: Kernel = Kernel::Polynomial {
        degree: 2,
        coef0: 1.0,
    };

    pub fn eval(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        self.from_dot(u.dot(&v))
    }

    fn from_dot(&self, dot: f64) -> f64 {
        match *self {
            Kernel::Linear => dot,
            Kernel::Polynomial { degree, coef0 } => (dot + coef0).powi(degree as i32),
        }
    }

    /// Kernel matrix between the rows of `a` and the rows of `b`.
    pub fn matrix(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        let mut k = a.dot(&b.t());
        if !matches!(self, Kernel::Linear) {
            k.mapv_inplace(|d| self.from_dot(d));
        }
        k
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Polynomial { degree, coef0 } => write!(f, "poly{degree}:{coef0}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// `linear`, `poly` (degree 2, offset 1), `polyD` or `polyD:OFFSET`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(Kernel::Linear);
        }
        let rest = s
            .strip_prefix("poly")
            .ok_or_else(|| Error::InvalidParam(format!("unknown kernel '{s}'")))?;
        if rest.is_empty() {
            return Ok(Kernel::POLY2);
        }
        let (deg, off) = rest.split_once(':').unwrap_or((rest, "1"));
        let degree = deg
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad polynomial degree in '{s}'")))?;
        let coef0 = off
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad polynomial offset in '{s}'")))?;
        Ok(Kernel::Polynomial { degree, coef0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    /// Final maximal KKT violation `m(α) − M(α)`.
    pub max_violation: f64,
    pub converged: bool,
}

/// Dual solution of one binary problem on a precomputed kernel matrix.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Array1<f64>,
    pub bias: f64,
    pub diagnostics: SolverDiagnostics,
}

/// SMO on a precomputed kernel matrix; `y` entries must be ±1.
pub fn smo(kernel: ArrayView2<f64>, y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let n = y.len();
    if kernel.dim() != (n, n) {
        return Err(Error::DimensionMismatch("kernel matrix must be N × N".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParam(format!("C must be positive, got {c}")));
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::SingleClassInput);
    }
    let mut alpha = Array1::<f64>::zeros(n);
    let mut grad = Array1::<f64>::from_elem(n, -1.0);
    let diag: Vec<f64> = (0..n).map(|i| kernel[[i, i]]).collect();
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        violation = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || violation < tol || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let kij = kernel[[i, j]];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (yi, yj) = (y[i], y[j]);
        let ki = kernel.row(i);
        let kj = kernel.row(j);
        for t in 0..n {
            grad[t] += y[t] * (yi * ki[t] * di + yj * kj[t] * dj);
        }
    }

    // Bias from the free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    let converged = violation < tol;
    if !converged {
        warn!("SMO stopped after {iterations} iterations with violation {violation:.3e}");
    }
    Ok(DualSolution {
        alpha,
        bias: -rho,
        diagnostics: SolverDiagnostics {
            iterations,
            max_violation: violation,
            converged,
        },
    })
}

fn default_max_iter(n: usize) -> usize {
    (1000 * n).max(100_000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: Kernel,
    pub c: f64,
    /// Rows are support vectors.
    pub support_vectors: Array2<f64>,
    /// αₙyₙ for each support vector.
    pub dual_coefs: Array1<f64>,
    pub bias: f64,
    pub diagnostics: SolverDiagnostics,
    weights: Option<Array1<f64>>,
}

impl BinarySvm {
    pub fn from_parts(
        kernel: Kernel,
        c: f64,
        support_vectors: Array2<f64>,
        dual_coefs: Array1<f64>,
        bias: f64,
        diagnostics: SolverDiagnostics,
    ) -> Self {
        let weights = matches!(kernel, Kernel::Linear).then(|| {
            let mut w = Array1::zeros(support_vectors.ncols());
            for (sv, &coef) in support_vectors.rows().into_iter().zip(dual_coefs.iter()) {
                w.scaled_add(coef, &sv);
            }
            w
        });
        BinarySvm {
            kernel,
            c,
            support_vectors,
            dual_coefs,
            bias,
            diagnostics,
            weights,
        }
    }

    fn from_dual(x: ArrayView2<f64>, kernel: Kernel, c: f64, sol: &DualSolution, y: &[f64]) -> Self {
        let sv: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
        let support_vectors = x.select(Axis(0), &sv);
        let dual_coefs = sv.iter().map(|&i| sol.alpha[i] * y[i]).collect();
        Self::from_parts(kernel, c, support_vectors, dual_coefs, sol.bias, sol.diagnostics)
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// Primal weight vector, linear kernel only.
    pub fn weights(&self) -> Option<&Array1<f64>> {
        self.weights.as_ref()
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        match &self.weights {
            Some(w) => w.dot(&x) + self.bias,
            None => {
                self.support_vectors
                    .rows()
                    .into_iter()
                    .zip(self.dual_coefs.iter())
                    .map(|(sv, &coef)| coef * self.kernel.eval(sv, x))
                    .sum::<f64>()
                    + self.bias
            }
        }
    }

    /// Decision values for every row of `x`.
    pub fn decisions(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match &self.weights {
            Some(w) => x.dot(w) + self.bias,
            None => {
                let k = self.kernel.matrix(x, self.support_vectors.view());
                k.dot(&self.dual_coefs) + self.bias
            }
        }
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.diagnostics.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                iterations: self.diagnostics.iterations,
                residual: self.diagnostics.max_violation,
            })
        }
    }
}

/// Trains one binary machine. Labels are ±1. A machine that hits the
/// iteration cap is still returned; inspect `diagnostics`.
pub fn svm_train_binary(
    x: ArrayView2<f64>,
    y: &[f64],
    c: f64,
    kernel: Kernel,
    tol: f64,
) -> Result<BinarySvm> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples, {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let gram = kernel.matrix(x, x);
    let sol = smo(gram.view(), y, c, tol, default_max_iter(y.len()))?;
    Ok(BinarySvm::from_dual(x, kernel, c, &sol, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvaSvmModel {
    pub machines: Vec<BinarySvm>,
}

impl OvaSvmModel {
    pub fn num_classes(&self) -> usize {
        self.machines.len()
    }

    pub fn dim(&self) -> usize {
        self.machines.first().map_or(0, |m| m.dim())
    }

    pub fn decision_values(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.machines.iter().map(|m| m.decision(x)).collect())
    }

    /// N × C decision values for the rows of `x`.
    pub fn decision_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} columns, model expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut out = Array2::zeros((x.nrows(), self.machines.len()));
        for (c, m) in self.machines.iter().enumerate() {
            out.column_mut(c).assign(&m.decisions(x));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let d = self.decision_matrix(x)?;
        Ok(d.rows().into_iter().map(|r| argmax_first(r.iter().copied())).collect())
    }
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax_first<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn ova_predict(model: &OvaSvmModel, code: ArrayView1<f64>) -> Result<usize> {
    Ok(argmax_first(model.decision_values(code)?))
}

/// Precomputed kernel matrix reused across classes and C values.
pub struct KernelCache<'a> {
    x: ArrayView2<'a, f64>,
    kernel: Kernel,
    gram: Array2<f64>,
}

impl<'a> KernelCache<'a> {
    pub fn new(x: ArrayView2<'a, f64>, kernel: Kernel) -> Self {
        KernelCache {
            x,
            kernel,
            gram: kernel.matrix(x, x),
        }
    }

    pub fn train_ova(&self, labels: &[usize], num_classes: usize, c: f64, tol: f64) -> Result<OvaSvmModel> {
        let n = self.x.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} samples, {} labels", labels.len())));
        }
        if num_classes < 2 {
            return Err(Error::MissingClass(format!(
                "{num_classes} class(es) leave no rest class"
            )));
        }
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: num_classes,
                });
            }
            counts[l] += 1;
        }
        if let Some(missing) = counts.iter().position(|&k| k == 0) {
            return Err(Error::MissingClass(format!("class {missing} has no samples")));
        }
        let machines = (0..num_classes)
            .map(|class| {
                let y: Vec<f64> = labels
                    .iter()
                    .map(|&l| if l == class { 1.0 } else { -1.0 })
                    .collect();
                let sol = smo(self.gram.view(), &y, c, tol, default_max_iter(n))?;
                Ok(BinarySvm::from_dual(self.x, self.kernel, c, &sol, &y))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OvaSvmModel { machines })
    }
}

/// One-vs-all training; class `c` is positive for machine `c`.
pub fn ova_train(
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    c: f64,
    kernel: Kernel,
    tol: f64,
) -> Result<OvaSvmModel> {
    KernelCache::new(x, kernel).train_ova(labels, num_classes, c, tol)
}

/// Σ max(0, 1 − yₙ h(xₙ))
pub fn hinge_loss(model: &BinarySvm, x: ArrayView2<f64>, y: &[f64]) -> f64 {
    model
        .decisions(x)
        .iter()
        .zip(y)
        .map(|(h, yi)| (1.0 - yi * h).max(0.0))
        .sum()
}
