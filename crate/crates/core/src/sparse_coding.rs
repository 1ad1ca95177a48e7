//! Lasso-type sparse coding over a global dictionary.
//!
//! Both coding problems are instances of
//!
//! ```text
//! min_a  aᵀQa − 2bᵀa + λ‖a‖₁
//! ```
//!
//! For plain Lasso `Q = DᵀD` and `b = Dᵀx`. The supervised variant with label
//! `c` adds the class-specific reconstruction term, which doubles the `c`
//! block of both `Q` and `b`, and a ridge of weight `γ1` on every coordinate
//! outside block `c`. The solver is cyclic coordinate descent with exact
//! soft-thresholded coordinate minimization, maintaining `Qa` incrementally.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::dictionary::GlobalDictionary;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Coordinate descent also stops once no coordinate moves more than this.
pub const MIN_UPDATE: f64 = 1e-8;
/// Diagonal entries below this mark degenerate (zero-norm) atoms.
const DEGENERATE_DIAG: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coeffs: Array1<f64>,
    pub block_size: usize,
    pub num_classes: usize,
}

impl SparseCode {
    pub fn zeros(num_classes: usize, block_size: usize) -> Self {
        SparseCode {
            coeffs: Array1::zeros(num_classes * block_size),
            block_size,
            num_classes,
        }
    }

    pub fn block(&self, class: usize) -> ArrayView1<'_, f64> {
        self.coeffs
            .slice(s![class * self.block_size..(class + 1) * self.block_size])
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// One coding problem. `label` selects the supervised variant.
#[derive(Debug, Clone)]
pub struct CodingProblem<'a> {
    pub x: ArrayView1<'a, f64>,
    pub dictionary: &'a GlobalDictionary,
    pub label: Option<usize>,
    pub lambda: f64,
    pub gamma1: f64,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingResult {
    pub code: SparseCode,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CodingResult {
    fn into_checked(self) -> Result<SparseCode> {
        if self.converged {
            Ok(self.code)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

/// `min aᵀQa − 2bᵀa + λ‖a‖₁`
#[derive(Debug, Clone)]
pub struct QuadraticL1<'a> {
    pub q: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
    pub lambda: f64,
}

impl QuadraticL1<'_> {
    pub fn objective(&self, a: ArrayView1<f64>) -> f64 {
        let qa = self.q.dot(&a);
        a.dot(&qa) - 2.0 * self.b.dot(&a) + self.lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part, `2(Qa − b)`.
    pub fn smooth_gradient(&self, a: ArrayView1<f64>) -> Array1<f64> {
        (self.q.dot(&a) - self.b) * 2.0
    }

    pub fn kkt_residual(&self, a: ArrayView1<f64>) -> f64 {
        let qa = self.q.dot(&a);
        kkt_from_parts(a, qa.view(), self.b, self.lambda)
    }

    pub fn solve(&self, warm: Option<ArrayView1<f64>>, options: SolverOptions) -> Solution {
        self.solve_observed(warm, options, |_, _| {})
    }

    /// Like [`solve`](Self::solve), calling `observer(sweep, objective)` after
    /// every sweep.
    pub fn solve_observed<F>(
        &self,
        warm: Option<ArrayView1<f64>>,
        options: SolverOptions,
        mut observer: F,
    ) -> Solution
    where
        F: FnMut(usize, f64),
    {
        let k = self.b.len();
        let mut a = match warm {
            Some(w) => w.to_owned(),
            None => Array1::zeros(k),
        };
        let active: Vec<bool> = (0..k).map(|j| self.q[[j, j]] > DEGENERATE_DIAG).collect();
        for j in 0..k {
            if !active[j] {
                a[j] = 0.0;
            }
        }
        let mut qa = self.q.dot(&a);
        let half_lambda = 0.5 * self.lambda;
        let mut sweeps = 0;
        while sweeps < options.max_iter {
            sweeps += 1;
            let mut max_update = 0.0f64;
            for j in 0..k {
                if !active[j] {
                    continue;
                }
                let qjj = self.q[[j, j]];
                let old = a[j];
                let rho = self.b[j] - qa[j] + qjj * old;
                let new = soft_threshold(rho, half_lambda) / qjj;
                let delta = new - old;
                if delta != 0.0 {
                    a[j] = new;
                    qa.scaled_add(delta, &self.q.column(j));
                    max_update = max_update.max(delta.abs());
                }
            }
            let objective = a.dot(&qa) - 2.0 * self.b.dot(&a) + self.lambda * l1(a.view());
            observer(sweeps, objective);
            if max_update < MIN_UPDATE
                || kkt_from_parts(a.view(), qa.view(), self.b, self.lambda) <= options.tol
            {
                break;
            }
        }
        let residual = self.kkt_residual(a.view());
        Solution {
            coeffs: a,
            residual,
            iterations: sweeps,
            converged: residual <= options.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coeffs: Array1<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn l1(a: ArrayView1<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn kkt_from_parts(a: ArrayView1<f64>, qa: ArrayView1<f64>, b: ArrayView1<f64>, lambda: f64) -> f64 {
    a.iter()
        .zip(qa.iter().zip(b.iter()))
        .map(|(&ak, (&qk, &bk))| {
            let g = 2.0 * (qk - bk);
            if ak > 0.0 {
                (g + lambda).abs()
            } else if ak < 0.0 {
                (g - lambda).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Supervised quadratic form for label `class`, given the Gram matrix and
/// the correlations `Dᵀx`.
pub fn supervised_system(
    gram: ArrayView2<f64>,
    corr: ArrayView1<f64>,
    class: usize,
    block_size: usize,
    gamma1: f64,
) -> (Array2<f64>, Array1<f64>) {
    let q = supervised_gram(gram, class, block_size, gamma1);
    let mut b = corr.to_owned();
    b.slice_mut(s![class * block_size..(class + 1) * block_size])
        .mapv_inplace(|v| 2.0 * v);
    (q, b)
}

/// `Q` of the supervised variant: `DᵀD + D_cᵀD_c ⊕ γ1·I` outside block `c`.
pub fn supervised_gram(gram: ArrayView2<f64>, class: usize, block_size: usize, gamma1: f64) -> Array2<f64> {
    let mut q = gram.to_owned();
    let lo = class * block_size;
    let hi = lo + block_size;
    {
        let mut blk = q.slice_mut(s![lo..hi, lo..hi]);
        blk *= 2.0;
    }
    for j in 0..q.nrows() {
        if j < lo || j >= hi {
            q[[j, j]] += gamma1;
        }
    }
    q
}

impl<'a> CodingProblem<'a> {
    pub fn lasso(x: ArrayView1<'a, f64>, dictionary: &'a GlobalDictionary, lambda: f64) -> Self {
        CodingProblem {
            x,
            dictionary,
            label: None,
            lambda,
            gamma1: 0.0,
            options: SolverOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.dictionary.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature has {} entries, dictionary atoms have {}",
                self.x.len(),
                self.dictionary.dim()
            )));
        }
        if !(self.lambda >= 0.0) || !(self.gamma1 >= 0.0) {
            return Err(Error::InvalidParam("lambda and gamma1 must be nonnegative".into()));
        }
        if let Some(c) = self.label {
            if c >= self.dictionary.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: self.dictionary.num_classes(),
                });
            }
        }
        Ok(())
    }

    /// The quadratic form `(Q, b)` of this problem.
    pub fn system(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        self.validate()?;
        let atoms = self.dictionary.atoms();
        let gram = atoms.t().dot(&atoms);
        let corr = atoms.t().dot(&self.x);
        Ok(match self.label {
            None => (gram, corr),
            Some(c) => supervised_system(
                gram.view(),
                corr.view(),
                c,
                self.dictionary.atoms_per_class(),
                self.gamma1,
            ),
        })
    }

    /// Full objective including the constant terms, so that a zero code
    /// scores `‖x‖²` (plain) or `2‖x‖²` (supervised).
    pub fn objective(&self, code: &SparseCode) -> Result<f64> {
        let (q, b) = self.system()?;
        check_code_len(code, b.len())?;
        let form = QuadraticL1 {
            q: q.view(),
            b: b.view(),
            lambda: self.lambda,
        };
        let xx = self.x.dot(&self.x);
        let constant = if self.label.is_some() { 2.0 * xx } else { xx };
        Ok(constant + form.objective(code.coeffs.view()))
    }

    pub fn solve(&self, warm: Option<&SparseCode>) -> Result<CodingResult> {
        let (q, b) = self.system()?;
        if let Some(w) = warm {
            check_code_len(w, b.len())?;
        }
        let form = QuadraticL1 {
            q: q.view(),
            b: b.view(),
            lambda: self.lambda,
        };
        let sol = form.solve(warm.map(|w| w.coeffs.view()), self.options);
        Ok(self.wrap(sol))
    }

    fn wrap(&self, sol: Solution) -> CodingResult {
        CodingResult {
            code: SparseCode {
                coeffs: sol.coeffs,
                block_size: self.dictionary.atoms_per_class(),
                num_classes: self.dictionary.num_classes(),
            },
            residual: sol.residual,
            iterations: sol.iterations,
            converged: sol.converged,
        }
    }
}

fn check_code_len(code: &SparseCode, k: usize) -> Result<()> {
    if code.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "code has {} coefficients, dictionary has {k} atoms",
            code.len()
        )));
    }
    Ok(())
}

/// Plain Lasso code `argmin ‖x − Da‖² + λ‖a‖₁`.
pub fn lasso_code<'a>(
    x: ArrayView1<'a, f64>,
    dictionary: &'a GlobalDictionary,
    lambda: f64,
    options: SolverOptions,
) -> Result<SparseCode> {
    let problem = CodingProblem {
        options,
        ..CodingProblem::lasso(x, dictionary, lambda)
    };
    problem.solve(None)?.into_checked()
}

/// Supervised code of a labelled sample.
pub fn supervised_code(problem: &CodingProblem) -> Result<SparseCode> {
    if problem.label.is_none() {
        return Err(Error::MissingLabel);
    }
    problem.solve(None)?.into_checked()
}

pub fn kkt_residual(problem: &CodingProblem, code: &SparseCode) -> Result<f64> {
    let (q, b) = problem.system()?;
    check_code_len(code, b.len())?;
    Ok(kkt_from_parts(
        code.coeffs.view(),
        q.dot(&code.coeffs).view(),
        b.view(),
        problem.lambda,
    ))
}

/// Batch coder sharing one Gram matrix across many samples.
pub struct Coder<'a> {
    dictionary: &'a GlobalDictionary,
    gram: Array2<f64>,
    lambda: f64,
    gamma1: f64,
    options: SolverOptions,
    supervised: Vec<Array2<f64>>,
}

impl<'a> Coder<'a> {
    pub fn lasso(dictionary: &'a GlobalDictionary, lambda: f64, options: SolverOptions) -> Self {
        Self::with_gram(dictionary, dictionary.gram(), lambda, 0.0, options, false)
    }

    pub fn supervised(
        dictionary: &'a GlobalDictionary,
        lambda: f64,
        gamma1: f64,
        options: SolverOptions,
    ) -> Self {
        Self::with_gram(dictionary, dictionary.gram(), lambda, gamma1, options, true)
    }

    /// Reuses a precomputed `DᵀD`.
    pub fn with_gram(
        dictionary: &'a GlobalDictionary,
        gram: Array2<f64>,
        lambda: f64,
        gamma1: f64,
        options: SolverOptions,
        supervised: bool,
    ) -> Self {
        let per_class = if supervised {
            (0..dictionary.num_classes())
                .map(|c| supervised_gram(gram.view(), c, dictionary.atoms_per_class(), gamma1))
                .collect()
        } else {
            Vec::new()
        };
        Coder {
            dictionary,
            gram,
            lambda,
            gamma1,
            options,
            supervised: per_class,
        }
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    /// Codes every column of `x` (M × N). `labels` must be given for a
    /// supervised coder. Warm starts are taken column-wise from `warm`.
    pub fn code_all(
        &self,
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
        warm: Option<ArrayView2<f64>>,
    ) -> Result<BatchCodes> {
        if x.nrows() != self.dictionary.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, dictionary atoms have {}",
                x.nrows(),
                self.dictionary.dim()
            )));
        }
        let n = x.ncols();
        let k = self.dictionary.num_atoms();
        if !self.supervised.is_empty() {
            let labels = labels.ok_or(Error::MissingLabel)?;
            if labels.len() != n {
                return Err(Error::DimensionMismatch("one label per sample required".into()));
            }
            if let Some(&bad) = labels.iter().find(|&&c| c >= self.dictionary.num_classes()) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: self.dictionary.num_classes(),
                });
            }
        }
        if let Some(w) = &warm {
            if w.dim() != (k, n) {
                return Err(Error::DimensionMismatch("warm start shape".into()));
            }
        }
        let corr = self.dictionary.atoms().t().dot(&x);
        let mut codes = Array2::zeros((k, n));
        let mut max_residual = 0.0f64;
        let mut unconverged = 0;
        let block = self.dictionary.atoms_per_class();
        for i in 0..n {
            let col = corr.column(i);
            let (q, b) = match labels.filter(|_| !self.supervised.is_empty()) {
                Some(lab) => {
                    let c = lab[i];
                    let mut b = col.to_owned();
                    b.slice_mut(s![c * block..(c + 1) * block])
                        .mapv_inplace(|v| 2.0 * v);
                    (self.supervised[c].view(), b)
                }
                None => (self.gram.view(), col.to_owned()),
            };
            let form = QuadraticL1 {
                q,
                b: b.view(),
                lambda: self.lambda,
            };
            let start = warm.as_ref().map(|w| w.column(i));
            let mut sol = form.solve(start, self.options);
            if let Some(w) = start {
                if form.objective(sol.coeffs.view()) > form.objective(w) {
                    sol.coeffs = w.to_owned();
                    sol.residual = form.kkt_residual(w);
                    sol.converged = sol.residual <= self.options.tol;
                }
            }
            if !sol.converged {
                unconverged += 1;
            }
            max_residual = max_residual.max(sol.residual);
            codes.column_mut(i).assign(&sol.coeffs);
        }
        Ok(BatchCodes {
            codes,
            max_residual,
            unconverged,
        })
    }
}

/// Codes stored column-wise (K × N).
#[derive(Debug, Clone)]
pub struct BatchCodes {
    pub codes: Array2<f64>,
    pub max_residual: f64,
    pub unconverged: usize,
}

impl BatchCodes {
    pub fn code(&self, i: usize, dictionary: &GlobalDictionary) -> SparseCode {
        SparseCode {
            coeffs: self.codes.index_axis(Axis(1), i).to_owned(),
            block_size: dictionary.atoms_per_class(),
            num_classes: dictionary.num_classes(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_dict(m: usize, classes: usize) -> GlobalDictionary {
        let k = m / classes;
        GlobalDictionary::from_atoms(Array2::eye(m), classes, k).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.0, 0.5), 0.5);
        assert_eq!(soft_threshold(-1.0, 0.5), -0.5);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
    }

    #[test]
    fn orthonormal_lasso_matches_closed_form() {
        let d = identity_dict(2, 1);
        let x = array![1.0, 0.2];
        let a = lasso_code(x.view(), &d, 1.0, SolverOptions::default()).unwrap();
        assert!((a.coeffs[0] - 0.5).abs() < 1e-12);
        assert_eq!(a.coeffs[1], 0.0);
        let zero = lasso_code(array![0.0, 0.0].view(), &d, 1.0, SolverOptions::default()).unwrap();
        assert!(zero.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_class_supervised_closed_form() {
        let d = identity_dict(2, 1);
        let x = array![1.0, 0.0];
        let p = CodingProblem {
            label: Some(0),
            ..CodingProblem::lasso(x.view(), &d, 1.0)
        };
        let a = supervised_code(&p).unwrap();
        assert!((a.coeffs[0] - 0.75).abs() < 1e-12);
        assert_eq!(a.coeffs[1], 0.0);
    }

    #[test]
    fn large_gamma1_kills_off_class_block() {
        let atoms = array![[1.0, 1.0], [0.0, 0.0]];
        let d = GlobalDictionary::from_atoms(atoms, 2, 1).unwrap();
        let x = array![1.0, 0.0];
        for (label, expect) in [(0, [1.0, 0.0]), (1, [0.0, 1.0])] {
            let p = CodingProblem {
                label: Some(label),
                gamma1: 1e6,
                ..CodingProblem::lasso(x.view(), &d, 0.0)
            };
            let a = supervised_code(&p).unwrap();
            assert!((a.coeffs[0] - expect[0]).abs() < 1e-3, "{a:?}");
            assert!((a.coeffs[1] - expect[1]).abs() < 1e-3, "{a:?}");
        }
    }

    #[test]
    fn supervised_requires_label() {
        let d = identity_dict(2, 1);
        let x = array![1.0, 0.0];
        let p = CodingProblem::lasso(x.view(), &d, 1.0);
        assert!(matches!(supervised_code(&p), Err(Error::MissingLabel)));
        let bad = CodingProblem {
            label: Some(3),
            ..CodingProblem::lasso(x.view(), &d, 1.0)
        };
        assert!(matches!(supervised_code(&bad), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let d = identity_dict(2, 1);
        let x = array![1.0, 0.0, 2.0];
        assert!(matches!(
            lasso_code(x.view(), &d, 1.0, SolverOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_is_optimal_for_large_lambda() {
        let atoms = array![[1.0, 0.6], [0.0, 0.8]];
        let d = GlobalDictionary::from_atoms(atoms, 1, 2).unwrap();
        let x = array![0.3, -0.4];
        let lambda_max = 2.0 * d.atoms().t().dot(&x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let p = CodingProblem::lasso(x.view(), &d, lambda_max);
        let zero = SparseCode::zeros(1, 2);
        assert_eq!(kkt_residual(&p, &zero).unwrap(), 0.0);
        let p_small = CodingProblem::lasso(x.view(), &d, 0.9 * lambda_max);
        assert!(kkt_residual(&p_small, &zero).unwrap() > 0.0);
    }

    #[test]
    fn degenerate_atoms_get_zero() {
        let atoms = array![[1.0, 0.0], [0.0, 0.0]];
        let d = GlobalDictionary::from_atoms(atoms, 1, 2).unwrap();
        let a = lasso_code(array![1.0, 1.0].view(), &d, 0.1, SolverOptions::default()).unwrap();
        assert_eq!(a.coeffs[1], 0.0);
        assert!((a.coeffs[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn least_squares_when_lambda_zero() {
        let atoms = array![[2.0, 1.0], [0.5, 1.5]];
        let d = GlobalDictionary::from_atoms(atoms.clone(), 1, 2).unwrap();
        let x = array![0.7, -0.2];
        let a = lasso_code(x.view(), &d, 0.0, SolverOptions::default()).unwrap();
        let resid = &x - &atoms.dot(&a.coeffs);
        assert!(resid.dot(&resid).sqrt() <= 1e-6);
    }

    #[test]
    fn objective_monotone_over_sweeps() {
        let atoms = array![[1.0, 0.9, 0.1], [0.0, 0.3, 0.9], [0.2, 0.1, 0.4]];
        let d = GlobalDictionary::from_atoms(atoms, 1, 3).unwrap();
        let (q, b) = CodingProblem::lasso(array![0.5, -1.0, 0.8].view(), &d, 0.05)
            .system()
            .unwrap();
        let form = QuadraticL1 {
            q: q.view(),
            b: b.view(),
            lambda: 0.05,
        };
        let mut trace = Vec::new();
        let sol = form.solve_observed(None, SolverOptions::default(), |_, f| trace.push(f));
        assert!(sol.converged);
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn coder_matches_single_problem() {
        let atoms = array![[1.0, 0.6, 0.0, 0.3], [0.0, 0.8, 1.0, 0.4], [0.0, 0.0, 0.0, 0.866]];
        let d = GlobalDictionary::from_atoms(atoms, 2, 2).unwrap();
        let x = array![[0.5, -0.1], [0.2, 0.9], [0.4, 0.3]];
        let labels = [1usize, 0];
        let coder = Coder::supervised(&d, 0.1, 0.2, SolverOptions::default());
        let batch = coder.code_all(x.view(), Some(&labels), None).unwrap();
        for i in 0..2 {
            let p = CodingProblem {
                label: Some(labels[i]),
                gamma1: 0.2,
                ..CodingProblem::lasso(x.column(i), &d, 0.1)
            };
            let single = supervised_code(&p).unwrap();
            for (u, v) in single.coeffs.iter().zip(batch.codes.column(i)) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
