//! Class-based dictionaries and the learning objective
//!
//! ```text
//! J = J1 + J2 + λ·J3 + γ1·J4 + γ2·J5
//! J1 = Σ_n ‖x_n − D a_n‖²                     global reconstruction
//! J2 = Σ_n ‖x_n − D_{y_n} a_{n,y_n}‖²          class reconstruction
//! J3 = Σ_n ‖a_n‖₁
//! J4 = Σ_n Σ_{c≠y_n} ‖a_{nc}‖²                  off-class coefficients
//! J5 = Σ_c Σ_{c'≠c} ‖D_cᵀ D_{c'}‖²_F            cross-class coherence
//! ```
//!
//! Samples and codes are stored column-wise: `X` is M × N, `A` is K × N.
//! Class indices are zero-based.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse_coding::SolverOptions;

/// Atom norms may exceed 1 by at most this much.
pub const NORM_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDictionary {
    atoms: Array2<f64>,
    num_classes: usize,
    atoms_per_class: usize,
}

impl GlobalDictionary {
    /// `atoms` is M × (C·K′), class blocks laid out contiguously.
    pub fn from_atoms(atoms: Array2<f64>, num_classes: usize, atoms_per_class: usize) -> Result<Self> {
        if num_classes == 0 || atoms_per_class == 0 {
            return Err(Error::InvalidParam("dictionary needs at least one class and atom".into()));
        }
        if atoms.ncols() != num_classes * atoms_per_class {
            return Err(Error::DimensionMismatch(format!(
                "{} atoms cannot form {num_classes} blocks of {atoms_per_class}",
                atoms.ncols()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("dictionary entries must be finite".into()));
        }
        Ok(GlobalDictionary {
            atoms,
            num_classes,
            atoms_per_class,
        })
    }

    pub fn from_class_dicts(dicts: &[Array2<f64>]) -> Result<Self> {
        let first = dicts
            .first()
            .ok_or_else(|| Error::InvalidParam("no class dictionaries".into()))?;
        let (m, kp) = first.dim();
        let mut atoms = Array2::zeros((m, kp * dicts.len()));
        for (c, d) in dicts.iter().enumerate() {
            if d.dim() != (m, kp) {
                return Err(Error::DimensionMismatch(format!(
                    "class {c} dictionary is {:?}, expected {:?}",
                    d.dim(),
                    (m, kp)
                )));
            }
            atoms.slice_mut(s![.., c * kp..(c + 1) * kp]).assign(d);
        }
        Self::from_atoms(atoms, dicts.len(), kp)
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atoms_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.atoms.view_mut()
    }

    pub fn into_atoms(self) -> Array2<f64> {
        self.atoms
    }

    /// M, the feature dimension.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn atoms_per_class(&self) -> usize {
        self.atoms_per_class
    }

    /// K = C·K′
    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn class_dict(&self, class: usize) -> ArrayView2<'_, f64> {
        let kp = self.atoms_per_class;
        self.atoms.slice(s![.., class * kp..(class + 1) * kp])
    }

    pub fn gram(&self) -> Array2<f64> {
        self.atoms.t().dot(&self.atoms)
    }

    pub fn atom_norms(&self) -> Array1<f64> {
        self.atoms
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .collect()
    }

    pub fn is_feasible(&self) -> bool {
        self.atom_norms().iter().all(|&n| n <= 1.0 + NORM_SLACK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub atoms_per_class: usize,
    /// Outer iterations T.
    pub iterations: usize,
    pub eta0: f64,
    pub alpha: f64,
    pub max_backtracks: usize,
    pub coding_tol: f64,
    pub coding_max_iter: usize,
    pub ksvd_iters: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 0.1,
            gamma1: 0.1,
            gamma2: 0.1,
            atoms_per_class: 10,
            iterations: 200,
            eta0: 1e-3,
            alpha: 0.5,
            max_backtracks: 30,
            coding_tol: crate::sparse_coding::DEFAULT_TOL,
            coding_max_iter: crate::sparse_coding::DEFAULT_MAX_ITER,
            ksvd_iters: 10,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.gamma1 >= 0.0
            && self.gamma2 >= 0.0
            && self.atoms_per_class >= 1
            && self.iterations >= 1
            && self.eta0 > 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.max_backtracks >= 1
            && self.coding_tol > 0.0
            && self.coding_max_iter >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid hyperparameters {self:?}")))
        }
    }

    pub fn coding_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.coding_tol,
            max_iter: self.coding_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    pub j5: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    fn assemble(j1: f64, j2: f64, j3: f64, j4: f64, j5: f64, hp: &Hyperparams) -> Self {
        ObjectiveBreakdown {
            j1,
            j2,
            j3,
            j4,
            j5,
            total: j1 + j2 + hp.lambda * j3 + hp.gamma1 * j4 + hp.gamma2 * j5,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.j1, self.j2, self.j3, self.j4, self.j5, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_problem(
    dict: &GlobalDictionary,
    codes: ArrayView2<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<()> {
    let n = x.ncols();
    if x.nrows() != dict.dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} rows, atoms have {}",
            x.nrows(),
            dict.dim()
        )));
    }
    if codes.dim() != (dict.num_atoms(), n) {
        return Err(Error::DimensionMismatch(format!(
            "codes are {:?}, expected {:?}",
            codes.dim(),
            (dict.num_atoms(), n)
        )));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= dict.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: dict.num_classes(),
        });
    }
    Ok(())
}

fn frob2(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// J5 from the Gram matrix: ‖DᵀD‖² minus the within-class blocks.
fn coherence_from_gram(gram: ArrayView2<f64>, num_classes: usize, kp: usize) -> f64 {
    let mut j5 = 0.0;
    for c in 0..num_classes {
        for c2 in 0..num_classes {
            if c != c2 {
                j5 += frob2(gram.slice(s![c * kp..(c + 1) * kp, c2 * kp..(c2 + 1) * kp]));
            }
        }
    }
    j5
}

/// Direct evaluation of every term from per-sample residuals.
pub fn objective(
    dict: &GlobalDictionary,
    codes: ArrayView2<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
    hp: &Hyperparams,
) -> Result<ObjectiveBreakdown> {
    check_problem(dict, codes, x, labels)?;
    let kp = dict.atoms_per_class();
    let (mut j1, mut j2, mut j3, mut j4) = (0.0, 0.0, 0.0, 0.0);
    for (n, &y) in labels.iter().enumerate() {
        let xn = x.column(n);
        let an = codes.column(n);
        let r1 = &xn - &dict.atoms().dot(&an);
        j1 += r1.dot(&r1);
        let own = an.slice(s![y * kp..(y + 1) * kp]);
        let r2 = &xn - &dict.class_dict(y).dot(&own);
        j2 += r2.dot(&r2);
        j3 += an.iter().map(|v| v.abs()).sum::<f64>();
        for c in (0..dict.num_classes()).filter(|&c| c != y) {
            let blk = an.slice(s![c * kp..(c + 1) * kp]);
            j4 += blk.dot(&blk);
        }
    }
    let j5 = coherence_from_gram(dict.gram().view(), dict.num_classes(), kp);
    Ok(ObjectiveBreakdown::assemble(j1, j2, j3, j4, j5, hp))
}

/// Gradient of J with respect to class dictionary `p`, from the per-sample
/// residuals `x̃_n = x_n − Σ_{c≠p} D_c a_nc`.
pub fn grad_dictionary(
    p: usize,
    dict: &GlobalDictionary,
    codes: ArrayView2<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
    hp: &Hyperparams,
) -> Result<Array2<f64>> {
    check_problem(dict, codes, x, labels)?;
    if p >= dict.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: p,
            classes: dict.num_classes(),
        });
    }
    let kp = dict.atoms_per_class();
    let dp = dict.class_dict(p);
    let mut grad = Array2::<f64>::zeros((dict.dim(), kp));
    for (n, &y) in labels.iter().enumerate() {
        let xn = x.column(n);
        let an = codes.column(n);
        let anp = an.slice(s![p * kp..(p + 1) * kp]);
        let mut x_tilde = xn.to_owned();
        for c in (0..dict.num_classes()).filter(|&c| c != p) {
            x_tilde -= &dict.class_dict(c).dot(&an.slice(s![c * kp..(c + 1) * kp]));
        }
        let recon = dp.dot(&anp);
        // J1: −2 x̃ aᵀ + 2 D_p a aᵀ
        add_outer(&mut grad, -2.0, x_tilde.view(), anp);
        add_outer(&mut grad, 2.0, recon.view(), anp);
        if y == p {
            add_outer(&mut grad, -2.0, xn, anp);
            add_outer(&mut grad, 2.0, recon.view(), anp);
        }
    }
    if hp.gamma2 != 0.0 {
        for c in (0..dict.num_classes()).filter(|&c| c != p) {
            let dc = dict.class_dict(c);
            grad.scaled_add(4.0 * hp.gamma2, &dc.dot(&dc.t().dot(&dp)));
        }
    }
    Ok(grad)
}

fn add_outer(m: &mut Array2<f64>, scale: f64, u: ArrayView1<f64>, v: ArrayView1<f64>) {
    for (i, &ui) in u.iter().enumerate() {
        let su = scale * ui;
        m.row_mut(i).scaled_add(su, &v);
    }
}

/// Sufficient statistics of fixed codes, used to evaluate J and its gradient
/// for many dictionaries in O(M·K²) without touching individual samples.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    num_classes: usize,
    atoms_per_class: usize,
    /// Σ‖x_n‖²
    xx: f64,
    /// X Aᵀ, M × K
    xa: Array2<f64>,
    /// A Aᵀ, K × K
    aa: Array2<f64>,
    /// Σ_{y_n=p} x_n a_npᵀ per class, M × K′
    xa_own: Vec<Array2<f64>>,
    /// Σ_{y_n=p} a_np a_npᵀ per class, K′ × K′
    aa_own: Vec<Array2<f64>>,
    j3: f64,
    j4: f64,
}

impl GradientWorkspace {
    pub fn new(
        dict: &GlobalDictionary,
        codes: ArrayView2<f64>,
        x: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<Self> {
        check_problem(dict, codes, x, labels)?;
        let c_count = dict.num_classes();
        let kp = dict.atoms_per_class();
        let m = dict.dim();
        let xx = x.iter().map(|v| v * v).sum();
        let xa = x.dot(&codes.t());
        let aa = codes.dot(&codes.t());
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c_count];
        for (n, &y) in labels.iter().enumerate() {
            members[y].push(n);
        }
        let mut xa_own = Vec::with_capacity(c_count);
        let mut aa_own = Vec::with_capacity(c_count);
        for (p, idx) in members.iter().enumerate() {
            let xs = x.select(ndarray::Axis(1), idx);
            let ap = codes.slice(s![p * kp..(p + 1) * kp, ..]);
            let ap = ap.select(ndarray::Axis(1), idx);
            if idx.is_empty() {
                xa_own.push(Array2::zeros((m, kp)));
                aa_own.push(Array2::zeros((kp, kp)));
            } else {
                xa_own.push(xs.dot(&ap.t()));
                aa_own.push(ap.dot(&ap.t()));
            }
        }
        let j3 = codes.iter().map(|v| v.abs()).sum();
        let mut j4 = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            let an = codes.column(n);
            let own = an.slice(s![y * kp..(y + 1) * kp]);
            j4 += an.dot(&an) - own.dot(&own);
        }
        Ok(GradientWorkspace {
            num_classes: c_count,
            atoms_per_class: kp,
            xx,
            xa,
            aa,
            xa_own,
            aa_own,
            j3,
            j4,
        })
    }

    fn check(&self, dict: &GlobalDictionary) -> Result<()> {
        if dict.num_classes() != self.num_classes
            || dict.atoms_per_class() != self.atoms_per_class
            || dict.dim() != self.xa.nrows()
        {
            return Err(Error::DimensionMismatch("dictionary does not match workspace".into()));
        }
        Ok(())
    }

    /// J(D, A) for the codes this workspace was built from. `gram` must be DᵀD.
    pub fn objective_with_gram(
        &self,
        dict: &GlobalDictionary,
        gram: ArrayView2<f64>,
        hp: &Hyperparams,
    ) -> Result<ObjectiveBreakdown> {
        self.check(dict)?;
        let kp = self.atoms_per_class;
        let atoms = dict.atoms();
        let j1 = self.xx - 2.0 * inner(atoms, self.xa.view()) + inner(gram, self.aa.view());
        let mut j2 = self.xx;
        for p in 0..self.num_classes {
            let gpp = gram.slice(s![p * kp..(p + 1) * kp, p * kp..(p + 1) * kp]);
            j2 += -2.0 * inner(dict.class_dict(p), self.xa_own[p].view())
                + inner(gpp, self.aa_own[p].view());
        }
        let j5 = coherence_from_gram(gram, self.num_classes, kp);
        Ok(ObjectiveBreakdown::assemble(
            j1.max(0.0),
            j2.max(0.0),
            self.j3,
            self.j4,
            j5,
            hp,
        ))
    }

    pub fn objective(&self, dict: &GlobalDictionary, hp: &Hyperparams) -> Result<ObjectiveBreakdown> {
        self.objective_with_gram(dict, dict.gram().view(), hp)
    }

    /// Gradient for every class block at once, M × K. `gram` must be DᵀD.
    pub fn gradient_with_gram(
        &self,
        dict: &GlobalDictionary,
        gram: ArrayView2<f64>,
        hp: &Hyperparams,
    ) -> Result<Array2<f64>> {
        self.check(dict)?;
        let kp = self.atoms_per_class;
        let atoms = dict.atoms();
        // 2·D·(AAᵀ + 2γ2·DᵀD) − 2·XAᵀ covers J1 and the full-Gram part of J5.
        let mut mix = self.aa.clone();
        mix.scaled_add(2.0 * hp.gamma2, &gram);
        let mut grad = atoms.dot(&mix) * 2.0;
        grad.scaled_add(-2.0, &self.xa);
        for p in 0..self.num_classes {
            let dp = dict.class_dict(p);
            let gpp = gram.slice(s![p * kp..(p + 1) * kp, p * kp..(p + 1) * kp]);
            let mut own = self.aa_own[p].clone();
            own.scaled_add(-2.0 * hp.gamma2, &gpp);
            let mut block = grad.slice_mut(s![.., p * kp..(p + 1) * kp]);
            block += &(dp.dot(&own) * 2.0);
            block.scaled_add(-2.0, &self.xa_own[p]);
        }
        Ok(grad)
    }

    pub fn gradient(&self, dict: &GlobalDictionary, hp: &Hyperparams) -> Result<Array2<f64>> {
        self.gradient_with_gram(dict, dict.gram().view(), hp)
    }
}

fn inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &u, &v| acc + u * v)
}

/// Rescales every atom with norm above 1 back onto the unit sphere.
pub fn prox_normalize(mut dict: GlobalDictionary) -> GlobalDictionary {
    prox_normalize_in_place(dict.atoms.view_mut());
    dict
}

pub fn prox_normalize_in_place(mut atoms: ArrayViewMut2<f64>) {
    for mut col in atoms.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 1.0 {
            col /= norm;
        }
    }
}

/// C × C matrix of ‖D_cᵀ D_c'‖_F.
pub fn dictionary_similarity(dict: &GlobalDictionary) -> Array2<f64> {
    let c_count = dict.num_classes();
    let kp = dict.atoms_per_class();
    let gram = dict.gram();
    Array2::from_shape_fn((c_count, c_count), |(c, c2)| {
        frob2(gram.slice(s![c * kp..(c + 1) * kp, c2 * kp..(c2 + 1) * kp])).sqrt()
    })
}
