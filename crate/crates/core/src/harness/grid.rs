//! Model selection by repeated half/half resampling of a training set.

use log::{debug, warn};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{KernelCache, DEFAULT_TOL};
use crate::dictionary::Hyperparams;
use crate::error::{Error, Result};
use crate::harness::model::{encode, learn_representation, Method, Preprocessing, Selection};
use crate::harness::splits::{stratified_split, SplitProtocol};
use crate::rng::derive_seed;

/// Read access to a labelled feature matrix. Everything the search sees goes
/// through `gather`.
pub trait FeatureSource: Sync {
    fn num_samples(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Labels of every sample, for drawing splits.
    fn all_labels(&self) -> Vec<usize>;
    /// Features (M × |indices|) and labels of the given samples.
    fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>);
}

/// An in-memory M × N feature matrix.
#[derive(Debug, Clone)]
pub struct MatrixSource {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl MatrixSource {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples, {} labels",
                features.ncols(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(MatrixSource {
            features,
            labels,
            num_classes,
        })
    }
}

impl FeatureSource for MatrixSource {
    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn all_labels(&self) -> Vec<usize> {
        self.labels.clone()
    }

    fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(1), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub lambdas: Vec<f64>,
    pub gamma1s: Vec<f64>,
    pub gamma2s: Vec<f64>,
    pub atoms_per_class: Vec<usize>,
    pub c_svm: Vec<f64>,
}

/// `n` values evenly spaced in log₁₀ between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            lambdas: vec![0.1, 0.2, 0.3],
            gamma1s: vec![0.1, 0.2, 0.3],
            gamma2s: vec![0.1, 0.2, 0.3],
            atoms_per_class: vec![10, 20, 30],
            c_svm: log_spaced(0.001, 100.0, 10),
        }
    }
}

fn sorted<T: PartialOrd + Copy>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    out
}

impl SearchGrid {
    pub fn singleton(hp: &Hyperparams, c_svm: f64) -> Self {
        SearchGrid {
            lambdas: vec![hp.lambda],
            gamma1s: vec![hp.gamma1],
            gamma2s: vec![hp.gamma2],
            atoms_per_class: vec![hp.atoms_per_class],
            c_svm: vec![c_svm],
        }
    }

    pub fn validate(&self, method: &Method) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if self.c_svm.is_empty() || !self.c_svm.iter().all(|c| c.is_finite() && *c > 0.0) {
            return Err(Error::InvalidParam("C_svm candidates must be positive".into()));
        }
        if matches!(method, Method::DictionaryLearning)
            && (self.lambdas.is_empty()
                || self.gamma1s.is_empty()
                || self.gamma2s.is_empty()
                || self.atoms_per_class.is_empty()
                || !finite(&self.lambdas)
                || !finite(&self.gamma1s)
                || !finite(&self.gamma2s)
                || self.atoms_per_class.contains(&0))
        {
            return Err(Error::InvalidParam("empty or invalid dictionary grid".into()));
        }
        Ok(())
    }

    /// Dictionary configurations in tie-break order: K′, then λ, γ1, γ2.
    pub fn dictionary_configs(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &k in &sorted(&self.atoms_per_class) {
            for &lambda in &sorted(&self.lambdas) {
                for &gamma1 in &sorted(&self.gamma1s) {
                    for &gamma2 in &sorted(&self.gamma2s) {
                        out.push(Hyperparams {
                            lambda,
                            gamma1,
                            gamma2,
                            atoms_per_class: k,
                            ..*base
                        });
                    }
                }
            }
        }
        out
    }

    /// Number of (configuration, C) pairs scored for `method`.
    pub fn cardinality(&self, method: &Method) -> usize {
        let c = sorted(&self.c_svm).len();
        match method {
            Method::DictionaryLearning => self.dictionary_configs(&Hyperparams::default()).len() * c,
            Method::Baseline { .. } => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredConfig {
    pub selection: Selection,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub selection: Selection,
    /// `None` when the grid is a single point and nothing was evaluated.
    pub validation_accuracy: Option<f64>,
    /// Every candidate in tie-break order.
    pub scores: Vec<ScoredConfig>,
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// One learning/validation pair, with its raw features.
struct Resample {
    learn_x: Array2<f64>,
    learn_y: Vec<usize>,
    val_x: Array2<f64>,
    val_y: Vec<usize>,
}

/// Validation accuracy for every C in `cs` on one resample.
fn score_resample(
    method: &Method,
    hp: Option<&Hyperparams>,
    r: &Resample,
    num_classes: usize,
    cs: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let pre = Preprocessing::for_method(method, r.learn_x.view());
    let learn = pre.apply(r.learn_x.view())?;
    let val = pre.apply(r.val_x.view())?;
    let rep = learn_representation(method, learn.view(), &r.learn_y, hp, seed)?;
    let val_rep = match (&rep.dictionary, hp) {
        (Some((d, _)), Some(hp)) => encode(d, hp, val.view())?,
        _ => val,
    };
    let cache = KernelCache::new(rep.train.t(), method.svm_kernel());
    cs.iter()
        .map(|&c| {
            let model = cache.train_ova(&r.learn_y, num_classes, c, DEFAULT_TOL)?;
            Ok(accuracy(&model.predict_batch(val_rep.t())?, &r.val_y))
        })
        .collect()
}

/// Searches `grid` using only the samples listed in `train`.
///
/// Each configuration is scored by its mean validation accuracy over
/// `protocol.validation_resamples` stratified half/half resamples of the
/// training set. A configuration whose training fails scores 0. The best
/// score wins; ties go to the earliest configuration in (K′, λ, γ1, γ2, C)
/// order.
pub fn grid_search(
    source: &dyn FeatureSource,
    train: &[usize],
    method: &Method,
    grid: &SearchGrid,
    protocol: &SplitProtocol,
    base: &Hyperparams,
    seed: u64,
) -> Result<GridOutcome> {
    grid.validate(method)?;
    let cs = sorted(&grid.c_svm);
    let hps: Vec<Option<Hyperparams>> = match method {
        Method::DictionaryLearning => grid.dictionary_configs(base).into_iter().map(Some).collect(),
        Method::Baseline { .. } => vec![None],
    };
    if hps.len() == 1 && cs.len() == 1 {
        return Ok(GridOutcome {
            selection: Selection {
                hyperparams: hps[0],
                c_svm: cs[0],
            },
            validation_accuracy: None,
            scores: Vec::new(),
        });
    }

    let num_classes = source.num_classes();
    let (_, train_labels) = source.gather(train);
    let resamples = (0..protocol.validation_resamples)
        .map(|r| {
            let half = stratified_split(&train_labels, 0.5, derive_seed(seed, r as u64))?;
            let learn: Vec<usize> = half.train.iter().map(|&i| train[i]).collect();
            let val: Vec<usize> = half.test.iter().map(|&i| train[i]).collect();
            let (learn_x, learn_y) = source.gather(&learn);
            let (val_x, val_y) = source.gather(&val);
            Ok(Resample {
                learn_x,
                learn_y,
                val_x,
                val_y,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_config: Vec<Vec<f64>> = hps
        .par_iter()
        .map(|hp| {
            let mut sums = vec![0.0; cs.len()];
            for (r, resample) in resamples.iter().enumerate() {
                match score_resample(method, hp.as_ref(), resample, num_classes, &cs, derive_seed(seed, 1000 + r as u64)) {
                    Ok(accs) => sums.iter_mut().zip(accs).for_each(|(s, a)| *s += a),
                    Err(e) => {
                        warn!("configuration {hp:?} failed on resample {r}: {e}; scored 0");
                    }
                }
            }
            sums.iter().map(|s| s / resamples.len() as f64).collect()
        })
        .collect();

    let mut scores = Vec::with_capacity(hps.len() * cs.len());
    for (hp, accs) in hps.iter().zip(&per_config) {
        for (&c, &acc) in cs.iter().zip(accs) {
            scores.push(ScoredConfig {
                selection: Selection {
                    hyperparams: *hp,
                    c_svm: c,
                },
                validation_accuracy: acc,
            });
        }
    }
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.validation_accuracy > best.validation_accuracy {
            best = s;
        }
    }
    debug!("best of {} configurations: {best:?}", scores.len());
    Ok(GridOutcome {
        selection: best.selection,
        validation_accuracy: Some(best.validation_accuracy),
        scores,
    })
}

/// [`grid_search`] over every column of `features`.
pub fn grid_search_matrix(
    features: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    method: &Method,
    grid: &SearchGrid,
    protocol: &SplitProtocol,
    base: &Hyperparams,
    seed: u64,
) -> Result<GridOutcome> {
    let source = MatrixSource::new(features.to_owned(), labels.to_vec(), num_classes)?;
    let all: Vec<usize> = (0..labels.len()).collect();
    grid_search(&source, &all, method, grid, protocol, base, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let g = SearchGrid::default();
        assert_eq!(g.cardinality(&Method::DictionaryLearning), 810);
        assert_eq!(g.c_svm.len(), 10);
        assert!((g.c_svm[0] - 0.001).abs() < 1e-15);
        assert!((g.c_svm[9] - 100.0).abs() < 1e-12);
        for w in g.c_svm.windows(3) {
            assert!((w[1] / w[0] - w[2] / w[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn config_order_is_tie_break_order() {
        let g = SearchGrid {
            lambdas: vec![0.3, 0.1],
            gamma1s: vec![0.2],
            gamma2s: vec![0.2],
            atoms_per_class: vec![20, 10],
            c_svm: vec![1.0],
        };
        let order: Vec<(usize, f64)> = g
            .dictionary_configs(&Hyperparams::default())
            .iter()
            .map(|h| (h.atoms_per_class, h.lambda))
            .collect();
        assert_eq!(order, vec![(10, 0.1), (10, 0.3), (20, 0.1), (20, 0.3)]);
    }

    #[test]
    fn accuracy_fraction() {
        assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]), 0.75);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }
}
