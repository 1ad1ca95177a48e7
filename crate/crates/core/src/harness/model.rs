//! Trained pipelines: preprocessing, optional dictionary coding and the
//! one-vs-all SVM on top.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax_first, Kernel, KernelCache, OvaSvmModel, DEFAULT_TOL};
use crate::dictionary::{GlobalDictionary, Hyperparams};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::learn::{fit, FitReport};
use crate::sparse_coding::Coder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Class dictionaries, Lasso codes over all of them, linear SVM on codes.
    DictionaryLearning,
    /// SVM directly on standardized features.
    Baseline { kernel: Kernel },
}

impl Method {
    pub fn svm_kernel(&self) -> Kernel {
        match self {
            Method::DictionaryLearning => Kernel::Linear,
            Method::Baseline { kernel } => *kernel,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::DictionaryLearning => f.write_str("dictionary_learning"),
            Method::Baseline { kernel } => write!(f, "baseline:{kernel}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `dictionary_learning`, `baseline` (linear) or `baseline:KERNEL`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dictionary_learning" | "dl" => Ok(Method::DictionaryLearning),
            "baseline" => Ok(Method::Baseline {
                kernel: Kernel::Linear,
            }),
            _ => match s.strip_prefix("baseline:") {
                Some(k) => Ok(Method::Baseline { kernel: k.parse()? }),
                None => Err(Error::InvalidParam(format!("unknown method '{s}'"))),
            },
        }
    }
}

/// How raw features were computed, so a model can be applied to new audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub window: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Preprocessing {
    /// Every column scaled to unit Euclidean norm (zero columns untouched).
    UnitNorm,
    /// `(x − mean) / scale` per feature, statistics from training data.
    Standardize { mean: Vec<f64>, scale: Vec<f64> },
}

impl Preprocessing {
    pub fn for_method(method: &Method, x: ArrayView2<f64>) -> Self {
        match method {
            Method::DictionaryLearning => Preprocessing::UnitNorm,
            Method::Baseline { .. } => Self::standardize(x),
        }
    }

    /// Population statistics over the columns of `x`; constant features get
    /// scale 1.
    pub fn standardize(x: ArrayView2<f64>) -> Self {
        let n = x.ncols().max(1) as f64;
        let mean: Array1<f64> = x.sum_axis(Axis(1)) / n;
        let scale = x
            .rows()
            .into_iter()
            .zip(mean.iter())
            .map(|(row, &mu)| {
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Preprocessing::Standardize {
            mean: mean.to_vec(),
            scale,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = x.to_owned();
        match self {
            Preprocessing::UnitNorm => {
                for mut col in out.columns_mut() {
                    let norm = col.dot(&col).sqrt();
                    if norm > 0.0 {
                        col /= norm;
                    }
                }
            }
            Preprocessing::Standardize { mean, scale } => {
                if mean.len() != x.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "features have {} rows, standardizer expects {}",
                        x.nrows(),
                        mean.len()
                    )));
                }
                for (mut row, (&mu, &s)) in out.rows_mut().into_iter().zip(mean.iter().zip(scale)) {
                    row.mapv_inplace(|v| (v - mu) / s);
                }
            }
        }
        Ok(out)
    }
}

/// Everything needed to classify raw feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub method: Method,
    pub class_names: Vec<String>,
    pub feature: Option<FeatureSpec>,
    pub preprocessing: Preprocessing,
    /// Present for dictionary learning.
    pub hyperparams: Option<Hyperparams>,
    pub dictionary: Option<GlobalDictionary>,
    pub c_svm: f64,
    pub svm: OvaSvmModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// N × C
    pub decision_values: Array2<f64>,
}

/// Chosen configuration of one pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub hyperparams: Option<Hyperparams>,
    pub c_svm: f64,
}

/// Lasso codes (K × N) of already preprocessed columns.
pub fn encode(dict: &GlobalDictionary, hp: &Hyperparams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(Coder::lasso(dict, hp.lambda, hp.coding_options())
        .code_all(x, None, None)?
        .codes)
}

/// Feature-dimension representation fed to the SVM, plus the fitted
/// dictionary and its training report for dictionary learning.
pub(crate) struct Representation {
    pub train: Array2<f64>,
    pub dictionary: Option<(GlobalDictionary, FitReport)>,
}

pub(crate) fn learn_representation(
    method: &Method,
    x: ArrayView2<f64>,
    labels: &[usize],
    hp: Option<&Hyperparams>,
    seed: u64,
) -> Result<Representation> {
    match method {
        Method::DictionaryLearning => {
            let hp = hp.ok_or_else(|| Error::InvalidParam("dictionary learning needs hyperparameters".into()))?;
            let fitted = fit(x, labels, hp, None, seed)?;
            let train = encode(&fitted.dictionary, hp, x)?;
            Ok(Representation {
                train,
                dictionary: Some((fitted.dictionary, fitted.report)),
            })
        }
        Method::Baseline { .. } => Ok(Representation {
            train: x.to_owned(),
            dictionary: None,
        }),
    }
}

/// Trains the full pipeline on raw training features (M × N).
pub fn train_model(
    method: Method,
    x: ArrayView2<f64>,
    labels: &[usize],
    class_names: Vec<String>,
    selection: &Selection,
    feature: Option<FeatureSpec>,
    seed: u64,
) -> Result<(ModelArchive, Option<FitReport>)> {
    let preprocessing = Preprocessing::for_method(&method, x);
    let xp = preprocessing.apply(x)?;
    let rep = learn_representation(&method, xp.view(), labels, selection.hyperparams.as_ref(), seed)?;
    let svm = KernelCache::new(rep.train.t(), method.svm_kernel()).train_ova(
        labels,
        class_names.len(),
        selection.c_svm,
        DEFAULT_TOL,
    )?;
    let (dictionary, report) = match rep.dictionary {
        Some((d, r)) => (Some(d), Some(r)),
        None => (None, None),
    };
    let model = ModelArchive {
        method,
        class_names,
        feature,
        preprocessing,
        hyperparams: match method {
            Method::DictionaryLearning => selection.hyperparams,
            Method::Baseline { .. } => None,
        },
        dictionary,
        c_svm: selection.c_svm,
        svm,
    };
    Ok((model, report))
}

impl ModelArchive {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Raw feature dimension the model expects.
    pub fn input_dim(&self) -> usize {
        match (&self.dictionary, &self.preprocessing) {
            (Some(d), _) => d.dim(),
            (None, Preprocessing::Standardize { mean, .. }) => mean.len(),
            (None, Preprocessing::UnitNorm) => self.svm.dim(),
        }
    }

    /// SVM inputs for raw features (M × N): codes or standardized features,
    /// returned as rows.
    pub fn represent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, model expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        let xp = self.preprocessing.apply(x)?;
        let cols = match (&self.dictionary, &self.hyperparams) {
            (Some(d), Some(hp)) => encode(d, hp, xp.view())?,
            (Some(_), None) => {
                return Err(Error::CorruptArchive("dictionary without hyperparameters".into()))
            }
            (None, _) => xp,
        };
        Ok(cols.reversed_axes())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Prediction> {
        let rows = self.represent(x)?;
        let decision_values = self.svm.decision_matrix(rows.view())?;
        let labels = decision_values
            .rows()
            .into_iter()
            .map(|r| argmax_first(r.iter().copied()))
            .collect();
        Ok(Prediction {
            labels,
            decision_values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn method_names() {
        for s in ["dictionary_learning", "baseline:linear", "baseline:poly2:1"] {
            assert_eq!(s.parse::<Method>().unwrap().to_string(), s);
        }
        assert_eq!(
            "baseline:poly".parse::<Method>().unwrap(),
            Method::Baseline { kernel: Kernel::POLY2 }
        );
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn preprocessing() {
        let x = array![[3.0, 0.0, 1.0], [4.0, 0.0, 1.0]];
        let u = Preprocessing::UnitNorm.apply(x.view()).unwrap();
        assert_eq!(u.column(0), array![0.6, 0.8]);
        assert_eq!(u.column(1), array![0.0, 0.0]);
        let s = Preprocessing::standardize(x.view());
        let z = s.apply(x.view()).unwrap();
        for row in z.rows() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.dot(&row) / 3.0 - 1.0).abs() < 1e-12);
        }
        let c = Preprocessing::standardize(array![[2.0, 2.0]].view());
        assert_eq!(c.apply(array![[2.0, 3.0]].view()).unwrap(), array![[0.0, 1.0]]);
        assert!(c.apply(x.view()).is_err());
    }
}
