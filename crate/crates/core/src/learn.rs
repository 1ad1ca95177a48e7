//! Alternating minimization of the class-based objective: supervised sparse
//! coding with the dictionaries fixed, then one proximal gradient step on all
//! class dictionaries with the codes fixed.

use std::io::Write;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dictionary::{
    prox_normalize_in_place, GlobalDictionary, GradientWorkspace, Hyperparams, ObjectiveBreakdown,
};
use crate::error::{Error, Result};
use crate::ksvd::ksvd_init;
use crate::sparse_coding::Coder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// J(D_{t−1}, A_t), after the coding step.
    pub after_coding: ObjectiveBreakdown,
    /// J(D_t, A_t); equals `after_coding` when the step was rejected.
    pub after_step: ObjectiveBreakdown,
    pub backtracks: usize,
    pub accepted: bool,
    pub step_size: f64,
    pub max_kkt_residual: f64,
    pub unconverged_codes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: Vec<IterationRecord>,
}

impl FitReport {
    /// Objective after each phase, in execution order.
    pub fn objective_trace(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .flat_map(|r| [r.after_coding.total, r.after_step.total])
            .collect()
    }

    pub fn final_objective(&self) -> Option<ObjectiveBreakdown> {
        self.iterations.last().map(|r| r.after_step)
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.iterations
            .iter()
            .map(|r| r.max_kkt_residual)
            .fold(0.0, f64::max)
    }

    /// `iteration,j1,j2,j3,j4,j5,total,backtracks`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "j1", "j2", "j3", "j4", "j5", "total", "backtracks"])?;
        for r in &self.iterations {
            let o = r.after_step;
            w.write_record([
                r.iteration.to_string(),
                o.j1.to_string(),
                o.j2.to_string(),
                o.j3.to_string(),
                o.j4.to_string(),
                o.j5.to_string(),
                o.total.to_string(),
                r.backtracks.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub dictionary: GlobalDictionary,
    /// K × N supervised codes from the last coding step.
    pub codes: Array2<f64>,
    pub report: FitReport,
}

/// Number of classes implied by zero-based labels; every class must occur.
pub fn class_count(labels: &[usize]) -> Result<usize> {
    let c = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; c];
    for &y in labels {
        counts[y] += 1;
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InsufficientSamples {
            class,
            available: 0,
            required: 1,
        });
    }
    Ok(c)
}

/// Learns one dictionary per class. `x` is M × N; `labels` are zero-based and
/// must cover `0..C`. Without `init`, dictionaries start from K-SVD.
pub fn fit(
    x: ArrayView2<f64>,
    labels: &[usize],
    hp: &Hyperparams,
    init: Option<GlobalDictionary>,
    seed: u64,
) -> Result<FitResult> {
    hp.validate()?;
    if x.ncols() == 0 {
        return Err(Error::InsufficientSamples {
            class: 0,
            available: 0,
            required: 1,
        });
    }
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.ncols()
        )));
    }
    let num_classes = class_count(labels)?;
    let mut dict = match init {
        Some(d) => {
            if d.dim() != x.nrows()
                || d.num_classes() != num_classes
                || d.atoms_per_class() != hp.atoms_per_class
            {
                return Err(Error::DimensionMismatch(
                    "initial dictionary does not match data and hyperparameters".into(),
                ));
            }
            d
        }
        None => ksvd_init(x, labels, num_classes, hp.atoms_per_class, hp.ksvd_iters, seed)?,
    };
    prox_normalize_in_place(dict.atoms_mut());

    let k = dict.num_atoms();
    let n = x.ncols();
    let mut codes = Array2::<f64>::zeros((k, n));
    let mut gram = dict.gram();
    let mut report = FitReport::default();

    for t in 1..=hp.iterations {
        let coder = Coder::with_gram(&dict, gram.clone(), hp.lambda, hp.gamma1, hp.coding_options(), true);
        let batch = coder.code_all(x, Some(labels), Some(codes.view()))?;
        if batch.unconverged > 0 {
            warn!(
                "iteration {t}: {} codes above KKT tolerance (max residual {:.3e})",
                batch.unconverged, batch.max_residual
            );
        }
        codes = batch.codes;

        let ws = GradientWorkspace::new(&dict, codes.view(), x, labels)?;
        let before = ws.objective_with_gram(&dict, gram.view(), hp)?;
        if !before.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: t,
                detail: format!("after coding: {before:?}"),
            });
        }
        let grad = ws.gradient_with_gram(&dict, gram.view(), hp)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective {
                iteration: t,
                detail: "gradient has non-finite entries".into(),
            });
        }

        let mut eta = hp.eta0;
        let mut accepted = None;
        let mut backtracks = 0;
        if grad.iter().any(|&v| v != 0.0) {
            loop {
                let mut cand = dict.atoms().to_owned();
                cand.scaled_add(-eta, &grad);
                prox_normalize_in_place(cand.view_mut());
                let cand = GlobalDictionary::from_atoms(cand, num_classes, hp.atoms_per_class)
                    .map_err(|e| Error::NonFiniteObjective {
                        iteration: t,
                        detail: e.to_string(),
                    })?;
                let cand_gram = cand.gram();
                let after = ws.objective_with_gram(&cand, cand_gram.view(), hp)?;
                if !after.is_finite() {
                    return Err(Error::NonFiniteObjective {
                        iteration: t,
                        detail: format!("trial step {eta:e}: {after:?}"),
                    });
                }
                if after.total < before.total {
                    accepted = Some((cand, cand_gram, after));
                    break;
                }
                if backtracks == hp.max_backtracks {
                    break;
                }
                eta *= hp.alpha;
                backtracks += 1;
            }
        }

        let record = match accepted {
            Some((cand, cand_gram, after)) => {
                dict = cand;
                gram = cand_gram;
                IterationRecord {
                    iteration: t,
                    after_coding: before,
                    after_step: after,
                    backtracks,
                    accepted: true,
                    step_size: eta,
                    max_kkt_residual: batch.max_residual,
                    unconverged_codes: batch.unconverged,
                }
            }
            None => IterationRecord {
                iteration: t,
                after_coding: before,
                after_step: before,
                backtracks,
                accepted: false,
                step_size: 0.0,
                max_kkt_residual: batch.max_residual,
                unconverged_codes: batch.unconverged,
            },
        };
        debug!(
            "iteration {t}: J {:.6e} -> {:.6e} ({} backtracks)",
            record.after_coding.total, record.after_step.total, record.backtracks
        );
        report.iterations.push(record);
    }

    Ok(FitResult {
        dictionary: dict,
        codes,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_data_leaves_dictionary_alone() {
        let x = Array2::zeros((3, 4));
        let labels = [0, 0, 1, 1];
        let init = GlobalDictionary::from_atoms(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], 2, 1).unwrap();
        let hp = Hyperparams {
            atoms_per_class: 1,
            iterations: 5,
            ..Hyperparams::default()
        };
        let out = fit(x.view(), &labels, &hp, Some(init.clone()), 0).unwrap();
        assert_eq!(out.dictionary, init);
        assert!(out.codes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_class_is_rejected() {
        let x = Array2::zeros((3, 2));
        let hp = Hyperparams {
            atoms_per_class: 1,
            ..Hyperparams::default()
        };
        assert!(matches!(
            fit(x.view(), &[0, 2], &hp, None, 0),
            Err(Error::InsufficientSamples { class: 1, .. })
        ));
    }

    #[test]
    fn csv_export_has_one_row_per_iteration() {
        let x = array![[1.0, 0.0, 0.9, 0.1], [0.0, 1.0, 0.1, 0.9]];
        let hp = Hyperparams {
            atoms_per_class: 1,
            iterations: 3,
            ..Hyperparams::default()
        };
        let out = fit(x.view(), &[0, 1, 0, 1], &hp, None, 1).unwrap();
        let mut buf = Vec::new();
        out.report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("iteration,j1,j2,j3,j4,j5,total,backtracks"));
    }
}
