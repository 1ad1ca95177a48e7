//! Repeated train/test evaluation of one pipeline.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dictionary::Hyperparams;
use crate::error::{Error, Result};
use crate::harness::grid::{accuracy, grid_search, FeatureSource, SearchGrid};
use crate::harness::model::{train_model, FeatureSpec, Method, ModelArchive, Selection};
use crate::harness::splits::{make_splits, SplitProtocol};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub selection: Selection,
    pub validation_accuracy: Option<f64>,
    /// Objective after each coding step and each dictionary step of the final
    /// fit (dictionary learning only).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub feature: Option<FeatureSpec>,
    pub protocol: SplitProtocol,
    pub class_names: Vec<String>,
    pub splits: Vec<SplitReport>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n − 1); 0 for a single split.
    pub std_accuracy: f64,
    /// Rows are true classes, columns predictions, summed over splits.
    pub confusion: Vec<Vec<usize>>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    /// The report with timing removed; seeded runs agree on this exactly.
    pub fn without_timing(&self) -> Self {
        ExperimentReport {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// `(mean, sample std)`; the std is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub method: Method,
    pub protocol: SplitProtocol,
    pub grid: SearchGrid,
    /// Everything except λ, γ1, γ2 and K′, which come from the grid.
    pub base: Hyperparams,
    pub class_names: Vec<String>,
    pub feature: Option<FeatureSpec>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// The model trained on each split's training set.
    pub models: Vec<ModelArchive>,
}

/// For every split: grid search on the training part, train on all of it
/// with the winning configuration, score on the test part.
pub fn run_experiment(source: &dyn FeatureSource, setup: &ExperimentSetup) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let c = source.num_classes();
    if setup.class_names.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "{} class names for {c} classes",
            setup.class_names.len()
        )));
    }
    let labels = source.all_labels();
    let splits = make_splits(&labels, &setup.protocol)?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut reports = Vec::with_capacity(splits.len());
    let mut models = Vec::with_capacity(splits.len());
    for (s, split) in splits.iter().enumerate() {
        let split_seed = derive_seed(setup.protocol.seed, 10_000 + s as u64);
        let outcome = grid_search(
            source,
            &split.train,
            &setup.method,
            &setup.grid,
            &setup.protocol,
            &setup.base,
            split_seed,
        )?;
        let (train_x, train_y) = source.gather(&split.train);
        let (model, fit_report) = train_model(
            setup.method,
            train_x.view(),
            &train_y,
            setup.class_names.clone(),
            &outcome.selection,
            setup.feature,
            derive_seed(split_seed, 1),
        )?;
        let (test_x, test_y) = source.gather(&split.test);
        let predicted = model.predict(test_x.view())?.labels;
        for (&t, &p) in test_y.iter().zip(&predicted) {
            confusion[t][p] += 1;
        }
        let acc = accuracy(&predicted, &test_y);
        info!(
            "split {s}: accuracy {acc:.4} with {:?} (validation {:?})",
            outcome.selection, outcome.validation_accuracy
        );
        reports.push(SplitReport {
            split: s,
            train_size: split.train.len(),
            test_size: split.test.len(),
            accuracy: acc,
            selection: outcome.selection,
            validation_accuracy: outcome.validation_accuracy,
            objective_trace: fit_report.map(|r| r.objective_trace()).unwrap_or_default(),
        });
        models.push(model);
    }
    let accuracies: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            method: setup.method.to_string(),
            feature: setup.feature,
            protocol: setup.protocol,
            class_names: setup.class_names.clone(),
            splits: reports,
            accuracies,
            mean_accuracy,
            std_accuracy,
            confusion,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        models,
    })
}
