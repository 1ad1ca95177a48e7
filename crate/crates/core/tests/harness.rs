use std::collections::BTreeSet;
use std::sync::Mutex;

use ndarray::Array2;
use proptest::prelude::*;

use cbdl::classifier::Kernel;
use cbdl::dictionary::Hyperparams;
use cbdl::error::Error;
use cbdl::harness::archive::{export_similarity, load_model, read_model, save_model, write_model, MODEL_VERSION};
use cbdl::harness::experiment::{run_experiment, ExperimentSetup};
use cbdl::harness::grid::{grid_search, FeatureSource, MatrixSource, SearchGrid};
use cbdl::harness::model::{train_model, Method, ModelArchive, Selection};
use cbdl::harness::splits::{make_splits, stratified_split, train_count, SplitProtocol};

/// `c` classes, `per_class` samples each, clustered around distinct axes.
fn clustered(c: usize, per_class: usize, m: usize) -> (Array2<f64>, Vec<usize>) {
    let n = c * per_class;
    let x = Array2::from_shape_fn((m, n), |(i, j)| {
        let class = j % c;
        let on = if i % c == class { 1.0 } else { 0.05 };
        on * (1.0 + 0.1 * ((i * 13 + j * 7) % 11) as f64 / 11.0)
    });
    (x, (0..n).map(|j| j % c).collect())
}

/// Records every index the search asks for.
struct Tracking {
    inner: MatrixSource,
    seen: Mutex<BTreeSet<usize>>,
}

impl FeatureSource for Tracking {
    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn all_labels(&self) -> Vec<usize> {
        self.inner.all_labels()
    }

    fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        self.seen.lock().unwrap().extend(indices.iter().copied());
        self.inner.gather(indices)
    }
}

#[test]
fn grid_search_reads_only_training_samples() {
    let (x, labels) = clustered(3, 12, 6);
    let source = Tracking {
        inner: MatrixSource::new(x, labels.clone(), 3).unwrap(),
        seen: Mutex::new(BTreeSet::new()),
    };
    let protocol = SplitProtocol::chord(4);
    let split = &make_splits(&labels, &protocol).unwrap()[0];
    let grid = SearchGrid {
        lambdas: vec![0.1, 0.3],
        gamma1s: vec![0.1],
        gamma2s: vec![0.1],
        atoms_per_class: vec![2],
        c_svm: vec![0.1, 10.0],
    };
    let base = Hyperparams {
        iterations: 5,
        ..Hyperparams::default()
    };
    for method in [Method::DictionaryLearning, Method::Baseline { kernel: Kernel::Linear }] {
        source.seen.lock().unwrap().clear();
        let outcome = grid_search(&source, &split.train, &method, &grid, &protocol, &base, 9).unwrap();
        assert!(outcome.validation_accuracy.is_some());
        let seen = source.seen.lock().unwrap();
        assert!(!seen.is_empty());
        assert!(seen.iter().all(|i| split.train.binary_search(i).is_ok()), "test index leaked");
    }
}

#[test]
fn singleton_grid_skips_validation() {
    let (x, labels) = clustered(2, 6, 4);
    let source = MatrixSource::new(x, labels, 2).unwrap();
    let train: Vec<usize> = (0..12).collect();
    let hp = Hyperparams::default();
    let method = Method::Baseline { kernel: Kernel::Linear };
    let outcome = grid_search(
        &source,
        &train,
        &method,
        &SearchGrid::singleton(&hp, 2.0),
        &SplitProtocol::casr(0),
        &hp,
        0,
    )
    .unwrap();
    assert_eq!(outcome.validation_accuracy, None);
    assert_eq!(outcome.selection.c_svm, 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_stratified_partitions(
        counts in prop::collection::vec(2usize..30, 1..6),
        fraction in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        let split = stratified_split(&labels, fraction, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            let k = split.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(k, train_count(fraction, n));
            prop_assert!(k >= 1 && k < n);
        }
    }
}

fn small_models() -> Vec<ModelArchive> {
    let (x, labels) = clustered(3, 8, 5);
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let hp = Hyperparams {
        atoms_per_class: 2,
        iterations: 5,
        ..Hyperparams::default()
    };
    [
        (Method::DictionaryLearning, Some(hp)),
        (Method::Baseline { kernel: Kernel::Linear }, None),
        (Method::Baseline { kernel: Kernel::POLY2 }, None),
    ]
    .into_iter()
    .map(|(method, hyperparams)| {
        let sel = Selection { hyperparams, c_svm: 1.0 };
        train_model(method, x.view(), &labels, names.clone(), &sel, None, 2).unwrap().0
    })
    .collect()
}

#[test]
fn archives_round_trip_bit_for_bit() {
    let (x, _) = clustered(3, 8, 5);
    let dir = tempfile::tempdir().unwrap();
    for (i, model) in small_models().iter().enumerate() {
        let path = dir.path().join(format!("{i}.cbdl"));
        save_model(model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(&back, model);
        let (a, b) = (model.predict(x.view()).unwrap(), back.predict(x.view()).unwrap());
        assert_eq!(a.labels, b.labels);
        assert!(a.decision_values.iter().zip(b.decision_values.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn damaged_archives_are_rejected() {
    let model = &small_models()[0];
    let bytes = write_model(model, Vec::new()).unwrap();
    for cut in [4, 12, 40, bytes.len() - 1] {
        assert!(matches!(read_model(&bytes[..cut]), Err(Error::CorruptArchive(_))), "cut at {cut}");
    }
    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
    assert!(matches!(read_model(future.as_slice()), Err(Error::VersionMismatch { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(read_model(magic.as_slice()), Err(Error::CorruptArchive(_))));
    let mut trailing = bytes;
    trailing.push(0);
    assert!(matches!(read_model(trailing.as_slice()), Err(Error::CorruptArchive(_))));
}

#[test]
fn similarity_export_is_labelled_and_square() {
    let models = small_models();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    export_similarity(&models[0], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], vec!["", "x", "y", "z"]);
    assert_eq!(rows.len(), 4);
    for (row, name) in rows[1..].iter().zip(["x", "y", "z"]) {
        assert_eq!(row[0], name);
        assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap() >= 0.0));
    }
    assert!(matches!(export_similarity(&models[1], &path), Err(Error::InvalidParam(_))));
}

#[test]
fn seeded_experiments_repeat_exactly() {
    let (x, labels) = clustered(3, 9, 6);
    let source = MatrixSource::new(x, labels, 3).unwrap();
    let setup = ExperimentSetup {
        method: Method::DictionaryLearning,
        protocol: SplitProtocol {
            num_splits: 2,
            train_fraction: 2.0 / 3.0,
            validation_resamples: 2,
            seed: 11,
        },
        grid: SearchGrid {
            lambdas: vec![0.1, 0.2],
            gamma1s: vec![0.1],
            gamma2s: vec![0.1],
            atoms_per_class: vec![2],
            c_svm: vec![0.1, 1.0],
        },
        base: Hyperparams {
            iterations: 5,
            ..Hyperparams::default()
        },
        class_names: vec!["a".into(), "b".into(), "c".into()],
        feature: None,
    };
    let a = run_experiment(&source, &setup).unwrap().report;
    let b = run_experiment(&source, &setup).unwrap().report;
    assert_eq!(a.without_timing(), b.without_timing());
    assert_eq!(a.splits.len(), 2);
    assert_eq!(a.confusion.iter().flatten().sum::<usize>(), a.splits.iter().map(|s| s.test_size).sum::<usize>());
    assert!(a.splits.iter().all(|s| !s.objective_trace.is_empty()));
}
