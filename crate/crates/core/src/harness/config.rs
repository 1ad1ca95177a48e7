//! Flat `key = value` configuration files. Keys mirror the long CLI flags
//! with `-` replaced by `_`; values given on the command line win.
//!
//! ```text
//! # chord experiment
//! chords_per_class = 40
//! feature = spectrogram_pool
//! method = dictionary_learning
//! protocol = chord
//! lambdas = 0.1, 0.3
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dictionary::Hyperparams;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, DEFAULT_HOP, DEFAULT_WINDOW};
use crate::harness::grid::SearchGrid;
use crate::harness::model::Method;
use crate::harness::splits::{ProtocolName, SplitProtocol};

pub const GRID_KEYS: &[&str] = &["lambdas", "gamma1s", "gamma2s", "atoms_per_class", "c_svm"];

pub const HYPERPARAM_KEYS: &[&str] = &[
    "iterations",
    "eta0",
    "alpha",
    "max_backtracks",
    "coding_tol",
    "coding_max_iter",
    "ksvd_iters",
];

pub const PROTOCOL_KEYS: &[&str] = &["protocol", "seed", "num_splits", "train_fraction", "validation_resamples"];

pub const DATA_KEYS: &[&str] = &[
    "data",
    "features",
    "labels",
    "chords_per_class",
    "chord_seed",
    "feature",
    "window",
    "hop",
    "method",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if kv.entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", n + 1)));
            }
        }
        Ok(kv)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.replace('-', "_"), value.into());
    }

    /// `key=value` as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{pair}'")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&[&str]]) -> Result<()> {
        for k in self.keys() {
            if !allowed.iter().any(|set| set.contains(&k)) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        Ok(())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
            })
            .transpose()
    }

    /// Comma- or whitespace-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                let items: Vec<T> = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|e| Error::Config(format!("{key}: '{s}': {e}")))
                    })
                    .collect::<Result<_>>()?;
                if items.is_empty() {
                    return Err(Error::Config(format!("{key} is empty")));
                }
                Ok(items)
            })
            .transpose()
    }

    pub fn grid(&self) -> Result<SearchGrid> {
        let d = SearchGrid::default();
        Ok(SearchGrid {
            lambdas: self.list("lambdas")?.unwrap_or(d.lambdas),
            gamma1s: self.list("gamma1s")?.unwrap_or(d.gamma1s),
            gamma2s: self.list("gamma2s")?.unwrap_or(d.gamma2s),
            atoms_per_class: self.list("atoms_per_class")?.unwrap_or(d.atoms_per_class),
            c_svm: self.list("c_svm")?.unwrap_or(d.c_svm),
        })
    }

    /// Learning settings not covered by the grid.
    pub fn base_hyperparams(&self) -> Result<Hyperparams> {
        let d = Hyperparams::default();
        let hp = Hyperparams {
            iterations: self.parsed("iterations")?.unwrap_or(d.iterations),
            eta0: self.parsed("eta0")?.unwrap_or(d.eta0),
            alpha: self.parsed("alpha")?.unwrap_or(d.alpha),
            max_backtracks: self.parsed("max_backtracks")?.unwrap_or(d.max_backtracks),
            coding_tol: self.parsed("coding_tol")?.unwrap_or(d.coding_tol),
            coding_max_iter: self.parsed("coding_max_iter")?.unwrap_or(d.coding_max_iter),
            ksvd_iters: self.parsed("ksvd_iters")?.unwrap_or(d.ksvd_iters),
            ..d
        };
        hp.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(hp)
    }

    /// A preset (default `casr`) with any per-field overrides.
    pub fn protocol(&self) -> Result<SplitProtocol> {
        let name: ProtocolName = self.parsed("protocol")?.unwrap_or(ProtocolName::Casr);
        let mut p = SplitProtocol::preset(name, self.parsed("seed")?.unwrap_or(0));
        if let Some(n) = self.parsed("num_splits")? {
            p.num_splits = n;
        }
        if let Some(f) = self.parsed("train_fraction")? {
            p.train_fraction = f;
        }
        if let Some(r) = self.parsed("validation_resamples")? {
            p.validation_resamples = r;
        }
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// One subdirectory of WAV files per class.
    WavDir(PathBuf),
    /// A feature matrix file plus a label list.
    Features { features: PathBuf, labels: Option<PathBuf> },
    /// Chords synthesized in memory.
    Chords { per_class: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub feature: FeatureKind,
    pub window: usize,
    pub hop: usize,
    pub method: Method,
    pub protocol: SplitProtocol,
    pub grid: SearchGrid,
    pub base: Hyperparams,
}

impl ExperimentConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&[DATA_KEYS, GRID_KEYS, HYPERPARAM_KEYS, PROTOCOL_KEYS])?;
        let data = match (kv.get("data"), kv.get("features"), kv.parsed::<usize>("chords_per_class")?) {
            (Some(d), None, None) => DataSource::WavDir(d.into()),
            (None, Some(f), None) => DataSource::Features {
                features: f.into(),
                labels: kv.get("labels").map(PathBuf::from),
            },
            (None, None, Some(n)) => DataSource::Chords {
                per_class: n,
                seed: kv.parsed("chord_seed")?.unwrap_or(0),
            },
            _ => {
                return Err(Error::Config(
                    "exactly one of data, features or chords_per_class is required".into(),
                ))
            }
        };
        Ok(ExperimentConfig {
            data,
            feature: kv.parsed("feature")?.unwrap_or(FeatureKind::SpectrogramPool),
            window: kv.parsed("window")?.unwrap_or(DEFAULT_WINDOW),
            hop: kv.parsed("hop")?.unwrap_or(DEFAULT_HOP),
            method: kv.parsed("method")?.unwrap_or(Method::DictionaryLearning),
            protocol: kv.protocol()?,
            grid: kv.grid()?,
            base: kv.base_hyperparams()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Kernel;

    #[test]
    fn parse_and_override() {
        let mut kv = KeyValues::parse(
            "# comment\nchords-per-class = 3\n\nmethod = baseline:poly\nprotocol = chord\nlambdas = 0.1, 0.3\n",
        )
        .unwrap();
        kv.set_pair("num_splits=4").unwrap();
        kv.set("protocol", "chord");
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.data, DataSource::Chords { per_class: 3, seed: 0 });
        assert_eq!(cfg.method, Method::Baseline { kernel: Kernel::POLY2 });
        assert_eq!(cfg.protocol.num_splits, 4);
        assert_eq!(cfg.protocol.train_fraction, 2.0 / 3.0);
        assert_eq!(cfg.grid.lambdas, vec![0.1, 0.3]);
        assert_eq!(cfg.grid.gamma1s, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn errors() {
        assert!(matches!(KeyValues::parse("novalue"), Err(Error::Config(_))));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(Error::Config(_))));
        let kv = KeyValues::parse("data = x\nbogus = 1").unwrap();
        assert!(matches!(ExperimentConfig::from_kv(&kv), Err(Error::Config(_))));
        let kv = KeyValues::parse("data = x\nfeatures = y").unwrap();
        assert!(matches!(ExperimentConfig::from_kv(&kv), Err(Error::Config(_))));
        let kv = KeyValues::parse("data = x\nlambdas = 0.1, z").unwrap();
        assert!(matches!(ExperimentConfig::from_kv(&kv), Err(Error::Config(_))));
    }
}
