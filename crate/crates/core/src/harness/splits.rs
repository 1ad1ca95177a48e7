use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub num_splits: usize,
    pub train_fraction: f64,
    pub validation_resamples: usize,
    pub seed: u64,
}

impl SplitProtocol {
    /// 20 splits, 80 % train, 5 validation resamples.
    pub fn casr(seed: u64) -> Self {
        SplitProtocol {
            num_splits: 20,
            train_fraction: 0.8,
            validation_resamples: 5,
            seed,
        }
    }

    /// 10 splits, 2/3 train, 2 validation resamples.
    pub fn chord(seed: u64) -> Self {
        SplitProtocol {
            num_splits: 10,
            train_fraction: 2.0 / 3.0,
            validation_resamples: 2,
            seed,
        }
    }

    pub fn preset(name: ProtocolName, seed: u64) -> Self {
        match name {
            ProtocolName::Casr => Self::casr(seed),
            ProtocolName::Chord => Self::chord(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_splits == 0
            || self.validation_resamples == 0
            || !(self.train_fraction > 0.0 && self.train_fraction < 1.0)
        {
            return Err(Error::InvalidParam(format!("invalid split protocol {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    Casr,
    Chord,
}

impl FromStr for ProtocolName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "casr" => Ok(ProtocolName::Casr),
            "chord" => Ok(ProtocolName::Chord),
            other => Err(Error::InvalidParam(format!("unknown protocol '{other}'"))),
        }
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolName::Casr => "casr",
            ProtocolName::Chord => "chord",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training samples drawn per class: `round(fraction·count)`, kept within
/// `[1, count − 1]`.
pub fn train_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64).round() as usize).clamp(1, count - 1)
}

/// One stratified split of `labels` (zero-based) drawn with `seed`.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> Result<Split> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in members.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let k = train_count(fraction, idx.len());
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// `protocol.num_splits` stratified train/test partitions.
pub fn make_splits(labels: &[usize], protocol: &SplitProtocol) -> Result<Vec<Split>> {
    protocol.validate()?;
    (0..protocol.num_splits)
        .map(|s| stratified_split(labels, protocol.train_fraction, derive_seed(protocol.seed, s as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat(c).take(per)).collect()
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(train_count(0.8, 8), 6);
        assert_eq!(train_count(2.0 / 3.0, 154), 103);
        assert_eq!(train_count(0.5, 2), 1);
        assert_eq!(train_count(0.99, 3), 2);
        assert_eq!(train_count(0.01, 3), 1);
    }

    #[test]
    fn chord_preset_counts() {
        let labels = balanced(14, 154);
        let splits = make_splits(&labels, &SplitProtocol::chord(1)).unwrap();
        assert_eq!(splits.len(), 10);
        for s in &splits {
            for c in 0..14 {
                assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 103);
                assert_eq!(s.test.iter().filter(|&&i| labels[i] == c).count(), 51);
            }
        }
        assert_ne!(splits[0], splits[1]);
    }

    #[test]
    fn casr_on_ea_sized_data() {
        let labels = balanced(10, 8);
        for s in make_splits(&labels, &SplitProtocol::casr(2)).unwrap() {
            assert_eq!(s.train.len(), 60);
            assert_eq!(s.test.len(), 20);
        }
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(matches!(
            make_splits(&[0, 0, 1], &SplitProtocol::chord(0)),
            Err(Error::ClassTooSmall { class: 1, count: 1 })
        ));
    }
}
