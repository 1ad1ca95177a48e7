//! Labelled audio collections on disk: one subdirectory per class.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use rayon::prelude::*;

use crate::chordgen::ChordClip;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureKind, Signal};
use crate::chordgen::{generate_dataset, DatasetSpec};
use crate::harness::config::DataSource;
use crate::harness::io::{default_labels_path, is_csv, read_features_csv, read_labels, read_matrix, read_wav, write_wav, Labels};

#[derive(Debug, Clone)]
pub struct LabeledSignals {
    pub signals: Vec<Signal>,
    pub labels: Labels,
    pub paths: Vec<PathBuf>,
}

impl LabeledSignals {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn from_chords(clips: Vec<ChordClip>) -> Self {
        let class_names = crate::chordgen::chord_table()
            .iter()
            .enumerate()
            .map(|(i, c)| chord_dir_name(i, c))
            .collect();
        let labels = clips.iter().map(|c| c.class).collect();
        LabeledSignals {
            signals: clips.into_iter().map(|c| c.signal).collect(),
            labels: Labels {
                class_names,
                labels,
            },
            paths: Vec::new(),
        }
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/*.wav`. Classes are numbered in lexicographic order of
/// their directory names; clips within a class in lexicographic file order.
pub fn ingest_wav_dir(root: &Path) -> Result<LabeledSignals> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::EmptyClassDir(root.to_path_buf()));
    }
    let mut class_names = Vec::new();
    let mut jobs = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let wavs: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_wav(p)).collect();
        if wavs.is_empty() {
            return Err(Error::EmptyClassDir(dir.clone()));
        }
        class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        jobs.extend(wavs.into_iter().map(|p| (class, p)));
    }
    let signals = jobs
        .par_iter()
        .map(|(_, p)| read_wav(p))
        .collect::<Result<Vec<_>>>()?;
    info!("loaded {} clips in {} classes from {}", signals.len(), class_names.len(), root.display());
    Ok(LabeledSignals {
        signals,
        labels: Labels {
            class_names,
            labels: jobs.iter().map(|(c, _)| *c).collect(),
        },
        paths: jobs.into_iter().map(|(_, p)| p).collect(),
    })
}

/// `NN_slug`, so lexicographic order matches the chord table.
pub fn chord_dir_name(class: usize, chord: &crate::chordgen::ChordType) -> String {
    format!("{class:02}_{}", chord.slug())
}

/// Writes every clip as 16-bit WAV under `out/<NN_slug>/` plus `manifest.csv`
/// (`path,class_index,type_name,root,instrument`).
pub fn write_chord_dataset(out: &Path, clips: &[ChordClip]) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let manifest_path = out.join("manifest.csv");
    let mut manifest = csv::Writer::from_path(&manifest_path)?;
    manifest.write_record(["path", "class_index", "type_name", "root", "instrument"])?;
    let mut counters = std::collections::HashMap::new();
    for clip in clips {
        let dir_name = chord_dir_name(clip.class, &clip.chord);
        let dir = out.join(&dir_name);
        fs::create_dir_all(&dir)?;
        let n = counters.entry(clip.class).or_insert(0usize);
        let rel = format!("{dir_name}/{:04}_{}_{}.wav", *n, clip.root_midi, clip.instrument);
        *n += 1;
        write_wav(&out.join(&rel), &clip.signal)?;
        manifest.write_record([
            rel,
            clip.class.to_string(),
            clip.chord.name.to_string(),
            clip.root_midi.to_string(),
            clip.instrument.clone(),
        ])?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

/// Extracts one feature kind for every signal; returns an M × N matrix.
pub fn feature_matrix(
    signals: &[Signal],
    kind: FeatureKind,
    window: usize,
    hop: usize,
) -> Result<Array2<f64>> {
    let mut all = feature_matrices(signals, &[kind], window, hop)?;
    Ok(all.remove(0))
}

/// Several feature kinds from a single spectral pass per clip.
pub fn feature_matrices(
    signals: &[Signal],
    kinds: &[FeatureKind],
    window: usize,
    hop: usize,
) -> Result<Vec<Array2<f64>>> {
    let per_clip = signals
        .par_iter()
        .map(|s| extract_features(s, kinds, window, hop))
        .collect::<Result<Vec<_>>>()?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let m = kind.dim(window);
            let mut out = Array2::zeros((m, signals.len()));
            for (i, feats) in per_clip.iter().enumerate() {
                out.column_mut(i).assign(&feats[j].values);
            }
            out
        })
        .collect())
}

/// Feature matrix (M × N) and labels for any configured data source.
/// Feature files are used as stored; audio is analysed with `kind`. A binary
/// matrix without an explicit labels file uses [`default_labels_path`].
pub fn load_features(
    source: &DataSource,
    kind: FeatureKind,
    window: usize,
    hop: usize,
) -> Result<(Array2<f64>, Labels)> {
    let signals = match source {
        DataSource::Features { features, labels } => {
            if is_csv(features) {
                return read_features_csv(features);
            }
            let labels = labels.clone().unwrap_or_else(|| default_labels_path(features));
            let x = read_matrix(features)?;
            let labels = read_labels(&labels)?;
            if labels.labels.len() != x.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} feature columns",
                    labels.labels.len(),
                    x.ncols()
                )));
            }
            return Ok((x, labels));
        }
        DataSource::WavDir(dir) => ingest_wav_dir(dir)?,
        DataSource::Chords { per_class, seed } => {
            LabeledSignals::from_chords(generate_dataset(&DatasetSpec::new(*seed, *per_class))?)
        }
    };
    let x = feature_matrix(&signals.signals, kind, window, hop)?;
    Ok((x, signals.labels))
}
