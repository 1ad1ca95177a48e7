use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use cbdl::chordgen::{generate_dataset, DatasetSpec};
use cbdl::error::{Error, Result};
use cbdl::features::{FeatureKind, DEFAULT_HOP, DEFAULT_WINDOW};
use cbdl::harness::archive::{export_similarity, load_model, save_model};
use cbdl::harness::config::{ExperimentConfig, KeyValues, GRID_KEYS, HYPERPARAM_KEYS, PROTOCOL_KEYS};
use cbdl::harness::dataset::{feature_matrix, ingest_wav_dir, load_features, write_chord_dataset};
use cbdl::harness::experiment::{run_experiment, ExperimentSetup};
use cbdl::harness::grid::{accuracy, grid_search, MatrixSource};
use cbdl::harness::io::{default_labels_path, is_csv, read_labels, write_features_csv, write_labels, write_matrix};
use cbdl::harness::model::{train_model, FeatureSpec, Method};
use cbdl::harness::splits::ProtocolName;

#[derive(Parser)]
#[command(name = "cbdl", version, about = "Class-based dictionary learning for audio classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the chord-type dataset as WAV files plus manifest.csv.
    GenChords {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 154)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract one feature vector per clip from a class-per-directory corpus.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: FeatureKind,
        /// `.csv` writes labelled rows; anything else the binary matrix
        /// format plus a `<out>.labels.csv` list.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: usize,
    },
    /// Grid-search on all given samples, then train a model on them.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Required for binary feature matrices.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// key = value file with grid and learning settings.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "casr")]
        protocol: ProtocolName,
        #[arg(long, default_value = "dictionary_learning")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model: PathBuf,
        /// Extra `key=value` settings, applied after the grid file.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Classify a feature file with a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Full split/grid-search/test protocol described by a config file.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        chords_per_class: Option<usize>,
        #[arg(long)]
        feature: Option<String>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Saves the model trained on the first split.
        #[arg(long)]
        save_model: Option<PathBuf>,
        /// Extra `key=value` settings, applied last.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Export the class-dictionary similarity matrix of a model as CSV.
    Similarity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    predictions: Vec<String>,
    predicted_labels: Vec<usize>,
    decision_values: Vec<Vec<f64>>,
    accuracy: Option<f64>,
    confusion: Option<Vec<Vec<usize>>>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenChords { out, per_class, seed } => {
            let clips = generate_dataset(&DatasetSpec::new(seed, per_class))?;
            let manifest = write_chord_dataset(&out, &clips)?;
            info!("wrote {} clips, manifest {}", clips.len(), manifest.display());
        }
        Command::Features {
            input,
            kind,
            out,
            window,
            hop,
        } => {
            let data = ingest_wav_dir(&input)?;
            let x = feature_matrix(&data.signals, kind, window, hop)?;
            if is_csv(&out) {
                write_features_csv(&out, x.view(), &data.labels)?;
            } else {
                write_matrix(&out, x.view())?;
                write_labels(&default_labels_path(&out), &data.labels)?;
            }
            info!("wrote {} × {} {kind} features to {}", x.nrows(), x.ncols(), out.display());
        }
        Command::Train {
            features,
            labels,
            grid,
            protocol,
            method,
            seed,
            model,
            set,
        } => {
            let mut kv = match grid {
                Some(p) => KeyValues::from_file(&p)?,
                None => KeyValues::default(),
            };
            for pair in &set {
                kv.set_pair(pair)?;
            }
            kv.check_keys(&[GRID_KEYS, HYPERPARAM_KEYS, PROTOCOL_KEYS])?;
            kv.set("protocol", protocol.to_string());
            kv.set("seed", seed.to_string());
            let source_cfg = cbdl::harness::config::DataSource::Features { features, labels };
            let (x, labels) = load_features(&source_cfg, FeatureKind::SpectrogramPool, DEFAULT_WINDOW, DEFAULT_HOP)?;
            let grid = kv.grid()?;
            let base = kv.base_hyperparams()?;
            let protocol = kv.protocol()?;
            let c = labels.num_classes();
            let source = MatrixSource::new(x, labels.labels.clone(), c)?;
            let all: Vec<usize> = (0..labels.labels.len()).collect();
            let outcome = grid_search(&source, &all, &method, &grid, &protocol, &base, seed)?;
            info!("selected {:?} (validation {:?})", outcome.selection, outcome.validation_accuracy);
            let (trained, _) = train_model(
                method,
                source.features.view(),
                &labels.labels,
                labels.class_names.clone(),
                &outcome.selection,
                None,
                seed,
            )?;
            save_model(&trained, &model)?;
        }
        Command::Eval {
            model,
            features,
            labels,
            report,
        } => {
            let m = load_model(&model)?;
            let labels = labels.or_else(|| Some(default_labels_path(&features)).filter(|p| p.exists()));
            let (x, truth) = if is_csv(&features) {
                let (x, l) = cbdl::harness::io::read_features_csv(&features)?;
                (x, Some(l))
            } else {
                let x = cbdl::harness::io::read_matrix(&features)?;
                (x, labels.as_deref().map(read_labels).transpose()?)
            };
            let pred = m.predict(x.view())?;
            let truth = truth
                .map(|l| -> Result<Vec<usize>> {
                    l.labels
                        .iter()
                        .map(|&i| {
                            let name = &l.class_names[i];
                            m.class_names
                                .iter()
                                .position(|n| n == name)
                                .ok_or_else(|| Error::MissingClass(format!("class '{name}' unknown to the model")))
                        })
                        .collect()
                })
                .transpose()?;
            let confusion = truth.as_ref().map(|t| {
                let mut cm = vec![vec![0usize; m.num_classes()]; m.num_classes()];
                for (&a, &p) in t.iter().zip(&pred.labels) {
                    cm[a][p] += 1;
                }
                cm
            });
            let out = EvalReport {
                predictions: pred.labels.iter().map(|&l| m.class_names[l].clone()).collect(),
                accuracy: truth.as_ref().map(|t| accuracy(&pred.labels, t)),
                confusion,
                decision_values: pred.decision_values.rows().into_iter().map(|r| r.to_vec()).collect(),
                predicted_labels: pred.labels,
            };
            write_json(&report, &out)?;
        }
        Command::Experiment {
            config,
            report,
            data,
            features,
            labels,
            chords_per_class,
            feature,
            method,
            protocol,
            seed,
            save_model: save_path,
            set,
        } => {
            let mut kv = match config {
                Some(p) => KeyValues::from_file(&p)?,
                None => KeyValues::default(),
            };
            let flags = [
                ("data", data.map(|p| p.display().to_string())),
                ("features", features.map(|p| p.display().to_string())),
                ("labels", labels.map(|p| p.display().to_string())),
                ("chords_per_class", chords_per_class.map(|n| n.to_string())),
                ("feature", feature),
                ("method", method),
                ("protocol", protocol),
                ("seed", seed.map(|s| s.to_string())),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    kv.set(k, v);
                }
            }
            for pair in &set {
                kv.set_pair(pair)?;
            }
            let cfg = ExperimentConfig::from_kv(&kv)?;
            let (x, labels) = load_features(&cfg.data, cfg.feature, cfg.window, cfg.hop)?;
            let c = labels.num_classes();
            let source = MatrixSource::new(x, labels.labels, c)?;
            let from_audio = !matches!(cfg.data, cbdl::harness::config::DataSource::Features { .. });
            let setup = ExperimentSetup {
                method: cfg.method,
                protocol: cfg.protocol,
                grid: cfg.grid,
                base: cfg.base,
                class_names: labels.class_names,
                feature: from_audio.then_some(FeatureSpec {
                    kind: cfg.feature,
                    window: cfg.window,
                    hop: cfg.hop,
                }),
            };
            let outcome = run_experiment(&source, &setup)?;
            info!(
                "{}: accuracy {:.4} ± {:.4}",
                outcome.report.method, outcome.report.mean_accuracy, outcome.report.std_accuracy
            );
            write_json(&report, &outcome.report)?;
            if let (Some(p), Some(m)) = (save_path, outcome.models.first()) {
                save_model(m, &p)?;
            }
        }
        Command::Similarity { model, out } => {
            export_similarity(&load_model(&model)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
