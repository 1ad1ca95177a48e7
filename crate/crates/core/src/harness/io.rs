//! File formats: the binary matrix container, feature CSV, label lists and
//! WAV audio.
//!
//! Binary matrix layout (all little-endian):
//!
//! ```text
//! magic   8 bytes  "CBDLMTX\0"
//! version u32      1
//! rows    u64
//! cols    u64
//! data    rows·cols f64, column-major
//! ```
//!
//! Feature matrices are stored M × N, so each clip is one contiguous column.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::features::Signal;

pub const MATRIX_MAGIC: &[u8; 8] = b"CBDLMTX\0";
pub const MATRIX_VERSION: u32 = 1;

pub(crate) struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s<'a, I: IntoIterator<Item = &'a f64>>(&mut self, vals: I) -> Result<()> {
        for v in vals {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Dimensions then column-major entries.
    pub fn matrix(&mut self, m: ArrayView2<f64>) -> Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        self.f64s(m.t().iter())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct BinReader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        BinReader { inner, what }
    }

    fn corrupt(&self, detail: &str) -> Error {
        Error::CorruptArchive(format!("{}: {detail}", self.what))
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.corrupt("unexpected end of file"),
            _ => Error::Io(e),
        })
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| self.corrupt("length overflow"))?];
        self.bytes(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n < (1 << 40))
            .ok_or_else(|| self.corrupt("implausible matrix size"))?;
        let data = self.f64_vec(n)?;
        Array2::from_shape_vec((rows, cols).f(), data).map_err(|e| self.corrupt(&e.to_string()))
    }

    /// Errors unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(self.corrupt("trailing bytes")),
        }
    }
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut w = BinWriter::new(BufWriter::new(File::create(path)?));
    w.bytes(MATRIX_MAGIC)?;
    w.u32(MATRIX_VERSION)?;
    w.matrix(m)?;
    w.into_inner().flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = BinReader::new(BufReader::new(File::open(path)?), "matrix");
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::CorruptArchive("not a matrix file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MATRIX_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MATRIX_VERSION,
        });
    }
    let m = r.matrix()?;
    r.finish()?;
    Ok(m)
}

/// Class names plus one zero-based label per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
}

impl Labels {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Builds the class list from names, sorted lexicographically.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut class_names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        class_names.sort();
        class_names.dedup();
        let labels = names
            .iter()
            .map(|n| class_names.binary_search_by(|c| c.as_str().cmp(n.as_ref())).unwrap())
            .collect();
        Labels {
            class_names,
            labels,
        }
    }
}

/// `index,label,class_name` rows.
pub fn write_labels(path: &Path, labels: &Labels) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label", "class_name"])?;
    for (i, &l) in labels.labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string(), labels.class_names[l].clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Labels> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut names: Vec<Option<String>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |d: &str| Error::CorruptFile {
            path: path.to_path_buf(),
            detail: format!("row {row}: {d}"),
        };
        let label: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad label"))?;
        let name = rec.get(2).ok_or_else(|| bad("missing class name"))?.to_string();
        if names.len() <= label {
            names.resize(label + 1, None);
        }
        match &names[label] {
            Some(existing) if *existing != name => return Err(bad("inconsistent class name")),
            _ => names[label] = Some(name),
        }
        labels.push(label);
    }
    let class_names = names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.unwrap_or_else(|| format!("class_{i}")))
        .collect();
    Ok(Labels {
        class_names,
        labels,
    })
}

/// One row per clip: class name then the feature values.
pub fn write_features_csv(path: &Path, features: ArrayView2<f64>, labels: &Labels) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (i, col) in features.columns().into_iter().enumerate() {
        let mut rec = vec![labels.class_names[labels.labels[i]].clone()];
        rec.extend(col.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the M × N matrix and labels with lexicographically ordered classes.
pub fn read_features_csv(path: &Path) -> Result<(Array2<f64>, Labels)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |d: String| Error::CorruptFile {
            path: path.to_path_buf(),
            detail: format!("row {row}: {d}"),
        };
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => return Err(bad(format!("{} values, expected {d}", vals.len()))),
            _ => {}
        }
        names.push(rec.get(0).unwrap_or_default().to_string());
        data.extend(vals);
    }
    let dim = dim.unwrap_or(0);
    let n = names.len();
    let m = Array2::from_shape_vec((dim, n).f(), data).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok((m, Labels::from_names(&names)))
}

/// `<features>.labels.csv`, written next to a binary feature matrix.
pub fn default_labels_path(features: &Path) -> std::path::PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".labels.csv");
    s.into()
}

pub fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a mono signal; multi-channel audio is averaged.
pub fn read_wav(path: &Path) -> Result<Signal> {
    let corrupt = |d: String| Error::CorruptFile {
        path: path.to_path_buf(),
        detail: d,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedWavFormat {
            path: path.to_path_buf(),
            detail: "unsupported encoding".into(),
        },
        other => corrupt(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt(e.to_string()))?,
        (hound::SampleFormat::Int, bits @ (8 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| corrupt(e.to_string()))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt(e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWavFormat {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} with {bits} bits"),
            })
        }
    };
    if channels == 0 || interleaved.len() % channels != 0 {
        return Err(corrupt("sample count is not a multiple of the channel count".into()));
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Signal::new(mono, spec.sample_rate).map_err(|e| corrupt(e.to_string()))
}

/// 16-bit PCM mono.
pub fn write_wav(path: &Path, signal: &Signal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::InvalidParam(other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in signal.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(io_err)?;
    }
    w.finalize().map_err(io_err)?;
    Ok(())
}
