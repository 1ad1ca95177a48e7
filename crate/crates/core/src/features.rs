//! Time-frequency feature extraction.
//!
//! Every extractor starts from a Hann-windowed magnitude spectrogram. The
//! three fixed-length features (temporal pooling, chroma, note-sampled PSD)
//! only depend on the per-bin mean magnitude and mean power over frames, so
//! [`SpectralSummary`] can be computed either from a stored [`Spectrogram`] or
//! streamed directly from a [`Signal`] without keeping every frame in memory.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 4096;
pub const DEFAULT_HOP: usize = 32;
pub const CHROMA_DIM: usize = 12;
pub const PSD_NOTES: usize = 96;
/// MIDI number of the lowest note sampled by [`interpolated_psd`].
pub const PSD_LOWEST_MIDI: i32 = 24;

/// Frequency in Hz of a MIDI note number, A4 = 69 = 440 Hz.
pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSignal("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// bins × frames
    pub magnitudes: Array2<f64>,
    pub bin_freqs: Vec<f64>,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn summary(&self) -> Result<SpectralSummary> {
        let frames = self.frames();
        if frames == 0 {
            return Err(Error::EmptySpectrogram);
        }
        let mut mean_magnitude = Array1::zeros(self.bins());
        let mut mean_power = Array1::zeros(self.bins());
        for frame in self.magnitudes.columns() {
            for (b, &m) in frame.iter().enumerate() {
                mean_magnitude[b] += m;
                mean_power[b] += m * m;
            }
        }
        let n = frames as f64;
        mean_magnitude /= n;
        mean_power /= n;
        Ok(SpectralSummary {
            mean_magnitude,
            mean_power,
            bin_freqs: self.bin_freqs.clone(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Per-bin statistics pooled over all frames of a spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub mean_magnitude: Array1<f64>,
    pub mean_power: Array1<f64>,
    pub bin_freqs: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    SpectrogramPool,
    Chroma,
    InterpPsd,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::SpectrogramPool,
        FeatureKind::Chroma,
        FeatureKind::InterpPsd,
    ];

    /// Dimensionality of the feature for a given analysis window.
    pub fn dim(self, window_size: usize) -> usize {
        match self {
            FeatureKind::SpectrogramPool => window_size / 2 + 1,
            FeatureKind::Chroma => CHROMA_DIM,
            FeatureKind::InterpPsd => PSD_NOTES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::SpectrogramPool => "spectrogram_pool",
            FeatureKind::Chroma => "chroma",
            FeatureKind::InterpPsd => "interp_psd",
        }
    }

    pub fn extract(self, summary: &SpectralSummary) -> Result<FeatureVector> {
        match self {
            FeatureKind::SpectrogramPool => Ok(pool_summary(summary)),
            FeatureKind::Chroma => Ok(chroma_summary(summary)),
            FeatureKind::InterpPsd => interpolated_psd_summary(summary),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrogram_pool" => Ok(FeatureKind::SpectrogramPool),
            "chroma" => Ok(FeatureKind::Chroma),
            "interp_psd" => Ok(FeatureKind::InterpPsd),
            other => Err(Error::InvalidParam(format!("unknown feature kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Array1<f64>,
    pub kind: FeatureKind,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_framing(len: usize, window_size: usize, hop: usize) -> Result<usize> {
    if hop == 0 {
        return Err(Error::InvalidParam("hop must be at least 1".into()));
    }
    if window_size == 0 || window_size % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "window size {window_size} must be positive and even"
        )));
    }
    if len < window_size {
        return Err(Error::SignalTooShort {
            len,
            window: window_size,
        });
    }
    Ok((len - window_size) / hop + 1)
}

fn bin_freqs(window_size: usize, sample_rate: u32) -> Vec<f64> {
    (0..window_size / 2 + 1)
        .map(|b| b as f64 * sample_rate as f64 / window_size as f64)
        .collect()
}

/// Runs `visit(frame_index, magnitudes)` for every complete frame.
fn for_each_frame<F>(signal: &Signal, window_size: usize, hop: usize, mut visit: F) -> Result<usize>
where
    F: FnMut(usize, &[f64]),
{
    let frames = check_framing(signal.len(), window_size, hop)?;
    let window = hann(window_size);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_size);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut mags = vec![0.0; window_size / 2 + 1];
    let samples = signal.samples();
    for t in 0..frames {
        let start = t * hop;
        for ((dst, &s), &w) in input
            .iter_mut()
            .zip(&samples[start..start + window_size])
            .zip(&window)
        {
            *dst = s * w;
        }
        fft.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
            .map_err(|e| Error::InvalidParam(e.to_string()))?;
        for (m, c) in mags.iter_mut().zip(&spectrum) {
            *m = c.norm();
        }
        visit(t, &mags);
    }
    Ok(frames)
}

/// Magnitude of the Hann-windowed short-time Fourier transform. Frames that
/// would run past the end of the signal are dropped.
pub fn spectrogram(signal: &Signal, window_size: usize, hop: usize) -> Result<Spectrogram> {
    let frames = check_framing(signal.len(), window_size, hop)?;
    let bins = window_size / 2 + 1;
    let mut magnitudes = Array2::zeros((bins, frames));
    for_each_frame(signal, window_size, hop, |t, mags| {
        magnitudes
            .column_mut(t)
            .iter_mut()
            .zip(mags)
            .for_each(|(dst, &m)| *dst = m);
    })?;
    Ok(Spectrogram {
        magnitudes,
        bin_freqs: bin_freqs(window_size, signal.sample_rate()),
        window_size,
        hop,
        sample_rate: signal.sample_rate(),
    })
}

/// Streaming equivalent of `spectrogram(..)?.summary()`.
pub fn spectral_summary(signal: &Signal, window_size: usize, hop: usize) -> Result<SpectralSummary> {
    let bins = window_size / 2 + 1;
    let mut mean_magnitude = Array1::<f64>::zeros(bins);
    let mut mean_power = Array1::<f64>::zeros(bins);
    let frames = for_each_frame(signal, window_size, hop, |_, mags| {
        for (b, &m) in mags.iter().enumerate() {
            mean_magnitude[b] += m;
            mean_power[b] += m * m;
        }
    })?;
    let n = frames as f64;
    mean_magnitude /= n;
    mean_power /= n;
    Ok(SpectralSummary {
        mean_magnitude,
        mean_power,
        bin_freqs: bin_freqs(window_size, signal.sample_rate()),
        sample_rate: signal.sample_rate(),
    })
}

/// Mean magnitude per bin over all frames.
pub fn pool_spectrogram(spec: &Spectrogram) -> Result<FeatureVector> {
    Ok(pool_summary(&spec.summary()?))
}

fn pool_summary(summary: &SpectralSummary) -> FeatureVector {
    FeatureVector {
        values: summary.mean_magnitude.clone(),
        kind: FeatureKind::SpectrogramPool,
    }
}

/// Pitch class of a frequency, 0 = C through 11 = B.
pub fn pitch_class(freq: f64) -> usize {
    let semitones_from_a = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semitones_from_a + 9).rem_euclid(12) as usize
}

/// Twelve-bin chroma: time-averaged power of every non-DC bin summed into its
/// pitch class.
pub fn chroma(spec: &Spectrogram) -> Result<FeatureVector> {
    Ok(chroma_summary(&spec.summary()?))
}

fn chroma_summary(summary: &SpectralSummary) -> FeatureVector {
    let mut values = Array1::zeros(CHROMA_DIM);
    for (&f, &p) in summary.bin_freqs.iter().zip(&summary.mean_power).skip(1) {
        if f > 0.0 {
            values[pitch_class(f)] += p;
        }
    }
    FeatureVector {
        values,
        kind: FeatureKind::Chroma,
    }
}

/// Note frequencies sampled by [`interpolated_psd`], MIDI 24 through 119.
pub fn psd_note_freqs() -> Vec<f64> {
    (0..PSD_NOTES)
        .map(|j| midi_to_hz((PSD_LOWEST_MIDI + j as i32) as f64))
        .collect()
}

/// Time-averaged power spectrum linearly interpolated at 96 semitone-spaced
/// note frequencies.
pub fn interpolated_psd(spec: &Spectrogram) -> Result<FeatureVector> {
    interpolated_psd_summary(&spec.summary()?)
}

fn interpolated_psd_summary(summary: &SpectralSummary) -> Result<FeatureVector> {
    let nyquist = summary.sample_rate as f64 / 2.0;
    let freqs = &summary.bin_freqs;
    let power = &summary.mean_power;
    let spacing = freqs.get(1).copied().unwrap_or(0.0);
    let mut values = Array1::zeros(PSD_NOTES);
    for (j, f) in psd_note_freqs().into_iter().enumerate() {
        if f > nyquist {
            return Err(Error::NoteAboveNyquist { freq: f, nyquist });
        }
        let pos = f / spacing;
        let lo = (pos.floor() as usize).min(freqs.len() - 1);
        let hi = (lo + 1).min(freqs.len() - 1);
        let frac = pos - lo as f64;
        values[j] = power[lo] * (1.0 - frac) + power[hi] * frac;
    }
    Ok(FeatureVector {
        values,
        kind: FeatureKind::InterpPsd,
    })
}

/// Extracts several feature kinds from one pass over the signal.
pub fn extract_features(
    signal: &Signal,
    kinds: &[FeatureKind],
    window_size: usize,
    hop: usize,
) -> Result<Vec<FeatureVector>> {
    let summary = spectral_summary(signal, window_size, hop)?;
    kinds.iter().map(|k| k.extract(&summary)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> Signal {
        let s = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Signal::new(s, rate).unwrap()
    }

    fn argmax(v: &Array1<f64>) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
            .0
    }

    #[test]
    fn framing_arithmetic() {
        assert_eq!(check_framing(88200, 4096, 32).unwrap(), 2629);
        assert_eq!(check_framing(4096, 4096, 32).unwrap(), 1);
        assert!(matches!(
            check_framing(4095, 4096, 32),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(matches!(check_framing(5000, 4096, 0), Err(Error::InvalidParam(_))));
        assert!(matches!(check_framing(5000, 4095, 1), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn signal_validation() {
        assert!(Signal::new(vec![], 44100).is_err());
        assert!(Signal::new(vec![0.0], 0).is_err());
        assert!(Signal::new(vec![0.0, f64::NAN], 8000).is_err());
    }

    #[test]
    fn silence_gives_zero_features() {
        let sig = Signal::new(vec![0.0; 5000], 44100).unwrap();
        let spec = spectrogram(&sig, 4096, 32).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
        assert!(chroma(&spec).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(interpolated_psd(&spec).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let sig = sine(440.0, 44100, 4096 + 32 * 10);
        let spec = spectrogram(&sig, 4096, 32).unwrap();
        assert_eq!(spec.bins(), 2049);
        assert_eq!(spec.frames(), 11);
        for frame in spec.magnitudes.columns() {
            assert_eq!(argmax(&frame.to_owned()), 41);
        }
    }

    #[test]
    fn pooling_is_frame_mean() {
        let mut m = Array2::zeros((3, 2));
        m.column_mut(1).fill(2.0);
        let spec = Spectrogram {
            magnitudes: m,
            bin_freqs: vec![0.0, 1.0, 2.0],
            window_size: 4,
            hop: 1,
            sample_rate: 4,
        };
        assert_eq!(pool_spectrogram(&spec).unwrap().values.to_vec(), vec![1.0; 3]);
        let empty = Spectrogram {
            magnitudes: Array2::zeros((3, 0)),
            ..spec
        };
        assert!(matches!(pool_spectrogram(&empty), Err(Error::EmptySpectrogram)));
    }

    #[test]
    fn pitch_classes() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(880.0), 9);
        assert_eq!(pitch_class(27.5), 9);
        assert_eq!(pitch_class(493.88), 11);
    }

    #[test]
    fn chroma_and_psd_of_a4() {
        let sig = sine(440.0, 44100, 8192);
        let spec = spectrogram(&sig, 4096, 256).unwrap();
        assert_eq!(argmax(&chroma(&spec).unwrap().values), 9);
        let psd = interpolated_psd(&spec).unwrap();
        assert_eq!(psd.len(), 96);
        assert_eq!(argmax(&psd.values), 45);
    }

    #[test]
    fn psd_rejects_low_sample_rates() {
        let sig = sine(440.0, 8000, 8192);
        let spec = spectrogram(&sig, 4096, 256).unwrap();
        assert!(matches!(
            interpolated_psd(&spec),
            Err(Error::NoteAboveNyquist { .. })
        ));
    }

    #[test]
    fn streaming_summary_matches_stored() {
        let sig = sine(317.0, 22050, 6000);
        let a = spectrogram(&sig, 1024, 100).unwrap().summary().unwrap();
        let b = spectral_summary(&sig, 1024, 100).unwrap();
        assert_eq!(a, b);
    }
}
