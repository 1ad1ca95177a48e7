//! Synthetic tertian chord dataset.
//!
//! Fourteen chord types (two thirds, four triads, eight sevenths) rendered by
//! additive synthesis with a handful of instrument timbres at varying roots.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{midi_to_hz, Signal};
use crate::rng::derive_seed;

pub const DEFAULT_DURATION: f64 = 2.0;
pub const DEFAULT_SAMPLE_RATE: u32 = 44100;
pub const DEFAULT_PER_CLASS: usize = 154;
pub const ROOT_RANGE: std::ops::RangeInclusive<i32> = 40..=76;
/// Perfect fourth: coprime with 12, so the eight default roots (MIDI 40, 45,
/// …, 75) all have different pitch classes.
pub const DEFAULT_ROOT_STEP: usize = 5;
pub const PEAK_LEVEL: f64 = 0.9;
pub const MAX_DETUNE_CENTS: f64 = 5.0;
/// Partials up to this index must fit below Nyquist; higher ones are dropped.
const REQUIRED_PARTIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChordType {
    pub name: &'static str,
    /// Stacked thirds in semitones, 3 (minor) or 4 (major).
    pub intervals: &'static [u8],
}

impl ChordType {
    /// Semitone offsets of every note from the root, root included.
    pub fn offsets(&self) -> Vec<i32> {
        let mut out = vec![0];
        let mut acc = 0;
        for &i in self.intervals {
            acc += i as i32;
            out.push(acc);
        }
        out
    }

    /// Directory-safe form of the name.
    pub fn slug(&self) -> String {
        self.name.to_lowercase().replace([' ', '-'], "_")
    }
}

const CHORDS: [ChordType; 14] = [
    ChordType { name: "Minor third", intervals: &[3] },
    ChordType { name: "Major third", intervals: &[4] },
    ChordType { name: "Diminished triad", intervals: &[3, 3] },
    ChordType { name: "Minor triad", intervals: &[3, 4] },
    ChordType { name: "Major triad", intervals: &[4, 3] },
    ChordType { name: "Augmented triad", intervals: &[4, 4] },
    ChordType { name: "Diminished seventh", intervals: &[3, 3, 3] },
    ChordType { name: "Half-diminished seventh", intervals: &[3, 3, 4] },
    ChordType { name: "Minor seventh", intervals: &[3, 4, 3] },
    ChordType { name: "Minor major seventh", intervals: &[3, 4, 4] },
    ChordType { name: "Dominant seventh", intervals: &[4, 3, 3] },
    ChordType { name: "Major seventh", intervals: &[4, 3, 4] },
    ChordType { name: "Augmented major seventh", intervals: &[4, 4, 3] },
    ChordType { name: "Augmented augmented seventh", intervals: &[4, 4, 4] },
];

/// The fourteen tertian chord types in canonical order.
pub fn chord_table() -> Vec<ChordType> {
    CHORDS.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub attack: f64,
    pub decay: f64,
    pub sustain_level: f64,
    pub release: f64,
}

impl Envelope {
    /// Clips shorter than the envelope squeeze all stages proportionally.
    fn gain(&self, t: f64, duration: f64) -> f64 {
        let total = self.attack + self.decay + self.release;
        if total > duration {
            let squeezed = Envelope {
                attack: self.attack * duration / total,
                decay: self.decay * duration / total,
                release: self.release * duration / total,
                ..*self
            };
            return squeezed.gain(t, duration);
        }
        let release_start = duration - self.release;
        let level = if t < self.attack {
            t / self.attack
        } else if t < self.attack + self.decay {
            1.0 - (1.0 - self.sustain_level) * (t - self.attack) / self.decay
        } else {
            self.sustain_level
        };
        if t >= release_start && self.release > 0.0 {
            level * ((duration - t) / self.release).max(0.0)
        } else {
            level
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProfile {
    pub name: String,
    /// Relative strength of partial k+1, max 1.
    pub harmonics: Vec<f64>,
    pub envelope: Envelope,
}

impl InstrumentProfile {
    pub fn new(name: &str, harmonics: Vec<f64>, envelope: Envelope) -> Result<Self> {
        let peak = harmonics.iter().cloned().fold(0.0, f64::max);
        if harmonics.is_empty() || peak <= 0.0 || harmonics.iter().any(|&h| !(h >= 0.0)) {
            return Err(Error::InvalidParam(format!(
                "instrument '{name}' needs nonnegative harmonics with a positive peak"
            )));
        }
        Ok(InstrumentProfile {
            name: name.to_string(),
            harmonics: harmonics.iter().map(|h| h / peak).collect(),
            envelope,
        })
    }

    pub fn sine() -> Self {
        Self::new(
            "sine",
            vec![1.0],
            Envelope { attack: 0.02, decay: 0.1, sustain_level: 0.8, release: 0.2 },
        )
        .unwrap()
    }

    pub fn sawtooth() -> Self {
        Self::new(
            "sawtooth",
            (1..=8).map(|k| 1.0 / k as f64).collect(),
            Envelope { attack: 0.01, decay: 0.2, sustain_level: 0.7, release: 0.3 },
        )
        .unwrap()
    }

    pub fn clarinet() -> Self {
        Self::new(
            "clarinet",
            (1..=7).map(|k| if k % 2 == 1 { 1.0 / k as f64 } else { 0.0 }).collect(),
            Envelope { attack: 0.05, decay: 0.1, sustain_level: 0.9, release: 0.15 },
        )
        .unwrap()
    }

    pub fn plucked() -> Self {
        Self::new(
            "plucked",
            (0..6).map(|k| (-0.5 * k as f64).exp()).collect(),
            Envelope { attack: 0.005, decay: 1.2, sustain_level: 0.25, release: 0.5 },
        )
        .unwrap()
    }

    pub fn builtin() -> Vec<Self> {
        vec![Self::sine(), Self::sawtooth(), Self::clarinet(), Self::plucked()]
    }
}

/// Renders one chord. The seed controls per-note detuning (at most 5 cents)
/// and partial phases.
pub fn synthesize_chord(
    chord: &ChordType,
    root_midi: i32,
    instrument: &InstrumentProfile,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Signal> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidDuration(duration_s));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidParam("sample rate must be positive".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let required = instrument.harmonics.len().min(REQUIRED_PARTIALS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partials: Vec<(f64, f64, f64)> = Vec::new();
    for off in chord.offsets() {
        let f0 = midi_to_hz((root_midi + off) as f64);
        let top = f0 * required as f64;
        if top >= nyquist {
            return Err(Error::NoteAboveNyquist { freq: top, nyquist });
        }
        let cents = rng.gen_range(-MAX_DETUNE_CENTS..=MAX_DETUNE_CENTS);
        let f = f0 * 2f64.powf(cents / 1200.0);
        for (k, &amp) in instrument.harmonics.iter().enumerate() {
            let phase = rng.gen_range(0.0..2.0 * PI);
            let fk = f * (k + 1) as f64;
            if amp > 0.0 && fk < nyquist {
                partials.push((2.0 * PI * fk / sample_rate as f64, phase, amp));
            }
        }
    }
    let len = (duration_s * sample_rate as f64).round() as usize;
    let mut samples = vec![0.0; len];
    for &(omega, phase, amp) in &partials {
        for (n, s) in samples.iter_mut().enumerate() {
            *s += amp * (omega * n as f64 + phase).sin();
        }
    }
    let env = instrument.envelope;
    for (n, s) in samples.iter_mut().enumerate() {
        *s *= env.gain(n as f64 / sample_rate as f64, duration_s);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    Signal::new(samples, sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChordClip {
    pub signal: Signal,
    pub class: usize,
    pub chord: ChordType,
    pub root_midi: i32,
    pub instrument: String,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub seed: u64,
    pub samples_per_class: usize,
    pub roots: Vec<i32>,
    pub instruments: Vec<InstrumentProfile>,
    pub duration_s: f64,
    pub sample_rate: u32,
}

/// Every `DEFAULT_ROOT_STEP`-th MIDI note of `ROOT_RANGE`.
pub fn default_roots() -> Vec<i32> {
    ROOT_RANGE.step_by(DEFAULT_ROOT_STEP).collect()
}

impl DatasetSpec {
    pub fn new(seed: u64, samples_per_class: usize) -> Self {
        DatasetSpec {
            seed,
            samples_per_class,
            roots: default_roots(),
            instruments: InstrumentProfile::builtin(),
            duration_s: DEFAULT_DURATION,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    /// (root, instrument index) for every clip of `class`, in clip order.
    pub fn assignments(&self, class: usize) -> Vec<(i32, usize)> {
        let mut combos: Vec<(i32, usize)> = self
            .roots
            .iter()
            .flat_map(|&r| (0..self.instruments.len()).map(move |i| (r, i)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, class as u64));
        combos.shuffle(&mut rng);
        (0..self.samples_per_class)
            .map(|i| combos[i % combos.len()])
            .collect()
    }

    pub fn clip_seed(&self, class: usize, index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 1 << 32 | class as u64), index as u64)
    }
}

/// `samples_per_class` clips for each of the fourteen chord types, ordered by
/// class then clip index.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<ChordClip>> {
    if spec.samples_per_class == 0 {
        return Err(Error::InvalidParam("samples per class must be at least 1".into()));
    }
    if spec.roots.is_empty() || spec.instruments.is_empty() {
        return Err(Error::InvalidParam("roots and instruments must be nonempty".into()));
    }
    use rayon::prelude::*;
    let table = chord_table();
    let jobs: Vec<(usize, usize, i32, usize)> = (0..table.len())
        .flat_map(|c| {
            spec.assignments(c)
                .into_iter()
                .enumerate()
                .map(move |(i, (r, inst))| (c, i, r, inst))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(class, i, root, inst)| {
            let instrument = &spec.instruments[inst];
            let signal = synthesize_chord(
                &table[class],
                root,
                instrument,
                spec.duration_s,
                spec.sample_rate,
                spec.clip_seed(class, i),
            )?;
            Ok(ChordClip {
                signal,
                class,
                chord: table[class].clone(),
                root_midi: root,
                instrument: instrument.name.clone(),
            })
        })
        .collect()
}
