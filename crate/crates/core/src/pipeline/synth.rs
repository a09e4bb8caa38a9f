//! Synthetic corpora for smoke tests and benchmarks.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::write_wav;
use super::manifest::{CorpusKind, CorpusManifest, ManifestEntry};
use crate::dsp::Waveform;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCorpusSpec {
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub speech: usize,
    pub noise: usize,
    pub rir: usize,
    pub speech_seconds: f64,
    pub noise_seconds: f64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate_hz: 16_000,
            speech: 6,
            noise: 3,
            rir: 4,
            speech_seconds: 1.5,
            noise_seconds: 2.0,
        }
    }
}

/// Voiced-like signal: a harmonic stack with a syllable-rate envelope.
pub fn toy_speech(rng: &mut impl Rng, len: usize, sr: u32) -> Vec<f64> {
    let f0 = rng.random_range(90.0..250.0);
    let rate = rng.random_range(2.0..6.0);
    let amps: Vec<f64> = (1..=8).map(|h| rng.random_range(0.2..1.0) / h as f64).collect();
    let phases: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..len)
        .map(|t| {
            let ts = t as f64 / sr as f64;
            let env = 0.5 * (1.0 - (2.0 * PI * rate * ts).cos());
            let v: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * PI * f0 * (h + 1) as f64 * ts + p).sin())
                .sum();
            0.2 * env * v + 1e-3 * rng.random_range(-1.0..1.0)
        })
        .collect()
}

/// One-pole low-passed white noise.
pub fn toy_noise(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let a = rng.random_range(0.0..0.9);
    let mut y = 0.0;
    (0..len)
        .map(|_| {
            y = a * y + (1.0 - a) * rng.random_range(-1.0..1.0);
            0.3 * y
        })
        .collect()
}

/// Direct impulse followed by an exponentially decaying noise tail whose
/// level sets the DRR.
pub fn toy_rir(rng: &mut impl Rng, sr: u32, tail_gain: f64) -> Vec<f64> {
    let len = (0.3 * sr as f64) as usize;
    let direct = rng.random_range(5..(0.005 * sr as f64) as usize + 6);
    let t60 = rng.random_range(0.15..0.3) * sr as f64;
    let gap = (0.003 * sr as f64) as usize;
    let mut taps = vec![0.0; len];
    taps[direct] = 1.0;
    for (k, tap) in taps.iter_mut().enumerate().skip(direct + gap) {
        let t = (k - direct) as f64;
        *tap = tail_gain * (-6.9 * t / t60).exp() * rng.random_range(-1.0..1.0);
    }
    taps
}

/// Writes `speech/`, `noise/` and `rir/` WAVs plus one manifest per kind
/// under `dir`; returns `(kind, manifest path)` pairs.
pub fn write_toy_corpus(dir: &Path, spec: &ToyCorpusSpec) -> Result<Vec<(CorpusKind, PathBuf)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sr = spec.sample_rate_hz;
    let mut out = Vec::new();
    for (kind, n) in [
        (CorpusKind::Speech, spec.speech),
        (CorpusKind::Noise, spec.noise),
        (CorpusKind::Rir, spec.rir),
    ] {
        let name = match kind {
            CorpusKind::Speech => "speech",
            CorpusKind::Noise => "noise",
            CorpusKind::Rir => "rir",
        };
        let mut entries = Vec::new();
        for i in 0..n {
            let samples = match kind {
                CorpusKind::Speech => toy_speech(&mut rng, (spec.speech_seconds * sr as f64) as usize, sr),
                CorpusKind::Noise => toy_noise(&mut rng, (spec.noise_seconds * sr as f64) as usize),
                CorpusKind::Rir => {
                    // alternate clearly dry and clearly wet rooms
                    let gain = if i % 2 == 0 { 0.02 } else { 0.3 };
                    toy_rir(&mut rng, sr, gain)
                }
            };
            let w = Waveform::new(samples, sr)?;
            let rel = PathBuf::from(format!("{name}/{name}{i:03}.wav"));
            write_wav(&dir.join(&rel), &w)?;
            entries.push(ManifestEntry {
                id: format!("{name}{i:03}"),
                path: rel,
                kind,
                duration_s: w.duration_s(),
            });
        }
        let manifest = CorpusManifest {
            entries,
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join(format!("{name}.jsonl"));
        manifest.save(&path)?;
        out.push((kind, path));
    }
    Ok(out)
}
