//! Waveform and short-time Fourier transform primitives.
//!
//! Framing: a signal of `L` samples analysed with window `N` and hop `H`
//! yields `1 + ceil((L - N) / H)` frames. The tail is zero-padded to
//! complete the last frame, so when `(L - N)` is a multiple of `H` this is
//! exactly `1 + (L - N) / H`. Analysis applies the window with no scaling;
//! synthesis divides the overlap-added output by the overlap-added squared
//! window, which makes `istft(stft(x)) == x` wherever that sum is nonzero.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Mono sample buffer. Amplitudes outside `[-1, 1]` are allowed in
/// intermediate results; only WAV serialization clamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    /// RMS level relative to a full-scale amplitude of 1.0 (a full-scale
    /// sine reads -3.01 dBFS). Silent buffers read `-inf`.
    pub fn rms_dbfs(&self) -> f64 {
        20.0 * self.rms().log10()
    }

    /// Same rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub(crate) fn check_rate(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate_hz,
                got: other.sample_rate_hz,
            });
        }
        Ok(())
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_len_samples: usize,
    pub hop_samples: usize,
    #[serde(default)]
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl StftConfig {
    pub fn new(window_len_samples: usize, hop_samples: usize) -> Result<Self> {
        let cfg = Self {
            window_len_samples,
            hop_samples,
            window_kind: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32 ms window, 8 ms hop at 16 kHz.
    pub fn canonical() -> Self {
        Self {
            window_len_samples: 512,
            hop_samples: 128,
            window_kind: WindowKind::Hann,
        }
    }

    pub fn from_ms(sample_rate_hz: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate_hz as f64 / 1000.0).round() as usize;
        Self::new(to_samples(window_ms), to_samples(hop_ms))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len_samples < 2 || self.hop_samples == 0 {
            return Err(Error::invalid("window length must be >= 2 and hop >= 1"));
        }
        if self.hop_samples > self.window_len_samples {
            return Err(Error::invalid(format!(
                "hop {} exceeds window length {}",
                self.hop_samples, self.window_len_samples
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window_len_samples / 2 + 1
    }

    /// Periodic window of `window_len_samples` taps.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len_samples as f64;
        match self.window_kind {
            WindowKind::Hann => (0..self.window_len_samples)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
                .collect(),
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len_samples {
            return 0;
        }
        1 + (len - self.window_len_samples).div_ceil(self.hop_samples)
    }

    /// Overlap-added squared window over one hop period, i.e. the synthesis
    /// normalizer in steady state.
    pub fn squared_window_ola(&self) -> Vec<f64> {
        let w = self.window();
        let mut acc = vec![0.0; self.hop_samples];
        for (i, wi) in w.iter().enumerate() {
            acc[i % self.hop_samples] += wi * wi;
        }
        acc
    }

    /// True when the overlap-added squared window is constant to 1e-6
    /// (relative) across a hop period.
    pub fn is_cola(&self) -> bool {
        let acc = self.squared_window_ola();
        let max = acc.iter().cloned().fold(f64::MIN, f64::max);
        let min = acc.iter().cloned().fold(f64::MAX, f64::min);
        max > 0.0 && (max - min) <= 1e-6 * max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    bins: usize,
    values: Vec<Complex64>,
    config: StftConfig,
    signal_len: usize,
    sample_rate_hz: u32,
}

impl ComplexSpectrogram {
    /// Builds a spectrogram from raw values laid out frame-major.
    pub fn from_values(
        frames: usize,
        values: Vec<Complex64>,
        config: StftConfig,
        signal_len: usize,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        config.validate()?;
        let bins = config.bins();
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {frames}x{bins} grid",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            values,
            config,
            signal_len,
            sample_rate_hz,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    #[cfg(test)]
    pub(crate) fn with_values(&self, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    #[default]
    Linear,
    Log1p,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
    compression: Compression,
}

impl MagnitudeSpectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>, compression: Compression) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {frames}x{bins} grid",
                values.len()
            )));
        }
        if compression == Compression::Linear && values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("linear magnitudes must be non-negative"));
        }
        Ok(Self {
            frames,
            bins,
            values,
            compression,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn same_shape(&self, other: &MagnitudeSpectrogram) -> Result<()> {
        if self.frames != other.frames || self.bins != other.bins {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.frames, self.bins, other.frames, other.bins
            )));
        }
        Ok(())
    }

    /// Applies `compression` if it is log1p; linear is a no-op.
    pub fn compressed(self, compression: Compression) -> Result<Self> {
        match compression {
            Compression::Linear => Ok(self),
            Compression::Log1p => log1p_compress(&self),
        }
    }
}

/// Reusable FFT plans for one [`StftConfig`].
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.window_len_samples),
            inverse: planner.plan_fft_inverse(config.window_len_samples),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn forward(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        let n = self.config.window_len_samples;
        let hop = self.config.hop_samples;
        let x = w.samples();
        if x.len() < n {
            return Err(Error::InsufficientSamples {
                needed: n,
                got: x.len(),
            });
        }
        let frames = self.config.frame_count(x.len());
        let bins = self.config.bins();
        let mut values = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = x.get(start + i).copied().unwrap_or(0.0);
                *slot = Complex64::new(s * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            values.extend_from_slice(&buf[..bins]);
        }
        ComplexSpectrogram::from_values(frames, values, self.config, x.len(), w.sample_rate_hz())
    }

    pub fn inverse(&self, spec: &ComplexSpectrogram) -> Result<Waveform> {
        if spec.config != self.config {
            return Err(Error::invalid("spectrogram was produced with a different config"));
        }
        if !self.config.is_cola() {
            return Err(Error::NotCola);
        }
        let n = self.config.window_len_samples;
        let hop = self.config.hop_samples;
        let bins = spec.bins;
        let padded = if spec.frames == 0 {
            0
        } else {
            (spec.frames - 1) * hop + n
        };
        let mut out = vec![0.0; padded.max(spec.signal_len)];
        let mut norm = vec![0.0; out.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for t in 0..spec.frames {
            let row = spec.frame(t);
            buf[..bins].copy_from_slice(row);
            // Hermitian extension; DC and Nyquist imaginary parts are dropped
            // by taking the real part below.
            for k in bins..n {
                buf[k] = row[n - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * hop;
            for i in 0..n {
                out[start + i] += buf[i].re * scale * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, d) in out.iter_mut().zip(&norm) {
            *o = if *d > 1e-10 { *o / d } else { 0.0 };
        }
        out.truncate(spec.signal_len);
        Waveform::new(out, spec.sample_rate_hz)
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(*cfg)?.forward(w)
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    Stft::new(spec.config)?.inverse(spec)
}

pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        frames: spec.frames,
        bins: spec.bins,
        values: spec.values.iter().map(|z| z.norm()).collect(),
        compression: Compression::Linear,
    }
}

pub fn log1p_compress(m: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if m.compression != Compression::Linear {
        return Err(Error::AlreadyCompressed);
    }
    Ok(MagnitudeSpectrogram {
        values: m.values.iter().map(|v| v.ln_1p()).collect(),
        compression: Compression::Log1p,
        ..m.clone()
    })
}

pub fn log1p_expand(m: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if m.compression != Compression::Log1p {
        return Err(Error::NotCompressed);
    }
    Ok(MagnitudeSpectrogram {
        values: m.values.iter().map(|v| v.exp_m1()).collect(),
        compression: Compression::Linear,
        ..m.clone()
    })
}

/// Length of `x` brought to `len`: cropped from `offset`, or tiled
/// (looping from `offset`) when shorter than `len + offset` allows.
pub fn fit_length(x: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    let start = offset % x.len();
    x.iter().cycle().skip(start).take(len).copied().collect()
}

/// Crop from `offset` or zero-pad at the end to exactly `len` samples.
pub fn crop_or_pad(x: &[f64], len: usize, offset: usize) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().skip(offset).take(len).copied().collect();
    out.resize(len, 0.0);
    out
}
