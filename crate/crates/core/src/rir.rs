//! Room impulse response analysis and surgery.
//!
//! The direct path is the largest-magnitude tap of a loaded response.
//! Responses derived by [`attenuate_direct_and_early`] or [`decay_late`]
//! keep the direct index of their source even when the attenuated peak is no
//! longer the maximum, so DRRs of the source and derived responses are
//! measured over the same direct window.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Half-width of the direct-path window used for DRR.
pub const DIRECT_WINDOW_MS: f64 = 2.5;
/// Extent of early reflections after the direct path.
pub const EARLY_REFLECTIONS_MS: f64 = 50.0;
pub const DEFAULT_ATTENUATION_DB: f64 = 15.0;

/// Responses at most this long are convolved directly instead of via FFT.
const DIRECT_CONVOLUTION_MAX_TAPS: usize = 64;

pub fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * sample_rate_hz as f64 / 1000.0).round() as usize
}

pub fn direct_window_samples(sample_rate_hz: u32) -> usize {
    ms_to_samples(DIRECT_WINDOW_MS, sample_rate_hz).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    taps: Vec<f64>,
    sample_rate_hz: u32,
    direct_index: usize,
}

impl Rir {
    pub fn new(taps: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("impulse response has non-finite taps"));
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::ZeroRir);
        }
        // first maximum wins on ties
        let direct_index = taps
            .iter()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, t)| if t.abs() > best.1 { (i, t.abs()) } else { best },
            )
            .0;
        Ok(Self {
            taps,
            sample_rate_hz,
            direct_index,
        })
    }

    pub fn from_waveform(w: &Waveform) -> Result<Self> {
        Self::new(w.samples().to_vec(), w.sample_rate_hz())
    }

    /// A single unit tap: the identity filter.
    pub fn impulse(sample_rate_hz: u32) -> Self {
        Self {
            taps: vec![1.0],
            sample_rate_hz,
            direct_index: 0,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn direct_index(&self) -> usize {
        self.direct_index
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.derive(self.taps.iter().map(|t| t * gain).collect())
    }

    fn derive(&self, taps: Vec<f64>) -> Self {
        Self {
            taps,
            sample_rate_hz: self.sample_rate_hz,
            direct_index: self.direct_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrReport {
    pub direct_power: f64,
    pub reverberant_power: f64,
    /// `+inf` when there is no reverberant energy.
    pub drr_db: f64,
}

/// Direct-to-reverberant ratio with a direct window of
/// `direct_index ± direct_window_samples`.
pub fn compute_drr(r: &Rir, direct_window_samples: usize) -> Result<DrrReport> {
    if direct_window_samples == 0 {
        return Err(Error::invalid("direct window must be at least one sample"));
    }
    let lo = r.direct_index.saturating_sub(direct_window_samples);
    let hi = (r.direct_index + direct_window_samples).min(r.taps.len() - 1);
    let mut direct_power = 0.0;
    let mut reverberant_power = 0.0;
    for (i, t) in r.taps.iter().enumerate() {
        if (lo..=hi).contains(&i) {
            direct_power += t * t;
        } else {
            reverberant_power += t * t;
        }
    }
    if direct_power + reverberant_power == 0.0 {
        return Err(Error::ZeroRir);
    }
    let drr_db = if reverberant_power > 0.0 {
        10.0 * (direct_power / reverberant_power).log10()
    } else {
        f64::INFINITY
    };
    Ok(DrrReport {
        direct_power,
        reverberant_power,
        drr_db,
    })
}

/// DRR using the default ±2.5 ms direct window.
pub fn drr(r: &Rir) -> Result<DrrReport> {
    compute_drr(r, direct_window_samples(r.sample_rate_hz))
}

/// Scales the direct path and the early reflections that follow it by
/// `-attenuation_db`. The scaled span starts at the direct window onset and
/// ends `early_ms` after the direct peak, clamped to the response length.
pub fn attenuate_direct_and_early(r: &Rir, early_ms: f64, attenuation_db: f64) -> Result<Rir> {
    if !(attenuation_db >= 0.0) || !attenuation_db.is_finite() {
        return Err(Error::invalid(format!(
            "attenuation must be finite and >= 0 dB, got {attenuation_db}"
        )));
    }
    if !(early_ms >= 0.0) {
        return Err(Error::invalid("early window must be non-negative"));
    }
    let gain = 10f64.powf(-attenuation_db / 20.0);
    let onset = r.direct_index.saturating_sub(direct_window_samples(r.sample_rate_hz));
    let end = (r.direct_index + ms_to_samples(early_ms, r.sample_rate_hz)).min(r.taps.len() - 1);
    let mut taps = r.taps.clone();
    for t in &mut taps[onset..=end] {
        *t *= gain;
    }
    Ok(r.derive(taps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub t0_samples: usize,
    pub t1_samples: usize,
    pub alpha: f64,
}

impl DecayParams {
    /// Ramp from 50 ms after the direct path to halfway through the
    /// remaining tail. Short responses pull `t0` in toward the direct window.
    pub fn default_for(r: &Rir, alpha: f64) -> Result<Self> {
        let len = r.taps.len();
        let direct_end = r.direct_index + direct_window_samples(r.sample_rate_hz) + 1;
        let t0 = (r.direct_index + ms_to_samples(EARLY_REFLECTIONS_MS, r.sample_rate_hz))
            .min(len.saturating_sub(2))
            .max(direct_end);
        if t0 + 2 > len {
            return Err(Error::invalid(format!(
                "impulse response of {len} taps is too short to decay after the direct path"
            )));
        }
        let t1 = t0 + (len - t0) / 2;
        let params = Self {
            t0_samples: t0,
            t1_samples: t1,
            alpha,
        };
        params.check(r)?;
        Ok(params)
    }

    fn check(&self, r: &Rir) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("decay alpha {} outside [0, 1]", self.alpha)));
        }
        if self.t0_samples == self.t1_samples {
            return Err(Error::DegenerateDecay(self.t0_samples));
        }
        if self.t0_samples > self.t1_samples || self.t1_samples > r.taps.len() {
            return Err(Error::invalid(format!(
                "decay ramp [{}, {}] invalid for {} taps",
                self.t0_samples,
                self.t1_samples,
                r.taps.len()
            )));
        }
        let direct_end = r.direct_index + direct_window_samples(r.sample_rate_hz);
        if self.t0_samples <= direct_end {
            return Err(Error::invalid(format!(
                "decay start {} overlaps the direct window ending at {direct_end}",
                self.t0_samples
            )));
        }
        Ok(())
    }
}

/// Raised-cosine gain: 1 before `t0`, falling to `alpha` at `t1`, `alpha`
/// after.
pub fn decay_gain(t: usize, p: &DecayParams) -> f64 {
    if t < p.t0_samples {
        1.0
    } else if t > p.t1_samples {
        p.alpha
    } else {
        let phase = PI * (t - p.t0_samples) as f64 / (p.t1_samples - p.t0_samples) as f64;
        (1.0 + p.alpha) / 2.0 + (1.0 - p.alpha) / 2.0 * phase.cos()
    }
}

pub fn decay_late(r: &Rir, p: &DecayParams) -> Result<Rir> {
    p.check(r)?;
    Ok(r.derive(r.taps.iter().enumerate().map(|(t, x)| x * decay_gain(t, p)).collect()))
}

/// Convolves `s` with `r`, advanced by the direct index so the direct path
/// lands at zero delay, and truncated to the input length.
pub fn apply_rir(s: &Waveform, r: &Rir) -> Result<Waveform> {
    if s.sample_rate_hz() != r.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            expected: s.sample_rate_hz(),
            got: r.sample_rate_hz,
        });
    }
    let len = s.len();
    let full = if r.taps.len() <= DIRECT_CONVOLUTION_MAX_TAPS {
        convolve_direct(s.samples(), &r.taps, r.direct_index + len)
    } else {
        convolve_fft(s.samples(), &r.taps)
    };
    let mut out: Vec<f64> = full.into_iter().skip(r.direct_index).take(len).collect();
    out.resize(len, 0.0);
    s.with_samples(out)
}

fn convolve_direct(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len.min(x.len() + h.len() - 1)];
    for (k, hk) in h.iter().enumerate() {
        if *hk == 0.0 {
            continue;
        }
        for (n, xn) in x.iter().enumerate() {
            if let Some(slot) = y.get_mut(n + k) {
                *slot += hk * xn;
            }
        }
    }
    y
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |v: &[f64]| {
        let mut buf: Vec<Complex64> = v.iter().map(|&re| Complex64::new(re, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        buf
    };
    let mut a = lift(x);
    let mut b = lift(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.truncate(out_len);
    a.into_iter().map(|z| z.re / n as f64).collect()
}
