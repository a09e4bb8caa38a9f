//! Reference-based quality measures.

use serde::{Deserialize, Serialize};

use crate::dsp::{energy, Waveform};
use crate::error::{Error, Result};

/// Segmental SNR framing and clamping. Frames whose reference level falls
/// below `silence_dbfs` are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsnrConfig {
    pub frame_len_samples: usize,
    pub hop: usize,
    pub floor_db: f64,
    pub ceil_db: f64,
    pub silence_dbfs: f64,
}

impl Default for SsnrConfig {
    /// 32 ms frames, 16 ms hop at 16 kHz, clamped to [-10, 35] dB.
    fn default() -> Self {
        Self {
            frame_len_samples: 512,
            hop: 256,
            floor_db: -10.0,
            ceil_db: 35.0,
            silence_dbfs: -40.0,
        }
    }
}

impl SsnrConfig {
    pub fn for_rate(sample_rate_hz: u32) -> Self {
        let frame = (0.032 * sample_rate_hz as f64).round() as usize;
        Self {
            frame_len_samples: frame,
            hop: frame / 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len_samples == 0 || self.hop == 0 {
            return Err(Error::invalid("ssnr frame and hop must be positive"));
        }
        if !(self.floor_db < self.ceil_db) {
            return Err(Error::invalid(format!(
                "ssnr floor {} must be below ceiling {}",
                self.floor_db, self.ceil_db
            )));
        }
        Ok(())
    }
}

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    reference.check_rate(estimate)?;
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

/// Mean of clamped per-frame SNRs over active reference frames.
pub fn ssnr(reference: &Waveform, estimate: &Waveform, cfg: &SsnrConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(reference, estimate)?;
    let (r, e) = (reference.samples(), estimate.samples());
    let n = cfg.frame_len_samples;
    if r.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: r.len(),
        });
    }
    let silence_energy = n as f64 * 10f64.powf(cfg.silence_dbfs / 10.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for start in (0..=r.len() - n).step_by(cfg.hop) {
        let rf = &r[start..start + n];
        let ref_energy = energy(rf);
        if ref_energy < silence_energy {
            continue;
        }
        let err_energy: f64 = rf
            .iter()
            .zip(&e[start..start + n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let frame_db = if err_energy == 0.0 {
            cfg.ceil_db
        } else {
            (10.0 * (ref_energy / err_energy).log10()).clamp(cfg.floor_db, cfg.ceil_db)
        };
        total += frame_db;
        count += 1;
    }
    if count == 0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(total / count as f64)
}

/// Whole-signal SNR; `+inf` for a perfect estimate.
pub fn snr_global(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let err_energy: f64 = reference
        .samples()
        .iter()
        .zip(estimate.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(if err_energy == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (ref_energy / err_energy).log10()
    })
}
