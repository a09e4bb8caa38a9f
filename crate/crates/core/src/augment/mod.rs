//! Waveform-level distortions and their composition.
//!
//! Every stage is a pure function of its inputs. [`plan`] samples an ordered
//! stage list from a seed and replays it against corpora.

pub mod plan;

use serde::{Deserialize, Serialize};

use crate::dsp::{energy, fit_length, Waveform};
use crate::error::{Error, Result};
use crate::rir::{apply_rir, attenuate_direct_and_early, decay_late, drr, DecayParams, Rir};

pub use plan::{apply_plan, sample_plan, AugmentConfig, AugmentationPlan, AugmentedClip, Corpora, Stage};

/// μ-law compander constant of the codec simulator.
pub const MU_LAW: f64 = 255.0;
pub const CODEC_BITS_MIN: u32 = 4;
pub const CODEC_BITS_MAX: u32 = 12;

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn scale_loudness(s: &Waveform, target_dbfs: f64) -> Result<Waveform> {
    if !target_dbfs.is_finite() {
        return Err(Error::invalid(format!("loudness target {target_dbfs} dBFS")));
    }
    let current = s.rms_dbfs();
    if !current.is_finite() {
        return Err(Error::ZeroEnergy);
    }
    Ok(s.scaled(10f64.powf((target_dbfs - current) / 20.0)))
}

/// Gain that puts `scaled_energy * gain^2` at `ratio_db` below `ref_energy`.
fn ratio_gain(ref_energy: f64, scaled_energy: f64, ratio_db: f64) -> f64 {
    if ratio_db == f64::INFINITY {
        return 0.0;
    }
    (ref_energy / (scaled_energy * db_to_power(ratio_db))).sqrt()
}

/// `s + g * n` with `g` chosen so the speech-to-noise energy ratio is
/// `snr_db`. Noise is taken from its start and looped when shorter than
/// `s`; callers wanting a random excerpt crop beforehand.
pub fn add_noise(s: &Waveform, n: &Waveform, snr_db: f64) -> Result<Waveform> {
    s.check_rate(n)?;
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("snr {snr_db} dB")));
    }
    let noise = fit_length(n.samples(), s.len(), 0);
    let noise_energy = energy(&noise);
    if noise_energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let g = ratio_gain(s.energy(), noise_energy, snr_db);
    if g == 0.0 {
        return Ok(s.clone());
    }
    s.with_samples(s.samples().iter().zip(&noise).map(|(x, v)| x + g * v).collect())
}

pub fn clip(s: &Waveform, gamma: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("clipping level {gamma} outside [0, 1]")));
    }
    s.with_samples(s.samples().iter().map(|x| x.min(gamma).max(-gamma)).collect())
}

fn mu_compress(x: f64) -> f64 {
    x.signum() * (MU_LAW * x.abs()).ln_1p() / MU_LAW.ln_1p()
}

fn mu_expand(y: f64) -> f64 {
    y.signum() * ((y.abs() * MU_LAW.ln_1p()).exp_m1()) / MU_LAW
}

/// Largest companded level index for `bits`; levels span `-max..=max`.
pub fn codec_max_level(bits: u32) -> i64 {
    (1i64 << (bits - 1)) - 1
}

/// μ-law compand, quantize to a mid-tread grid of `2^bits - 1` levels and
/// expand. Input saturates at full scale.
pub fn codec_simulate(s: &Waveform, bits: u32) -> Result<Waveform> {
    if !(CODEC_BITS_MIN..=CODEC_BITS_MAX).contains(&bits) {
        return Err(Error::invalid(format!(
            "codec bits {bits} outside [{CODEC_BITS_MIN}, {CODEC_BITS_MAX}]"
        )));
    }
    let levels = codec_max_level(bits) as f64;
    s.with_samples(
        s.samples()
            .iter()
            .map(|&x| {
                let y = mu_compress(x.clamp(-1.0, 1.0));
                mu_expand((y * levels).round() / levels)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub interferer_id: String,
    /// Start sample of the interferer excerpt (looped if short).
    pub interferer_offset: usize,
    pub rir_id: String,
    pub drr_threshold_db: f64,
    /// Reverberant target to scaled reverberant interferer energy ratio.
    pub sir_db: f64,
    pub decay: DecayParams,
    pub attenuation_db: f64,
    pub early_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureBranch {
    /// DRR at or above threshold: interferer gets the attenuated response.
    AttenuateInterferer,
    /// DRR below threshold: target gets the late-decayed response.
    DecayTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixed: Waveform,
    /// Reverberant target speaker, the regression reference.
    pub target: Waveform,
    pub branch: MixtureBranch,
    pub source_drr_db: f64,
    pub target_rir: Rir,
    pub interferer_rir: Rir,
    pub target_drr_db: f64,
    pub interferer_drr_db: f64,
    pub interferer_gain: f64,
}

/// Two-speaker distance-based mixture. Both speakers share the room of `r0`;
/// the response surgery guarantees the target keeps the higher DRR, i.e. it
/// sounds closer to the microphone.
pub fn make_mixture(s1: &Waveform, s2: &Waveform, r0: &Rir, p: &MixtureParams) -> Result<Mixture> {
    s1.check_rate(s2)?;
    if s1.len() != s2.len() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} samples, interferer {}",
            s1.len(),
            s2.len()
        )));
    }
    if s1.energy() == 0.0 || s2.energy() == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let source_drr_db = drr(r0)?.drr_db;
    let (branch, target_rir, interferer_rir) = if source_drr_db >= p.drr_threshold_db {
        let far = attenuate_direct_and_early(r0, p.early_ms, p.attenuation_db)?;
        (MixtureBranch::AttenuateInterferer, r0.clone(), far)
    } else {
        let near = decay_late(r0, &p.decay)?;
        (MixtureBranch::DecayTarget, near, r0.clone())
    };
    let target = apply_rir(s1, &target_rir)?;
    let interferer = apply_rir(s2, &interferer_rir)?;
    let (e_t, e_i) = (target.energy(), interferer.energy());
    if e_t == 0.0 || e_i == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let g = ratio_gain(e_t, e_i, p.sir_db);
    // mixing row [1, g]
    let mixed = target.with_samples(
        target
            .samples()
            .iter()
            .zip(interferer.samples())
            .map(|(t, i)| t + g * i)
            .collect(),
    )?;
    Ok(Mixture {
        mixed,
        target,
        branch,
        source_drr_db,
        target_drr_db: drr(&target_rir)?.drr_db,
        interferer_drr_db: drr(&interferer_rir)?.drr_db,
        target_rir,
        interferer_rir,
        interferer_gain: g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::snr_global;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const SR: u32 = 16_000;

    fn white(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), SR).unwrap()
    }

    fn full_scale_sine(len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|i| (2.0 * PI * 440.0 * i as f64 / SR as f64).sin())
                .collect(),
            SR,
        )
        .unwrap()
    }

    fn energy_ratio_db(a: &[f64], b: &[f64]) -> f64 {
        10.0 * (energy(a) / energy(b)).log10()
    }

    #[test]
    fn loudness_identity_on_full_scale_sine() {
        // 16000 samples of 440 Hz cover whole periods
        let s = full_scale_sine(16_000);
        assert!((s.rms_dbfs() + 3.0103).abs() < 1e-3);
        let out = scale_loudness(&s, s.rms_dbfs()).unwrap();
        assert!(out.samples().iter().zip(s.samples()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn loudness_hits_target_and_is_idempotent() {
        let s = white(8000, 1);
        let a = scale_loudness(&s, -20.0).unwrap();
        assert!((a.rms_dbfs() + 20.0).abs() < 0.01);
        let b = scale_loudness(&scale_loudness(&s, -30.0).unwrap(), -30.0).unwrap();
        let c = scale_loudness(&s, -30.0).unwrap();
        assert!(b.samples().iter().zip(c.samples()).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn loudness_rejects_silence() {
        let s = Waveform::zeros(100, SR).unwrap();
        assert!(matches!(scale_loudness(&s, -20.0), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn add_noise_gain_and_snr() {
        let s = white(16_000, 2);
        let n = white(16_000, 3).scaled(s.rms() / white(16_000, 3).rms());
        // equal energies: the 0 dB gain is 1
        let out = add_noise(&s, &n, 0.0).unwrap();
        let implied: Vec<f64> = out.samples().iter().zip(s.samples()).map(|(o, x)| o - x).collect();
        let g = (energy(&implied) / n.energy()).sqrt();
        assert!((g - 1.0).abs() < 1e-6);

        let out = add_noise(&s, &white(16_000, 4), -10.0).unwrap();
        let added: Vec<f64> = out.samples().iter().zip(s.samples()).map(|(o, x)| o - x).collect();
        assert!((energy_ratio_db(s.samples(), &added) + 10.0).abs() < 0.01);
    }

    #[test]
    fn add_noise_infinite_snr_is_identity() {
        let s = white(1000, 5);
        assert_eq!(add_noise(&s, &white(1000, 6), f64::INFINITY).unwrap(), s);
        let high = add_noise(&s, &white(1000, 6), 200.0).unwrap();
        assert!(snr_global(&s, &high).unwrap() > 190.0);
    }

    #[test]
    fn add_noise_loops_short_noise() {
        let s = white(1000, 7);
        let n = white(300, 8);
        let out = add_noise(&s, &n, 5.0).unwrap();
        let added: Vec<f64> = out.samples().iter().zip(s.samples()).map(|(o, x)| o - x).collect();
        assert!((energy_ratio_db(s.samples(), &added) - 5.0).abs() < 0.01);
        assert!((added[0] - added[300]).abs() < 1e-12);
    }

    #[test]
    fn add_noise_rejects_silent_noise() {
        let s = white(100, 9);
        assert!(matches!(
            add_noise(&s, &Waveform::zeros(100, SR).unwrap(), 0.0),
            Err(Error::ZeroEnergy)
        ));
    }

    #[test]
    fn clip_semantics() {
        let s = Waveform::new(vec![0.9, -0.9, 0.3, -0.2], SR).unwrap();
        let c = clip(&s, 0.5).unwrap();
        assert_eq!(c.samples(), &[0.5, -0.5, 0.3, -0.2]);
        assert_eq!(clip(&c, 0.5).unwrap(), c);
        assert_eq!(clip(&s, 1.0).unwrap(), s);
        assert!(clip(&s, 1.5).is_err());
    }

    #[test]
    fn codec_fixes_zero_and_bounds_levels() {
        let s = Waveform::new(vec![0.0, 0.5, -0.25], SR).unwrap();
        assert_eq!(codec_simulate(&s, 8).unwrap().samples()[0], 0.0);
        let w = white(20_000, 10);
        for bits in [4, 6, 8] {
            let out = codec_simulate(&w, bits).unwrap();
            let mut levels: Vec<i64> = out
                .samples()
                .iter()
                .map(|&x| (mu_compress(x) * codec_max_level(bits) as f64).round() as i64)
                .collect();
            levels.sort_unstable();
            levels.dedup();
            assert!(levels.len() <= 1 << bits);
        }
        assert!(codec_simulate(&w, 3).is_err());
        assert!(codec_simulate(&w, 13).is_err());
    }

    #[test]
    fn codec_error_within_one_step() {
        let w = white(20_000, 11).scaled(2.0);
        for bits in CODEC_BITS_MIN..=CODEC_BITS_MAX {
            let m = codec_max_level(bits) as f64;
            let top_step = mu_expand(1.0) - mu_expand((m - 1.0) / m);
            let out = codec_simulate(&w, bits).unwrap();
            for (a, b) in out.samples().iter().zip(w.samples()) {
                assert!((a - b).abs() <= top_step + 1e-12);
            }
        }
    }

    #[test]
    fn codec_twelve_bit_sine_snr() {
        let s = full_scale_sine(16_000);
        let out = codec_simulate(&s, 12).unwrap();
        assert!(snr_global(&s, &out).unwrap() > 35.0);
        assert_ne!(out, s);
    }
}
