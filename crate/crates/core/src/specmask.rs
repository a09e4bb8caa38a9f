//! Spectrogram masks: whole time frames, a top-anchored frequency band, or
//! scattered TF bins. Grids are frame-major, `1` keeps a bin and `0` masks
//! it.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Time,
    Frequency,
    RandomTf,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Time, MaskKind::Frequency, MaskKind::RandomTf];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectroMask {
    kind: MaskKind,
    frames: usize,
    bins: usize,
    grid: Vec<u8>,
}

/// `floor(fraction * n)`, tolerant of products that land a hair under an
/// integer (0.29 * 100 = 28.999...).
fn masked_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("mask fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

impl SpectroMask {
    fn ones(kind: MaskKind, frames: usize, bins: usize) -> Self {
        Self {
            kind,
            frames,
            bins,
            grid: vec![1; frames * bins],
        }
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn is_kept(&self, frame: usize, bin: usize) -> bool {
        self.grid[frame * self.bins + bin] == 1
    }

    pub fn masked_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 0).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.grid.is_empty() {
            return 0.0;
        }
        self.masked_count() as f64 / self.grid.len() as f64
    }

    /// Elementwise product with `m`.
    pub fn apply(&self, m: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
        if m.frames() != self.frames || m.bins() != self.bins {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs spectrogram {}x{}",
                self.frames,
                self.bins,
                m.frames(),
                m.bins()
            )));
        }
        let values = m
            .values()
            .iter()
            .zip(&self.grid)
            .map(|(v, &keep)| if keep == 1 { *v } else { 0.0 })
            .collect();
        MagnitudeSpectrogram::new(self.frames, self.bins, values, m.compression())
    }

    /// Run-length form: the value of the first cell and alternating run
    /// lengths over the frame-major grid.
    pub fn to_rle(&self) -> MaskRle {
        let mut runs = Vec::new();
        let mut iter = self.grid.iter();
        let first = iter.next().copied().unwrap_or(1);
        let (mut current, mut len) = (first, 1u32);
        for &v in iter {
            if v == current {
                len += 1;
            } else {
                runs.push(len);
                current = v;
                len = 1;
            }
        }
        if !self.grid.is_empty() {
            runs.push(len);
        }
        MaskRle {
            kind: self.kind,
            frames: self.frames,
            bins: self.bins,
            first,
            runs,
        }
    }

    pub fn from_rle(rle: &MaskRle) -> Result<Self> {
        if rle.first > 1 {
            return Err(Error::Format(format!("mask value {} is not binary", rle.first)));
        }
        let total: u64 = rle.runs.iter().map(|&r| r as u64).sum();
        if total != (rle.frames * rle.bins) as u64 || rle.runs.contains(&0) {
            return Err(Error::Format(format!(
                "runs cover {total} cells of a {}x{} grid",
                rle.frames, rle.bins
            )));
        }
        let mut grid = Vec::with_capacity(rle.frames * rle.bins);
        let mut value = rle.first;
        for &r in &rle.runs {
            grid.extend(std::iter::repeat_n(value, r as usize));
            value ^= 1;
        }
        Ok(Self {
            kind: rle.kind,
            frames: rle.frames,
            bins: rle.bins,
            grid,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRle {
    pub kind: MaskKind,
    pub frames: usize,
    pub bins: usize,
    pub first: u8,
    pub runs: Vec<u32>,
}

/// Zeroes `floor(fraction * frames)` distinct whole frames.
pub fn time_mask<R: Rng + ?Sized>(frames: usize, bins: usize, fraction: f64, rng: &mut R) -> Result<SpectroMask> {
    check_fraction(fraction)?;
    let mut mask = SpectroMask::ones(MaskKind::Time, frames, bins);
    for t in index::sample(rng, frames, masked_count(fraction, frames)) {
        mask.grid[t * bins..(t + 1) * bins].fill(0);
    }
    Ok(mask)
}

/// Zeroes the top `k` bins of every frame, `k` uniform in
/// `[1, floor(max_fraction * bins)]`; `k = 0` when that bound is zero.
pub fn freq_mask<R: Rng + ?Sized>(frames: usize, bins: usize, max_fraction: f64, rng: &mut R) -> Result<SpectroMask> {
    check_fraction(max_fraction)?;
    let mut mask = SpectroMask::ones(MaskKind::Frequency, frames, bins);
    let k_max = masked_count(max_fraction, bins);
    let k = if k_max == 0 { 0 } else { rng.random_range(1..=k_max) };
    for row in mask.grid.chunks_mut(bins.max(1)) {
        row[bins - k..].fill(0);
    }
    Ok(mask)
}

/// Zeroes `floor(fraction * frames * bins)` bins drawn without replacement.
pub fn random_tf_mask<R: Rng + ?Sized>(frames: usize, bins: usize, fraction: f64, rng: &mut R) -> Result<SpectroMask> {
    check_fraction(fraction)?;
    let total = frames * bins;
    let mut mask = SpectroMask::ones(MaskKind::RandomTf, frames, bins);
    for i in index::sample(rng, total, masked_count(fraction, total)) {
        mask.grid[i] = 0;
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Selection probabilities for time, frequency and random-TF masks.
    pub probabilities: [f64; 3],
    pub time_fraction: f64,
    pub freq_max_fraction: f64,
    pub tf_fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            probabilities: [0.1, 0.1, 0.8],
            time_fraction: 0.2,
            freq_max_fraction: 0.5,
            tf_fraction: 0.75,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "mask probabilities {:?} must lie in [0, 1]",
                self.probabilities
            )));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask probabilities sum to {sum}, not 1")));
        }
        for f in [self.time_fraction, self.freq_max_fraction, self.tf_fraction] {
            check_fraction(f)?;
        }
        Ok(())
    }

    pub fn sample_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> MaskKind {
        let u: f64 = rng.random();
        let [p_time, p_freq, _] = self.probabilities;
        if u < p_time {
            MaskKind::Time
        } else if u < p_time + p_freq {
            MaskKind::Frequency
        } else {
            MaskKind::RandomTf
        }
    }

    pub fn build<R: Rng + ?Sized>(
        &self,
        kind: MaskKind,
        frames: usize,
        bins: usize,
        rng: &mut R,
    ) -> Result<SpectroMask> {
        match kind {
            MaskKind::Time => time_mask(frames, bins, self.time_fraction, rng),
            MaskKind::Frequency => freq_mask(frames, bins, self.freq_max_fraction, rng),
            MaskKind::RandomTf => random_tf_mask(frames, bins, self.tf_fraction, rng),
        }
    }
}

/// Draws one mask species for the clip and applies it.
pub fn choose_and_apply<R: Rng + ?Sized>(
    m: &MagnitudeSpectrogram,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<(MagnitudeSpectrogram, SpectroMask)> {
    cfg.validate()?;
    let kind = cfg.sample_kind(rng);
    let mask = cfg.build(kind, m.frames(), m.bins(), rng)?;
    Ok((mask.apply(m)?, mask))
}
