//! TF-mask enhancement: mask application with the noisy phase, the ideal
//! ratio mask oracle, and encoder-feature concatenation for a mask head.

use crate::dsp::{istft, stft, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::mae::PatchGrid;

pub const DEFAULT_IRM_EPS: f64 = 1e-8;

/// Real gain per TF bin, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl TfMask {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} mask values for {frames}x{bins}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { frames, bins, values })
    }

    /// Bounds raw network outputs with a logistic sigmoid.
    pub fn from_logits(frames: usize, bins: usize, logits: &[f64]) -> Result<Self> {
        Self::new(frames, bins, logits.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(frames, bins, vec![value; frames * bins])
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
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scales each noisy bin by the mask; the noisy phase carries over.
pub fn apply_tf_mask(noisy: &ComplexSpectrogram, mask: &TfMask) -> Result<ComplexSpectrogram> {
    if noisy.frames() != mask.frames || noisy.bins() != mask.bins {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs spectrogram {}x{}",
            mask.frames,
            mask.bins,
            noisy.frames(),
            noisy.bins()
        )));
    }
    let mut out = noisy.clone();
    for (z, &g) in out.values_mut().iter_mut().zip(&mask.values) {
        *z *= g;
    }
    Ok(out)
}

/// `min(1, clean / (noisy + eps))` per bin.
pub fn oracle_irm(clean: &MagnitudeSpectrogram, noisy: &MagnitudeSpectrogram, eps: f64) -> Result<TfMask> {
    clean.same_shape(noisy)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let values = clean
        .values()
        .iter()
        .zip(noisy.values())
        .map(|(c, n)| (c / (n + eps)).clamp(0.0, 1.0))
        .collect();
    TfMask::new(clean.frames(), clean.bins(), values)
}

/// STFT, mask, inverse STFT with the noisy phase.
pub fn enhance_waveform(noisy: &Waveform, mask: &TfMask, cfg: &StftConfig) -> Result<Waveform> {
    istft(&apply_tf_mask(&stft(noisy, cfg)?, mask)?)
}

/// Oracle enhancement of `noisy` given its clean reference.
pub fn oracle_enhance(clean: &Waveform, noisy: &Waveform, cfg: &StftConfig) -> Result<Waveform> {
    let noisy_spec = stft(noisy, cfg)?;
    let clean_mag = crate::dsp::magnitude(&stft(clean, cfg)?);
    let mask = oracle_irm(&clean_mag, &crate::dsp::magnitude(&noisy_spec), DEFAULT_IRM_EPS)?;
    istft(&apply_tf_mask(&noisy_spec, &mask)?)
}

/// Encoder output for each patch of a [`PatchGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    embed_dim: usize,
    patch_frames: usize,
    covered_frames: usize,
    origins: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl PatchEmbeddings {
    pub fn new(grid: &PatchGrid, embed_dim: usize, values: Vec<f64>) -> Result<Self> {
        if embed_dim == 0 || values.len() != grid.n_patches() * embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} embedding values for {} patches of width {embed_dim}",
                values.len(),
                grid.n_patches()
            )));
        }
        Ok(Self {
            embed_dim,
            patch_frames: grid.patch_frames(),
            covered_frames: grid.extent().0,
            origins: grid.origins().to_vec(),
            values,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// One embedding per covered frame: the mean over the patches spanning
    /// it.
    fn per_frame(&self) -> Result<Vec<f64>> {
        let d = self.embed_dim;
        let mut sums = vec![0.0; self.covered_frames * d];
        let mut counts = vec![0usize; self.covered_frames];
        for (i, &(f0, _)) in self.origins.iter().enumerate() {
            let e = &self.values[i * d..(i + 1) * d];
            for f in f0..(f0 + self.patch_frames).min(self.covered_frames) {
                counts[f] += 1;
                for (s, v) in sums[f * d..(f + 1) * d].iter_mut().zip(e) {
                    *s += v;
                }
            }
        }
        for (f, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::ShapeMismatch(format!("frame {f} has no patch embedding")));
            }
            for s in &mut sums[f * d..(f + 1) * d] {
                *s /= c as f64;
            }
        }
        Ok(sums)
    }
}

/// Frame-major feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub frames: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.width..(frame + 1) * self.width]
    }
}

/// Per-frame `[embedding || noisy magnitude row]`. Frames past the patch
/// tiling (the cropped remainder, less than one patch wide) reuse the last
/// covered frame's embedding.
pub fn embed_concat(embeddings: &PatchEmbeddings, noisy_mag: &MagnitudeSpectrogram) -> Result<FeatureGrid> {
    let frames = noisy_mag.frames();
    let covered = embeddings.covered_frames;
    if covered == 0 || covered > frames || frames - covered >= embeddings.patch_frames {
        return Err(Error::ShapeMismatch(format!(
            "embeddings cover {covered} frames, spectrogram has {frames}"
        )));
    }
    let d = embeddings.embed_dim;
    let per_frame = embeddings.per_frame()?;
    let width = d + noisy_mag.bins();
    let mut values = Vec::with_capacity(frames * width);
    for t in 0..frames {
        let src = t.min(covered - 1);
        values.extend_from_slice(&per_frame[src * d..(src + 1) * d]);
        values.extend_from_slice(noisy_mag.frame(t));
    }
    Ok(FeatureGrid { frames, width, values })
}
