//! Desk-scale masked patch autoencoder.
//!
//! Visible patches go through an affine encoder; masked patches are replaced
//! by a learned mask token in embedding space; an affine decoder maps every
//! embedding back to patch space. The loss is the mean squared error against
//! the target patches over all patches, so visible patches are supervised to
//! drop the injected distortion and masked ones to be filled in.
//!
//! Parameters live in one flat vector, in block order: encoder weights
//! (`embed_dim x patch_dim`, row-major), encoder bias, decoder weights
//! (`patch_dim x embed_dim`), decoder bias, mask token.
//!
//! Checkpoint layout (little-endian): magic `RFCK`, `u32` patch_dim,
//! `u32` embed_dim, then every parameter as `f64` in block order.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use log::debug;
use rand::Rng;

use crate::dsp::{Compression, MagnitudeSpectrogram};
use crate::error::{Error, Result};
use crate::specmask::SpectroMask;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";

/// Non-overlapping tiles of a spectrogram. Each patch covers
/// `patch_frames` frames by `patch_bins` bins and is stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patch_bins: usize,
    patch_frames: usize,
    frames: usize,
    bins: usize,
    compression: Compression,
    origins: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl PatchGrid {
    pub fn patch_bins(&self) -> usize {
        self.patch_bins
    }

    pub fn patch_frames(&self) -> usize {
        self.patch_frames
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_bins * self.patch_frames
    }

    pub fn n_patches(&self) -> usize {
        self.origins.len()
    }

    /// `(frame, bin)` of each patch's first cell.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let p = self.patch_dim();
        &self.values[i * p..(i + 1) * p]
    }

    /// Frames and bins of the tiled (cropped) area.
    pub fn extent(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    fn same_geometry(&self, other: &PatchGrid) -> bool {
        self.patch_bins == other.patch_bins && self.patch_frames == other.patch_frames && self.origins == other.origins
    }

    /// Subset of patches, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<PatchGrid> {
        let p = self.patch_dim();
        let mut origins = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            if i >= self.n_patches() {
                return Err(Error::invalid(format!("patch {i} of {}", self.n_patches())));
            }
            origins.push(self.origins[i]);
            values.extend_from_slice(self.patch(i));
        }
        Ok(PatchGrid {
            origins,
            values,
            ..self.clone()
        })
    }

    fn with_values(&self, values: Vec<f64>) -> PatchGrid {
        PatchGrid { values, ..self.clone() }
    }
}

/// Tiles `m` into `patch_frames x patch_bins` patches. Trailing frames and
/// bins that do not fill a whole patch are cropped.
pub fn patchify(m: &MagnitudeSpectrogram, patch_bins: usize, patch_frames: usize) -> Result<PatchGrid> {
    if patch_bins == 0 || patch_frames == 0 {
        return Err(Error::invalid("patch dimensions must be positive"));
    }
    let frames = m.frames() - m.frames() % patch_frames;
    let bins = m.bins() - m.bins() % patch_bins;
    if frames != m.frames() || bins != m.bins() {
        debug!(
            "patchify: cropped {}x{} to {frames}x{bins} for {patch_frames}x{patch_bins} patches",
            m.frames(),
            m.bins()
        );
    }
    let mut origins = Vec::new();
    let mut values = Vec::with_capacity(frames * bins);
    for f0 in (0..frames).step_by(patch_frames) {
        for b0 in (0..bins).step_by(patch_bins) {
            origins.push((f0, b0));
            for f in f0..f0 + patch_frames {
                values.extend_from_slice(&m.frame(f)[b0..b0 + patch_bins]);
            }
        }
    }
    Ok(PatchGrid {
        patch_bins,
        patch_frames,
        frames,
        bins,
        compression: m.compression(),
        origins,
        values,
    })
}

/// Reassembles the tiled area. Requires every patch position to be present.
pub fn unpatchify(g: &PatchGrid) -> Result<MagnitudeSpectrogram> {
    let expected = (g.frames / g.patch_frames) * (g.bins / g.patch_bins);
    if g.n_patches() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} patches cannot cover {}x{}",
            g.n_patches(),
            g.frames,
            g.bins
        )));
    }
    let mut values = vec![0.0; g.frames * g.bins];
    for (i, &(f0, b0)) in g.origins.iter().enumerate() {
        for (row, chunk) in g.patch(i).chunks(g.patch_bins).enumerate() {
            let start = (f0 + row) * g.bins + b0;
            values[start..start + g.patch_bins].copy_from_slice(chunk);
        }
    }
    MagnitudeSpectrogram::new(g.frames, g.bins, values, g.compression)
}

/// Per-patch visibility over the same tiling as [`patchify`]: a patch is
/// hidden only when every bin inside it is masked.
pub fn patch_visibility(mask: &SpectroMask, patch_bins: usize, patch_frames: usize) -> Result<Vec<bool>> {
    if patch_bins == 0 || patch_frames == 0 {
        return Err(Error::invalid("patch dimensions must be positive"));
    }
    let frames = mask.frames() - mask.frames() % patch_frames;
    let bins = mask.bins() - mask.bins() % patch_bins;
    let mut visible = Vec::new();
    for f0 in (0..frames).step_by(patch_frames) {
        for b0 in (0..bins).step_by(patch_bins) {
            let any_kept = (f0..f0 + patch_frames).any(|f| (b0..b0 + patch_bins).any(|b| mask.is_kept(f, b)));
            visible.push(any_kept);
        }
    }
    Ok(visible)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    input: PatchGrid,
    target: PatchGrid,
    visible: Vec<bool>,
}

impl MaskedBatch {
    pub fn new(input: PatchGrid, target: PatchGrid, visible: Vec<bool>) -> Result<Self> {
        if !input.same_geometry(&target) || visible.len() != input.n_patches() {
            return Err(Error::ShapeMismatch(format!(
                "input {} patches, target {} patches, {} visibility flags",
                input.n_patches(),
                target.n_patches(),
                visible.len()
            )));
        }
        Ok(Self { input, target, visible })
    }

    /// Pairs a masked input spectrogram with its target, deriving patch
    /// visibility from the TF mask.
    pub fn from_spectrograms(
        masked_input: &MagnitudeSpectrogram,
        target: &MagnitudeSpectrogram,
        mask: &SpectroMask,
        patch_bins: usize,
        patch_frames: usize,
    ) -> Result<Self> {
        masked_input.same_shape(target)?;
        if mask.frames() != target.frames() || mask.bins() != target.bins() {
            return Err(Error::ShapeMismatch("mask does not match spectrogram".into()));
        }
        Self::new(
            patchify(masked_input, patch_bins, patch_frames)?,
            patchify(target, patch_bins, patch_frames)?,
            patch_visibility(mask, patch_bins, patch_frames)?,
        )
    }

    pub fn input(&self) -> &PatchGrid {
        &self.input
    }

    pub fn target(&self) -> &PatchGrid {
        &self.target
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.input.select(indices)?,
            self.target.select(indices)?,
            indices.iter().map(|&i| self.visible[i]).collect(),
        )
    }

    /// Visible inputs standardized per dimension and the target scaled to
    /// unit RMS. The affine encoder absorbs any per-dimension affine map of
    /// its input and a constant target factor scales every loss alike, so
    /// the attainable relative loss reduction is unchanged while the
    /// problem becomes far better conditioned.
    pub fn normalized(&self) -> Self {
        let p = self.input.patch_dim();
        let vis: Vec<usize> = (0..self.visible.len()).filter(|&i| self.visible[i]).collect();
        let mut input = self.input.values.clone();
        if !vis.is_empty() {
            let n = vis.len() as f64;
            for j in 0..p {
                let mean = vis.iter().map(|&i| input[i * p + j]).sum::<f64>() / n;
                let var = vis.iter().map(|&i| (input[i * p + j] - mean).powi(2)).sum::<f64>() / n;
                let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
                for &i in &vis {
                    input[i * p + j] = (input[i * p + j] - mean) * inv;
                }
            }
        }
        let t = &self.target.values;
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len().max(1) as f64).sqrt();
        let c = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        Self {
            input: self.input.with_values(input),
            target: self.target.with_values(t.iter().map(|v| v * c).collect()),
            visible: self.visible.clone(),
        }
    }

    /// Replaces the content of patch `i` of the input.
    pub fn with_input_patch(&self, i: usize, patch: &[f64]) -> Result<Self> {
        let p = self.input.patch_dim();
        if patch.len() != p || i >= self.input.n_patches() {
            return Err(Error::ShapeMismatch("replacement patch".into()));
        }
        let mut values = self.input.values.clone();
        values[i * p..(i + 1) * p].copy_from_slice(patch);
        Ok(Self {
            input: self.input.with_values(values),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeModel {
    patch_dim: usize,
    embed_dim: usize,
    params: Vec<f64>,
}

/// Named parameter blocks within the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    EncoderWeights,
    EncoderBias,
    DecoderWeights,
    DecoderBias,
    MaskToken,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 5] = [
        ParamBlock::EncoderWeights,
        ParamBlock::EncoderBias,
        ParamBlock::DecoderWeights,
        ParamBlock::DecoderBias,
        ParamBlock::MaskToken,
    ];
}

impl MaeModel {
    pub fn zeros(patch_dim: usize, embed_dim: usize) -> Result<Self> {
        if patch_dim == 0 || embed_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(Self {
            patch_dim,
            embed_dim,
            params: vec![0.0; 2 * patch_dim * embed_dim + 2 * embed_dim + patch_dim],
        })
    }

    /// Uniform weights scaled by fan-in, zero biases, small mask token.
    pub fn random<R: Rng + ?Sized>(patch_dim: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(patch_dim, embed_dim)?;
        let enc = 1.0 / (patch_dim as f64).sqrt();
        let dec = 1.0 / (embed_dim as f64).sqrt();
        for v in m.block_mut(ParamBlock::EncoderWeights) {
            *v = rng.random_range(-enc..enc);
        }
        for v in m.block_mut(ParamBlock::DecoderWeights) {
            *v = rng.random_range(-dec..dec);
        }
        for v in m.block_mut(ParamBlock::MaskToken) {
            *v = rng.random_range(-0.1..0.1);
        }
        Ok(m)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block_range(&self, block: ParamBlock) -> Range<usize> {
        let (p, d) = (self.patch_dim, self.embed_dim);
        let ew = p * d;
        match block {
            ParamBlock::EncoderWeights => 0..ew,
            ParamBlock::EncoderBias => ew..ew + d,
            ParamBlock::DecoderWeights => ew + d..2 * ew + d,
            ParamBlock::DecoderBias => 2 * ew + d..2 * ew + d + p,
            ParamBlock::MaskToken => 2 * ew + d + p..2 * ew + 2 * d + p,
        }
    }

    pub fn block(&self, block: ParamBlock) -> &[f64] {
        &self.params[self.block_range(block)]
    }

    pub fn block_mut(&mut self, block: ParamBlock) -> &mut [f64] {
        let r = self.block_range(block);
        &mut self.params[r]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn check_batch(&self, batch: &MaskedBatch) -> Result<()> {
        if batch.input.patch_dim() != self.patch_dim {
            return Err(Error::ShapeMismatch(format!(
                "batch patch dim {} vs model {}",
                batch.input.patch_dim(),
                self.patch_dim
            )));
        }
        Ok(())
    }

    /// Embedding of every patch: encoder output when visible, mask token
    /// otherwise. Row-major `n_patches x embed_dim`.
    pub fn encode(&self, input: &PatchGrid, visible: &[bool]) -> Result<Vec<f64>> {
        if input.patch_dim() != self.patch_dim || visible.len() != input.n_patches() {
            return Err(Error::ShapeMismatch("encoder input".into()));
        }
        let (p, d) = (self.patch_dim, self.embed_dim);
        let w = self.block(ParamBlock::EncoderWeights);
        let b = self.block(ParamBlock::EncoderBias);
        let token = self.block(ParamBlock::MaskToken);
        let mut out = Vec::with_capacity(input.n_patches() * d);
        for (i, &vis) in visible.iter().enumerate() {
            if vis {
                let x = input.patch(i);
                out.extend((0..d).map(|k| b[k] + dot(&w[k * p..(k + 1) * p], x)));
            } else {
                out.extend_from_slice(token);
            }
        }
        Ok(out)
    }

    fn decode(&self, hidden: &[f64]) -> Vec<f64> {
        let (p, d) = (self.patch_dim, self.embed_dim);
        let w = self.block(ParamBlock::DecoderWeights);
        let b = self.block(ParamBlock::DecoderBias);
        let mut out = Vec::with_capacity(hidden.len() / d * p);
        for h in hidden.chunks(d) {
            out.extend((0..p).map(|j| b[j] + dot(&w[j * d..(j + 1) * d], h)));
        }
        out
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &MaskedBatch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let (p, d) = (self.patch_dim, self.embed_dim);
        let n = batch.input.n_patches();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let hidden = self.encode(&batch.input, &batch.visible)?;
        let recon = self.decode(&hidden);
        let scale = 1.0 / (n * p) as f64;
        let loss = mse(&recon, &batch.target.values);

        let mut grad = vec![0.0; self.params.len()];
        let ew = self.block_range(ParamBlock::EncoderWeights);
        let eb = self.block_range(ParamBlock::EncoderBias);
        let dw = self.block_range(ParamBlock::DecoderWeights);
        let db = self.block_range(ParamBlock::DecoderBias);
        let mt = self.block_range(ParamBlock::MaskToken);
        let dec_w = self.block(ParamBlock::DecoderWeights);
        let mut delta = vec![0.0; p];
        let mut grad_h = vec![0.0; d];
        for i in 0..n {
            let h = &hidden[i * d..(i + 1) * d];
            for j in 0..p {
                delta[j] = 2.0 * scale * (recon[i * p + j] - batch.target.values[i * p + j]);
            }
            grad_h.fill(0.0);
            for j in 0..p {
                grad[db.start + j] += delta[j];
                let row = &dec_w[j * d..(j + 1) * d];
                for k in 0..d {
                    grad[dw.start + j * d + k] += delta[j] * h[k];
                    grad_h[k] += row[k] * delta[j];
                }
            }
            if batch.visible[i] {
                let x = batch.input.patch(i);
                for k in 0..d {
                    grad[eb.start + k] += grad_h[k];
                    for l in 0..p {
                        grad[ew.start + k * p + l] += grad_h[k] * x[l];
                    }
                }
            } else {
                for k in 0..d {
                    grad[mt.start + k] += grad_h[k];
                }
            }
        }
        Ok((loss, grad))
    }

    /// Serializes to the checkpoint layout described in the module docs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.patch_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.embed_dim as u32).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let mut model = Self::zeros(read_u32(4), read_u32(8))?;
        let body = &bytes[12..];
        if body.len() != 8 * model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint body has {} bytes, expected {}",
                body.len(),
                8 * model.params.len()
            )));
        }
        for (v, chunk) in model.params.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Reconstruction of every patch and the mean squared error against the
/// batch target.
pub fn forward(model: &MaeModel, batch: &MaskedBatch) -> Result<(PatchGrid, f64)> {
    model.check_batch(batch)?;
    let hidden = model.encode(&batch.input, &batch.visible)?;
    let recon = model.decode(&hidden);
    let loss = mse(&recon, &batch.target.values);
    Ok((batch.target.with_values(recon), loss))
}

/// One plain gradient-descent step. Returns the loss before the step. On a
/// non-finite loss or update the model is left untouched.
pub fn backward_and_step(model: &mut MaeModel, batch: &MaskedBatch, lr: f64) -> Result<f64> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate {lr}")));
    }
    let (loss, grad) = model.loss_and_gradient(batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let updated: Vec<f64> = model.params.iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    model.params = updated;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Multiplier applied to the step size after an accepted step.
    pub lr_growth: f64,
    /// Rejections tolerated within one step before giving up.
    pub max_backtracks: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            lr_growth: 1.05,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each step, followed by the final loss.
    pub losses: Vec<f64>,
    pub final_lr: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }
}

/// Full-batch gradient descent with backtracking: a step that would raise
/// the loss is rejected and retried at half the step size, so the loss
/// sequence never increases.
pub fn train(model: &mut MaeModel, batch: &MaskedBatch, opts: &TrainOptions) -> Result<TrainReport> {
    if !(opts.lr > 0.0) || !(opts.lr_growth >= 1.0) {
        return Err(Error::invalid("learning rate must be positive and growth >= 1"));
    }
    let mut lr = opts.lr;
    let mut losses = Vec::with_capacity(opts.steps + 1);
    let (mut loss, mut grad) = model.loss_and_gradient(batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    for _ in 0..opts.steps {
        losses.push(loss);
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let mut candidate = model.clone();
            for (w, g) in candidate.params.iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            if candidate.is_finite() {
                let (next_loss, next_grad) = candidate.loss_and_gradient(batch)?;
                if next_loss.is_finite() && next_loss <= loss {
                    *model = candidate;
                    loss = next_loss;
                    grad = next_grad;
                    accepted = true;
                    lr *= opts.lr_growth;
                    break;
                }
            }
            lr *= 0.5;
        }
        if !accepted {
            debug!("train: no descent step found, stopping at loss {loss}");
            break;
        }
    }
    losses.push(loss);
    Ok(TrainReport { losses, final_lr: lr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specmask::{random_tf_mask, time_mask};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spectrogram(frames: usize, bins: usize, seed: u64) -> MagnitudeSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MagnitudeSpectrogram::new(
            frames,
            bins,
            (0..frames * bins).map(|_| rng.random_range(0.0..2.0)).collect(),
            Compression::Linear,
        )
        .unwrap()
    }

    fn batch(n_visible: usize, n_masked: usize, seed: u64) -> MaskedBatch {
        let n = n_visible + n_masked;
        let input = patchify(&spectrogram(4 * n, 4, seed), 4, 4).unwrap();
        let target = patchify(&spectrogram(4 * n, 4, seed + 1), 4, 4).unwrap();
        let visible = (0..n).map(|i| i < n_visible).collect();
        MaskedBatch::new(input, target, visible).unwrap()
    }

    #[test]
    fn patch_counts_and_crop() {
        let g = patchify(&spectrogram(8, 8, 1), 4, 4).unwrap();
        assert_eq!(g.n_patches(), 4);
        assert_eq!(g.origins(), &[(0, 0), (0, 4), (4, 0), (4, 4)]);
        let cropped = patchify(&spectrogram(10, 8, 1), 4, 4).unwrap();
        assert_eq!(cropped.n_patches(), 4);
        assert_eq!(cropped.extent(), (8, 8));
        assert!(patchify(&spectrogram(8, 8, 1), 0, 4).is_err());
    }

    #[test]
    fn patch_layout_is_frame_major() {
        let m = MagnitudeSpectrogram::new(4, 4, (0..16).map(f64::from).collect(), Compression::Linear).unwrap();
        let g = patchify(&m, 2, 2).unwrap();
        assert_eq!(g.patch(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(g.patch(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn visibility_requires_full_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = time_mask(8, 8, 1.0, &mut rng).unwrap();
        assert_eq!(patch_visibility(&all, 4, 4).unwrap(), vec![false; 4]);
        let half = time_mask(8, 8, 0.5, &mut rng).unwrap();
        // four of eight frames: a 4-frame patch is hidden only if all four fell in it
        let vis = patch_visibility(&half, 4, 4).unwrap();
        let hidden_rows = (0..8).filter(|&f| !half.is_kept(f, 0)).collect::<Vec<_>>();
        let expect_hidden = hidden_rows == [0, 1, 2, 3] || hidden_rows == [4, 5, 6, 7];
        assert_eq!(vis.iter().any(|v| !v), expect_hidden);
        let tf = random_tf_mask(8, 8, 0.0, &mut rng).unwrap();
        assert_eq!(patch_visibility(&tf, 4, 4).unwrap(), vec![true; 4]);
    }

    #[test]
    fn zero_model_zero_target() {
        let mut b = batch(3, 1, 2);
        b.target = b.target.with_values(vec![0.0; b.target.values.len()]);
        let model = MaeModel::zeros(16, 8).unwrap();
        assert_eq!(forward(&model, &b).unwrap().1, 0.0);
    }

    #[test]
    fn identity_weights_reproduce_target() {
        // embed_dim = patch_dim with identity encoder and decoder
        let mut model = MaeModel::zeros(16, 16).unwrap();
        for k in 0..16 {
            model.block_mut(ParamBlock::EncoderWeights)[k * 16 + k] = 1.0;
            model.block_mut(ParamBlock::DecoderWeights)[k * 16 + k] = 1.0;
        }
        let mut b = batch(4, 0, 3);
        b.target = b.input.clone();
        let (recon, loss) = forward(&model, &b).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(recon.values(), b.input.values());
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MaeModel::random(16, 8, &mut rng).unwrap();
        let b = batch(1, 1, 5);
        let (_, loss) = forward(&model, &b).unwrap();
        // independent scalar evaluation
        let ew = model.block(ParamBlock::EncoderWeights);
        let eb = model.block(ParamBlock::EncoderBias);
        let dw = model.block(ParamBlock::DecoderWeights);
        let dbias = model.block(ParamBlock::DecoderBias);
        let token = model.block(ParamBlock::MaskToken);
        let mut sum = 0.0;
        for i in 0..2 {
            let mut h = [0.0; 8];
            for k in 0..8 {
                h[k] = if i == 0 {
                    let mut acc = eb[k];
                    for l in 0..16 {
                        acc += ew[k * 16 + l] * b.input.patch(0)[l];
                    }
                    acc
                } else {
                    token[k]
                };
            }
            for j in 0..16 {
                let mut y = dbias[j];
                for k in 0..8 {
                    y += dw[j * 8 + k] * h[k];
                }
                sum += (y - b.target.patch(i)[j]).powi(2);
            }
        }
        assert!((loss - sum / 32.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = MaeModel::random(16, 8, &mut rng).unwrap();
        let before = model.clone();
        backward_and_step(&mut model, &batch(3, 2, 7), 0.0).unwrap();
        assert_eq!(model, before);
        assert!(backward_and_step(&mut model, &batch(3, 2, 7), -1.0).is_err());
    }

    #[test]
    fn non_finite_loss_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = MaeModel::random(16, 8, &mut rng).unwrap();
        let mut b = batch(2, 0, 9);
        let mut values = b.target.values.clone();
        values[0] = f64::NAN;
        b.target = b.target.with_values(values);
        let before = model.clone();
        assert!(matches!(
            backward_and_step(&mut model, &b, 0.1),
            Err(Error::NonFiniteLoss)
        ));
        assert_eq!(model, before);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let model = MaeModel::zeros(9, 4).unwrap();
        assert!(forward(&model, &batch(2, 0, 1)).is_err());
        let b = batch(2, 0, 1);
        assert!(MaskedBatch::new(b.input.clone(), b.target.clone(), vec![true]).is_err());
    }

    #[test]
    fn training_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut model = MaeModel::random(16, 8, &mut rng).unwrap();
        let report = train(
            &mut model,
            &batch(10, 3, 11),
            &TrainOptions {
                steps: 100,
                lr: 5.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(model.is_finite());
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = MaeModel::random(16, 8, &mut rng).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"RFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(bytes.len(), 12 + 8 * (2 * 16 * 8 + 2 * 8 + 16));
        assert_eq!(MaeModel::from_bytes(&bytes).unwrap(), model);
        assert!(MaeModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(MaeModel::from_bytes(b"nope").is_err());
    }

    #[test]
    fn normalization_standardizes_visible_inputs() {
        let b = batch(5, 2, 30);
        let nb = b.normalized();
        let p = 16;
        for j in 0..p {
            let col: Vec<f64> = (0..5).map(|i| nb.input().patch(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / 5.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
        for i in 5..7 {
            assert_eq!(nb.input().patch(i), b.input().patch(i));
        }
        let t = nb.target().values();
        assert!(((t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_csv() {
        let report = TrainReport {
            losses: vec![2.0, 1.0],
            final_lr: 0.1,
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,loss\n0,2\n1,1\n");
    }

    proptest! {
        #[test]
        fn patchify_round_trip(fb in 1usize..6, bb in 1usize..6, pf in 1usize..5, pb in 1usize..5, seed in any::<u64>()) {
            let m = spectrogram(fb * pf, bb * pb, seed);
            let g = patchify(&m, pb, pf).unwrap();
            prop_assert_eq!(unpatchify(&g).unwrap(), m);
            prop_assert_eq!(patchify(&unpatchify(&g).unwrap(), pb, pf).unwrap(), g);
        }
    }
}
