//! Fixtures shared by the integration test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reverbforge_core::mae::{forward, patchify, MaeModel, MaskedBatch};
use reverbforge_core::{Compression, MagnitudeSpectrogram};

pub fn spectrogram(frames: usize, bins: usize, rng: &mut ChaCha8Rng) -> MagnitudeSpectrogram {
    let values = (0..frames * bins).map(|_| rng.random_range(0.0..1.0)).collect();
    MagnitudeSpectrogram::new(frames, bins, values, Compression::Linear).unwrap()
}

/// Six 4x4 patches, `masked` of them hidden behind the mask token.
pub fn instance(seed: u64, masked: usize) -> (MaeModel, MaskedBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = patchify(&spectrogram(24, 4, &mut rng), 4, 4).unwrap();
    let target = patchify(&spectrogram(24, 4, &mut rng), 4, 4).unwrap();
    let visible = (0..6).map(|i| i >= masked).collect();
    let batch = MaskedBatch::new(input, target, visible).unwrap();
    (MaeModel::random(16, 8, &mut rng).unwrap(), batch)
}

/// Central differences on the forward loss, step 1e-5.
pub fn finite_difference(model: &MaeModel, batch: &MaskedBatch) -> Vec<f64> {
    let h = 1e-5;
    (0..model.params().len())
        .map(|i| {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            (forward(&plus, batch).unwrap().1 - forward(&minus, batch).unwrap().1) / (2.0 * h)
        })
        .collect()
}
