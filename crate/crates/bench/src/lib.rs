//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reverbforge_core::augment::Corpora;
use reverbforge_core::pipeline::synth::{toy_noise, toy_rir, toy_speech};
use reverbforge_core::{Rir, Waveform};

pub const SR: u32 = 16_000;

pub fn white(seed: u64, len: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), SR).unwrap()
}

pub fn room(seed: u64, tail_gain: f64) -> Rir {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rir::new(toy_rir(&mut rng, SR, tail_gain), SR).unwrap()
}

/// In-memory toy corpora: six speech clips, three noises, four rooms.
pub fn toy_corpora(seed: u64) -> Corpora {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Corpora::new();
    for i in 0..6 {
        c.insert_speech(
            format!("s{i}"),
            Ok(Waveform::new(toy_speech(&mut rng, 3 * SR as usize / 2, SR), SR).unwrap()),
        );
    }
    for i in 0..3 {
        c.insert_noise(
            format!("n{i}"),
            Ok(Waveform::new(toy_noise(&mut rng, 2 * SR as usize), SR).unwrap()),
        );
    }
    for i in 0..4 {
        let gain = if i % 2 == 0 { 0.02 } else { 0.3 };
        c.insert_rir(format!("r{i}"), Ok(Rir::new(toy_rir(&mut rng, SR, gain), SR).unwrap()));
    }
    c
}
