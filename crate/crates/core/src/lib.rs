//! Speech distortion augmentation and masked-autoencoder pretraining data
//! pipeline.
//!
//! Waveform stages ([`augment`]) compose loudness scaling, distance-based
//! two-speaker mixtures, codec simulation, clipping and additive noise.
//! Spectrogram stages ([`specmask`]) apply one of three masks per clip. The
//! [`mae`] module trains a small patch autoencoder on the result and
//! [`enhance`] / [`metrics`] cover TF-mask resynthesis and segmental SNR.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod augment;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod mae;
pub mod metrics;
pub mod pipeline;
pub mod rir;
pub mod specmask;

pub use dsp::{
    istft, log1p_compress, log1p_expand, magnitude, stft, ComplexSpectrogram, Compression, MagnitudeSpectrogram,
    StftConfig, Waveform,
};
pub use error::{Error, Result};
pub use rir::{DecayParams, DrrReport, Rir};
