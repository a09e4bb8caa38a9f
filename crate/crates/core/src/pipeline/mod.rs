//! Corpus ingestion, configuration, batch generation and file formats.

pub mod batch;
pub mod config;
pub mod io;
pub mod manifest;
pub mod synth;

pub use batch::{
    clip_id, derive_seed, generate_batch, load_training_batch, parse_clip_ref, read_index, render_clip, ArtifactRecord,
    BatchReport, ClipStatus, ClipSummary, IndexRecord, RenderedClip,
};
pub use config::{PipelineConfig, TrainConfig};
pub use manifest::{
    load_corpora, load_manifest, save_manifest, CorpusKind, CorpusManifest, ManifestCheck, ManifestEntry,
};
