use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::io::{encode_tensor, encode_wav, read_tensor, sha256_hex, write_bytes};
use crate::augment::plan::MixtureSummary;
use crate::augment::{apply_plan, sample_plan, AugmentationPlan, AugmentedClip, Corpora};
use crate::dsp::{magnitude, Compression, MagnitudeSpectrogram, Stft, Waveform};
use crate::error::{Error, Result};
use crate::mae::MaskedBatch;
use crate::specmask::{choose_and_apply, MaskKind, MaskRle, SpectroMask};

pub const INDEX_FILE: &str = "index.jsonl";
pub const CLIPS_DIR: &str = "clips";

pub fn clip_id(index: usize) -> String {
    format!("clip{index:06}")
}

/// Parses a clip id or a bare index.
pub fn parse_clip_ref(s: &str) -> Option<usize> {
    s.strip_prefix("clip").unwrap_or(s).parse().ok()
}

/// First eight bytes (LE) of `sha256(seed_le || index_le || id || 0 || tag)`.
pub fn derive_seed(global_seed: u64, index: u64, id: &str, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update(id.as_bytes());
    h.update([0u8]);
    h.update(tag.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub clip_id: String,
    pub index: usize,
    pub seed: u64,
    pub mask_seed: u64,
    pub plan: AugmentationPlan,
    pub source_len: usize,
    pub audio: AugmentedClip,
    pub target_mag: MagnitudeSpectrogram,
    pub masked_mag: MagnitudeSpectrogram,
    pub mask: SpectroMask,
}

fn features(stft: &Stft, w: &Waveform, compression: Compression) -> Result<MagnitudeSpectrogram> {
    magnitude(&stft.forward(w)?).compressed(compression)
}

/// Samples and renders clip `index`. Source speech is entry
/// `index mod n` of the sorted speech ids.
pub fn render_clip(cfg: &PipelineConfig, corpora: &Corpora, index: usize) -> Result<RenderedClip> {
    let stft = Stft::new(cfg.stft)?;
    render_with(cfg, &stft, corpora, index)
}

fn render_with(cfg: &PipelineConfig, stft: &Stft, corpora: &Corpora, index: usize) -> Result<RenderedClip> {
    let ids = corpora.speech_ids();
    if ids.is_empty() {
        return Err(Error::EmptyCorpus("speech".into()));
    }
    let id = clip_id(index);
    let seed = derive_seed(cfg.seed, index as u64, &id, "plan");
    let mask_seed = derive_seed(cfg.seed, index as u64, &id, "specmask");
    let source_id = ids[index % ids.len()];
    let source = corpora.speech(source_id)?;
    let plan = sample_plan(seed, source_id, corpora, &cfg.augment, cfg.clip_len())?;
    let audio = apply_plan(source, &plan, corpora)?;
    let target_mag = features(stft, &audio.target, cfg.compression)?;
    let noisy_mag = features(stft, &audio.augmented, cfg.compression)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (masked_mag, mask) = choose_and_apply(&noisy_mag, &cfg.specmask, &mut rng)?;
    Ok(RenderedClip {
        clip_id: id,
        index,
        seed,
        mask_seed,
        plan,
        source_len: source.len(),
        audio,
        target_mag,
        masked_mag,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSummary {
    pub source_id: String,
    pub source_offset: usize,
    pub source_len: usize,
    pub clip_len: usize,
    pub stages: Vec<String>,
    pub mixture: Option<MixtureSummary>,
    pub mask_kind: MaskKind,
    pub masked_fraction: f64,
    pub frames: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub clip_id: String,
    pub index: usize,
    pub seed: u64,
    pub status: ClipStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ClipSummary>,
}

impl IndexRecord {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

/// Contents of each clip's `plan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPlanRecord {
    pub clip_id: String,
    pub index: usize,
    pub mask_seed: u64,
    pub compression: Compression,
    pub plan: AugmentationPlan,
}

impl RenderedClip {
    pub fn summary(&self) -> ClipSummary {
        ClipSummary {
            source_id: self.plan.source_id.clone(),
            source_offset: self.plan.source_offset,
            source_len: self.source_len,
            clip_len: self.plan.clip_len,
            stages: self.plan.stage_names().into_iter().map(String::from).collect(),
            mixture: self.audio.mixture,
            mask_kind: self.mask.kind(),
            masked_fraction: self.mask.masked_fraction(),
            frames: self.mask.frames(),
            bins: self.mask.bins(),
        }
    }

    fn encode(&self, compression: Compression) -> Result<Vec<EncodedArtifact>> {
        let (aug, aug_clip) = encode_wav(&self.audio.augmented)?;
        let (tgt, tgt_clip) = encode_wav(&self.audio.target)?;
        let plan = ClipPlanRecord {
            clip_id: self.clip_id.clone(),
            index: self.index,
            mask_seed: self.mask_seed,
            compression,
            plan: self.plan.clone(),
        };
        Ok(vec![
            ("augmented", "augmented.wav", aug, Some(aug_clip)),
            ("target", "target.wav", tgt, Some(tgt_clip)),
            ("masked", "masked.rft", encode_tensor(&self.masked_mag), None),
            ("target_mag", "target.rft", encode_tensor(&self.target_mag), None),
            ("mask", "mask.json", serde_json::to_vec(&self.mask.to_rle())?, None),
            ("plan", "plan.json", serde_json::to_vec_pretty(&plan)?, None),
        ])
    }
}

/// `(name, file name, bytes, clipped samples)`
type EncodedArtifact = (&'static str, &'static str, Vec<u8>, Option<usize>);

fn write_clip(out_dir: &Path, clip: &RenderedClip, compression: Compression) -> Result<Vec<ArtifactRecord>> {
    let rel_dir = format!("{CLIPS_DIR}/{}", clip.clip_id);
    let mut records = Vec::new();
    for (name, file, bytes, clipped) in clip.encode(compression)? {
        let rel = format!("{rel_dir}/{file}");
        write_bytes(&out_dir.join(&rel), &bytes)?;
        records.push(ArtifactRecord {
            name: name.to_string(),
            path: rel,
            sha256: sha256_hex(&bytes),
            clipped_samples: clipped,
        });
    }
    Ok(records)
}

fn generate_one(cfg: &PipelineConfig, stft: &Stft, corpora: &Corpora, index: usize, out_dir: &Path) -> IndexRecord {
    let id = clip_id(index);
    let seed = derive_seed(cfg.seed, index as u64, &id, "plan");
    let outcome = render_with(cfg, stft, corpora, index)
        .and_then(|clip| write_clip(out_dir, &clip, cfg.compression).map(|a| (a, clip.summary())));
    match outcome {
        Ok((artifacts, summary)) => IndexRecord {
            clip_id: id,
            index,
            seed,
            status: ClipStatus::Ok,
            error: None,
            artifacts,
            summary: Some(summary),
        },
        Err(e) => {
            warn!("{id}: {e}");
            IndexRecord {
                clip_id: id,
                index,
                seed,
                status: ClipStatus::Failed,
                error: Some(e.to_string()),
                artifacts: Vec::new(),
                summary: None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub records: Vec<IndexRecord>,
    pub index_path: PathBuf,
    pub index_sha256: String,
}

impl BatchReport {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.status == ClipStatus::Failed).count()
    }
}

/// Renders clips `0..count` on `workers` threads and writes their
/// artifacts plus `index.jsonl` under `out_dir`. A failing clip is recorded
/// in the index and does not stop the others. Output bytes do not depend
/// on `workers`.
pub fn generate_batch(
    cfg: &PipelineConfig,
    corpora: &Corpora,
    count: usize,
    workers: usize,
    out_dir: &Path,
) -> Result<BatchReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stft = Stft::new(cfg.stft)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records: Vec<IndexRecord> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| generate_one(cfg, &stft, corpora, i, out_dir))
            .collect()
    });
    let mut index = String::new();
    for r in &records {
        index.push_str(&serde_json::to_string(r)?);
        index.push('\n');
    }
    let index_path = out_dir.join(INDEX_FILE);
    write_bytes(&index_path, index.as_bytes())?;
    let report = BatchReport {
        index_sha256: sha256_hex(index.as_bytes()),
        records,
        index_path,
    };
    info!("generated {count} clips, {} failed", report.failed());
    Ok(report)
}

pub fn read_index(out_dir: &Path) -> Result<Vec<IndexRecord>> {
    let path = out_dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Loads a generated clip as a masked training batch of at most
/// `max_patches` patches chosen with `seed`: visible patches plus at most
/// one fully masked patch. Masked patches all share the mask token as
/// input, so a batch holding several of them has an error floor. Patches
/// with a silent target (padding) are used only when nothing else is left.
pub fn load_training_batch(
    out_dir: &Path,
    record: &IndexRecord,
    compression: Compression,
    patch_bins: usize,
    patch_frames: usize,
    max_patches: usize,
    seed: u64,
) -> Result<MaskedBatch> {
    let path_of = |name: &str| -> Result<PathBuf> {
        record
            .artifact(name)
            .map(|a| out_dir.join(&a.path))
            .ok_or_else(|| Error::Format(format!("{} has no {name} artifact", record.clip_id)))
    };
    let masked = read_tensor(&path_of("masked")?, compression)?;
    let target = read_tensor(&path_of("target_mag")?, compression)?;
    let mask_path = path_of("mask")?;
    let rle: MaskRle = serde_json::from_slice(&std::fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?)?;
    let mask = SpectroMask::from_rle(&rle)?;
    let batch = MaskedBatch::from_spectrograms(&masked, &target, &mask, patch_bins, patch_frames)?;
    let target_grid = batch.target();
    let (active, silent): (Vec<usize>, Vec<usize>) =
        (0..batch.visible().len()).partition(|&i| target_grid.patch(i).iter().any(|&v| v != 0.0));
    let pool = if active.is_empty() { silent } else { active };
    let (visible, hidden): (Vec<usize>, Vec<usize>) = pool.into_iter().partition(|&i| batch.visible()[i]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choose = |from: &[usize], k: usize| -> Vec<usize> {
        rand::seq::index::sample(&mut rng, from.len(), k.min(from.len()))
            .into_iter()
            .map(|j| from[j])
            .collect()
    };
    let n_hidden = usize::from(!hidden.is_empty() && max_patches > 1);
    let mut picked = choose(&visible, max_patches - n_hidden);
    picked.extend(choose(&hidden, n_hidden));
    if picked.is_empty() {
        return Err(Error::invalid("clip yields no patches"));
    }
    picked.sort_unstable();
    batch.select(&picked)
}
