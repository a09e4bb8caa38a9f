//! Line-delimited JSON corpus manifests: one
//! `{"id", "path", "kind", "duration_s"}` record per line. Relative paths
//! resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::io::{read_wav, wav_info};
use crate::augment::Corpora;
use crate::error::{Error, Result};
use crate::rir::Rir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Speech,
    Noise,
    Rir,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Self::Speech),
            "noise" => Ok(Self::Noise),
            "rir" => Ok(Self::Rir),
            other => Err(Error::invalid(format!("unknown corpus kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub kind: CorpusKind,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifestCheck {
    pub sample_rate_hz: u32,
    /// Entries whose audio is fully decoded; `None` decodes all. Headers
    /// of every entry are checked regardless.
    pub decode_limit: Option<usize>,
}

impl ManifestCheck {
    pub fn new(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            decode_limit: None,
        }
    }
}

impl CorpusManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestEntry>(line) {
                Ok(e) => {
                    if !seen.insert(e.id.clone()) {
                        problems.push(format!("line {}: duplicate id {:?}", n + 1, e.id));
                    }
                    entries.push(e);
                }
                Err(err) => problems.push(format!("line {}: {err}", n + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Manifest(problems));
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    /// Parses without touching the referenced audio.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, base)?;
        if m.entries.is_empty() {
            warn!("manifest {} has no entries", path.display());
        }
        Ok(m)
    }

    /// Itemized problems with the referenced files.
    pub fn check_files(&self, check: &ManifestCheck) -> Vec<String> {
        let mut problems = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let path = self.resolve(e);
            if !path.exists() {
                problems.push(format!("{}: missing file {}", e.id, path.display()));
                continue;
            }
            let info = match wav_info(&path) {
                Ok(info) => info,
                Err(err) => {
                    problems.push(format!("{}: {err}", e.id));
                    continue;
                }
            };
            if info.channels != 1 {
                problems.push(format!("{}: {} channels, expected mono", e.id, info.channels));
            }
            if e.kind != CorpusKind::Rir && info.sample_rate_hz != check.sample_rate_hz {
                problems.push(format!(
                    "{}: sample rate {} Hz, expected {}",
                    e.id, info.sample_rate_hz, check.sample_rate_hz
                ));
            }
            if check.decode_limit.is_none_or(|lim| i < lim) {
                if let Err(err) = read_wav(&path) {
                    problems.push(format!("{}: {err}", e.id));
                }
            }
        }
        problems
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Rejects entries whose kind differs from `kind`.
    pub fn expect_kind(&self, kind: CorpusKind) -> Result<()> {
        let wrong: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.kind != kind)
            .map(|e| format!("{}: kind {:?} in a {kind:?} manifest", e.id, e.kind))
            .collect();
        if wrong.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(wrong))
        }
    }
}

/// Parses and validates: unique ids, files present, mono, and at the
/// pipeline rate except RIRs.
pub fn load_manifest(path: &Path, check: &ManifestCheck) -> Result<CorpusManifest> {
    let m = CorpusManifest::read(path)?;
    let problems = m.check_files(check);
    if problems.is_empty() {
        Ok(m)
    } else {
        Err(Error::Manifest(problems))
    }
}

pub fn save_manifest(m: &CorpusManifest, path: &Path) -> Result<()> {
    m.save(path)
}

/// Loads every entry into memory. Entries that fail to load are kept as
/// errors so that only clips selecting them fail. Ids must be unique
/// within each kind across all manifests.
pub fn load_corpora(manifests: &[CorpusManifest], sample_rate_hz: u32) -> Result<Corpora> {
    let mut corpora = Corpora::new();
    let mut seen = BTreeSet::new();
    let mut dupes = Vec::new();
    for m in manifests {
        for e in &m.entries {
            if !seen.insert((e.kind, e.id.clone())) {
                dupes.push(format!("duplicate {:?} id {:?}", e.kind, e.id));
                continue;
            }
            let path = m.resolve(e);
            let loaded = read_wav(&path).map_err(|err| err.to_string());
            match e.kind {
                CorpusKind::Speech | CorpusKind::Noise => {
                    let w = loaded.and_then(|w| {
                        if w.sample_rate_hz() == sample_rate_hz {
                            Ok(w)
                        } else {
                            Err(format!(
                                "sample rate {} Hz, expected {sample_rate_hz}",
                                w.sample_rate_hz()
                            ))
                        }
                    });
                    if let Err(reason) = &w {
                        warn!("{}: {reason}", e.id);
                    }
                    if e.kind == CorpusKind::Speech {
                        corpora.insert_speech(e.id.clone(), w);
                    } else {
                        corpora.insert_noise(e.id.clone(), w);
                    }
                }
                CorpusKind::Rir => {
                    let r = loaded.and_then(|w| {
                        if w.sample_rate_hz() != sample_rate_hz {
                            return Err(format!(
                                "RIR rate {} Hz, pipeline runs at {sample_rate_hz}",
                                w.sample_rate_hz()
                            ));
                        }
                        Rir::from_waveform(&w).map_err(|err| err.to_string())
                    });
                    if let Err(reason) = &r {
                        warn!("{}: {reason}", e.id);
                    }
                    corpora.insert_rir(e.id.clone(), r);
                }
            }
        }
    }
    if !dupes.is_empty() {
        return Err(Error::Manifest(dupes));
    }
    Ok(corpora)
}
