use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reverbforge_core::enhance::{apply_tf_mask, oracle_irm, TfMask, DEFAULT_IRM_EPS};
use reverbforge_core::mae::{train, MaeModel, TrainOptions};
use reverbforge_core::metrics::ssnr;
use reverbforge_core::pipeline::io::{read_tensor, read_wav, write_wav};
use reverbforge_core::pipeline::{
    generate_batch, load_corpora, load_training_batch, parse_clip_ref, read_index, render_clip, ClipStatus, CorpusKind,
    CorpusManifest, IndexRecord, ManifestCheck, PipelineConfig,
};
use reverbforge_core::{istft, magnitude, stft, Compression};

#[derive(Parser)]
#[command(
    name = "reverbforge",
    version,
    about = "Speech distortion augmentation and pretraining data generator"
)]
struct Cli {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// `<kind>=<path>` with kind one of speech, noise, rir. Repeatable.
    #[arg(long = "manifest", value_parser = parse_manifest_arg)]
    manifests: Vec<(CorpusKind, PathBuf)>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a batch of augmented clips with masked spectrograms.
    Generate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        count: usize,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "REVERBFORGE_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Print the plan, DRRs and mask statistics of one clip as JSON.
    Inspect {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Clip id (`clip000003`) or index.
        #[arg(long)]
        clip: String,
    },
    /// Overfit the toy autoencoder on one generated clip.
    TrainToy {
        /// Output directory of a `generate` run.
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value = "0")]
        clip: String,
        #[arg(long)]
        steps: Option<usize>,
        /// Directory for `loss.csv` and `model.rfck`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a TF mask (or the oracle IRM) to a noisy WAV.
    Enhance {
        #[arg(long)]
        noisy: PathBuf,
        /// Clean reference; required for the oracle mask and for scoring.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Tensor file of gains in [0, 1], frames x bins of the noisy STFT.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segmental SNR as CSV `clip_id,ssnr_db`.
    Score {
        /// Output directory of a `generate` run; scores augmented against target.
        #[arg(long, conflicts_with_all = ["reference", "estimate"])]
        batch: Option<PathBuf>,
        #[arg(long, requires = "estimate")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        estimate: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check manifests: ids, files, channel count and sample rate.
    ValidateManifest {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Decode at most this many entries per manifest in full.
        #[arg(long)]
        decode_limit: Option<usize>,
    },
}

fn parse_manifest_arg(s: &str) -> std::result::Result<(CorpusKind, PathBuf), String> {
    let (kind, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected <kind>=<path>, got {s:?}"))?;
    let kind = kind.parse::<CorpusKind>().map_err(|e| e.to_string())?;
    Ok((kind, PathBuf::from(path)))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_manifests(args: &CorpusArgs) -> Result<Vec<CorpusManifest>> {
    args.manifests
        .iter()
        .map(|(kind, path)| {
            let m = CorpusManifest::read(path).with_context(|| format!("manifest {}", path.display()))?;
            m.expect_kind(*kind)
                .with_context(|| format!("manifest {}", path.display()))?;
            Ok(m)
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Generate {
            corpus,
            count,
            out,
            workers,
        } => {
            let mut cfg = load_config(config, corpus.seed)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let corpora = load_corpora(&read_manifests(&corpus)?, cfg.sample_rate_hz)?;
            let report = generate_batch(&cfg, &corpora, count, workers, &cfg.output_dir)?;
            println!("{}", report.index_path.display());
            if report.failed() > 0 {
                bail!("{} of {count} clips failed", report.failed());
            }
        }
        Command::Inspect { corpus, clip } => {
            let cfg = load_config(config, corpus.seed)?;
            let index = parse_clip_ref(&clip).with_context(|| format!("bad clip reference {clip:?}"))?;
            let corpora = load_corpora(&read_manifests(&corpus)?, cfg.sample_rate_hz)?;
            let r = render_clip(&cfg, &corpora, index)?;
            let source_rir_drr = match r.plan.stages.iter().find_map(|s| match s {
                reverbforge_core::augment::Stage::MultiSpeaker(p) => Some(p.rir_id.clone()),
                _ => None,
            }) {
                Some(id) => Some(reverbforge_core::rir::drr(corpora.rir(&id)?)?.drr_db),
                None => None,
            };
            let out = serde_json::json!({
                "clip_id": r.clip_id,
                "seed": r.seed,
                "mask_seed": r.mask_seed,
                "plan": r.plan,
                "rir_drr_db": source_rir_drr,
                "summary": r.summary(),
                "masked_bins": r.mask.masked_count(),
                "augmented_rms_dbfs": r.audio.augmented.rms_dbfs(),
                "target_rms_dbfs": r.audio.target.rms_dbfs(),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::TrainToy {
            batch,
            clip,
            steps,
            out,
        } => {
            let cfg = load_config(config, None)?;
            let t = &cfg.train;
            let index = parse_clip_ref(&clip).with_context(|| format!("bad clip reference {clip:?}"))?;
            let records = read_index(&batch)?;
            let record = records
                .iter()
                .find(|r| r.index == index && r.status == ClipStatus::Ok)
                .with_context(|| format!("no successful clip {index} in {}", batch.display()))?;
            let mb = load_training_batch(
                &batch,
                record,
                cfg.compression,
                t.patch_bins,
                t.patch_frames,
                t.max_patches,
                t.init_seed,
            )?;
            let mb = if t.normalize { mb.normalized() } else { mb };
            let mut rng = ChaCha8Rng::seed_from_u64(t.init_seed);
            let mut model = MaeModel::random(mb.input().patch_dim(), t.embed_dim, &mut rng)?;
            let opts = TrainOptions {
                steps: steps.unwrap_or(t.steps),
                lr: t.lr,
                ..TrainOptions::default()
            };
            let report = train(&mut model, &mb, &opts)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let csv = out.join("loss.csv");
            report.write_csv(std::fs::File::create(&csv)?)?;
            model.save(&out.join("model.rfck"))?;
            println!(
                "initial_loss={} final_loss={} ratio={}",
                report.initial_loss(),
                report.final_loss(),
                report.final_loss() / report.initial_loss()
            );
        }
        Command::Enhance {
            noisy,
            clean,
            mask,
            out,
        } => {
            let cfg = load_config(config, None)?;
            let noisy_w = read_wav(&noisy)?;
            let clean_w = clean.as_deref().map(read_wav).transpose()?;
            let spec = stft(&noisy_w, &cfg.stft)?;
            let tf = match (&mask, &clean_w) {
                (Some(p), _) => {
                    let m = read_tensor(p, Compression::Linear)?;
                    TfMask::new(m.frames(), m.bins(), m.into_values())?
                }
                (None, Some(c)) => {
                    info!("no mask given, using the oracle IRM");
                    oracle_irm(&magnitude(&stft(c, &cfg.stft)?), &magnitude(&spec), DEFAULT_IRM_EPS)?
                }
                (None, None) => bail!("need --mask or --clean"),
            };
            let enhanced = istft(&apply_tf_mask(&spec, &tf)?)?;
            let clipped = write_wav(&out, &enhanced)?;
            if clipped > 0 {
                warn!("{clipped} samples clamped writing {}", out.display());
            }
            if let Some(c) = clean_w {
                println!(
                    "ssnr_noisy_db={:.4} ssnr_enhanced_db={:.4}",
                    ssnr(&c, &noisy_w, &cfg.ssnr)?,
                    ssnr(&c, &enhanced, &cfg.ssnr)?
                );
            }
        }
        Command::Score {
            batch,
            reference,
            estimate,
            out,
        } => {
            let cfg = load_config(config, None)?;
            let mut csv = String::from("clip_id,ssnr_db\n");
            if let (Some(r), Some(e)) = (&reference, &estimate) {
                let v = ssnr(&read_wav(r)?, &read_wav(e)?, &cfg.ssnr)?;
                csv.push_str(&format!("{},{v:.6}\n", e.display()));
            } else if let Some(dir) = &batch {
                for rec in read_index(dir)?.iter().filter(|r| r.status == ClipStatus::Ok) {
                    csv.push_str(&format!("{},{}\n", rec.clip_id, score_record(dir, rec, &cfg)));
                }
            } else {
                bail!("need --batch or --reference with --estimate");
            }
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().write_all(csv.as_bytes())?,
            }
        }
        Command::ValidateManifest { corpus, decode_limit } => {
            let cfg = load_config(config, None)?;
            if corpus.manifests.is_empty() {
                bail!("no --manifest given");
            }
            let check = ManifestCheck {
                sample_rate_hz: cfg.sample_rate_hz,
                decode_limit,
            };
            let mut problems = Vec::new();
            for (kind, path) in &corpus.manifests {
                let m = match CorpusManifest::read(path) {
                    Ok(m) => m,
                    Err(e) => {
                        problems.push(format!("{}: {e}", path.display()));
                        continue;
                    }
                };
                if let Err(e) = m.expect_kind(*kind) {
                    problems.push(format!("{}: {e}", path.display()));
                }
                for p in m.check_files(&check) {
                    problems.push(format!("{}: {p}", path.display()));
                }
                println!("{}: {} entries", path.display(), m.entries.len());
            }
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("{p}");
                }
                bail!("{} problem(s) found", problems.len());
            }
        }
    }
    Ok(())
}

fn score_record(dir: &Path, rec: &IndexRecord, cfg: &PipelineConfig) -> String {
    let load = |name: &str| -> Result<reverbforge_core::Waveform> {
        let a = rec
            .artifact(name)
            .with_context(|| format!("{} has no {name}", rec.clip_id))?;
        Ok(read_wav(&dir.join(&a.path))?)
    };
    match load("target").and_then(|t| Ok(ssnr(&t, &load("augmented")?, &cfg.ssnr)?)) {
        Ok(v) => format!("{v:.6}"),
        Err(e) => {
            warn!("{}: {e:#}", rec.clip_id);
            "nan".into()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
