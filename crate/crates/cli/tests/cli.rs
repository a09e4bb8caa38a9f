use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reverbforge_core::pipeline::synth::{write_toy_corpus, ToyCorpusSpec};
use reverbforge_core::pipeline::CorpusKind;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reverbforge"));
    c.env_remove("REVERBFORGE_WORKERS");
    c
}

struct Fixture {
    dir: tempfile::TempDir,
    manifests: Vec<(CorpusKind, PathBuf)>,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let manifests = write_toy_corpus(dir.path(), &ToyCorpusSpec::default()).unwrap();
        let config = dir.path().join("config.toml");
        std::fs::write(&config, "seed = 11\nclip_seconds = 1.0\n").unwrap();
        Self { dir, manifests, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn cmd(&self, sub: &str) -> Command {
        let mut c = bin();
        c.arg(sub).arg("--config").arg(&self.config);
        c
    }

    fn with_manifests(&self, mut c: Command) -> Command {
        for (kind, p) in &self.manifests {
            let k = match kind {
                CorpusKind::Speech => "speech",
                CorpusKind::Noise => "noise",
                CorpusKind::Rir => "rir",
            };
            c.arg("--manifest").arg(format!("{k}={}", p.display()));
        }
        c
    }

    fn generate(&self, out: &Path, count: usize, workers: usize) -> Output {
        let mut c = self.with_manifests(self.cmd("generate"));
        c.args(["--count", &count.to_string(), "--workers", &workers.to_string()])
            .arg("--out")
            .arg(out);
        c.output().unwrap()
    }
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn generate_is_deterministic_across_workers() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&f.generate(&a, 8, 1));
    ok(&f.generate(&b, 8, 4));
    let ia = std::fs::read_to_string(a.join("index.jsonl")).unwrap();
    assert_eq!(ia, std::fs::read_to_string(b.join("index.jsonl")).unwrap());
    assert_eq!(ia.lines().count(), 8);
    assert!(a.join("clips/clip000007/masked.rft").exists());
}

#[test]
fn zero_count_writes_empty_index() {
    let f = Fixture::new();
    let out = f.path("z");
    ok(&f.generate(&out, 0, 2));
    assert_eq!(std::fs::read_to_string(out.join("index.jsonl")).unwrap(), "");
}

#[test]
fn workers_from_environment() {
    let f = Fixture::new();
    let mut c = f.with_manifests(f.cmd("generate"));
    c.args(["--count", "2"])
        .arg("--out")
        .arg(f.path("env"))
        .env("REVERBFORGE_WORKERS", "2");
    ok(&c.output().unwrap());
}

#[test]
fn inspect_is_stable() {
    let f = Fixture::new();
    let run = || {
        let mut c = f.with_manifests(f.cmd("inspect"));
        c.args(["--seed", "7", "--clip", "clip000003"]);
        ok(&c.output().unwrap())
    };
    let first = run();
    assert_eq!(first, run());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["clip_id"], "clip000003");
    assert_eq!(v["plan"]["stages"][0]["kind"], "loudness");
}

#[test]
fn train_toy_overfits() {
    let f = Fixture::new();
    let batch = f.path("batch");
    ok(&f.generate(&batch, 1, 1));
    let model = f.path("model");
    let mut c = f.cmd("train-toy");
    c.arg("--batch")
        .arg(&batch)
        .args(["--steps", "500"])
        .arg("--out")
        .arg(&model);
    let out = ok(&c.output().unwrap());
    let ratio: f64 = out.trim().rsplit("ratio=").next().unwrap().parse().unwrap();
    assert!(ratio < 0.01, "{out}");
    assert_eq!(
        std::fs::read_to_string(model.join("loss.csv")).unwrap().lines().count(),
        502
    );
    assert_eq!(&std::fs::read(model.join("model.rfck")).unwrap()[..4], b"RFCK");
}

#[test]
fn enhance_with_oracle_improves_ssnr() {
    let f = Fixture::new();
    let batch = f.path("batch");
    ok(&f.generate(&batch, 1, 1));
    let clip = batch.join("clips/clip000000");
    let mut c = f.cmd("enhance");
    c.arg("--noisy")
        .arg(clip.join("augmented.wav"))
        .arg("--clean")
        .arg(clip.join("target.wav"))
        .arg("--out")
        .arg(f.path("enh.wav"));
    let out = ok(&c.output().unwrap());
    let vals: Vec<f64> = out
        .split_whitespace()
        .map(|kv| kv.split('=').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(vals[1] >= vals[0], "{out}");
    assert!(f.path("enh.wav").exists());
}

#[test]
fn score_batch_csv() {
    let f = Fixture::new();
    let batch = f.path("batch");
    ok(&f.generate(&batch, 3, 2));
    let mut c = f.cmd("score");
    c.arg("--batch").arg(&batch);
    let out = ok(&c.output().unwrap());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "clip_id,ssnr_db");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("clip000000,"));
}

#[test]
fn validate_manifest_reports_problems() {
    let f = Fixture::new();
    ok(&f.with_manifests(f.cmd("validate-manifest")).output().unwrap());
    let bad = f.path("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"id\":\"x\",\"path\":\"nope.wav\",\"kind\":\"speech\",\"duration_s\":1.0}\n",
    )
    .unwrap();
    let o = f
        .cmd("validate-manifest")
        .arg("--manifest")
        .arg(format!("speech={}", bad.display()))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing file"));
}

#[test]
fn broken_corpus_file_fails_softly() {
    let f = Fixture::new();
    std::fs::write(f.path("speech/speech002.wav"), b"garbage").unwrap();
    let out = f.path("soft");
    let o = f.generate(&out, 6, 2);
    assert_eq!(o.status.code(), Some(1));
    let index = std::fs::read_to_string(out.join("index.jsonl")).unwrap();
    let statuses: Vec<serde_json::Value> = index.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(statuses.len(), 6);
    assert_eq!(statuses[2]["status"], "failed");
    assert_eq!(statuses.iter().filter(|s| s["status"] == "ok").count(), 5);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bin().arg("generate").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("bogus").output().unwrap().status.code(), Some(2));
    let o = bin()
        .args(["generate", "--count", "1", "--manifest", "voice=x.jsonl"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
