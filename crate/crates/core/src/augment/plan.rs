//! Seeded stage sampling and replay.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_noise, clip, codec_simulate, make_mixture, scale_loudness, MixtureBranch, MixtureParams};
use crate::dsp::{crop_or_pad, fit_length, Waveform};
use crate::error::{Error, Result};
use crate::rir::{DecayParams, Rir, DEFAULT_ATTENUATION_DB, EARLY_REFLECTIONS_MS};

/// Inclusion probabilities of the optional waveform stages. Loudness
/// scaling always runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageProbabilities {
    pub multi_speaker: f64,
    pub codec: f64,
    pub clipping: f64,
    pub additive_noise: f64,
}

impl Default for StageProbabilities {
    fn default() -> Self {
        Self {
            multi_speaker: 0.5,
            codec: 0.5,
            clipping: 0.5,
            additive_noise: 0.5,
        }
    }
}

impl StageProbabilities {
    pub fn all(p: f64) -> Self {
        Self {
            multi_speaker: p,
            codec: p,
            clipping: p,
            additive_noise: p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub probabilities: StageProbabilities,
    pub loudness_dbfs: [f64; 2],
    pub snr_db: [f64; 2],
    pub sir_db: [f64; 2],
    pub clip_gamma: [f64; 2],
    pub codec_bits: [u32; 2],
    pub drr_threshold_db: f64,
    pub attenuation_db: f64,
    pub early_ms: f64,
    pub decay_alpha: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probabilities: StageProbabilities::default(),
            loudness_dbfs: [-30.0, 10.0],
            snr_db: [-30.0, 0.0],
            sir_db: [0.0, 10.0],
            clip_gamma: [0.0, 1.0],
            codec_bits: [super::CODEC_BITS_MIN, super::CODEC_BITS_MAX],
            drr_threshold_db: 0.0,
            attenuation_db: DEFAULT_ATTENUATION_DB,
            early_ms: EARLY_REFLECTIONS_MS,
            decay_alpha: [0.1, 0.5],
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} must be finite and ordered")));
    }
    Ok(())
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.probabilities;
        for (name, v) in [
            ("multi_speaker", p.multi_speaker),
            ("codec", p.codec),
            ("clipping", p.clipping),
            ("additive_noise", p.additive_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("probability {name} = {v} outside [0, 1]")));
            }
        }
        check_range("loudness_dbfs", self.loudness_dbfs)?;
        check_range("snr_db", self.snr_db)?;
        check_range("sir_db", self.sir_db)?;
        check_range("clip_gamma", self.clip_gamma)?;
        check_range("decay_alpha", self.decay_alpha)?;
        if self.clip_gamma[0] < 0.0 || self.clip_gamma[1] > 1.0 {
            return Err(Error::Config("clip_gamma must lie in [0, 1]".into()));
        }
        if self.decay_alpha[0] < 0.0 || self.decay_alpha[1] > 1.0 {
            return Err(Error::Config("decay_alpha must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.codec_bits;
        if lo > hi || lo < super::CODEC_BITS_MIN || hi > super::CODEC_BITS_MAX {
            return Err(Error::Config(format!(
                "codec_bits {:?} outside [4, 12]",
                self.codec_bits
            )));
        }
        if !(self.attenuation_db >= 0.0) || !(self.early_ms >= 0.0) || !self.drr_threshold_db.is_finite() {
            return Err(Error::Config(
                "attenuation, early window and DRR threshold must be finite, non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    Loudness {
        target_dbfs: f64,
    },
    MultiSpeaker(MixtureParams),
    Codec {
        bits: u32,
    },
    Clipping {
        gamma: f64,
    },
    AdditiveNoise {
        noise_id: String,
        snr_db: f64,
        offset: usize,
    },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Loudness { .. } => "loudness",
            Stage::MultiSpeaker(_) => "multi_speaker",
            Stage::Codec { .. } => "codec",
            Stage::Clipping { .. } => "clipping",
            Stage::AdditiveNoise { .. } => "additive_noise",
        }
    }
}

/// A fully sampled distortion chain: replaying it on the same source and
/// corpora gives bit-identical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPlan {
    pub seed: u64,
    pub source_id: String,
    pub source_offset: usize,
    pub clip_len: usize,
    pub stages: Vec<Stage>,
}

impl AugmentationPlan {
    pub fn stage_names(&self) -> Vec<&'static str> {
        self.stages.iter().map(Stage::name).collect()
    }
}

type Entry<T> = std::result::Result<T, String>;

/// In-memory corpora keyed by id. Entries that failed to load keep their
/// error so only the clips that select them fail.
#[derive(Debug, Default, Clone)]
pub struct Corpora {
    speech: BTreeMap<String, Entry<Waveform>>,
    noise: BTreeMap<String, Entry<Waveform>>,
    rir: BTreeMap<String, Entry<Rir>>,
}

fn lookup<'a, T>(map: &'a BTreeMap<String, Entry<T>>, corpus: &str, id: &str) -> Result<&'a T> {
    match map.get(id) {
        Some(Ok(v)) => Ok(v),
        Some(Err(reason)) => Err(Error::CorpusEntry {
            id: id.to_string(),
            reason: reason.clone(),
        }),
        None => Err(Error::CorpusEntry {
            id: id.to_string(),
            reason: format!("not in {corpus} corpus"),
        }),
    }
}

impl Corpora {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_speech(&mut self, id: impl Into<String>, w: Entry<Waveform>) {
        self.speech.insert(id.into(), w);
    }

    pub fn insert_noise(&mut self, id: impl Into<String>, w: Entry<Waveform>) {
        self.noise.insert(id.into(), w);
    }

    pub fn insert_rir(&mut self, id: impl Into<String>, r: Entry<Rir>) {
        self.rir.insert(id.into(), r);
    }

    pub fn speech_ids(&self) -> Vec<&str> {
        self.speech.keys().map(String::as_str).collect()
    }

    pub fn noise_ids(&self) -> Vec<&str> {
        self.noise.keys().map(String::as_str).collect()
    }

    pub fn rir_ids(&self) -> Vec<&str> {
        self.rir.keys().map(String::as_str).collect()
    }

    pub fn speech(&self, id: &str) -> Result<&Waveform> {
        lookup(&self.speech, "speech", id)
    }

    pub fn noise(&self, id: &str) -> Result<&Waveform> {
        lookup(&self.noise, "noise", id)
    }

    pub fn rir(&self, id: &str) -> Result<&Rir> {
        lookup(&self.rir, "rir", id)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, ids: &[&'a str], corpus: &str) -> Result<&'a str> {
    if ids.is_empty() {
        return Err(Error::EmptyCorpus(corpus.to_string()));
    }
    Ok(ids[rng.random_range(0..ids.len())])
}

/// Start offset of a `len`-sample excerpt from `available` samples.
fn excerpt_offset(rng: &mut ChaCha8Rng, available: usize, len: usize) -> usize {
    if available > len {
        rng.random_range(0..=available - len)
    } else {
        0
    }
}

/// Samples a plan for `source_id`. Stages follow the fixed order loudness,
/// multi-speaker, codec, clipping, additive noise; each optional stage is
/// drawn with its configured probability and all of its parameters are
/// recorded.
pub fn sample_plan(
    seed: u64,
    source_id: &str,
    corpora: &Corpora,
    cfg: &AugmentConfig,
    clip_len: usize,
) -> Result<AugmentationPlan> {
    cfg.validate()?;
    if clip_len == 0 {
        return Err(Error::invalid("clip length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = corpora.speech(source_id)?;
    let source_offset = excerpt_offset(&mut rng, source.len(), clip_len);
    let mut stages = vec![Stage::Loudness {
        target_dbfs: uniform(&mut rng, cfg.loudness_dbfs),
    }];
    let p = &cfg.probabilities;

    if rng.random_bool(p.multi_speaker) {
        let others: Vec<&str> = corpora.speech_ids().into_iter().filter(|id| *id != source_id).collect();
        let candidates = if others.is_empty() {
            corpora.speech_ids()
        } else {
            others
        };
        let interferer_id = pick(&mut rng, &candidates, "speech")?.to_string();
        let interferer_len = corpora.speech(&interferer_id)?.len();
        let interferer_offset = excerpt_offset(&mut rng, interferer_len, clip_len);
        let rir_id = pick(&mut rng, &corpora.rir_ids(), "rir")?.to_string();
        let sir_db = uniform(&mut rng, cfg.sir_db);
        let alpha = uniform(&mut rng, cfg.decay_alpha);
        let decay = DecayParams::default_for(corpora.rir(&rir_id)?, alpha)?;
        stages.push(Stage::MultiSpeaker(MixtureParams {
            interferer_id,
            interferer_offset,
            rir_id,
            drr_threshold_db: cfg.drr_threshold_db,
            sir_db,
            decay,
            attenuation_db: cfg.attenuation_db,
            early_ms: cfg.early_ms,
        }));
    }
    if rng.random_bool(p.codec) {
        stages.push(Stage::Codec {
            bits: rng.random_range(cfg.codec_bits[0]..=cfg.codec_bits[1]),
        });
    }
    if rng.random_bool(p.clipping) {
        stages.push(Stage::Clipping {
            gamma: uniform(&mut rng, cfg.clip_gamma),
        });
    }
    if rng.random_bool(p.additive_noise) {
        let noise_id = pick(&mut rng, &corpora.noise_ids(), "noise")?.to_string();
        let noise_len = corpora.noise(&noise_id)?.len();
        let offset = excerpt_offset(&mut rng, noise_len, clip_len);
        stages.push(Stage::AdditiveNoise {
            noise_id,
            snr_db: uniform(&mut rng, cfg.snr_db),
            offset,
        });
    }
    Ok(AugmentationPlan {
        seed,
        source_id: source_id.to_string(),
        source_offset,
        clip_len,
        stages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub branch: MixtureBranch,
    pub source_drr_db: f64,
    pub target_drr_db: f64,
    pub interferer_drr_db: f64,
    pub interferer_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClip {
    pub augmented: Waveform,
    pub target: Waveform,
    pub mixture: Option<MixtureSummary>,
}

/// Replays `plan` on `source`. The target is the loudness-scaled excerpt,
/// or the reverberant target speaker when a multi-speaker stage ran.
pub fn apply_plan(source: &Waveform, plan: &AugmentationPlan, corpora: &Corpora) -> Result<AugmentedClip> {
    let sr = source.sample_rate_hz();
    let excerpt = |w: &Waveform, offset: usize| -> Result<Waveform> {
        source.check_rate(w)?;
        Waveform::new(fit_length(w.samples(), plan.clip_len, offset), sr)
    };
    let mut current = Waveform::new(crop_or_pad(source.samples(), plan.clip_len, plan.source_offset), sr)?;
    let mut target = None;
    let mut mixture = None;
    for stage in &plan.stages {
        current = match stage {
            Stage::Loudness { target_dbfs } => scale_loudness(&current, *target_dbfs)?,
            Stage::MultiSpeaker(p) => {
                let s2 = excerpt(corpora.speech(&p.interferer_id)?, p.interferer_offset)?;
                let m = make_mixture(&current, &s2, corpora.rir(&p.rir_id)?, p)?;
                mixture = Some(MixtureSummary {
                    branch: m.branch,
                    source_drr_db: m.source_drr_db,
                    target_drr_db: m.target_drr_db,
                    interferer_drr_db: m.interferer_drr_db,
                    interferer_gain: m.interferer_gain,
                });
                target = Some(m.target);
                m.mixed
            }
            Stage::Codec { bits } => codec_simulate(&current, *bits)?,
            Stage::Clipping { gamma } => clip(&current, *gamma)?,
            Stage::AdditiveNoise {
                noise_id,
                snr_db,
                offset,
            } => {
                let n = excerpt(corpora.noise(noise_id)?, *offset)?;
                add_noise(&current, &n, *snr_db)?
            }
        };
        if target.is_none() && matches!(stage, Stage::Loudness { .. }) {
            target = Some(current.clone());
        }
    }
    let target = target.unwrap_or_else(|| current.clone());
    Ok(AugmentedClip {
        augmented: current,
        target,
        mixture,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::energy;
    use crate::rir::drr;

    const SR: u32 = 16_000;

    fn white(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), SR).unwrap()
    }

    fn room(seed: u64, len: usize, direct_gain: f64) -> Rir {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taps: Vec<f64> = (0..len)
            .map(|i| rng.random_range(-1.0..1.0) * (-(i as f64) / 2000.0).exp() * 0.2)
            .collect();
        taps[20] = direct_gain;
        Rir::new(taps, SR).unwrap()
    }

    fn corpora() -> Corpora {
        let mut c = Corpora::new();
        c.insert_speech("a", Ok(white(20_000, 1)));
        c.insert_speech("b", Ok(white(12_000, 2)));
        c.insert_noise("n1", Ok(white(30_000, 3)));
        c.insert_noise("n2", Ok(white(5_000, 4)));
        c.insert_rir("r1", Ok(room(5, 4000, 1.0)));
        c.insert_rir("r2", Ok(room(6, 4000, 1.0)));
        c.insert_rir("broken", Err("bad header".into()));
        c
    }

    fn config(p: f64) -> AugmentConfig {
        AugmentConfig {
            probabilities: StageProbabilities::all(p),
            ..AugmentConfig::default()
        }
    }

    fn mixture_params(decay: DecayParams, threshold: f64) -> MixtureParams {
        MixtureParams {
            interferer_id: "b".into(),
            interferer_offset: 0,
            rir_id: "r1".into(),
            drr_threshold_db: threshold,
            sir_db: 5.0,
            decay,
            attenuation_db: 15.0,
            early_ms: 50.0,
        }
    }

    #[test]
    fn zero_probabilities_give_loudness_only() {
        let plan = sample_plan(1, "a", &corpora(), &config(0.0), 16_000).unwrap();
        assert_eq!(plan.stage_names(), ["loudness"]);
    }

    #[test]
    fn unit_probabilities_give_all_stages_in_order() {
        let mut c = corpora();
        c.insert_rir("broken", Ok(room(7, 4000, 1.0)));
        let plan = sample_plan(1, "a", &c, &config(1.0), 16_000).unwrap();
        assert_eq!(
            plan.stage_names(),
            ["loudness", "multi_speaker", "codec", "clipping", "additive_noise"]
        );
        let Stage::MultiSpeaker(m) = &plan.stages[1] else {
            panic!()
        };
        assert_eq!(m.interferer_id, "b");
    }

    #[test]
    fn same_seed_same_plan() {
        let c = corpora();
        for seed in 0..20 {
            let mut cfg = config(0.7);
            cfg.probabilities.multi_speaker = 0.0;
            let a = sample_plan(seed, "a", &c, &cfg, 16_000).unwrap();
            let b = sample_plan(seed, "a", &c, &cfg, 16_000).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_corpus_is_named() {
        let mut c = Corpora::new();
        c.insert_speech("a", Ok(white(100, 1)));
        let err = sample_plan(1, "a", &c, &config(1.0), 100).unwrap_err();
        assert!(err.to_string().contains("rir"), "{err}");
    }

    #[test]
    fn plan_json_round_trip() {
        let mut c = corpora();
        c.insert_rir("broken", Ok(room(7, 4000, 1.0)));
        let plan = sample_plan(9, "b", &c, &config(1.0), 16_000).unwrap();
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<AugmentationPlan>(&text).unwrap(), plan);
    }

    #[test]
    fn loudness_only_plan_target_equals_augmented() {
        let c = corpora();
        let plan = sample_plan(3, "a", &c, &config(0.0), 16_000).unwrap();
        let out = apply_plan(c.speech("a").unwrap(), &plan, &c).unwrap();
        assert_eq!(out.augmented, out.target);
        assert_eq!(out.augmented.len(), 16_000);
    }

    #[test]
    fn unity_clipping_plan_is_identity() {
        let c = corpora();
        let plan = AugmentationPlan {
            seed: 0,
            source_id: "a".into(),
            source_offset: 0,
            clip_len: 8000,
            stages: vec![Stage::Loudness { target_dbfs: -20.0 }, Stage::Clipping { gamma: 1.0 }],
        };
        let out = apply_plan(c.speech("a").unwrap(), &plan, &c).unwrap();
        assert_eq!(out.augmented, out.target);
    }

    #[test]
    fn noise_only_plan_realizes_snr() {
        let c = corpora();
        for (noise_id, offset) in [("n1", 1234), ("n2", 0)] {
            let plan = AugmentationPlan {
                seed: 0,
                source_id: "a".into(),
                source_offset: 500,
                clip_len: 16_000,
                stages: vec![
                    Stage::Loudness { target_dbfs: -25.0 },
                    Stage::AdditiveNoise {
                        noise_id: noise_id.into(),
                        snr_db: -10.0,
                        offset,
                    },
                ],
            };
            let out = apply_plan(c.speech("a").unwrap(), &plan, &c).unwrap();
            let diff: Vec<f64> = out
                .augmented
                .samples()
                .iter()
                .zip(out.target.samples())
                .map(|(a, t)| a - t)
                .collect();
            let ratio = 10.0 * (out.target.energy() / energy(&diff)).log10();
            assert!((ratio + 10.0).abs() < 0.1, "{ratio}");
        }
    }

    #[test]
    fn short_source_is_zero_padded() {
        let c = corpora();
        let plan = sample_plan(4, "b", &c, &config(0.0), 16_000).unwrap();
        assert_eq!(plan.source_offset, 0);
        let out = apply_plan(c.speech("b").unwrap(), &plan, &c).unwrap();
        assert!(out.target.samples()[12_000..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut c = corpora();
        c.insert_rir("broken", Ok(room(7, 4000, 1.0)));
        for seed in 0..10 {
            let plan = sample_plan(seed, "a", &c, &config(0.8), 16_000).unwrap();
            let a = apply_plan(c.speech("a").unwrap(), &plan, &c).unwrap();
            let b = apply_plan(c.speech("a").unwrap(), &plan, &c).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.augmented.len(), a.target.len());
        }
    }

    #[test]
    fn broken_entry_fails_only_when_selected() {
        let c = corpora();
        let mut hits = 0;
        for seed in 0..40 {
            match sample_plan(seed, "a", &c, &config(1.0), 16_000) {
                Ok(plan) => {
                    let Stage::MultiSpeaker(m) = &plan.stages[1] else {
                        panic!()
                    };
                    assert_ne!(m.rir_id, "broken");
                }
                Err(e) => {
                    assert!(e.to_string().contains("broken"));
                    hits += 1;
                }
            }
        }
        assert!(hits > 0 && hits < 40);
    }

    #[test]
    fn impulse_room_keeps_target_dry() {
        let s1 = white(4000, 10);
        let s2 = white(4000, 11);
        let r0 = Rir::impulse(SR);
        let decay = DecayParams {
            t0_samples: 100,
            t1_samples: 200,
            alpha: 0.5,
        };
        let m = make_mixture(&s1, &s2, &r0, &mixture_params(decay, 0.0)).unwrap();
        assert_eq!(m.branch, MixtureBranch::AttenuateInterferer);
        assert_eq!(m.target, s1);
        let ratio = 10.0 * (m.target.energy() / (m.interferer_gain.powi(2) * s2.energy() * 10f64.powf(-1.5))).log10();
        assert!((ratio - 5.0).abs() < 1e-9);
    }

    #[test]
    fn low_drr_room_reverberates_interferer_verbatim() {
        // weak direct path: DRR well below 0 dB
        let r0 = room(12, 4000, 0.3);
        assert!(drr(&r0).unwrap().drr_db < -5.0);
        let decay = DecayParams::default_for(&r0, 0.2).unwrap();
        let s1 = white(6000, 13);
        let s2 = white(6000, 14);
        let m = make_mixture(&s1, &s2, &r0, &mixture_params(decay, 0.0)).unwrap();
        assert_eq!(m.branch, MixtureBranch::DecayTarget);
        assert_eq!(m.interferer_rir, r0);
        assert!(m.target_drr_db >= m.interferer_drr_db);
        let expected = crate::rir::apply_rir(&s2, &r0).unwrap();
        let implied: Vec<f64> = m
            .mixed
            .samples()
            .iter()
            .zip(m.target.samples())
            .map(|(x, t)| (x - t) / m.interferer_gain)
            .collect();
        assert!(implied
            .iter()
            .zip(expected.samples())
            .all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn mixture_realizes_sir() {
        let r0 = room(15, 3000, 1.0);
        let decay = DecayParams::default_for(&r0, 0.3).unwrap();
        let m = make_mixture(&white(8000, 16), &white(8000, 17), &r0, &mixture_params(decay, 0.0)).unwrap();
        let interferer: Vec<f64> = m
            .mixed
            .samples()
            .iter()
            .zip(m.target.samples())
            .map(|(x, t)| x - t)
            .collect();
        let sir = 10.0 * (m.target.energy() / energy(&interferer)).log10();
        assert!((sir - 5.0).abs() < 1e-6);
    }

    #[test]
    fn mixture_rejects_length_mismatch() {
        let r0 = Rir::impulse(SR);
        let decay = DecayParams {
            t0_samples: 100,
            t1_samples: 200,
            alpha: 0.5,
        };
        assert!(make_mixture(&white(10, 1), &white(11, 2), &r0, &mixture_params(decay, 0.0)).is_err());
    }

    #[test]
    fn degenerate_decay_propagates() {
        let r0 = room(12, 4000, 0.3);
        let decay = DecayParams {
            t0_samples: 900,
            t1_samples: 900,
            alpha: 0.5,
        };
        let err = make_mixture(&white(100, 1), &white(100, 2), &r0, &mixture_params(decay, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateDecay(900)));
    }
}
