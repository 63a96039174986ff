//! Procedural genre-like corpus for running the ablation without real data.
//!
//! Each class is a looping melodic motif, broken into phrases separated by
//! rests, played with its own harmonic stack and note envelope. All classes
//! share the motif, so the partial pattern is what tells them apart. A track
//! is the class signal read on a warped clock `t -> (1 + eps) t`, transposed
//! by a small pitch offset, plus white noise. With zero jitter and no noise
//! all tracks of a class coincide.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::signal_io::{write_wav_i16, AudioClip, DatasetManifest, ManifestEntry, DEFAULT_SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub tracks_per_class: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Signal-to-noise ratio; `None` means no noise.
    pub snr_db: Option<f64>,
    /// Per-track clock warp drawn from `[-warp_jitter, warp_jitter]`.
    pub warp_jitter: f64,
    /// Per-track transposition in semitones, drawn from `[-pitch_jitter, pitch_jitter]`.
    pub pitch_jitter: f64,
    pub fundamental_hz: f64,
    pub harmonics: usize,
    pub motif_len: usize,
    /// Mean note length; classes deviate from it by up to 20%.
    pub note_secs: f64,
    /// Rhythm envelope: each phrase sounds this many notes...
    pub phrase_notes: usize,
    /// ...then rests for this many note lengths.
    pub rest_notes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            tracks_per_class: 40,
            duration_secs: 5.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            snr_db: Some(20.0),
            warp_jitter: 0.3,
            pitch_jitter: 1.0,
            fundamental_hz: 220.0,
            harmonics: 10,
            motif_len: 4,
            note_secs: 0.3,
            phrase_notes: 2,
            rest_notes: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.tracks_per_class < 1 {
            return bad("need at least 1 track per class");
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return bad("duration must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive");
        }
        if !(0.0..1.0).contains(&self.warp_jitter) {
            return bad("warp jitter must lie in [0, 1)");
        }
        if !(self.pitch_jitter >= 0.0 && self.pitch_jitter.is_finite()) {
            return bad("pitch jitter must be non-negative");
        }
        if !(self.fundamental_hz > 0.0)
            || self.harmonics == 0
            || self.motif_len == 0
            || self.phrase_notes == 0
            || !(self.note_secs > 0.0)
        {
            return bad("fundamental, harmonics and motif length must be positive");
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad("SNR must be finite or absent");
            }
        }
        Ok(())
    }

    pub fn class_name(&self, class: usize) -> String {
        format!("class{class}")
    }

    pub fn track_id(&self, class: usize, index: usize) -> String {
        format!("class{class}_{index:03}")
    }
}

/// Fixed musical identity of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub harmonic_amps: Vec<f64>,
    pub harmonic_phases: Vec<f64>,
    /// Semitone offsets of the looping motif.
    pub motif: Vec<f64>,
    pub note_secs: f64,
    pub decay: f64,
}

/// Per-track deviations from the class recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackJitter {
    pub warp: f64,
    pub pitch_semitones: f64,
    pub noise_seed: u64,
}

/// Relative spread of note length and decay between classes.
const RECIPE_SPREAD: f64 = 0.2;

const SCALE: [f64; 8] = [0.0, 2.0, 3.0, 5.0, 7.0, 8.0, 10.0, 12.0];

/// Partial numbers of the first classes' harmonic stacks. Later classes
/// draw random stacks.
const STACKS: [&[usize]; 5] = [
    &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    &[1, 3, 5, 7, 9],
    &[1, 2, 4, 8],
    &[1, 4, 7, 10],
    &[1, 2, 5, 10],
];

pub fn class_recipes(config: &SynthConfig) -> Vec<ClassRecipe> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let motif: Vec<f64> = (0..config.motif_len)
        .map(|_| SCALE[rng.gen_range(0..SCALE.len())])
        .collect();
    (0..config.classes)
        .map(|c| {
            let harmonic_amps = (1..=config.harmonics)
                .map(|h| {
                    let on = match STACKS.get(c) {
                        Some(stack) => stack.contains(&h),
                        None => h == 1 || rng.gen_bool(0.5),
                    };
                    if on {
                        1.0 / (h as f64).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            let harmonic_phases = (0..config.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            ClassRecipe {
                harmonic_amps,
                harmonic_phases,
                motif: motif.clone(),
                note_secs: config.note_secs * (1.0 + RECIPE_SPREAD * rng.gen_range(-1.0..1.0)),
                decay: 2.0 * (1.0 + RECIPE_SPREAD * rng.gen_range(-1.0..1.0)),
            }
        })
        .collect()
}

fn track_jitter(config: &SynthConfig, class: usize, index: usize) -> TrackJitter {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + (class * config.tracks_per_class + index) as u64);
    let warp = if config.warp_jitter > 0.0 {
        rng.gen_range(-config.warp_jitter..=config.warp_jitter)
    } else {
        0.0
    };
    let pitch_semitones = if config.pitch_jitter > 0.0 {
        rng.gen_range(-config.pitch_jitter..=config.pitch_jitter)
    } else {
        0.0
    };
    TrackJitter {
        warp,
        pitch_semitones,
        noise_seed: rng.gen(),
    }
}

fn envelope(u: f64, decay: f64) -> f64 {
    const ATTACK: f64 = 0.04;
    const RELEASE: f64 = 0.06;
    let attack = (u / ATTACK).min(1.0);
    let release = ((1.0 - u) / RELEASE).min(1.0);
    attack * release * (-decay * u).exp()
}

/// Clean class signal on the warped clock, before noise and scaling.
pub fn render(config: &SynthConfig, recipe: &ClassRecipe, jitter: &TrackJitter) -> Vec<f64> {
    let sr = config.sample_rate as f64;
    let n = (config.duration_secs * sr).round() as usize;
    let rate = 1.0 + jitter.warp;
    let nyquist = 0.45 * sr;
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let tau = rate * i as f64 / sr;
        let k = (tau / recipe.note_secs).floor();
        let since = tau - k * recipe.note_secs;
        let note = recipe.motif[k as usize % recipe.motif.len()];
        if (k as usize) % (config.phrase_notes + config.rest_notes) >= config.phrase_notes {
            continue;
        }
        let f0 = config.fundamental_hz * 2f64.powf((note + jitter.pitch_semitones) / 12.0);
        let env = envelope(since / recipe.note_secs, recipe.decay);
        let mut s = 0.0;
        for (h, (&a, &phi)) in recipe.harmonic_amps.iter().zip(&recipe.harmonic_phases).enumerate() {
            let f = f0 * (h + 1) as f64;
            if a == 0.0 || f * rate >= nyquist {
                continue;
            }
            s += a * (2.0 * PI * f * since + phi).sin();
        }
        *o = env * s;
    }
    out
}

/// Track samples exactly as a 16-bit round trip through disk would return
/// them.
pub fn synth_track(config: &SynthConfig, recipes: &[ClassRecipe], class: usize, index: usize) -> Result<AudioClip> {
    let jitter = track_jitter(config, class, index);
    let mut x = render(config, &recipes[class], &jitter);
    if let Some(snr) = config.snr_db {
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(jitter.noise_seed);
        for v in &mut x {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.8 / peak } else { 0.0 };
    let samples = x.iter().map(|v| (v * gain * 32768.0).round() / 32768.0).collect();
    AudioClip::new(samples, config.sample_rate)
}

/// Manifest with one entry per generated track; `audio/<track_id>.wav`
/// paths relative to `root`.
pub fn synth_manifest(config: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for c in 0..config.classes {
        for i in 0..config.tracks_per_class {
            let id = config.track_id(c, i);
            entries.push(ManifestEntry {
                path: root.join("audio").join(format!("{id}.wav")),
                track_id: id,
                label: c,
            });
        }
    }
    let names = (0..config.classes).map(|c| config.class_name(c)).collect();
    DatasetManifest::new(entries, names, config.seed)
}

/// Corpus held in memory, keyed like [`synth_manifest`].
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub clips: Vec<AudioClip>,
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig, exec: Exec) -> Result<Self> {
        config.validate()?;
        let recipes = class_recipes(config);
        let manifest = synth_manifest(config, Path::new("."))?;
        let per = config.tracks_per_class;
        let clips = exec.try_map_range(manifest.len(), |k| synth_track(config, &recipes, k / per, k % per))?;
        Ok(Self {
            config: config.clone(),
            manifest,
            clips,
        })
    }

    pub fn clip(&self, track_id: &str) -> Result<&AudioClip> {
        self.manifest
            .entries
            .iter()
            .position(|e| e.track_id == track_id)
            .map(|i| &self.clips[i])
            .ok_or_else(|| Error::Manifest(format!("unknown track {track_id:?}")))
    }

    /// Writes `audio/*.wav`, `manifest.csv` and `synth.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let audio = dir.join("audio");
        std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
        for (entry, clip) in self.manifest.entries.iter().zip(&self.clips) {
            write_wav_i16(audio.join(format!("{}.wav", entry.track_id)), clip)?;
        }
        let manifest_path = dir.join("manifest.csv");
        let on_disk = synth_manifest(&self.config, dir)?;
        on_disk.write_csv(&manifest_path, Some(dir))?;
        let meta = serde_json::json!({
            "config": self.config,
            "config_hash": ConfigHash::of(&self.config),
        });
        let meta_path = dir.join("synth.json");
        std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(manifest_path)
    }
}
