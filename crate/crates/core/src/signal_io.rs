//! Audio loading, framing into analysis windows, and dataset manifests.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::resample_linear;

/// Native sample rate of the genre corpus; clips at other rates are refused
/// unless resampling is requested.
pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

/// Mono waveform in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Reads a PCM WAV file. Stereo (or wider) input is averaged to mono and
/// integer samples are scaled by `2^(bits-1)`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedAudio {
            path: path.into(),
            cause: "zero channels".into(),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.into(),
                cause: format!("{bits}-bit {format:?}"),
            })
        }
    };
    if interleaved.len() < channels {
        return Err(Error::MalformedAudio {
            path: path.into(),
            cause: "no sample frames".into(),
        });
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate).map_err(|e| Error::MalformedAudio {
        path: path.into(),
        cause: e.to_string(),
    })
}

/// Loads a clip and enforces `expected_rate`, linearly resampling when
/// `resample` is set and refusing the file otherwise.
pub fn load_audio_at(path: impl AsRef<Path>, expected_rate: u32, resample: bool) -> Result<AudioClip> {
    let path = path.as_ref();
    let clip = load_audio(path)?;
    if clip.sample_rate() == expected_rate {
        return Ok(clip);
    }
    if !resample {
        return Err(Error::SampleRateMismatch {
            path: path.into(),
            found: clip.sample_rate(),
            expected: expected_rate,
        });
    }
    let samples = resample_linear(clip.samples(), clip.sample_rate(), expected_rate)?;
    AudioClip::new(samples, expected_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.into(),
            cause: "unsupported WAV format".into(),
        },
        other => Error::MalformedAudio {
            path: path.into(),
            cause: other.to_string(),
        },
    }
}

/// Writes a mono 16-bit PCM WAV file with the same `2^15` scale that
/// [`load_audio`] divides by, so `k / 32768` round-trips exactly. Samples
/// outside the representable range are clamped.
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in clip.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Converts a duration in milliseconds to a sample count, rounding half to even.
pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round_ties_even() as usize
}

/// Window length and hop in samples for a clip's sample rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGeometry {
    pub window: usize,
    pub hop: usize,
}

impl FrameGeometry {
    pub fn from_ms(window_ms: f64, hop_ms: f64, sample_rate: u32) -> Result<Self> {
        if !(window_ms > 0.0 && hop_ms > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window ({window_ms} ms) and hop ({hop_ms} ms) must be positive"
            )));
        }
        let window = ms_to_samples(window_ms, sample_rate);
        let hop = ms_to_samples(hop_ms, sample_rate);
        if window == 0 || hop == 0 {
            return Err(Error::InvalidParameter(
                "window and hop must span at least one sample".into(),
            ));
        }
        Ok(Self { window, hop })
    }

    /// Number of complete windows in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }
}

/// Slices a signal into complete windows starting at multiples of the hop.
/// The trailing partial window is dropped.
pub fn frame_samples(samples: &[f64], geometry: FrameGeometry) -> Result<Vec<&[f64]>> {
    let count = geometry.frame_count(samples.len());
    if count == 0 {
        return Err(Error::ClipTooShort {
            available: samples.len(),
            window: geometry.window,
        });
    }
    Ok((0..count)
        .map(|i| &samples[i * geometry.hop..i * geometry.hop + geometry.window])
        .collect())
}

pub fn frame_signal(clip: &AudioClip, window_ms: f64, hop_ms: f64) -> Result<Vec<&[f64]>> {
    let geometry = FrameGeometry::from_ms(window_ms, hop_ms, clip.sample_rate())?;
    frame_samples(clip.samples(), geometry)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub split_seed: u64,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    track_id: String,
    path: String,
    label: String,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, class_names: Vec<String>, split_seed: u64) -> Result<Self> {
        let manifest = Self {
            entries,
            class_names,
            split_seed,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.track_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate track_id {:?}", e.track_id)));
            }
            if e.label >= self.class_names.len() {
                return Err(Error::Manifest(format!(
                    "track {:?} has label index {} but only {} classes exist",
                    e.track_id,
                    e.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Reads a `track_id,path,label` CSV. Relative paths are resolved
    /// against the manifest's directory; class names are the sorted unique
    /// labels.
    pub fn read_csv(path: impl AsRef<Path>, split_seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["track_id", "path", "label"] {
            return Err(Error::Manifest(format!(
                "{}: expected header track_id,path,label, found {:?}",
                path.display(),
                headers
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let rows: Vec<ManifestRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
        let class_names: Vec<String> = rows
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let entries = rows
            .into_iter()
            .map(|r| {
                let p = PathBuf::from(&r.path);
                ManifestEntry {
                    label: class_names.binary_search(&r.label).expect("label collected above"),
                    track_id: r.track_id,
                    path: if p.is_absolute() { p } else { base.join(p) },
                }
            })
            .collect();
        Self::new(entries, class_names, split_seed)
    }

    /// Writes the manifest as CSV, storing paths relative to `relative_to`
    /// where possible.
    pub fn write_csv(&self, path: impl AsRef<Path>, relative_to: Option<&Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for e in &self.entries {
            let p = match relative_to {
                Some(root) => e.path.strip_prefix(root).unwrap_or(&e.path),
                None => &e.path,
            };
            writer.serialize(ManifestRow {
                track_id: e.track_id.clone(),
                path: p.to_string_lossy().into_owned(),
                label: self.class_names[e.label].clone(),
            })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn track_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.track_id.as_str())
    }

    fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            class_names: self.class_names.clone(),
            split_seed: self.split_seed,
        }
    }
}

/// Per-class stratified random split. Each class keeps
/// `round(train_fraction * n)` tracks for training, clamped so both sides
/// receive at least one. The result depends only on the set of entries and
/// the seed, not on row order.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_class.entry(e.label).or_default().push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: manifest.class_names[label].clone(),
                count: members.len(),
            });
        }
        members.sort_by(|a, b| a.track_id.cmp(&b.track_id));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let (tr, te) = members.split_at(n_train);
        train.extend(tr.iter().map(|e| (*e).clone()));
        test.extend(te.iter().map(|e| (*e).clone()));
    }
    train.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    test.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    Ok((manifest.with_entries(train), manifest.with_entries(test)))
}
