//! The layered feature cascade: log-spectrogram, warp-invariant signatures,
//! max pooling over neighbouring frames, and pitch-shift-invariant signatures.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::pooling::{signature_values, PoolingSpec};
use crate::signal_io::{frame_samples, AudioClip, DatasetManifest, ManifestEntry};
use crate::spectrogram::{LogSpectrogram, MfccConfig, MfccExtractor, SpectrogramConfig};
use crate::template_bank::{build_orbit, build_orbit_with, sample_templates, TemplateBank};
use crate::transforms::{pitch_shift_frame, time_warp, TransformSpec};

/// Depth of the cascade, plus the MFCC baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "mfcc")]
    Mfcc,
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "warp")]
    Warp,
    #[serde(rename = "warp+translation")]
    WarpTranslation,
    #[serde(rename = "warp+translation+pitch")]
    WarpTranslationPitch,
}

impl Stage {
    /// The four cascade depths, shallowest first.
    pub const ABLATION: [Stage; 4] = [
        Stage::Base,
        Stage::Warp,
        Stage::WarpTranslation,
        Stage::WarpTranslationPitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mfcc => "mfcc",
            Stage::Base => "base",
            Stage::Warp => "warp",
            Stage::WarpTranslation => "warp+translation",
            Stage::WarpTranslationPitch => "warp+translation+pitch",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Mfcc => "MFCC",
            Stage::Base => "Log Spectrogram",
            Stage::Warp => "Invariant (Warp)",
            Stage::WarpTranslation => "Invariant (Warp+Translation)",
            Stage::WarpTranslationPitch => "Invariant (Warp+Translation+Pitch)",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Mfcc]
            .into_iter()
            .chain(Stage::ABLATION)
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown stage {s:?}; expected mfcc, base, warp, warp+translation or warp+translation+pitch"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpLayerConfig {
    pub enabled: bool,
    pub templates: usize,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub epsilon_count: usize,
    pub pooling: PoolingSpec,
    /// Subtract each base frame's mean over frequency before projecting, on
    /// templates and inputs alike.
    pub center_frames: bool,
}

impl Default for WarpLayerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            templates: 256,
            epsilon_min: -0.4,
            epsilon_max: 0.4,
            epsilon_count: 17,
            pooling: PoolingSpec::default(),
            center_frames: false,
        }
    }
}

impl WarpLayerConfig {
    pub fn transform(&self) -> Result<TransformSpec> {
        TransformSpec::time_warp_grid(self.epsilon_min, self.epsilon_max, self.epsilon_count)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxPoolConfig {
    pub enabled: bool,
    pub width: usize,
    pub stride: usize,
}

impl Default for MaxPoolConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            width: 8,
            stride: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchLayerConfig {
    pub enabled: bool,
    pub templates: usize,
    /// Frequency-bin translations of the base-layer frames.
    pub shifts: Vec<i64>,
    pub pooling: PoolingSpec,
}

impl Default for PitchLayerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            templates: 256,
            shifts: (-6..=6).map(|s| 2 * s).collect(),
            pooling: PoolingSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSeeds {
    pub warp_templates: u64,
    pub pitch_templates: u64,
}

impl Default for PipelineSeeds {
    fn default() -> Self {
        Self {
            warp_templates: 1,
            pitch_templates: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub base: SpectrogramConfig,
    pub warp: WarpLayerConfig,
    pub maxpool: MaxPoolConfig,
    pub pitch: PitchLayerConfig,
    pub mfcc: MfccConfig,
    pub seeds: PipelineSeeds,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxpool.width == 0 || self.maxpool.stride == 0 {
            return Err(Error::Config("max-pool width and stride must be at least 1".into()));
        }
        if self.pitch.enabled && !self.maxpool.enabled {
            return Err(Error::Config("the pitch layer requires the max-pool layer".into()));
        }
        if self.maxpool.enabled && !self.warp.enabled {
            return Err(Error::Config("the max-pool layer requires the warp layer".into()));
        }
        if self.warp.enabled {
            if self.warp.templates == 0 {
                return Err(Error::Config("warp layer needs at least one template".into()));
            }
            self.warp.transform()?;
            self.warp.pooling.validate()?;
        }
        if self.pitch.enabled {
            if self.pitch.templates == 0 {
                return Err(Error::Config("pitch layer needs at least one template".into()));
            }
            TransformSpec::pitch_shifts(self.pitch.shifts.iter().copied(), 0.0)?;
            self.pitch.pooling.validate()?;
        }
        Ok(())
    }

    /// Deepest enabled layer.
    pub fn stage(&self) -> Stage {
        match (self.warp.enabled, self.maxpool.enabled, self.pitch.enabled) {
            (true, true, true) => Stage::WarpTranslationPitch,
            (true, true, false) => Stage::WarpTranslation,
            (true, false, _) => Stage::Warp,
            _ => Stage::Base,
        }
    }

    /// Same configuration with the layers enabled exactly up to `stage`.
    pub fn with_stage(&self, stage: Stage) -> Self {
        let mut c = self.clone();
        let depth = match stage {
            Stage::Mfcc | Stage::Base => 0,
            Stage::Warp => 1,
            Stage::WarpTranslation => 2,
            Stage::WarpTranslationPitch => 3,
        };
        c.warp.enabled = depth >= 1;
        c.maxpool.enabled = depth >= 2;
        c.pitch.enabled = depth >= 3;
        c
    }
}

#[derive(Serialize)]
struct WarpBankRecipe<'a> {
    layer: &'static str,
    sample_rate: u32,
    base: &'a SpectrogramConfig,
    templates: usize,
    epsilons: Vec<f64>,
    center_frames: bool,
    seed: u64,
    train: Vec<&'a str>,
}

#[derive(Serialize)]
struct PitchBankRecipe<'a> {
    layer: &'static str,
    warp_bank: &'a ConfigHash,
    warp_pooling: &'a PoolingSpec,
    maxpool: &'a MaxPoolConfig,
    templates: usize,
    shifts: &'a [i64],
    seed: u64,
    train: Vec<&'a str>,
}

#[derive(Serialize)]
struct FeatureRecipe<'a> {
    stage: Stage,
    sample_rate: u32,
    config: &'a PipelineConfig,
    warp_bank: Option<&'a ConfigHash>,
    pitch_bank: Option<&'a ConfigHash>,
}

fn sorted_ids(train: &DatasetManifest) -> Vec<&str> {
    let mut ids: Vec<&str> = train.track_ids().collect();
    ids.sort_unstable();
    ids
}

/// Hash identifying the warp bank that `config` builds from `train`.
pub fn warp_bank_hash(config: &PipelineConfig, sample_rate: u32, train: &DatasetManifest) -> Result<ConfigHash> {
    Ok(ConfigHash::of(&WarpBankRecipe {
        layer: "warp",
        sample_rate,
        base: &config.base,
        templates: config.warp.templates,
        epsilons: config.warp.transform()?.parameters,
        center_frames: config.warp.center_frames,
        seed: config.seeds.warp_templates,
        train: sorted_ids(train),
    }))
}

/// Hash identifying the pitch bank built on top of the warp bank `warp`.
pub fn pitch_bank_hash(config: &PipelineConfig, warp: &ConfigHash, train: &DatasetManifest) -> ConfigHash {
    ConfigHash::of(&PitchBankRecipe {
        layer: "pitch",
        warp_bank: warp,
        warp_pooling: &config.warp.pooling,
        maxpool: &config.maxpool,
        templates: config.pitch.templates,
        shifts: &config.pitch.shifts,
        seed: config.seeds.pitch_templates,
        train: sorted_ids(train),
    })
}

/// Per-frame (or per pooled position) feature rows from one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub rows: Vec<Vec<f64>>,
    pub stage_tag: Stage,
}

impl FeatureSequence {
    pub fn new(rows: Vec<Vec<f64>>, stage_tag: Stage) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("feature sequence"))?;
        let d = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Ok(Self { rows, stage_tag })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Mean over rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for r in &self.rows {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = self.rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

fn signature_layer(
    seq: &FeatureSequence,
    bank: &TemplateBank,
    spec: &PoolingSpec,
    tag: Stage,
    exec: Exec,
) -> Result<FeatureSequence> {
    if seq.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: seq.dim(),
        });
    }
    let rows = exec.try_map(&seq.rows, |row| signature_values(row, bank, spec, Exec::Sequential))?;
    FeatureSequence::new(rows, tag)
}

fn center(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

/// Subtracts each row's mean.
pub fn center_rows(seq: &FeatureSequence) -> FeatureSequence {
    FeatureSequence {
        rows: seq.rows.iter().cloned().map(center).collect(),
        stage_tag: seq.stage_tag,
    }
}

/// Base rows as the warp layer sees them.
fn warp_input<'a>(config: &WarpLayerConfig, seq: &'a FeatureSequence) -> std::borrow::Cow<'a, FeatureSequence> {
    if config.center_frames {
        std::borrow::Cow::Owned(center_rows(seq))
    } else {
        std::borrow::Cow::Borrowed(seq)
    }
}

/// Replaces every row by its signature over the warp bank.
pub fn layer2_warp(
    seq: &FeatureSequence,
    bank: &TemplateBank,
    spec: &PoolingSpec,
    exec: Exec,
) -> Result<FeatureSequence> {
    signature_layer(seq, bank, spec, Stage::Warp, exec)
}

/// Componentwise max over windows of `width` rows advanced by `stride`;
/// incomplete trailing windows are dropped.
pub fn layer3_maxpool(seq: &FeatureSequence, width: usize, stride: usize) -> Result<FeatureSequence> {
    if width == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "max-pool width and stride must be at least 1".into(),
        ));
    }
    if seq.len() < width {
        return Err(Error::InvalidParameter(format!(
            "{} rows cannot fill a {width}-row pooling window",
            seq.len()
        )));
    }
    let count = (seq.len() - width) / stride + 1;
    let rows = (0..count)
        .map(|j| max_rows(&seq.rows[j * stride..j * stride + width]))
        .collect();
    FeatureSequence::new(rows, Stage::WarpTranslation)
}

fn max_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = rows[0].clone();
    for r in &rows[1..] {
        for (o, &v) in out.iter_mut().zip(r) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

/// Replaces every row by its signature over the pitch bank.
pub fn layer4_pitch(
    seq: &FeatureSequence,
    bank: &TemplateBank,
    spec: &PoolingSpec,
    exec: Exec,
) -> Result<FeatureSequence> {
    signature_layer(seq, bank, spec, Stage::WarpTranslationPitch, exec)
}

/// Loads the audio for a manifest entry.
pub type ClipLoader<'a> = dyn Fn(&ManifestEntry) -> Result<AudioClip> + Sync + 'a;

/// Samples raw audio segments from the training tracks, warps each by every
/// grid value and stores the base-layer frame of the first window of each
/// warped segment.
pub fn build_warp_bank(
    config: &PipelineConfig,
    front: &LogSpectrogram,
    train: &DatasetManifest,
    loader: &ClipLoader<'_>,
    exec: Exec,
) -> Result<TemplateBank> {
    let spec = config.warp.transform()?;
    let geometry = front.geometry();
    let window = geometry.window;
    // Each template keeps enough audio past its window for the fastest warp
    // to fill the whole window with signal.
    let reach = warp_reach(window, config.warp.epsilon_max);
    let sampled = sample_templates(
        train,
        config.warp.templates,
        |entry| {
            let clip = loader(entry)?;
            let x = clip.samples();
            Ok((0..geometry.frame_count(x.len()))
                .map(|i| {
                    let start = i * geometry.hop;
                    let mut seg = x[start..x.len().min(start + reach)].to_vec();
                    seg.resize(reach, 0.0);
                    seg
                })
                .collect())
        },
        config.seeds.warp_templates,
        exec,
    )?;
    let represent = |w: &[f64]| {
        let f = front.frame(&w[..window])?;
        Ok(if config.warp.center_frames { center(f) } else { f })
    };
    let orbits = exec.try_map_range(sampled.len(), |k| {
        let t = &sampled[k];
        build_orbit(k, &t.source_track, &t.vector, &spec, Some(&represent))
    })?;
    TemplateBank::new(orbits, "warp", warp_bank_hash(config, front.sample_rate(), train)?)
}

/// Samples blocks of `maxpool.width` consecutive base frames, pitch-shifts
/// each frame of a block, and propagates the block through the warp and
/// max-pool layers, storing the pooled vector for every shift.
pub fn build_pitch_bank(
    config: &PipelineConfig,
    front: &LogSpectrogram,
    warp_bank: &TemplateBank,
    train: &DatasetManifest,
    loader: &ClipLoader<'_>,
    exec: Exec,
) -> Result<TemplateBank> {
    let fill = front.log_floor().ln();
    let spec = TransformSpec::pitch_shifts(config.pitch.shifts.iter().copied(), fill)?;
    let width = config.maxpool.width;
    let d = front.dim();
    let sampled = sample_templates(
        train,
        config.pitch.templates,
        |entry| {
            let clip = loader(entry)?;
            let m = front.compute_with(clip.samples(), Exec::Sequential)?;
            if m.rows < width {
                return Ok(Vec::new());
            }
            Ok((0..=m.rows - width)
                .map(|start| m.values[start * d..(start + width) * d].to_vec())
                .collect())
        },
        config.seeds.pitch_templates,
        exec,
    )?;
    let pooling = &config.warp.pooling;
    let orbits = exec.try_map_range(sampled.len(), |k| {
        let block = &sampled[k].vector;
        build_orbit_with(k, &sampled[k].source_track, &spec, |shift| {
            let frames = block
                .chunks_exact(d)
                .map(|f| pitch_shift_frame(f, shift as i64, fill))
                .collect::<Result<Vec<_>>>()?;
            let base = FeatureSequence::new(frames, Stage::Base)?;
            let warped = layer2_warp(&warp_input(&config.warp, &base), warp_bank, pooling, Exec::Sequential)?;
            Ok(layer3_maxpool(&warped, width, width)?.rows.swap_remove(0))
        })
    })?;
    TemplateBank::new(orbits, "pitch", pitch_bank_hash(config, warp_bank.config_hash(), train))
}

/// Immutable feature extractor: configuration, front end and template banks.
#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    front: LogSpectrogram,
    mfcc: MfccExtractor,
    warp_bank: Option<Arc<TemplateBank>>,
    pitch_bank: Option<Arc<TemplateBank>>,
    exec: Exec,
}

impl Pipeline {
    /// Wraps existing banks. Banks required by the enabled layers must be
    /// present and dimensionally consistent with the front end.
    pub fn new(
        config: PipelineConfig,
        sample_rate: u32,
        warp_bank: Option<TemplateBank>,
        pitch_bank: Option<TemplateBank>,
    ) -> Result<Self> {
        config.validate()?;
        let front = LogSpectrogram::new(&config.base, sample_rate)?;
        let mfcc = MfccExtractor::new(front.geometry().window, sample_rate, &config.mfcc)?;
        if config.warp.enabled && warp_bank.is_none() {
            return Err(Error::Config("warp layer enabled but no warp bank supplied".into()));
        }
        if config.pitch.enabled && pitch_bank.is_none() {
            return Err(Error::Config("pitch layer enabled but no pitch bank supplied".into()));
        }
        if let Some(b) = &warp_bank {
            if b.dim() != front.dim() {
                return Err(Error::DimensionMismatch {
                    expected: front.dim(),
                    found: b.dim(),
                });
            }
            let width = config.warp.pooling.width() * b.len();
            if let Some(p) = &pitch_bank {
                if p.dim() != width {
                    return Err(Error::DimensionMismatch {
                        expected: width,
                        found: p.dim(),
                    });
                }
            }
        }
        Ok(Self {
            config,
            front,
            mfcc,
            warp_bank: warp_bank.map(Arc::new),
            pitch_bank: pitch_bank.map(Arc::new),
            exec: Exec::default(),
        })
    }

    /// Like [`Pipeline::new`], additionally checking each bank's hash against
    /// the hash this configuration would produce from `train`.
    pub fn with_verified_banks(
        config: PipelineConfig,
        sample_rate: u32,
        train: &DatasetManifest,
        warp_bank: Option<TemplateBank>,
        pitch_bank: Option<TemplateBank>,
    ) -> Result<Self> {
        if let Some(w) = &warp_bank {
            let expected = warp_bank_hash(&config, sample_rate, train)?;
            w.config_hash().verify(&expected)?;
            if let Some(p) = &pitch_bank {
                p.config_hash().verify(&pitch_bank_hash(&config, &expected, train))?;
            }
        }
        Self::new(config, sample_rate, warp_bank, pitch_bank)
    }

    /// Samples and builds whatever banks the enabled layers need.
    pub fn build(
        config: PipelineConfig,
        sample_rate: u32,
        train: &DatasetManifest,
        loader: &ClipLoader<'_>,
    ) -> Result<Self> {
        config.validate()?;
        let exec = Exec::default();
        let front = LogSpectrogram::new(&config.base, sample_rate)?;
        let warp = if config.warp.enabled {
            Some(build_warp_bank(&config, &front, train, loader, exec)?)
        } else {
            None
        };
        let pitch = match (&warp, config.pitch.enabled) {
            (Some(w), true) => Some(build_pitch_bank(&config, &front, w, train, loader, exec)?),
            _ => None,
        };
        Self::new(config, sample_rate, warp, pitch)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn front(&self) -> &LogSpectrogram {
        &self.front
    }

    pub fn sample_rate(&self) -> u32 {
        self.front.sample_rate()
    }

    pub fn warp_bank(&self) -> Option<&TemplateBank> {
        self.warp_bank.as_deref()
    }

    pub fn pitch_bank(&self) -> Option<&TemplateBank> {
        self.pitch_bank.as_deref()
    }

    pub fn stage(&self) -> Stage {
        self.config.stage()
    }

    /// Identifies features of `stage` produced by this pipeline.
    pub fn feature_hash(&self, stage: Stage) -> ConfigHash {
        let depth_config = self.config.with_stage(stage);
        ConfigHash::of(&FeatureRecipe {
            stage,
            sample_rate: self.sample_rate(),
            config: &depth_config,
            warp_bank: (stage >= Stage::Warp)
                .then(|| self.warp_bank.as_ref().map(|b| b.config_hash()))
                .flatten(),
            pitch_bank: (stage >= Stage::WarpTranslationPitch)
                .then(|| self.pitch_bank.as_ref().map(|b| b.config_hash()))
                .flatten(),
        })
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != self.sample_rate() {
            return Err(Error::InvalidParameter(format!(
                "clip sample rate {} differs from pipeline rate {}",
                clip.sample_rate(),
                self.sample_rate()
            )));
        }
        Ok(())
    }

    /// Base log-spectrogram rows.
    pub fn layer1(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        self.check_clip(clip)?;
        let m = self.front.compute_with(clip.samples(), self.exec)?;
        FeatureSequence::new(m.to_rows(), Stage::Base)
    }

    /// MFCC rows over the same analysis windows as the base layer.
    pub fn mfcc_rows(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        self.check_clip(clip)?;
        let windows = frame_samples(clip.samples(), self.front.geometry())?;
        let rows = self
            .exec
            .try_map(&windows, |w| self.mfcc.compute(w).map(|v| v.coeffs))?;
        FeatureSequence::new(rows, Stage::Mfcc)
    }

    /// Base and warp-layer rows for a single analysis window, one vector per
    /// requested stage.
    pub fn window_features(&self, window: &[f64], stages: &[Stage]) -> Result<Vec<Vec<f64>>> {
        let base = self.front.frame(window)?;
        let mut warp = None;
        stages
            .iter()
            .map(|&s| match s {
                Stage::Base => Ok(base.clone()),
                Stage::Warp => {
                    if warp.is_none() {
                        let bank = self
                            .warp_bank
                            .as_deref()
                            .ok_or_else(|| Error::Config("stage warp needs the warp bank".into()))?;
                        let input = if self.config.warp.center_frames {
                            center(base.clone())
                        } else {
                            base.clone()
                        };
                        warp = Some(signature_values(&input, bank, &self.config.warp.pooling, self.exec)?);
                    }
                    Ok(warp.clone().expect("computed above"))
                }
                other => Err(Error::InvalidParameter(format!(
                    "stage {other} is not defined on a single window"
                ))),
            })
            .collect()
    }

    /// Output of every cascade depth from the base layer through `stage`,
    /// shallowest first. `Stage::Mfcc` yields just the MFCC rows.
    pub fn extract_through(&self, clip: &AudioClip, stage: Stage) -> Result<Vec<FeatureSequence>> {
        if stage == Stage::Mfcc {
            return Ok(vec![self.mfcc_rows(clip)?]);
        }
        let missing = |layer: &str| Error::Config(format!("stage {stage} needs the {layer} bank"));
        let mut out = vec![self.layer1(clip)?];
        if stage >= Stage::Warp {
            let bank = self.warp_bank.as_deref().ok_or_else(|| missing("warp"))?;
            let input = warp_input(&self.config.warp, &out[0]);
            let warped = layer2_warp(&input, bank, &self.config.warp.pooling, self.exec)?;
            out.push(warped);
        }
        if stage >= Stage::WarpTranslation {
            out.push(layer3_maxpool(
                &out[1],
                self.config.maxpool.width,
                self.config.maxpool.stride,
            )?);
        }
        if stage >= Stage::WarpTranslationPitch {
            let bank = self.pitch_bank.as_deref().ok_or_else(|| missing("pitch"))?;
            out.push(layer4_pitch(&out[2], bank, &self.config.pitch.pooling, self.exec)?);
        }
        Ok(out)
    }

    pub fn extract_stage(&self, clip: &AudioClip, stage: Stage) -> Result<FeatureSequence> {
        Ok(self.extract_through(clip, stage)?.pop().expect("at least one layer"))
    }

    /// Runs every enabled layer.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        self.extract_stage(clip, self.stage())
    }
}

/// Samples a window of `window` samples needs so that warping it by up to
/// `epsilon_max` still reads signal throughout.
pub fn warp_reach(window: usize, epsilon_max: f64) -> usize {
    ((1.0 + epsilon_max.max(0.0)) * window as f64).ceil() as usize + 2
}

/// Warped copy of a clip, same length, zero-extended.
pub fn warp_clip(clip: &AudioClip, epsilon: f64) -> Result<AudioClip> {
    AudioClip::new(time_warp(clip.samples(), epsilon)?, clip.sample_rate())
}
