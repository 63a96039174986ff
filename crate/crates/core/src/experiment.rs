//! Experiment configuration and the on-disk plumbing shared by the command
//! line tools: bank files, the feature cache and report output.

use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::cache::FeatureCache;
use crate::error::{Error, Result};
use crate::eval::{ClassifierConfig, TrackFeatures};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::pipeline::{pitch_bank_hash, warp_bank_hash, ClipLoader, Pipeline, PipelineConfig, Stage};
use crate::signal_io::{load_audio_at, split_dataset, AudioClip, DatasetManifest, ManifestEntry, DEFAULT_SAMPLE_RATE};
use crate::synth::SynthConfig;
use crate::template_bank::{load_bank, save_bank, TemplateBank};

/// Schema version written to and expected in experiment files.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Reuse entries whose hash matches, write missing ones.
    #[default]
    Use,
    /// Recompute everything and overwrite.
    Refresh,
    /// Neither read nor write.
    Off,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CachePolicy {
    /// Feature cache directory; `<out_dir>/cache` when unset.
    pub dir: Option<PathBuf>,
    pub mode: CacheMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// `track_id,path,label` CSV. Not needed by `synth`.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sample_rate: u32,
    /// Resample clips recorded at other rates instead of rejecting them.
    pub resample: bool,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub pipeline: PipelineConfig,
    pub classifier: ClassifierConfig,
    pub cache: CachePolicy,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            manifest: None,
            out_dir: PathBuf::from("out"),
            sample_rate: DEFAULT_SAMPLE_RATE,
            resample: false,
            split_seed: 0,
            train_fraction: 0.8,
            pipeline: PipelineConfig::default(),
            classifier: ClassifierConfig::default(),
            cache: CachePolicy::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON experiment file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "{}: schema version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                config.version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = config.manifest.as_mut() {
            resolve(m);
        }
        resolve(&mut config.out_dir);
        if let Some(d) = config.cache.dir.as_mut() {
            resolve(d);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported schema version {}", self.version)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        self.pipeline.validate()?;
        self.synth.validate()
    }

    pub fn hash(&self) -> ConfigHash {
        ConfigHash::of(self)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn bank_dir(&self) -> PathBuf {
        self.out_dir.join("banks")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest given; set \"manifest\" in the config or pass --manifest".into()))
    }
}

/// A loaded manifest with its train/test split.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

impl Experiment {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let manifest = DatasetManifest::read_csv(config.manifest_path()?, config.split_seed)?;
        if manifest.is_empty() {
            return Err(Error::Manifest("manifest lists no tracks".into()));
        }
        let (train, test) = split_dataset(&manifest, config.train_fraction, config.split_seed)?;
        info!(
            "{} tracks in {} classes: {} train, {} test (split seed {})",
            manifest.len(),
            manifest.class_count(),
            train.len(),
            test.len(),
            config.split_seed
        );
        Ok(Self {
            config,
            manifest,
            train,
            test,
        })
    }

    pub fn load_clip(&self, entry: &ManifestEntry) -> Result<AudioClip> {
        load_audio_at(&entry.path, self.config.sample_rate, self.config.resample)
    }

    /// Pipeline configuration with layers enabled through `stage`.
    pub fn pipeline_config(&self, stage: Stage) -> PipelineConfig {
        self.config.pipeline.with_stage(stage)
    }

    pub fn warp_bank_path(&self) -> PathBuf {
        self.config.bank_dir().join("warp.tbk")
    }

    pub fn pitch_bank_path(&self) -> PathBuf {
        self.config.bank_dir().join("pitch.tbk")
    }

    /// Builds the banks needed through `stage`, writes them and returns the
    /// pipeline.
    pub fn build_banks(&self, stage: Stage) -> Result<Pipeline> {
        let config = self.pipeline_config(stage);
        let loader = |e: &ManifestEntry| self.load_clip(e);
        let pipeline = Pipeline::build(config, self.config.sample_rate, &self.train, &loader)?;
        let dir = self.config.bank_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if let Some(b) = pipeline.warp_bank() {
            save_bank(b, self.warp_bank_path())?;
            log_bank(b, &self.warp_bank_path());
        }
        if let Some(b) = pipeline.pitch_bank() {
            save_bank(b, self.pitch_bank_path())?;
            log_bank(b, &self.pitch_bank_path());
        }
        Ok(pipeline)
    }

    /// Pipeline through `stage` from bank files on disk. Fails when a needed
    /// bank is missing or was built under a different configuration.
    pub fn load_pipeline(&self, stage: Stage) -> Result<Pipeline> {
        let config = self.pipeline_config(stage);
        let sr = self.config.sample_rate;
        let warp = if config.warp.enabled {
            let expected = warp_bank_hash(&config, sr, &self.train)?;
            Some(self.read_bank(&self.warp_bank_path(), &expected)?)
        } else {
            None
        };
        let pitch = match &warp {
            Some(w) if config.pitch.enabled => {
                let expected = pitch_bank_hash(&config, w.config_hash(), &self.train);
                Some(self.read_bank(&self.pitch_bank_path(), &expected)?)
            }
            _ => None,
        };
        Pipeline::with_verified_banks(config, sr, &self.train, warp, pitch)
    }

    /// Loads the banks when present and current, otherwise builds them.
    pub fn pipeline(&self, stage: Stage) -> Result<Pipeline> {
        match self.load_pipeline(stage) {
            Ok(p) => Ok(p),
            Err(e @ (Error::Io { .. } | Error::HashMismatch { .. })) => {
                info!("building banks ({e})");
                self.build_banks(stage)
            }
            Err(e) => Err(e),
        }
    }

    fn read_bank(&self, path: &Path, expected: &ConfigHash) -> Result<TemplateBank> {
        let bank = load_bank(path, Some(expected))?;
        log_bank(&bank, path);
        Ok(bank)
    }

    pub fn feature_cache(&self) -> Result<Option<FeatureCache>> {
        match self.config.cache.mode {
            CacheMode::Off => Ok(None),
            _ => FeatureCache::new(self.config.cache_dir()).map(Some),
        }
    }

    /// Features of every track in `manifest` for each of `stages`, read from
    /// the cache where possible.
    pub fn features(
        &self,
        pipeline: &Pipeline,
        manifest: &DatasetManifest,
        stages: &[Stage],
        exec: Exec,
    ) -> Result<Extracted> {
        let cache = self.feature_cache()?;
        let loader = |e: &ManifestEntry| self.load_clip(e);
        extract_cached(
            pipeline,
            manifest,
            &loader,
            stages,
            cache.as_ref(),
            self.config.cache.mode,
            exec,
        )
    }
}

fn log_bank(bank: &TemplateBank, path: &Path) {
    info!(
        "{} bank {}: K={} M={} d={} hash {}",
        bank.layer_tag(),
        path.display(),
        bank.len(),
        bank.orbit_size(),
        bank.dim(),
        bank.config_hash()
    );
}

#[derive(Serialize)]
struct TrackKey<'a> {
    features: ConfigHash,
    track_id: &'a str,
    path: &'a Path,
    source_len: Option<u64>,
    source_mtime_ns: Option<u128>,
}

/// Cache key for one track's features: the feature configuration plus the
/// identity of the source file, so edited audio is recomputed.
pub fn track_feature_hash(pipeline: &Pipeline, stage: Stage, entry: &ManifestEntry) -> ConfigHash {
    let meta = std::fs::metadata(&entry.path).ok();
    ConfigHash::of(&TrackKey {
        features: pipeline.feature_hash(stage),
        track_id: &entry.track_id,
        path: &entry.path,
        source_len: meta.as_ref().map(|m| m.len()),
        source_mtime_ns: meta
            .and_then(|m| m.modified().ok())
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_nanos()),
    })
}

/// Per-stage track features plus the number of tracks served from cache.
#[derive(Clone, Debug)]
pub struct Extracted {
    /// Indexed like the requested stages.
    pub stages: Vec<Vec<TrackFeatures>>,
    pub cache_hits: usize,
}

/// Like [`crate::eval::extract_stages`], going through `cache` when given.
/// A track is recomputed unless every requested stage is cached under its
/// current key.
pub fn extract_cached(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    loader: &ClipLoader<'_>,
    stages: &[Stage],
    cache: Option<&FeatureCache>,
    mode: CacheMode,
    exec: Exec,
) -> Result<Extracted> {
    let inner = pipeline.clone().with_exec(Exec::Sequential);
    let deepest = stages.iter().copied().filter(|s| *s != Stage::Mfcc).max();
    let config_json = serde_json::to_value(pipeline.config())?;
    let per_track = exec.try_map(&manifest.entries, |entry| {
        let keys: Vec<ConfigHash> = stages.iter().map(|&s| track_feature_hash(pipeline, s, entry)).collect();
        if let (Some(c), CacheMode::Use) = (cache, mode) {
            let hits = stages
                .iter()
                .zip(&keys)
                .map(|(&s, k)| c.load(&entry.track_id, s, k))
                .collect::<Result<Vec<_>>>()?;
            if let Some(all) = hits.into_iter().collect::<Option<Vec<_>>>() {
                info!(
                    "cache hit {} ({})",
                    entry.track_id,
                    cache_stamp(c, &entry.track_id, stages)
                );
                return Ok((all, true));
            }
        }
        let clip = loader(entry)?;
        let mut layers = match deepest {
            Some(s) => inner.extract_through(&clip, s)?,
            None => Vec::new(),
        };
        if stages.contains(&Stage::Mfcc) {
            layers.push(inner.mfcc_rows(&clip)?);
        }
        let picked = stages
            .iter()
            .map(|&s| {
                layers
                    .iter()
                    .find(|l| l.stage_tag == s)
                    .cloned()
                    .ok_or_else(|| Error::Invariant(format!("stage {s} was not extracted")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(c) = cache {
            for (seq, key) in picked.iter().zip(&keys) {
                c.store(&entry.track_id, seq, key, config_json.clone())?;
            }
        }
        debug!("extracted {}", entry.track_id);
        Ok::<_, Error>((picked, false))
    })?;
    let cache_hits = per_track.iter().filter(|(_, hit)| *hit).count();
    let stages = (0..stages.len())
        .map(|si| {
            manifest
                .entries
                .iter()
                .zip(&per_track)
                .map(|(entry, (layers, _))| TrackFeatures {
                    track_id: entry.track_id.clone(),
                    label: entry.label,
                    features: layers[si].clone(),
                })
                .collect()
        })
        .collect();
    Ok(Extracted { stages, cache_hits })
}

fn cache_stamp(cache: &FeatureCache, track_id: &str, stages: &[Stage]) -> String {
    stages
        .iter()
        .map(|&s| {
            let p = cache.path_for(track_id, s);
            let mtime = std::fs::metadata(&p)
                .and_then(|m| m.modified())
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_secs());
            format!("{s} mtime {mtime}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}
