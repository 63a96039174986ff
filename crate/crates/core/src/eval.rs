//! Frame-level training and prediction, majority voting per track, and the
//! resulting error report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    default_lambda_grid, majority_vote, predict_frame, select_lambda, train_ridge_with, RidgeModel,
};
use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::pipeline::{ClipLoader, FeatureSequence, Pipeline, Stage};
use crate::signal_io::DatasetManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub lambda: f64,
    /// Pick lambda from `lambda_grid` by grouped cross-validation instead.
    pub cross_validate: bool,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            cross_validate: false,
            lambda_grid: default_lambda_grid(),
            folds: 5,
        }
    }
}

/// Features of one labelled track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFeatures {
    pub track_id: String,
    pub label: usize,
    pub features: FeatureSequence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub track_id: String,
    pub frame_index: usize,
    pub predicted: usize,
    #[serde(rename = "true")]
    pub truth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackPrediction {
    pub track_id: String,
    pub predicted: usize,
    #[serde(rename = "true")]
    pub truth: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stage: Stage,
    pub feature_label: String,
    pub frame_error_rate: f64,
    pub track_error_rate: f64,
    /// `confusion[true][predicted]`, counted over tracks.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
    pub class_names: Vec<String>,
    pub lambda: f64,
    pub split_seed: u64,
    pub config_hash: ConfigHash,
    pub feature_dim: usize,
    pub dropped_dims: usize,
    pub train_tracks: usize,
    pub train_frames: usize,
    pub test_tracks: usize,
    pub test_frames: usize,
    pub tracks: Vec<TrackPrediction>,
    pub frames: Vec<FramePrediction>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_frame_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for f in &self.frames {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Error rates recomputed from the shipped per-frame log.
    pub fn recompute_rates(&self) -> Result<(f64, f64)> {
        if self.frames.is_empty() {
            return Err(Error::Empty("frame predictions"));
        }
        let wrong = self.frames.iter().filter(|f| f.predicted != f.truth).count();
        let frame = wrong as f64 / self.frames.len() as f64;
        let mut track_wrong = 0;
        let mut tracks = 0;
        let mut i = 0;
        while i < self.frames.len() {
            let id = &self.frames[i].track_id;
            let end = i + self.frames[i..].iter().take_while(|f| &f.track_id == id).count();
            let votes: Vec<usize> = self.frames[i..end].iter().map(|f| f.predicted).collect();
            if majority_vote(&votes)? != self.frames[i].truth {
                track_wrong += 1;
            }
            tracks += 1;
            i = end;
        }
        Ok((frame, track_wrong as f64 / tracks as f64))
    }

    pub fn summary_table(&self) -> String {
        results_table(std::slice::from_ref(self))
    }
}

/// Plain-text table with one row per report.
pub fn results_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.feature_label.len())
        .chain([7])
        .max()
        .unwrap_or(7);
    let mut s = String::new();
    let rule = "-".repeat(width + 34);
    let _ = writeln!(s, "{rule}");
    let _ = writeln!(
        s,
        "{:<width$}  {:>15}  {:>15}",
        "Feature", "Track error (%)", "Frame error (%)"
    );
    let _ = writeln!(s, "{rule}");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<width$}  {:>15.1}  {:>15.1}",
            r.feature_label,
            100.0 * r.track_error_rate,
            100.0 * r.frame_error_rate
        );
    }
    let _ = writeln!(s, "{rule}");
    s
}

/// Run metadata carried into the report.
#[derive(Clone, Copy, Debug)]
pub struct EvalMeta {
    pub stage: Stage,
    pub split_seed: u64,
    pub config_hash: ConfigHash,
}

fn sorted_by_id(tracks: &[TrackFeatures]) -> Vec<&TrackFeatures> {
    let mut v: Vec<&TrackFeatures> = tracks.iter().collect();
    v.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    v
}

/// Trains on every training frame and reports frame and track errors on
/// the test tracks. Both sets are sorted by track id first, so the report
/// does not depend on input order.
pub fn evaluate_features(
    train: &[TrackFeatures],
    test: &[TrackFeatures],
    class_names: &[String],
    classifier: &ClassifierConfig,
    meta: EvalMeta,
    exec: Exec,
) -> Result<EvalReport> {
    let classes = class_names.len();
    if train.is_empty() {
        return Err(Error::Empty("training tracks"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test tracks"));
    }
    let train = sorted_by_id(train);
    let test = sorted_by_id(test);
    let mut x: Vec<&[f64]> = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for (g, t) in train.iter().enumerate() {
        for row in &t.features.rows {
            x.push(row);
            y.push(t.label);
            groups.push(g);
        }
    }
    let lambda = if classifier.cross_validate {
        select_lambda(
            &x,
            &y,
            &groups,
            classes,
            &classifier.lambda_grid,
            classifier.folds,
            meta.split_seed,
        )?
    } else {
        classifier.lambda
    };
    let model = train_ridge_with(&x, &y, classes, lambda, exec)?;
    predict_tracks(&model, &test, class_names, meta, train.len(), x.len(), exec)
}

fn predict_tracks(
    model: &RidgeModel,
    test: &[&TrackFeatures],
    class_names: &[String],
    meta: EvalMeta,
    train_tracks: usize,
    train_frames: usize,
    exec: Exec,
) -> Result<EvalReport> {
    let classes = class_names.len();
    let per_track = exec.try_map(test, |t| {
        t.features
            .rows
            .iter()
            .map(|r| predict_frame(model, r))
            .collect::<Result<Vec<usize>>>()
    })?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut frames = Vec::new();
    let mut tracks = Vec::new();
    let mut frame_wrong = 0usize;
    let mut track_wrong = 0usize;
    for (t, preds) in test.iter().zip(&per_track) {
        if t.label >= classes {
            return Err(Error::InvalidParameter(format!("test label {} out of range", t.label)));
        }
        let vote = majority_vote(preds)?;
        confusion[t.label][vote] += 1;
        track_wrong += usize::from(vote != t.label);
        for (i, &p) in preds.iter().enumerate() {
            frame_wrong += usize::from(p != t.label);
            frames.push(FramePrediction {
                track_id: t.track_id.clone(),
                frame_index: i,
                predicted: p,
                truth: t.label,
            });
        }
        tracks.push(TrackPrediction {
            track_id: t.track_id.clone(),
            predicted: vote,
            truth: t.label,
            frames: preds.len(),
        });
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                row[c] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        stage: meta.stage,
        feature_label: meta.stage.label().to_owned(),
        frame_error_rate: frame_wrong as f64 / frames.len() as f64,
        track_error_rate: track_wrong as f64 / tracks.len() as f64,
        confusion,
        per_class_accuracy,
        class_names: class_names.to_vec(),
        lambda: model.lambda,
        split_seed: meta.split_seed,
        config_hash: meta.config_hash,
        feature_dim: model.feature_dim,
        dropped_dims: model.dropped_dims(),
        train_tracks,
        train_frames,
        test_tracks: tracks.len(),
        test_frames: frames.len(),
        tracks,
        frames,
    })
}

/// Feature sequences of every track for each requested stage, in stage
/// order then manifest order. Tracks run in parallel; the cascade is shared
/// so deeper stages reuse shallower ones.
pub fn extract_stages(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    loader: &ClipLoader<'_>,
    stages: &[Stage],
    exec: Exec,
) -> Result<Vec<Vec<TrackFeatures>>> {
    let inner = pipeline.clone().with_exec(Exec::Sequential);
    let deepest = stages.iter().copied().filter(|s| *s != Stage::Mfcc).max();
    let want_mfcc = stages.contains(&Stage::Mfcc);
    let per_track = exec.try_map(&manifest.entries, |entry| {
        let clip = loader(entry)?;
        let mut layers = match deepest {
            Some(s) => inner.extract_through(&clip, s)?,
            None => Vec::new(),
        };
        if want_mfcc {
            layers.push(inner.mfcc_rows(&clip)?);
        }
        Ok::<_, Error>(layers)
    })?;
    let mut out = Vec::with_capacity(stages.len());
    for &stage in stages {
        let tracks = manifest
            .entries
            .iter()
            .zip(&per_track)
            .map(|(entry, layers)| {
                let seq = layers
                    .iter()
                    .find(|l| l.stage_tag == stage)
                    .expect("stage extracted")
                    .clone();
                TrackFeatures {
                    track_id: entry.track_id.clone(),
                    label: entry.label,
                    features: seq,
                }
            })
            .collect();
        out.push(tracks);
    }
    Ok(out)
}

/// Extracts, trains and scores one report per stage.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    pipeline: &Pipeline,
    train: &DatasetManifest,
    test: &DatasetManifest,
    loader: &ClipLoader<'_>,
    stages: &[Stage],
    classifier: &ClassifierConfig,
    split_seed: u64,
    exec: Exec,
) -> Result<Vec<EvalReport>> {
    if train.class_names != test.class_names {
        return Err(Error::Manifest(
            "train and test manifests disagree on class names".into(),
        ));
    }
    let tr = extract_stages(pipeline, train, loader, stages, exec)?;
    let te = extract_stages(pipeline, test, loader, stages, exec)?;
    stages
        .iter()
        .zip(tr.iter().zip(&te))
        .map(|(&stage, (a, b))| {
            let meta = EvalMeta {
                stage,
                split_seed,
                config_hash: pipeline.feature_hash(stage),
            };
            evaluate_features(a, b, &train.class_names, classifier, meta, exec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn meta() -> EvalMeta {
        EvalMeta {
            stage: Stage::Base,
            split_seed: 7,
            config_hash: ConfigHash::of("x"),
        }
    }

    fn toy(seed: u64, tracks: usize, noise: f64) -> Vec<TrackFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..tracks)
            .map(|i| {
                let label = i % 3;
                let rows = (0..6)
                    .map(|_| {
                        let mut r: Vec<f64> = (0..5).map(|_| rng.gen_range(-noise..noise)).collect();
                        r[label] += 3.0;
                        r
                    })
                    .collect();
                TrackFeatures {
                    track_id: format!("t{i:02}"),
                    label,
                    features: FeatureSequence::new(rows, Stage::Base).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn memorizes_separable_data() {
        let data = toy(1, 12, 0.1);
        let r = evaluate_features(
            &data,
            &data,
            &names(3),
            &ClassifierConfig::default(),
            meta(),
            Exec::default(),
        )
        .unwrap();
        assert_eq!(r.track_error_rate, 0.0);
        assert_eq!(r.frame_error_rate, 0.0);
        assert_eq!(r.per_class_accuracy, vec![1.0; 3]);
        assert_eq!(r.split_seed, 7);
    }

    #[test]
    fn report_ignores_test_order() {
        let train = toy(2, 15, 2.0);
        let test = toy(3, 12, 2.0);
        let mut reversed = test.clone();
        reversed.reverse();
        let cfg = ClassifierConfig::default();
        let a = evaluate_features(&train, &test, &names(3), &cfg, meta(), Exec::default()).unwrap();
        let b = evaluate_features(&train, &reversed, &names(3), &cfg, meta(), Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn confusion_and_rates_are_consistent() {
        let train = toy(4, 15, 3.0);
        let test = toy(5, 12, 3.0);
        let r = evaluate_features(
            &train,
            &test,
            &names(3),
            &ClassifierConfig::default(),
            meta(),
            Exec::default(),
        )
        .unwrap();
        for (c, row) in r.confusion.iter().enumerate() {
            let expected = test.iter().filter(|t| t.label == c).count();
            assert_eq!(row.iter().sum::<usize>(), expected);
        }
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(total, test.len());
        let (f, t) = r.recompute_rates().unwrap();
        assert_eq!(f, r.frame_error_rate);
        assert_eq!(t, r.track_error_rate);
        assert!((0.0..=1.0).contains(&r.frame_error_rate));
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.tracks, r.tracks);
        assert!(r.summary_table().contains("Log Spectrogram"));
    }

    #[test]
    fn frame_csv_header() {
        let data = toy(6, 6, 0.1);
        let r = evaluate_features(
            &data,
            &data,
            &names(3),
            &ClassifierConfig::default(),
            meta(),
            Exec::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frames.csv");
        r.write_frame_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("track_id,frame_index,predicted,true\n"));
        assert_eq!(text.lines().count(), 1 + 36);
    }

    #[test]
    fn cross_validated_lambda_is_from_grid() {
        let train = toy(7, 15, 2.0);
        let cfg = ClassifierConfig {
            cross_validate: true,
            ..Default::default()
        };
        let r = evaluate_features(&train, &train, &names(3), &cfg, meta(), Exec::default()).unwrap();
        assert!(cfg.lambda_grid.contains(&r.lambda));
    }
}
