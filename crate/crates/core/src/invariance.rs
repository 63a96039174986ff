//! Measured invariance: exact invariance over a full cyclic group, and the
//! median distance between frames and their time-warped copies relative to
//! the spread between classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::pipeline::{warp_reach, Pipeline, Stage};
use crate::pooling::{signature_values, PoolingSpec};
use crate::signal_io::AudioClip;
use crate::template_bank::{build_orbit, TemplateBank};
use crate::transforms::{cyclic_shift, time_warp, TransformSpec};

/// Largest deviation allowed for exact group invariance.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicSuiteConfig {
    pub inputs: usize,
    pub dim: usize,
    pub templates: usize,
    pub seed: u64,
}

impl Default for CyclicSuiteConfig {
    fn default() -> Self {
        Self {
            inputs: 100,
            dim: 64,
            templates: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicResult {
    pub pooling: PoolingSpec,
    /// Orbit size actually used; below `dim` for the truncated control.
    pub orbit_size: usize,
    /// max over inputs and shifts of the sup-norm signature change.
    pub max_deviation: f64,
    /// Whether the measurement matched expectation: within tolerance for
    /// full orbits, above it for truncated ones.
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicReport {
    pub config: CyclicSuiteConfig,
    pub tolerance: f64,
    pub full: Vec<CyclicResult>,
    pub truncated: Vec<CyclicResult>,
}

impl CyclicReport {
    pub fn pass(&self) -> bool {
        self.full.iter().chain(&self.truncated).all(|r| r.pass)
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Bank of `templates` random templates, each with the full cyclic-shift
/// orbit of length `dim`.
pub fn cyclic_bank(dim: usize, templates: usize, seed: u64) -> Result<TemplateBank> {
    let spec = TransformSpec::full_cyclic(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbits = (0..templates)
        .map(|k| build_orbit(k, "random", &uniform_vec(&mut rng, dim), &spec, None))
        .collect::<Result<Vec<_>>>()?;
    TemplateBank::new(orbits, "cyclic", ConfigHash::of(&("cyclic", dim, templates, seed)))
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Worst signature change over `inputs` and all `dim` cyclic shifts.
pub fn max_shift_deviation(bank: &TemplateBank, inputs: &[Vec<f64>], pooling: &PoolingSpec, exec: Exec) -> Result<f64> {
    let dim = bank.dim();
    let per_input = exec.try_map(inputs, |x| {
        let reference = signature_values(x, bank, pooling, Exec::Sequential)?;
        let mut worst = 0.0f64;
        for k in 1..dim as i64 {
            let moved = signature_values(&cyclic_shift(x, k), bank, pooling, Exec::Sequential)?;
            worst = worst.max(sup_distance(&reference, &moved));
        }
        Ok::<_, Error>(worst)
    })?;
    Ok(per_input.into_iter().fold(0.0, f64::max))
}

/// Runs moment and sigmoid-CDF pooling on full orbits, and the same
/// measurement on orbits cut to half the group, which must break invariance.
pub fn cyclic_suite(config: &CyclicSuiteConfig, exec: Exec) -> Result<CyclicReport> {
    if config.dim < 2 || config.inputs == 0 || config.templates == 0 {
        return Err(Error::InvalidParameter(
            "cyclic suite needs dim >= 2 and non-empty inputs and bank".into(),
        ));
    }
    let bank = cyclic_bank(config.dim, config.templates, config.seed)?;
    let half = bank.truncated(config.dim / 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let inputs: Vec<Vec<f64>> = (0..config.inputs).map(|_| uniform_vec(&mut rng, config.dim)).collect();
    let poolings = [PoolingSpec::default(), PoolingSpec::sigmoid_cdf(20, 20.0)];
    let mut full = Vec::new();
    let mut truncated = Vec::new();
    for pooling in poolings {
        let d = max_shift_deviation(&bank, &inputs, &pooling, exec)?;
        full.push(CyclicResult {
            pooling: pooling.clone(),
            orbit_size: bank.orbit_size(),
            max_deviation: d,
            pass: d <= EXACT_TOLERANCE,
        });
        let d = max_shift_deviation(&half, &inputs, &pooling, exec)?;
        truncated.push(CyclicResult {
            pooling,
            orbit_size: half.orbit_size(),
            max_deviation: d,
            pass: d > EXACT_TOLERANCE,
        });
    }
    Ok(CyclicReport {
        config: config.clone(),
        tolerance: EXACT_TOLERANCE,
        full,
        truncated,
    })
}

/// A clip with its class, for distance measurements.
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub track_id: String,
    pub label: usize,
    pub clip: AudioClip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpContrast {
    pub stage: Stage,
    /// Median distance between frames of tracks from different classes.
    pub inter_class_median: f64,
    /// Median over frames and all epsilons of the distance between a frame
    /// and its warped counterpart, divided by the inter-class median.
    pub ratio: f64,
    /// Same ratio restricted to each epsilon, in the order of `epsilons`.
    pub per_epsilon: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpContrastReport {
    pub epsilons: Vec<f64>,
    pub stages: Vec<WarpContrast>,
}

impl WarpContrastReport {
    pub fn ratio(&self, stage: Stage) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.ratio)
    }
}

/// The four default warp amounts.
pub const CONTRAST_EPSILONS: [f64; 4] = [-0.2, -0.1, 0.1, 0.2];

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("median input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Analysis window starting at `start`, read on the clock `(1 + eps) n`
/// from the underlying signal and zero past its end.
pub fn warped_window(samples: &[f64], start: usize, window: usize, epsilon: f64) -> Result<Vec<f64>> {
    let end = samples.len().min(start + warp_reach(window, epsilon));
    let mut w = time_warp(&samples[start..end], epsilon)?;
    w.resize(window, 0.0);
    Ok(w)
}

/// Per-frame warp sensitivity of the frame-level stages (base and warp).
///
/// Every analysis window of every clip is compared with the same window
/// read on a warped clock, so the two frames cover the same stretch of
/// audio. Distances are normalized by the median distance between frames of
/// different classes, which makes stages with different feature spaces
/// comparable.
pub fn warp_contrast(
    pipeline: &Pipeline,
    clips: &[LabeledClip],
    stages: &[Stage],
    epsilons: &[f64],
    exec: Exec,
) -> Result<WarpContrastReport> {
    if stages.is_empty() {
        return Err(Error::Empty("stages"));
    }
    if let Some(s) = stages.iter().find(|s| !matches!(s, Stage::Base | Stage::Warp)) {
        return Err(Error::InvalidParameter(format!(
            "warp contrast is defined per frame; stage {s} pools frames"
        )));
    }
    if epsilons.is_empty() {
        return Err(Error::Empty("epsilons"));
    }
    let geometry = pipeline.front().geometry();
    // per clip, per frame: [original, warped by each epsilon] x stages
    let per_clip = exec.try_map(clips, |c| {
        let samples = c.clip.samples();
        let frames = geometry.frame_count(samples.len());
        (0..frames)
            .map(|i| {
                let start = i * geometry.hop;
                let mut views = vec![pipeline.window_features(&samples[start..start + geometry.window], stages)?];
                for &eps in epsilons {
                    let w = warped_window(samples, start, geometry.window, eps)?;
                    views.push(pipeline.window_features(&w, stages)?);
                }
                Ok(views)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut reports = Vec::with_capacity(stages.len());
    for (si, &stage) in stages.iter().enumerate() {
        let mut inter = Vec::new();
        for i in 0..clips.len() {
            for j in i + 1..clips.len() {
                if clips[i].label == clips[j].label {
                    continue;
                }
                for (a, b) in per_clip[i].iter().zip(&per_clip[j]) {
                    inter.push(euclidean(&a[0][si], &b[0][si]));
                }
            }
        }
        if inter.is_empty() {
            return Err(Error::InvalidParameter(
                "warp contrast needs clips from at least two classes".into(),
            ));
        }
        let inter_class_median = median(&inter)?;
        if inter_class_median <= 0.0 {
            return Err(Error::Invariant(format!(
                "stage {stage} maps every class to the same frame"
            )));
        }
        let warp_dist = |e: usize| -> Vec<f64> {
            per_clip
                .iter()
                .flatten()
                .map(|views| euclidean(&views[0][si], &views[e + 1][si]))
                .collect()
        };
        let all: Vec<f64> = (0..epsilons.len()).flat_map(warp_dist).collect();
        let per_epsilon = (0..epsilons.len())
            .map(|e| Ok(median(&warp_dist(e))? / inter_class_median))
            .collect::<Result<Vec<_>>>()?;
        reports.push(WarpContrast {
            stage,
            inter_class_median,
            ratio: median(&all)? / inter_class_median,
            per_epsilon,
        });
    }
    Ok(WarpContrastReport {
        epsilons: epsilons.to_vec(),
        stages: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cyclic_suite() {
        let r = cyclic_suite(
            &CyclicSuiteConfig {
                inputs: 5,
                dim: 16,
                templates: 4,
                seed: 3,
            },
            Exec::default(),
        )
        .unwrap();
        assert!(r.pass(), "{r:?}");
        assert!(r.full.iter().all(|f| f.max_deviation <= 1e-12));
        assert!(r.truncated.iter().all(|f| f.max_deviation > 1e-3));
        assert_eq!(r.truncated[0].orbit_size, 8);
    }

    #[test]
    fn warped_window_reads_ahead() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = warped_window(&x, 10, 20, 0.5).unwrap();
        assert_eq!(w.len(), 20);
        assert_eq!(w[0], 10.0);
        assert_eq!(w[19], 10.0 + 28.5);
        let tail = warped_window(&x, 90, 20, 0.0).unwrap();
        assert_eq!(tail[9], 99.0);
        assert_eq!(tail[10], 0.0);
        assert_eq!(warped_window(&x, 10, 20, 0.0).unwrap(), x[10..30].to_vec());
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert!(median(&[f64::NAN]).is_err());
    }
}
