//! Runs the base / warp / warp+translation ablation on the synthetic corpus
//! for a few seeds and prints the warp contrast and one table per seed.
//!
//! cargo run --release --example synthetic_ablation -- 0 1 2
//!
//! Environment overrides, handy for exploring the corpus design:
//! - `SYNTH_JSON='{"snr_db": 10.0}'` patches top-level synth fields
//! - `PIPE_JSON='{"base": {"max_freq_hz": 8000.0}}'` patches pipeline sections
//! - `LAMBDA_CV=1` selects lambda by cross-validation
//! - `SHOW_CONFUSION=1` prints confusion matrices

use std::time::Instant;

use orbit_audio::eval::{evaluate, results_table, ClassifierConfig};
use orbit_audio::invariance::{warp_contrast, LabeledClip, CONTRAST_EPSILONS};
use orbit_audio::par::Exec;
use orbit_audio::pipeline::{Pipeline, PipelineConfig, Stage};
use orbit_audio::signal_io::{split_dataset, AudioClip, ManifestEntry};
use orbit_audio::synth::{SynthConfig, SynthCorpus};

fn main() -> orbit_audio::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let stages = [Stage::Base, Stage::Warp, Stage::WarpTranslation];
    for seed in seeds {
        let start = Instant::now();
        let mut synth = SynthConfig {
            seed,
            ..Default::default()
        };
        if let Ok(v) = std::env::var("SYNTH_JSON") {
            let mut base = serde_json::to_value(&synth)?;
            let patch: serde_json::Value = serde_json::from_str(&v)?;
            for (k, val) in patch.as_object().into_iter().flatten() {
                base[k] = val.clone();
            }
            synth = serde_json::from_value(base)?;
        }
        let corpus = SynthCorpus::generate(&synth, Exec::default())?;
        let (train, test) = split_dataset(&corpus.manifest, 0.8, seed)?;
        let loader = |e: &ManifestEntry| -> orbit_audio::Result<AudioClip> { corpus.clip(&e.track_id).cloned() };
        let mut config = PipelineConfig::default().with_stage(Stage::WarpTranslation);
        if let Ok(v) = std::env::var("PIPE_JSON") {
            let mut base = serde_json::to_value(&config)?;
            let patch: serde_json::Value = serde_json::from_str(&v)?;
            for (k, val) in patch.as_object().into_iter().flatten() {
                for (k2, v2) in val.as_object().into_iter().flatten() {
                    base[k][k2] = v2.clone();
                }
            }
            config = serde_json::from_value(base)?;
        }
        let pipeline = Pipeline::build(config, corpus.config.sample_rate, &train, &loader)?;
        let reports = evaluate(
            &pipeline,
            &train,
            &test,
            &loader,
            &stages,
            &ClassifierConfig {
                cross_validate: std::env::var("LAMBDA_CV").is_ok(),
                ..Default::default()
            },
            seed,
            Exec::default(),
        )?;
        let clips: Vec<LabeledClip> = test
            .entries
            .iter()
            .map(|e| LabeledClip {
                track_id: e.track_id.clone(),
                label: e.label,
                clip: corpus.clip(&e.track_id).unwrap().clone(),
            })
            .collect();
        let contrast = warp_contrast(
            &pipeline,
            &clips,
            &[Stage::Base, Stage::Warp],
            &CONTRAST_EPSILONS,
            Exec::default(),
        )?;
        for c in &contrast.stages {
            println!(
                "warp contrast {:>5}: {:.4} per eps {:?}",
                c.stage.name(),
                c.ratio,
                c.per_epsilon
            );
        }
        println!("seed {seed} ({:.1} s)", start.elapsed().as_secs_f64());
        print!("{}", results_table(&reports));
        if std::env::var("SHOW_CONFUSION").is_ok() {
            for r in &reports {
                println!("{} {:?}", r.stage, r.confusion);
            }
        }
    }
    Ok(())
}
