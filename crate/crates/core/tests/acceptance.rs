//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 7 runs only when `ORBIT_AUDIO_GTZAN_MANIFEST` names a
//! `track_id,path,label` CSV of 22050 Hz clips.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use orbit_audio::classifier::{ridge_gradient_norm, train_ridge};
use orbit_audio::eval::{evaluate, results_table, ClassifierConfig, EvalReport};
use orbit_audio::invariance::{cyclic_suite, warp_contrast, CyclicSuiteConfig, LabeledClip, CONTRAST_EPSILONS};
use orbit_audio::par::Exec;
use orbit_audio::pipeline::{layer3_maxpool, FeatureSequence, Pipeline, PipelineConfig, Stage};
use orbit_audio::pooling::{pool_moments, pool_sigmoid_cdf};
use orbit_audio::signal_io::{
    load_audio_at, split_dataset, AudioClip, DatasetManifest, ManifestEntry, DEFAULT_SAMPLE_RATE,
};
use orbit_audio::synth::{SynthConfig, SynthCorpus};

const GTZAN_ENV: &str = "ORBIT_AUDIO_GTZAN_MANIFEST";
const SYNTH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TRAIN_FRACTION: f64 = 0.8;

/// Outcome of one criterion. `report` holds every measured quantity and is
/// what the determinism check compares.
struct Outcome {
    pass: bool,
    summary: String,
    report: Value,
    elapsed: Duration,
}

fn timed(limit: Duration, f: impl FnOnce() -> (bool, String, Value)) -> Outcome {
    let start = Instant::now();
    let (pass, summary, report) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    Outcome {
        pass: pass && in_time,
        summary: if in_time {
            summary
        } else {
            format!(
                "{summary}; took {:.1} s, limit {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )
        },
        report,
        elapsed,
    }
}

fn cyclic_invariance() -> Outcome {
    timed(Duration::from_secs(10), || {
        let report = cyclic_suite(&CyclicSuiteConfig::default(), Exec::default()).expect("cyclic suite runs");
        let pass = report.full.iter().all(|r| r.max_deviation <= 1e-9);
        let parts: Vec<String> = report
            .full
            .iter()
            .map(|r| format!("{} {:.2e}", r.pooling, r.max_deviation))
            .collect();
        let control: Vec<String> = report
            .truncated
            .iter()
            .map(|r| format!("{:.2e}", r.max_deviation))
            .collect();
        let summary = format!(
            "max deviation over 16 orbits of 64 shifts: {} (half-orbit control {})",
            parts.join(", "),
            control.join(", ")
        );
        (pass, summary, serde_json::to_value(&report).unwrap())
    })
}

/// Compensated sum, independent of the library's summation order.
fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + c
}

fn power(p: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * p)
}

fn pooling_oracles() -> Outcome {
    timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let orders = [1u32, 2, 3];
        let (bins, slope) = (20usize, 20.0f64);
        let step = 2.0 / (bins + 1) as f64;
        let mut worst_moment = 0.0f64;
        let mut worst_sigmoid = 0.0f64;
        for _ in 0..1000 {
            let m = rng.gen_range(1..=200);
            let p: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mf = m as f64;
            let got = pool_moments(&p, &orders).unwrap();
            for (g, &n) in got.iter().zip(&orders) {
                let expect = neumaier(p.iter().map(|&x| power(x, n))) / mf;
                // relative to the mean magnitude of the summands, which is
                // the conditioning scale of a signed sum
                let scale = neumaier(p.iter().map(|&x| power(x.abs(), n))) / mf;
                worst_moment = worst_moment.max((g - expect).abs() / scale.max(f64::MIN_POSITIVE));
            }
            let got = pool_sigmoid_cdf(&p, bins, step, slope).unwrap();
            for (i, g) in got.iter().enumerate() {
                let t = (i + 1) as f64 * step;
                let expect = neumaier(p.iter().map(|&x| 0.5 * (1.0 + (0.5 * slope * (x + t)).tanh()))) / mf;
                worst_sigmoid = worst_sigmoid.max((g - expect).abs() / expect.abs().max(f64::MIN_POSITIVE));
            }
        }
        let pass = worst_moment <= 1e-12 && worst_sigmoid <= 1e-12;
        let summary =
            format!("1000 vectors: worst relative error moments {worst_moment:.2e}, sigmoid-CDF {worst_sigmoid:.2e}");
        (
            pass,
            summary,
            json!({"moments": worst_moment, "sigmoid_cdf": worst_sigmoid}),
        )
    })
}

fn ridge_oracle() -> Outcome {
    timed(Duration::from_secs(30), || {
        let sizes = [
            (60, 10, 3, 0.1),
            (200, 80, 6, 1.0),
            (150, 200, 4, 3.0),
            (500, 200, 10, 1.0),
        ];
        let mut worst_weight = 0.0f64;
        let mut worst_grad = 0.0f64;
        let mut rows = Vec::new();
        for (idx, &(n, d, classes, lambda)) in sizes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + idx as u64);
            let y: Vec<usize> = (0..n)
                .map(|i| if i < classes { i } else { rng.gen_range(0..classes) })
                .collect();
            let x: Vec<Vec<f64>> = y
                .iter()
                .map(|&c| {
                    (0..d)
                        .map(|f| rng.gen_range(-1.0..1.0) * (1.0 + (f % 7) as f64) + ((c + f) % 4) as f64 * 0.3)
                        .collect()
                })
                .collect();
            let model = train_ridge(&x, &y, classes, lambda).unwrap();
            // dense oracle on independently standardized data
            let raw = DMatrix::from_fn(n, d, |i, j| x[i][j]);
            let mut z = raw.clone();
            for j in 0..d {
                let mean = raw.column(j).sum() / n as f64;
                let sd = (raw.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                for i in 0..n {
                    z[(i, j)] = (raw[(i, j)] - mean) / sd;
                }
            }
            let t = DMatrix::from_fn(n, classes, |i, k| if y[i] == k { 1.0 } else { -1.0 });
            let w = (z.transpose() * &z + DMatrix::identity(d, d) * lambda)
                .lu()
                .solve(&(z.transpose() * &t))
                .expect("oracle solve");
            let scale = w.amax();
            let mut err = 0.0f64;
            for f in 0..d {
                for k in 0..classes {
                    err = err.max((model.weight(f, k) - w[(f, k)]).abs() / scale);
                }
            }
            let (g, gscale) = ridge_gradient_norm(&model, &x, &y).unwrap();
            let grad_rel = g / gscale;
            worst_weight = worst_weight.max(err);
            worst_grad = worst_grad.max(grad_rel);
            rows.push(
                json!({"n": n, "d": d, "classes": classes, "lambda": lambda, "weight_rel": err, "grad_rel": grad_rel}),
            );
        }
        let pass = worst_weight <= 1e-8 && worst_grad <= 1e-6;
        let summary =
            format!("up to 500x200: worst weight error {worst_weight:.2e} relative, gradient {worst_grad:.2e} x scale");
        (pass, summary, Value::Array(rows))
    })
}

struct SynthSplit {
    corpus: SynthCorpus,
    train: DatasetManifest,
    test: DatasetManifest,
}

fn synth_split(seed: u64) -> SynthSplit {
    let config = SynthConfig {
        seed,
        ..Default::default()
    };
    let corpus = SynthCorpus::generate(&config, Exec::default()).expect("synthetic corpus");
    let (train, test) = split_dataset(&corpus.manifest, TRAIN_FRACTION, seed).expect("split");
    SynthSplit { corpus, train, test }
}

fn warp_contrast_criterion() -> Outcome {
    timed(Duration::from_secs(300), || {
        let s = synth_split(0);
        let loader = |e: &ManifestEntry| s.corpus.clip(&e.track_id).cloned();
        let config = PipelineConfig::default().with_stage(Stage::Warp);
        let pipeline = Pipeline::build(config, s.corpus.config.sample_rate, &s.train, &loader).expect("warp bank");
        let clips: Vec<LabeledClip> = s
            .test
            .entries
            .iter()
            .map(|e| LabeledClip {
                track_id: e.track_id.clone(),
                label: e.label,
                clip: s.corpus.clip(&e.track_id).unwrap().clone(),
            })
            .collect();
        let report = warp_contrast(
            &pipeline,
            &clips,
            &[Stage::Base, Stage::Warp],
            &CONTRAST_EPSILONS,
            Exec::default(),
        )
        .expect("contrast");
        let base = report.ratio(Stage::Base).unwrap();
        let warp = report.ratio(Stage::Warp).unwrap();
        let summary = format!("median warp distance / inter-class distance: base {base:.4}, warp layer {warp:.4}");
        (warp < base, summary, serde_json::to_value(&report).unwrap())
    })
}

fn ablation_criterion() -> Outcome {
    timed(Duration::from_secs(900), || {
        let stages = [Stage::Base, Stage::Warp, Stage::WarpTranslation];
        let mut ordered = 0;
        let mut improvement = 0.0;
        let mut per_seed = Vec::new();
        for seed in SYNTH_SEEDS {
            let s = synth_split(seed);
            let loader = |e: &ManifestEntry| s.corpus.clip(&e.track_id).cloned();
            let config = PipelineConfig::default().with_stage(Stage::WarpTranslation);
            let pipeline = Pipeline::build(config, s.corpus.config.sample_rate, &s.train, &loader).expect("banks");
            let reports = evaluate(
                &pipeline,
                &s.train,
                &s.test,
                &loader,
                &stages,
                &ClassifierConfig::default(),
                seed,
                Exec::default(),
            )
            .expect("evaluation");
            let err: Vec<f64> = reports.iter().map(|r| r.track_error_rate).collect();
            let ok = err[2] <= err[1] && err[1] <= err[0];
            ordered += ok as usize;
            improvement += (err[0] - err[2]) * 100.0 / SYNTH_SEEDS.len() as f64;
            eprintln!(
                "  seed {seed}: base {:.1}%, warp {:.1}%, warp+translation {:.1}%",
                100.0 * err[0],
                100.0 * err[1],
                100.0 * err[2]
            );
            per_seed.push(json!({"seed": seed, "reports": reports.iter().map(|r| serde_json::to_value(r).unwrap()).collect::<Vec<_>>()}));
        }
        let pass = ordered >= 4 && improvement >= 10.0;
        let summary =
            format!("ordering held in {ordered}/5 seeds, mean warp+translation gain over base {improvement:.1} pp");
        (pass, summary, Value::Array(per_seed))
    })
}

fn maxpool_shape_law() -> Outcome {
    timed(Duration::from_secs(1), || {
        let defaults = PipelineConfig::default().maxpool;
        let (w, s) = (defaults.width, defaults.stride);
        let expected = |t: usize| (t - 8) / 3 + 1;
        let mut bad = Vec::new();
        for t in 8..=500 {
            let seq = FeatureSequence::new(vec![vec![t as f64]; t], Stage::Warp).unwrap();
            let rows = layer3_maxpool(&seq, w, s).unwrap().len();
            if rows != expected(t) {
                bad.push(t);
            }
        }
        let mut runner = TestRunner::new(ProptestConfig {
            cases: 200,
            rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
            failure_persistence: None,
            ..ProptestConfig::default()
        });
        let strategy = (8usize..=500, 1usize..4, any::<u64>());
        let prop = runner.run(&strategy, |(t, d, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let out = layer3_maxpool(&FeatureSequence::new(rows, Stage::Warp).unwrap(), w, s).unwrap();
            prop_assert_eq!(out.len(), expected(t));
            prop_assert_eq!(out.dim(), d);
            Ok(())
        });
        let pass = bad.is_empty() && prop.is_ok() && (w, s) == (8, 3);
        let summary = format!(
            "width {w} stride {s}: rows = floor((T-8)/3)+1 for all T in [8, 500]{}",
            if bad.is_empty() {
                String::new()
            } else {
                format!(", violated at {bad:?}")
            }
        );
        (pass, summary, json!({"width": w, "stride": s, "violations": bad}))
    })
}

fn gtzan_criterion() -> Option<Outcome> {
    let manifest_path = std::env::var_os(GTZAN_ENV)?;
    Some(timed(Duration::from_secs(7200), || {
        let manifest = DatasetManifest::read_csv(&manifest_path, 0).expect("GTZAN manifest");
        let (train, test) = split_dataset(&manifest, TRAIN_FRACTION, 0).expect("split");
        let loader =
            |e: &ManifestEntry| -> orbit_audio::Result<AudioClip> { load_audio_at(&e.path, DEFAULT_SAMPLE_RATE, true) };
        let pipeline = Pipeline::build(PipelineConfig::default(), DEFAULT_SAMPLE_RATE, &train, &loader).expect("banks");
        let reports: Vec<EvalReport> = evaluate(
            &pipeline,
            &train,
            &test,
            &loader,
            &Stage::ABLATION,
            &ClassifierConfig::default(),
            0,
            Exec::default(),
        )
        .expect("evaluation");
        eprint!("{}", results_table(&reports));
        let e: Vec<f64> = reports.iter().map(|r| r.track_error_rate).collect();
        let pass = e[0] > e[1] && e[1] > e[2] && e[2] <= 0.30;
        let summary = format!(
            "track error base {:.1}%, warp {:.1}%, warp+translation {:.1}%, +pitch {:.1}%",
            100.0 * e[0],
            100.0 * e[1],
            100.0 * e[2],
            100.0 * e[3]
        );
        (pass, summary, Value::Null)
    }))
}

fn line(n: usize, o: &Outcome) {
    println!(
        "criterion {n}: {} ({:.1} s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.elapsed.as_secs_f64(),
        o.summary
    );
}

fn run_deterministic() -> Vec<Outcome> {
    vec![
        cyclic_invariance(),
        pooling_oracles(),
        ridge_oracle(),
        warp_contrast_criterion(),
        ablation_criterion(),
        maxpool_shape_law(),
    ]
}

fn main() -> ExitCode {
    let first = run_deterministic();
    for (i, o) in first.iter().enumerate() {
        line(i + 1, o);
    }
    let mut all_pass = first.iter().all(|o| o.pass);
    match gtzan_criterion() {
        Some(o) => {
            line(7, &o);
            all_pass &= o.pass;
        }
        None => println!("criterion 7: SKIP ({GTZAN_ENV} not set)"),
    }
    let second = run_deterministic();
    let differing: Vec<usize> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|(_, (a, b))| serde_json::to_string(&a.report).unwrap() != serde_json::to_string(&b.report).unwrap())
        .map(|(i, _)| i + 1)
        .collect();
    let same = differing.is_empty();
    println!(
        "criterion 8: {} reports of criteria 1-6 {}",
        if same { "PASS" } else { "FAIL" },
        if same {
            "bit-identical across two runs".to_string()
        } else {
            format!("differ between runs for criteria {differing:?}")
        }
    );
    all_pass &= same;
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
