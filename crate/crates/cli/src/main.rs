use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use orbit_audio::eval::{evaluate_features, results_table, EvalMeta, EvalReport};
use orbit_audio::experiment::{CacheMode, Experiment, ExperimentConfig};
use orbit_audio::invariance::{cyclic_suite, warp_contrast, CyclicSuiteConfig, LabeledClip, CONTRAST_EPSILONS};
use orbit_audio::par::Exec;
use orbit_audio::pipeline::Stage;
use orbit_audio::synth::SynthCorpus;
use orbit_audio::{Error, Result};

/// Invariant audio signatures: bank building, feature extraction and
/// classification experiments.
#[derive(Parser, Debug)]
#[command(name = "orbit-audio", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Split seed; for `synth` also the corpus seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset manifest (`track_id,path,label` CSV).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long, global = true, env = "ORBIT_AUDIO_CACHE")]
    cache_dir: Option<PathBuf>,
    /// Ignore cached features and overwrite them.
    #[arg(long, global = true)]
    refresh: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample templates from the training split and write the warp and pitch banks.
    BuildBanks {
        /// Deepest stage the banks should support.
        #[arg(long)]
        stage: Option<StageArg>,
    },
    /// Compute features for every track into the cache.
    Extract {
        #[arg(long, default_value = "all")]
        stage: StageArg,
    },
    /// Train and test the classifier on one stage or all of them.
    Eval {
        #[arg(long, default_value = "all")]
        stage: StageArg,
    },
    /// Generate the synthetic corpus.
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        tracks_per_class: Option<usize>,
        /// Seconds per track.
        #[arg(long)]
        duration: Option<f64>,
        /// Signal-to-noise ratio in dB; `inf` for no noise.
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Run the cyclic-shift invariance suite and, with a manifest, the warp
    /// contrast suite.
    InvarianceTest,
}

#[derive(Clone, Debug)]
enum StageArg {
    All,
    One(Stage),
}

impl std::str::FromStr for StageArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(StageArg::All);
        }
        s.parse().map(StageArg::One).map_err(|e: Error| e.to_string())
    }
}

impl StageArg {
    fn stages(&self) -> Vec<Stage> {
        match self {
            StageArg::All => Stage::ABLATION.to_vec(),
            StageArg::One(s) => vec![*s],
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
        Err(_) => ExitCode::from(2),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    }
    let config = experiment_config(&cli.common)?;
    let exec = Exec::default();
    match &cli.command {
        Command::Synth {
            classes,
            tracks_per_class,
            duration,
            snr_db,
        } => {
            let mut synth = config.synth.clone();
            if let Some(seed) = cli.common.seed {
                synth.seed = seed;
            }
            if let Some(c) = classes {
                synth.classes = *c;
            }
            if let Some(t) = tracks_per_class {
                synth.tracks_per_class = *t;
            }
            if let Some(d) = duration {
                synth.duration_secs = *d;
            }
            if let Some(s) = snr_db {
                synth.snr_db = s.is_finite().then_some(*s);
            }
            synth.validate()?;
            let corpus = SynthCorpus::generate(&synth, exec)?;
            let manifest = corpus.write(&config.out_dir)?;
            info!(
                "wrote {} tracks in {} classes (seed {}); manifest {}",
                corpus.manifest.len(),
                synth.classes,
                synth.seed,
                manifest.display()
            );
            println!("{}", manifest.display());
            Ok(())
        }
        Command::BuildBanks { stage } => {
            let exp = Experiment::open(config)?;
            let stage = match stage {
                None | Some(StageArg::All) => exp.config.pipeline.stage(),
                Some(StageArg::One(s)) => *s,
            };
            if stage < Stage::Warp {
                warn!("stage {stage} uses no template banks; nothing to build");
                return Ok(());
            }
            exp.build_banks(stage)?;
            Ok(())
        }
        Command::Extract { stage } => {
            let exp = Experiment::open(config)?;
            let stages = stage.stages();
            let deepest = deepest(&stages);
            let pipeline = exp.load_pipeline(deepest).map_err(|e| match e {
                Error::Io { path, .. } => {
                    Error::Config(format!("{} is missing; run build-banks first", path.display()))
                }
                other => other,
            })?;
            let extracted = exp.features(&pipeline, &exp.manifest, &stages, exec)?;
            for (s, tracks) in stages.iter().zip(&extracted.stages) {
                let rows: usize = tracks.iter().map(|t| t.features.len()).sum();
                let dim = tracks.first().map_or(0, |t| t.features.dim());
                info!(
                    "{s}: {} tracks, {rows} rows, dim {dim}, hash {}",
                    tracks.len(),
                    pipeline.feature_hash(*s)
                );
            }
            info!(
                "{} of {} tracks served from cache {}",
                extracted.cache_hits,
                exp.manifest.len(),
                exp.config.cache_dir().display()
            );
            Ok(())
        }
        Command::Eval { stage } => {
            let exp = Experiment::open(config)?;
            let stages = stage.stages();
            let pipeline = exp.pipeline(deepest(&stages))?;
            let train = exp.features(&pipeline, &exp.train, &stages, exec)?;
            let test = exp.features(&pipeline, &exp.test, &stages, exec)?;
            info!("{} cached tracks reused", train.cache_hits + test.cache_hits);
            let mut reports = Vec::new();
            for (i, &s) in stages.iter().enumerate() {
                let meta = EvalMeta {
                    stage: s,
                    split_seed: exp.config.split_seed,
                    config_hash: pipeline.feature_hash(s),
                };
                let r = evaluate_features(
                    &train.stages[i],
                    &test.stages[i],
                    &exp.manifest.class_names,
                    &exp.config.classifier,
                    meta,
                    exec,
                )?;
                info!("{s}: track error {:.1}%", 100.0 * r.track_error_rate);
                reports.push(r);
            }
            write_reports(&exp.config.report_dir(), &reports)?;
            print!("{}", results_table(&reports));
            Ok(())
        }
        Command::InvarianceTest => invariance_test(config, cli.common.seed, exec),
    }
}

fn deepest(stages: &[Stage]) -> Stage {
    stages.iter().copied().max().unwrap_or(Stage::Base).max(Stage::Base)
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        c.split_seed = s;
    }
    if let Some(o) = &common.out {
        c.out_dir = o.clone();
    }
    if let Some(m) = &common.manifest {
        c.manifest = Some(m.clone());
    }
    if let Some(d) = &common.cache_dir {
        if c.cache.dir.is_none() || common.cache_dir_from_flag() {
            c.cache.dir = Some(d.clone());
        }
    }
    if common.refresh {
        c.cache.mode = CacheMode::Refresh;
    }
    c.validate()?;
    Ok(c)
}

impl Common {
    /// The environment variable only supplies a default; an explicit flag
    /// also overrides the experiment file.
    fn cache_dir_from_flag(&self) -> bool {
        std::env::args().any(|a| a == "--cache-dir" || a.starts_with("--cache-dir="))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    for r in reports {
        let name = r.stage.name();
        write_json(&dir.join(format!("{name}.json")), r)?;
        r.write_frame_csv(dir.join(format!("{name}.frames.csv")))?;
    }
    let table = dir.join("results.txt");
    std::fs::write(&table, results_table(reports)).map_err(|e| Error::Io { path: table, source: e })?;
    info!("reports written to {}", dir.display());
    Ok(())
}

fn invariance_test(config: ExperimentConfig, seed: Option<u64>, exec: Exec) -> Result<()> {
    let suite = CyclicSuiteConfig {
        seed: seed.unwrap_or_default(),
        ..Default::default()
    };
    let cyclic = cyclic_suite(&suite, exec)?;
    for (label, results) in [("full orbit", &cyclic.full), ("half orbit", &cyclic.truncated)] {
        for r in results {
            println!(
                "cyclic {label:<10} {:<28} M={:<3} max deviation {:.3e}  {}",
                r.pooling.to_string(),
                r.orbit_size,
                r.max_deviation,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    let mut out = serde_json::json!({
        "seed": suite.seed,
        "config_hash": config.hash(),
        "cyclic": cyclic,
        "pass": cyclic.pass(),
    });
    if config.manifest.is_some() {
        let exp = Experiment::open(config.clone())?;
        let pipeline = exp.load_pipeline(Stage::Warp).map_err(|e| match e {
            Error::Io { path, .. } => Error::Config(format!("{} is missing; run build-banks first", path.display())),
            other => other,
        })?;
        let clips = exp
            .test
            .entries
            .iter()
            .map(|e| {
                Ok(LabeledClip {
                    track_id: e.track_id.clone(),
                    label: e.label,
                    clip: exp.load_clip(e)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let contrast = warp_contrast(&pipeline, &clips, &[Stage::Base, Stage::Warp], &CONTRAST_EPSILONS, exec)?;
        for s in &contrast.stages {
            let per_eps: Vec<String> = contrast
                .epsilons
                .iter()
                .zip(&s.per_epsilon)
                .map(|(e, r)| format!("{e:+.1}: {r:.4}"))
                .collect();
            println!(
                "warp contrast {:<5} {:.4}  [{}]",
                s.stage.name(),
                s.ratio,
                per_eps.join(", ")
            );
        }
        let (base, warp) = (contrast.ratio(Stage::Base), contrast.ratio(Stage::Warp));
        let reduced = matches!((base, warp), (Some(b), Some(w)) if w < b);
        println!(
            "warp contrast reduced by layer 2: {}",
            if reduced { "PASS" } else { "FAIL" }
        );
        out["split_seed"] = exp.config.split_seed.into();
        out["warp_contrast"] = serde_json::to_value(&contrast)?;
        out["pass"] = (cyclic.pass() && reduced).into();
    } else {
        info!("no manifest given; skipping the warp contrast suite");
    }
    let dir = config.report_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_json(&dir.join("invariance.json"), &out)
}
