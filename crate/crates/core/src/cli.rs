//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::corpus::{generate_corpus, import_corpus, Corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, scale_histogram};
use crate::losses::{ConfigKind, LossWeights};
use crate::model::{ModelBundle, TrainConfig};
use crate::pipeline::{read_f0_csv, read_syllables_csv, write_f0_csv, F0Track};
use crate::selftest;
use crate::training::{convert, pretrain, train_dualgan, Direction, RunOutput};

#[derive(Parser, Debug)]
#[command(name = "f0dg", version, about = "Learned-wavelet F0 encoding and attitude conversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic parallel corpus.
    SynthCorpus {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Preset name (separable, range20) or path to a JSON corpus spec.
        #[arg(long, default_value = "separable")]
        profiles: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain the wavelet encoder (and the classifier for config B).
    Pretrain {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long, value_parser = parse_config)]
        config: Option<ConfigKind>,
    },
    /// Train both generators and discriminators from a pretrained bundle.
    Train {
        #[command(flatten)]
        common: TrainArgs,
        /// Bundle written by `pretrain` (or an earlier `train`).
        #[arg(long)]
        from: PathBuf,
    },
    /// Convert one F0 track with a trained bundle.
    Convert {
        #[arg(long)]
        bundle: PathBuf,
        /// F0 CSV (time_ms,f0_hz,voiced).
        #[arg(long)]
        track: PathBuf,
        /// Optional syllable CSV for the track.
        #[arg(long)]
        syl: Option<PathBuf>,
        #[arg(long, value_parser = parse_direction, default_value = "a2b")]
        direction: Direction,
        /// Output F0 CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep generator dropout active.
        #[arg(long)]
        noise: bool,
    },
    /// Reconstruction and transformation RMSE on the held-out split.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the learned scales as CSV and SVG.
    Scales {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus whose mean unit durations are drawn as markers.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the gradient and wavelet oracle checks.
    Selftest {
        #[arg(long, default_value_t = 3)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest, or a directory holding manifest.json.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// JSON training configuration; flags take precedence.
    #[arg(long)]
    config_file: Option<PathBuf>,
}

fn parse_config(s: &str) -> std::result::Result<ConfigKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() { p.join("manifest.json") } else { p.to_path_buf() }
}

fn load_corpus(p: &Path) -> Result<Corpus> {
    import_corpus(&manifest_path(p))
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_run_json(out: &Path, command: &str, config: impl Serialize, started: u64) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("run.json");
    let body = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "started_unix": started,
        "finished_unix": unix_time(),
    });
    fs::write(&path, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&path, e))
}

fn resolve_train_config(a: &TrainArgs, kind: Option<ConfigKind>) -> Result<TrainConfig> {
    let mut cfg = match &a.config_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => TrainConfig::new(kind.unwrap_or(ConfigKind::A)),
    };
    if let Some(k) = kind {
        cfg.config = k;
        cfg.weights = LossWeights::for_config(k);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Starts a fresh loss log so reruns into the same directory reproduce it.
fn fresh_out(out: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log = out.join("losses.csv");
    if log.exists() {
        fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
    }
    Ok(RunOutput::to_dir(out))
}

fn read_track(track: &Path, syl: Option<&Path>, bundle: &ModelBundle, direction: Direction) -> Result<F0Track> {
    let (f0_hz, voicing) = read_f0_csv(track)?;
    let syllables = match syl {
        Some(p) => read_syllables_csv(p)?,
        None => Vec::new(),
    };
    let source = match direction {
        Direction::AtoB => &bundle.attitudes[0],
        Direction::BtoA => &bundle.attitudes[1],
    };
    let uid = track.file_stem().and_then(|s| s.to_str()).unwrap_or("track").to_string();
    let t = F0Track { f0_hz, voicing, syllables, attitude: source.clone(), utterance_id: uid, speaker_id: String::new() };
    t.validate()?;
    Ok(t)
}

pub fn run(cli: Cli) -> Result<()> {
    let started = unix_time();
    match cli.command {
        Command::SynthCorpus { n, profiles, out, seed } => {
            let spec = CorpusSpec::load(&profiles)?;
            let m = generate_corpus(n, &spec, seed, &out)?;
            println!("wrote {} tracks to {}", m.utterances.len(), out.display());
            write_run_json(&out, "synth-corpus", json!({"n": n, "profiles": spec, "seed": seed}), started)
        }
        Command::Pretrain { common, config } => {
            let mut cfg = resolve_train_config(&common, config)?;
            if let Some(s) = common.steps {
                cfg.steps_pretrain = s;
            }
            let corpus = load_corpus(&common.corpus)?;
            let out = fresh_out(&common.out)?;
            let (bundle, rows) = pretrain(&corpus, &cfg, None, &out)?;
            bundle.save(&common.out.join("bundle.f0dg"))?;
            if let Some(r) = rows.last() {
                println!("pretrain: {} steps, last total {}", rows.len(), r.total);
            }
            write_run_json(&common.out, "pretrain", json!({"corpus": common.corpus, "train": cfg}), started)
        }
        Command::Train { common, from } => {
            let mut cfg = resolve_train_config(&common, None)?;
            if let Some(s) = common.steps {
                cfg.steps_dualgan = s;
            }
            let corpus = load_corpus(&common.corpus)?;
            let bundle = ModelBundle::load(&from)?;
            cfg.model = bundle.config.clone();
            let out = fresh_out(&common.out)?;
            let (bundle, rows) = train_dualgan(&corpus, bundle, &cfg, &out)?;
            bundle.save(&common.out.join("bundle.f0dg"))?;
            if let Some(r) = rows.last() {
                println!("train: {} steps, last total {}", rows.len(), r.total);
            }
            write_run_json(&common.out, "train", json!({"corpus": common.corpus, "from": from, "train": cfg}), started)
        }
        Command::Convert { bundle, track, syl, direction, out, seed, noise } => {
            let b = ModelBundle::load(&bundle)?;
            let t = read_track(&track, syl.as_deref(), &b, direction)?;
            let converted = convert(&t, &b, direction, seed, noise)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_run_json(dir, "convert", json!({"bundle": bundle, "track": track, "direction": direction, "seed": seed, "noise": noise}), started)?;
            }
            write_f0_csv(&out, &converted)
        }
        Command::Evaluate { bundle, corpus, out, seed } => {
            let b = ModelBundle::load(&bundle)?;
            let c = load_corpus(&corpus)?;
            let report = evaluate(&b, &c, seed)?;
            report.write_csv(&out)?;
            print!("{}", report.table());
            write_run_json(&out, "evaluate", json!({"bundle": bundle, "corpus": corpus, "seed": seed}), started)
        }
        Command::Scales { bundle, out, corpus } => {
            let b = ModelBundle::load(&bundle)?;
            let units = match &corpus {
                Some(p) => load_corpus(p)?.units,
                None => {
                    log::warn!("no corpus given, unit markers omitted");
                    Default::default()
                }
            };
            let title = format!("learned scales ({} pretrain, {} dual-GAN steps)", b.pretrain_steps, b.dualgan_steps);
            scale_histogram(&b.bank.scales(), &units, &out, &title)?;
            write_run_json(&out, "scales", json!({"bundle": bundle, "corpus": corpus}), started)
        }
        Command::Selftest { instances, seed } => {
            let k = selftest::kernel_oracle(&[1.0, 2.5, 7.0, 40.0, 300.0])?;
            let r = selftest::reconstruction_oracle(50, seed)?;
            println!("kernel oracle      max error {k:.3e}");
            println!("inverse oracle     max error {r:.3e}");
            let suite = selftest::gradient_suite(instances, seed, &Default::default())?;
            for (name, rep) in selftest::LOSS_NAMES.iter().zip(&suite.per_loss) {
                println!(
                    "gradient {name:<8} checked {:>6}  max abs {:.2e}  mismatches {}",
                    rep.checked,
                    rep.max_abs_error,
                    rep.mismatches.len()
                );
            }
            if k > 1e-12 || r > 1e-12 || !suite.passed() {
                return Err(Error::Eval("selftest failed".into()));
            }
            println!("selftest passed");
            Ok(())
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
