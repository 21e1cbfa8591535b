use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcnsep::audio::io::write_wav;
use tcnsep::audio::synthetic::write_corpus;
use tcnsep::audio::{build_manifest, Manifest, Split};
use tcnsep::separators::{count_parameters, SeparatorRegistry};
use tcnsep::train::{build_estimator, evaluate_manifest, train, Checkpoint, RunConfig};
use tcnsep::Error;

#[derive(Parser, Debug)]
#[command(name = "tcnsep", version, about = "Speech separation with gated dilated TCN separators")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Run configuration (TOML); defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Separator variant overriding the config: porta, py, sh, pa or su.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Master seed overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a mixture manifest (generating a synthetic corpus if none is given) and write the mixtures.
    Synth(SynthArgs),
    /// Train a separator on the manifest's train split.
    Train(TrainArgs),
    /// Score a checkpoint (or a reference estimator) on a manifest split.
    Evaluate(EvalArgs),
    /// Print receptive fields of the configured separator.
    Rf,
    /// Print parameter counts per separator variant.
    Params,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Corpus root with one sub-directory of WAV files per speaker.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 56)]
    pairs: usize,
    #[arg(long, default_value_t = 0.0)]
    snr_min: f64,
    #[arg(long, default_value_t = 5.0)]
    snr_max: f64,
    /// Synthetic corpus size when `--corpus` is absent.
    #[arg(long, default_value_t = 10)]
    speakers: usize,
    #[arg(long, default_value_t = 4)]
    utts_per_speaker: usize,
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to score with the `model` estimator.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// model, oracle or mixture.
    #[arg(long, default_value = "model")]
    estimator: String,
    #[arg(long, default_value = "test")]
    split: String,
}

/// Failures split by exit code: configuration (2) or runtime (1).
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(v) = &g.variant {
        cfg.separator.variant = v.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(g: &GlobalArgs) -> Result<&Path, Failure> {
    g.out.as_deref().ok_or_else(|| Failure::Config("--out <dir> is required".into()))
}

fn synth(g: &GlobalArgs, a: &SynthArgs) -> Result<(), Failure> {
    let out = out_dir(g)?;
    let seed = g.seed.unwrap_or(0);
    let sample_rate = load_config(g)?.sample_rate;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let corpus = match &a.corpus {
        Some(c) => c.clone(),
        None => {
            let root = out.join("corpus");
            write_corpus(&root, a.speakers, a.utts_per_speaker, a.seconds, sample_rate, seed)?;
            root
        }
    };
    let manifest = build_manifest(&corpus, a.pairs, [a.snr_min, a.snr_max], seed)?;
    let manifest_path = out.join("manifest.jsonl");
    manifest.write(&manifest_path)?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        let dir = out.join("mixtures").join(split.to_string());
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        for (id, sample) in manifest.load_samples(split, sample_rate)? {
            write_wav(&dir.join(format!("{id}.wav")), &sample.mixture)?;
        }
    }
    println!(
        "wrote {} ({} train / {} valid / {} test)",
        manifest_path.display(),
        manifest.split(Split::Train).len(),
        manifest.split(Split::Valid).len(),
        manifest.split(Split::Test).len()
    );
    Ok(())
}

fn run_train(g: &GlobalArgs, a: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(g)?;
    if let Some(n) = a.max_steps {
        cfg.max_steps = n;
        cfg.validate()?;
    }
    let out = out_dir(g)?;
    let manifest = Manifest::load(&a.manifest)?;
    let outcome = train(&cfg, &manifest, out)?;
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!("trained {} steps; final loss {last:.3}; {} checkpoints in {}", outcome.last.step, outcome.checkpoints.len(), out.display());
    Ok(())
}

fn run_evaluate(g: &GlobalArgs, a: &EvalArgs) -> Result<(), Failure> {
    let split: Split = a.split.parse()?;
    let out = out_dir(g)?;
    let checkpoint = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let sample_rate = match &checkpoint {
        Some(ck) => ck.config.sample_rate,
        None => load_config(g)?.sample_rate,
    };
    let estimator = build_estimator(&a.estimator, checkpoint.as_ref(), sample_rate)?;
    let manifest = Manifest::load(&a.manifest)?;
    let report = evaluate_manifest(estimator.as_ref(), &manifest, split, sample_rate)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    println!(
        "{}: {} utterances, mean SDR {:.2} dB, mean SDRi {:.2} dB",
        report.tag,
        report.per_utt.len(),
        report.mean_sdr,
        report.mean_sdri
    );
    Ok(())
}

fn rf(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let sep = SeparatorRegistry::builtin().build(&cfg.separator, cfg.frontend.num_basis)?;
    let fe = cfg.frontend;
    println!("variant {} (K={}, dilations {:?})", sep.name(), cfg.separator.kernel, cfg.separator.dilations);
    println!("{:<10} {:>8} {:>9} {:>8}", "stack", "frames", "samples", "ms");
    for (label, frames) in sep.receptive_fields()? {
        let samples = (frames - 1) * fe.stride + fe.win_len;
        let ms = 1000.0 * samples as f64 / cfg.sample_rate as f64;
        println!("{label:<10} {frames:>8} {samples:>9} {ms:>8.1}");
    }
    Ok(())
}

fn params(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let registry = SeparatorRegistry::builtin();
    let names: Vec<String> = match &g.variant {
        Some(v) => vec![v.clone()],
        None => registry.names().into_iter().map(String::from).collect(),
    };
    for name in names {
        let mut sep = cfg.separator.clone();
        sep.variant = name.clone();
        println!("{name:<6} {}", count_parameters(&sep, cfg.frontend.num_basis)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(&cli.global, a),
        Command::Train(a) => run_train(&cli.global, a),
        Command::Evaluate(a) => run_evaluate(&cli.global, a),
        Command::Rf => rf(&cli.global),
        Command::Params => params(&cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
