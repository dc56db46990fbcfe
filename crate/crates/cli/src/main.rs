use std::path::{Path, PathBuf};
use std::process::ExitCode;

use audiobook_core::audio::AudioBuffer;
use audiobook_core::config::{Config, ConfigError};
use audiobook_core::eval::{compare_report, evaluate_audio, mllm_evaluate, EvalReport, SystemMetrics};
use audiobook_core::pipeline::{self, Backends, PipelineError, RunOptions, StageName};
use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;

#[derive(Parser)]
#[command(name = "engine", version, about = "Multi-speaker audiobook generation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Story text file.
    story: PathBuf,
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; the run writes to <out>/<story_id>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Ignore cached stage results.
    #[arg(long)]
    force: bool,
    /// Overrides the configured run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the content-derived story id.
    #[arg(long)]
    story_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build speaker personas (face + voice sample) for a story.
    Personas(RunArgs),
    /// Build personas and the per-sentence script.
    Script(RunArgs),
    /// Run the full pipeline, or stop after --stage.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Last stage to run: personas, script or audio.
        #[arg(long, value_parser = parse_stage)]
        stage: Option<StageName>,
    },
    /// Score audiobooks (WAV files or run output directories).
    Evaluate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also ask the configured judge backend for MOS-style scores.
        #[arg(long)]
        mllm: bool,
        /// Directory for per-input reports and the comparison.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Tabulate stored reports or a system-metrics table.
    Compare {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the comparison JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_stage(s: &str) -> Result<StageName, String> {
    StageName::parse(s).ok_or_else(|| format!("unknown stage {s:?} (expected personas, script or audio)"))
}

#[derive(Debug)]
enum Failure {
    /// Configuration or environment problem (exit 2).
    Setup(String),
    /// Pipeline or evaluation abort (exit 1).
    Abort(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Setup(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => Failure::Abort(other.to_string()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn run_pipeline(args: &RunArgs, stop_after: Option<StageName>) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let backends = Backends::from_config(&config)?;
    let options = RunOptions {
        story_id: args.story_id.clone(),
        force: args.force,
        stop_after,
    };
    let outcome = pipeline::run(&args.story, &config, &backends, &args.out, &options)?;
    for name in &outcome.cache_hits {
        println!("cache hit: {name}");
    }
    println!(
        "{}: {} ({} backend calls)",
        outcome.out_dir.display(),
        serde_json::to_string(&outcome.manifest.status).unwrap_or_default(),
        outcome.backend_calls
    );
    Ok(())
}

fn system_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Abort(format!("{}: {e}", dir.display())))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Failure::Abort(format!("{}: {e}", path.display())))
}

fn evaluate(inputs: &[PathBuf], config: Option<&Path>, mllm: bool, out: &Path) -> Result<(), Failure> {
    let config = load_config(config)?;
    let judge = if mllm { Some(config.judge_backend()?) } else { None };
    let questions = config.judge_questions();
    let mut systems = IndexMap::new();
    for input in inputs {
        let wav = if input.is_dir() { input.join("audiobook.wav") } else { input.clone() };
        let name = system_name(input);
        let audio = AudioBuffer::read_wav(&wav).map_err(|e| Failure::Abort(format!("{}: {e}", wav.display())))?;
        let mut report: EvalReport = evaluate_audio(&wav.display().to_string(), &audio, &config.eval)
            .map_err(|e| Failure::Abort(format!("{}: {e}", wav.display())))?;
        if let Some(judge) = &judge {
            let result = mllm_evaluate(&audio, judge.as_ref(), &questions, &config.eval.mllm);
            for w in &result.warnings {
                tracing::warn!("{name}: {w}");
            }
            report.notes.extend(result.warnings);
            report.mllm_scores = Some(result.scores);
        }
        write_json(&out.join(format!("{name}.report.json")), &report)?;
        systems.insert(name, SystemMetrics::from(&report));
    }
    let comparison = compare_report(&systems);
    write_json(&out.join("comparison.json"), &comparison.json)?;
    print!("{}", comparison.text);
    Ok(())
}

/// Accepts single `EvalReport` files or tables mapping system name to metrics.
fn load_systems(path: &Path, into: &mut IndexMap<String, SystemMetrics>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Abort(format!("{}: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        into.insert(system_name(path), SystemMetrics::from(&report));
        return Ok(());
    }
    let table: IndexMap<String, SystemMetrics> = serde_json::from_str(&text)
        .map_err(|e| Failure::Abort(format!("{}: not a report or metrics table: {e}", path.display())))?;
    into.extend(table);
    Ok(())
}

fn compare(inputs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut systems = IndexMap::new();
    for input in inputs {
        load_systems(input, &mut systems)?;
    }
    let comparison = compare_report(&systems);
    if let Some(out) = out {
        write_json(out, &comparison.json)?;
    }
    print!("{}", comparison.text);
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Personas(args) => run_pipeline(args, Some(StageName::Personas)),
        Command::Script(args) => run_pipeline(args, Some(StageName::Script)),
        Command::Generate { run, stage } => run_pipeline(run, stage.filter(|s| *s != StageName::Audio)),
        Command::Evaluate {
            inputs,
            config,
            mllm,
            out,
        } => evaluate(inputs, config.as_deref(), *mllm, out),
        Command::Compare { inputs, out } => compare(inputs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Setup(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Abort(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
