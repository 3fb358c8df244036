//! Command-line front end: `run`, `replay` and `validate` over street-light
//! scenario files.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use embodied_core::agent::AgentSpec;
use embodied_core::evaluation::{config_digest, digest_of, EvaluationRecord};
use embodied_core::search::{run_search, SearchConfig, SearchOutcome, Task};
use embodied_core::statechart::{render_trace, Tracer};
use embodied_core::streetlight::{
    build_streetlight_scenario, ScenarioError, StreetLight, StreetLightParams,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}:{line}:{column}: {message}")]
    UnknownKey {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Range(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::UnknownKey { .. } => 2,
            CliError::Range(_) => 3,
            CliError::Io { .. } | CliError::Run(_) => 1,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Range { .. } => CliError::Range(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> CliError {
    let (path, line, column) = (path.display().to_string(), e.line(), e.column());
    let mut message = e.to_string();
    if let Some(at) = message.rfind(" at line ") {
        message.truncate(at);
    }
    if message.starts_with("unknown field") || message.starts_with("unknown variant") {
        CliError::UnknownKey {
            path,
            line,
            column,
            message,
        }
    } else {
        CliError::Parse {
            path,
            line,
            column,
            message,
        }
    }
}

/// Reads, defaults and validates a scenario file. Unknown keys are errors.
pub fn load_scenario(path: &Path) -> Result<StreetLightParams, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text, path)
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<StreetLightParams, CliError> {
    let params: StreetLightParams = serde_json::from_str(text).map_err(|e| json_err(path, e))?;
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Parser)]
#[command(
    name = "embodied-sim",
    version,
    about = "Street-light embodied-agent simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a street-light configuration and write results.
    Run(RunArgs),
    /// Re-run one episode with a saved agent and print its score.
    Replay(ReplayArgs),
    /// Check a scenario file and print its resolved parameters.
    Validate(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generations including the initial evaluation.
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Episode length in ticks.
    #[arg(long)]
    pub ticks: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write trace.log with the search lifecycle and the best agent's episode.
    #[arg(long)]
    pub trace: bool,
    /// Worker threads for candidate episodes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub ticks: Option<u64>,
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub trace: bool,
    pub scenario: StreetLightParams,
    pub search: SearchConfig,
}

impl RunManifest {
    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    manifest_digest: String,
    #[serde(flatten)]
    manifest: &'a RunManifest,
}

/// Contents of `best_agent.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestAgentFile {
    pub seed: u64,
    pub manifest_digest: String,
    pub config_digest: String,
    pub score: f64,
    pub agent: AgentSpec,
}

fn resolve(
    mut params: StreetLightParams,
    generations: Option<usize>,
    lambda: Option<usize>,
    ticks: Option<u64>,
) -> Result<StreetLightParams, CliError> {
    if let Some(g) = generations {
        params.search.generations = g;
    }
    if let Some(l) = lambda {
        params.search.lambda = l;
    }
    if let Some(t) = ticks {
        params.episode_ticks = t;
    }
    let params = params.resolved();
    params.validate()?;
    Ok(params)
}

pub fn manifest_for(args: &RunArgs) -> Result<RunManifest, CliError> {
    let params = resolve(
        load_scenario(&args.scenario)?,
        args.generations,
        args.lambda,
        args.ticks,
    )?;
    Ok(RunManifest {
        seed: args.seed,
        trace: args.trace,
        search: params.search_config(args.seed),
        scenario: params,
    })
}

/// Metrics rows: one per generation, after a `# seed=… manifest_digest=…` line.
pub fn metrics_csv(outcome: &SearchOutcome, seed: u64, manifest_digest: &str) -> String {
    let mut out = format!("# seed={seed} manifest_digest={manifest_digest}\n");
    out.push_str("generation,best_score,mean_score,command,config_digest\n");
    for g in &outcome.generations {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            g.generation, g.best.score, g.mean_score, g.command, g.best.config_digest
        ));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

fn replay_score(
    scenario: &StreetLight,
    agent: &AgentSpec,
    tracer: &mut Tracer,
) -> Result<EvaluationRecord, CliError> {
    scenario
        .evaluate(agent, 0, tracer)
        .map_err(|e| CliError::Run(e.to_string()))
}

fn run(args: &RunArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Range("`--jobs` must be at least 1".into()));
    }
    let manifest = manifest_for(args)?;
    let digest = manifest.digest();
    let scenario = build_streetlight_scenario(manifest.scenario.clone(), manifest.seed)?;
    let config = SearchConfig {
        jobs: args.jobs,
        ..manifest.search.clone()
    };
    let mut tracer = if args.trace {
        Tracer::new("search")
    } else {
        Tracer::disabled()
    };
    let outcome =
        run_search(&scenario, &config, &mut tracer).map_err(|e| CliError::Run(e.to_string()))?;

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    write(
        &args.out,
        "metrics.csv",
        &metrics_csv(&outcome, manifest.seed, &digest),
    )?;
    let best = BestAgentFile {
        seed: manifest.seed,
        manifest_digest: digest.clone(),
        config_digest: config_digest(&outcome.best),
        score: outcome.best_record.score,
        agent: outcome.best.clone(),
    };
    write(
        &args.out,
        "best_agent.json",
        &(serde_json::to_string_pretty(&best).expect("serializable") + "\n"),
    )?;
    if args.trace {
        let final_episode = replay_score(&scenario, &outcome.best, &mut tracer)?;
        debug_assert_eq!(final_episode.score, outcome.best_record.score);
        let mut log = format!("# seed={} manifest_digest={digest}\n", manifest.seed);
        log.push_str(&render_trace(tracer.events()));
        write(&args.out, "trace.log", &log)?;
    }
    let file = ManifestFile {
        manifest_digest: digest.clone(),
        manifest: &manifest,
    };
    write(
        &args.out,
        "run_manifest.json",
        &(serde_json::to_string_pretty(&file).expect("serializable") + "\n"),
    )?;
    writeln!(
        stdout,
        "best_score={} config_digest={} generations={} out={}",
        outcome.best_record.score,
        best.config_digest,
        outcome.generations.len(),
        args.out.display()
    )
    .ok();
    Ok(())
}

fn replay(args: &ReplayArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let params = resolve(load_scenario(&args.scenario)?, None, None, args.ticks)?;
    let scenario = build_streetlight_scenario(params, args.seed)?;
    let text = fs::read_to_string(&args.agent).map_err(io_err(&args.agent))?;
    let file: BestAgentFile = serde_json::from_str(&text).map_err(|e| json_err(&args.agent, e))?;
    let record = replay_score(&scenario, &file.agent, &mut Tracer::disabled())?;
    writeln!(stdout, "score={}", record.score).ok();
    writeln!(stdout, "config_digest={}", record.config_digest).ok();
    Ok(())
}

fn validate(args: &ScenarioArgs, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let params = resolve(load_scenario(&args.scenario)?, None, None, None)?;
    build_streetlight_scenario(params.clone(), 0)?;
    writeln!(
        stdout,
        "{}",
        serde_json::to_string_pretty(&params).expect("serializable")
    )
    .ok();
    Ok(())
}

/// Runs the CLI with explicit arguments and output streams; returns the
/// process exit code.
pub fn cli_run_with<I, T>(
    args: I,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                write!(stdout, "{rendered}").ok();
            } else {
                write!(stderr, "{rendered}").ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a, stdout),
        Command::Replay(a) => replay(a, stdout),
        Command::Validate(a) => validate(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(stderr, "error: {e}").ok();
            e.exit_code()
        }
    }
}

pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
