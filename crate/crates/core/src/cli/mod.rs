//! Command-line front end: every subcommand reads a JSON config, writes CSV
//! artifacts plus `manifest.json` into the output directory, and reports
//! failures as `error.json`.

mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::export::sha256_hex;
use crate::gradients::MemoryMode;
use crate::numerics::RNG_ID;

pub use config::{ExperimentConfig, CONFIG_SCHEMA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mpchorizon", version, about = "Horizon-truncated gradient experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(CommonArgs),
    /// Train with SGD and write the per-epoch loss record.
    Train(CommonArgs),
    /// Compare horizon gradients with back-propagation at training checkpoints.
    SweepGradients(CommonArgs),
    /// Tabulate activation memory against the horizon.
    ProfileMemory {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<MemoryMode>,
    },
    /// Fit a horizon profile and pick the best horizon for an objective.
    SelectHorizon {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the reference enumeration instead of the scan.
        #[arg(long)]
        brute_force: bool,
    },
    /// Train several algorithms and tabulate relative performance.
    Evaluate(CommonArgs),
    /// Deep-linear scaling experiment and product-norm bound checks.
    VerifyTheory(CommonArgs),
}

fn parse_mode(s: &str) -> std::result::Result<MemoryMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::SweepGradients(_) => "sweep-gradients",
            Command::ProfileMemory { .. } => "profile-memory",
            Command::SelectHorizon { .. } => "select-horizon",
            Command::Evaluate(_) => "evaluate",
            Command::VerifyTheory(_) => "verify-theory",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData(c)
            | Command::Train(c)
            | Command::SweepGradients(c)
            | Command::Evaluate(c)
            | Command::VerifyTheory(c) => c,
            Command::ProfileMemory { common, .. } | Command::SelectHorizon { common, .. } => common,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Runtime(crate::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Machine-readable failure record written as `error.json` and echoed on stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub status: String,
    pub kind: String,
    pub command: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub command: String,
    pub status: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

/// Files produced by one command, written atomically and hashed into the manifest.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
    status: Option<String>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.to_owned(), contents.into());
    }

    pub fn mark_diverged(&mut self) {
        self.status = Some("diverged".to_owned());
    }

    pub fn is_diverged(&self) -> bool {
        self.status.as_deref() == Some("diverged")
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("writing {}: {e}", tmp.display())))?;
    fs::rename(&tmp, &target).map_err(|e| CliError::Io(format!("renaming to {}: {e}", target.display())))
}

fn load_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if cfg.schema != CONFIG_SCHEMA {
                return Err(CliError::Config(format!(
                    "unsupported schema {:?}, expected {CONFIG_SCHEMA:?}",
                    cfg.schema
                )));
            }
            cfg
        }
        None => ExperimentConfig::minimal(0),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Base directory for relative paths inside a config: the config's own directory.
fn config_base(common: &CommonArgs) -> PathBuf {
    common
        .config
        .as_ref()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_default()
}

fn execute(cmd: &Command) -> CliResult<(ExperimentConfig, Artifacts)> {
    let common = cmd.common();
    let cfg = load_config(common)?;
    let ctx = commands::Context {
        cfg: &cfg,
        base: config_base(common),
    };
    let artifacts = match cmd {
        Command::GenData(_) => commands::gen_data(&ctx)?,
        Command::Train(_) => commands::train(&ctx)?,
        Command::SweepGradients(_) => commands::sweep_gradients(&ctx)?,
        Command::ProfileMemory { mode, .. } => commands::profile_memory(&ctx, *mode)?,
        Command::SelectHorizon { brute_force, .. } => commands::select(&ctx, *brute_force)?,
        Command::Evaluate(_) => commands::evaluate(&ctx)?,
        Command::VerifyTheory(_) => commands::verify_theory(&ctx)?,
    };
    Ok((cfg, artifacts))
}

fn finish(cmd: &Command, cfg: ExperimentConfig, artifacts: Artifacts) -> CliResult<i32> {
    let out = &cmd.common().out;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &artifacts.files {
        write_atomic(out, name, bytes)?;
        hashes.insert(name.clone(), sha256_hex(bytes));
    }
    let status = artifacts.status.clone().unwrap_or_else(|| "ok".to_owned());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        rng: RNG_ID.to_owned(),
        command: cmd.name().to_owned(),
        status: status.clone(),
        seed: cfg.seed,
        config: cfg,
        files: hashes,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    write_atomic(out, "manifest.json", text.as_bytes())?;
    let stale_error = out.join("error.json");
    if artifacts.is_diverged() {
        let rec = ErrorRecord {
            status,
            kind: "diverged".to_owned(),
            command: Some(cmd.name().to_owned()),
            message: "training produced a non-finite loss".to_owned(),
        };
        emit_error(Some(out), &rec);
        return Ok(EXIT_DIVERGED);
    }
    if stale_error.exists() {
        fs::remove_file(&stale_error).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

fn emit_error(out: Option<&Path>, rec: &ErrorRecord) {
    let text = serde_json::to_string(rec).unwrap_or_else(|_| format!("{{\"status\":\"error\",\"message\":{:?}}}", rec.message));
    eprintln!("{text}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = write_atomic(dir, "error.json", format!("{text}\n").as_bytes());
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprint!("{e}");
            emit_error(
                None,
                &ErrorRecord {
                    status: "error".to_owned(),
                    kind: "usage".to_owned(),
                    command: None,
                    message: e.kind().to_string(),
                },
            );
            return EXIT_USAGE;
        }
    };
    let result = execute(&cli.command).and_then(|(cfg, arts)| finish(&cli.command, cfg, arts));
    match result {
        Ok(code) => code,
        Err(e) => {
            emit_error(
                Some(&cli.command.common().out),
                &ErrorRecord {
                    status: "error".to_owned(),
                    kind: e.kind().to_owned(),
                    command: Some(cli.command.name().to_owned()),
                    message: e.to_string(),
                },
            );
            e.exit_code()
        }
    }
}
