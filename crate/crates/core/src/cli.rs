//! Command-line surface: one TOML config, subcommands for each pipeline
//! stage, and a workspace manifest recording which config built what.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corrupt::{apply_with_params, CorruptionKind, CorruptionSpec, SeverityTable};
use crate::eval::experiment::{self, calibrate, load_artifacts, load_runs, plan_jobs, record_all, train_artifacts, write_report};
use crate::eval::{evaluate, EvalError, ExperimentPlan, Report, Workspace};
use crate::imgops::{read_ppm, write_ppm, Rng};
use crate::monitor::ThresholdSet;
use crate::mutate::PoolManifest;
use crate::util::write_atomic;

pub const CONFIG_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Plan(_) => CliError::Config(e.to_string()),
            EvalError::Missing { .. } => CliError::Missing(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// All outputs land under this directory.
    pub workspace: PathBuf,
    /// Desk-scale pool sizes; `false` uses 10 ensemble members and 10
    /// models per mutant.
    pub desk_scale: bool,
    pub seed: u64,
    pub log_level: String,
    #[serde(default)]
    pub plan: ExperimentPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            workspace: PathBuf::from("mrmon-work"),
            desk_scale: true,
            seed: ExperimentPlan::default().seed,
            log_level: "info".into(),
            plan: ExperimentPlan::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The plan actually run: seed and scale applied.
    pub fn effective_plan(&self) -> ExperimentPlan {
        let mut plan = self.plan.clone();
        plan.seed = self.seed;
        if !self.desk_scale {
            plan.training.ensemble_members = 10;
            plan.mutants.models_per_spec = 10;
        }
        plan
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// `workspace.json`: which tool version and config built each artifact.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceManifest {
    pub artifacts: BTreeMap<String, ArtifactStamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactStamp {
    pub tool_version: String,
    pub config_hash: String,
}

impl WorkspaceManifest {
    pub const FILE: &'static str = "workspace.json";

    pub fn load(root: &Path) -> Self {
        fs::read_to_string(root.join(Self::FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn stamp(root: &Path, artifacts: &[&str], cfg: &RunConfig) -> Result<(), CliError> {
        let mut m = Self::load(root);
        for a in artifacts {
            m.artifacts.insert(
                a.to_string(),
                ArtifactStamp {
                    tool_version: TOOL_VERSION.into(),
                    config_hash: cfg.hash(),
                },
            );
        }
        let json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        write_atomic(&root.join(Self::FILE), &json).map_err(runtime)
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrmon", version, about = "Metamorphic runtime monitoring of lane-keeping controllers")]
pub struct Cli {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the workspace directory.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Rebuild artifacts that already exist.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the controller, ensemble, mutant pool and autoencoder.
    Train,
    /// Generate every recording of the plan and its oracle traces.
    Record,
    /// Compute thresholds from the calibration laps.
    Calibrate,
    /// Score all evaluation recordings and write the report.
    Evaluate,
    /// Corrupt a single PPM image.
    Corrupt {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        kind: CorruptionKind,
        #[arg(long)]
        severity: u8,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Alternative severity table (JSON).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train, record, calibrate and evaluate, then print the summary.
    Demo,
    /// Print the default configuration as TOML.
    DefaultConfig,
}

/// Options that are not part of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: Option<usize>,
    pub force: bool,
}

fn with_pool<T>(opts: &RunOptions, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(runtime)?;
    Ok(pool.install(f))
}

fn prepare(cfg: &RunConfig) -> Result<(ExperimentPlan, Workspace), CliError> {
    let plan = cfg.effective_plan();
    plan.validate()?;
    fs::create_dir_all(&cfg.workspace).map_err(runtime)?;
    Ok((plan, Workspace::new(&cfg.workspace)))
}

pub fn cmd_train(cfg: &RunConfig, opts: &RunOptions) -> Result<(), CliError> {
    let (plan, ws) = prepare(cfg)?;
    with_pool(opts, || train_artifacts(&plan, &ws, opts.force))??;
    WorkspaceManifest::stamp(&ws.root, &["models"], cfg)
}

pub fn cmd_record(cfg: &RunConfig, opts: &RunOptions) -> Result<(), CliError> {
    let (plan, ws) = prepare(cfg)?;
    let art = load_artifacts(&plan, &ws)?;
    with_pool(opts, || record_all(&plan, &art, &ws, opts.force))??;
    WorkspaceManifest::stamp(&ws.root, &["recordings"], cfg)
}

pub fn cmd_calibrate(cfg: &RunConfig, _opts: &RunOptions) -> Result<ThresholdSet, CliError> {
    let (plan, ws) = prepare(cfg)?;
    let pool = PoolManifest::load(ws.mutants()).map_err(|e| CliError::Missing(format!("{e}; run `mrmon train` first")))?;
    let calibration: Vec<_> = plan_jobs(&plan, &pool).into_iter().filter(|j| j.calibration).collect();
    let runs = calibration
        .into_iter()
        .map(|j| {
            let run = experiment::load_run(&ws.recording(&j.id))
                .map_err(|e| CliError::Missing(format!("recording {}: {e}; run `mrmon record` first", j.id)))?;
            Ok((j, run))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let thresholds = calibrate(&runs)?;
    thresholds.save(ws.thresholds()).map_err(runtime)?;
    WorkspaceManifest::stamp(&ws.root, &["thresholds.json"], cfg)?;
    Ok(thresholds)
}

pub fn cmd_evaluate(cfg: &RunConfig, _opts: &RunOptions) -> Result<Report, CliError> {
    let (plan, ws) = prepare(cfg)?;
    if !ws.thresholds().exists() {
        return Err(CliError::Missing(format!(
            "no thresholds at {}; run `mrmon calibrate` first",
            ws.thresholds().display()
        )));
    }
    let thresholds = ThresholdSet::load(ws.thresholds()).map_err(runtime)?;
    let runs = load_runs(&plan, &ws)?;
    let report = evaluate(&plan, &runs, &thresholds)?;
    write_report(&report, &plan, &ws)?;
    WorkspaceManifest::stamp(&ws.root, &["report.csv", "summary.md", "alarms.jsonl"], cfg)?;
    Ok(report)
}

pub fn cmd_corrupt(
    input: &Path,
    output: &Path,
    kind: CorruptionKind,
    severity: u8,
    seed: u64,
    table: Option<&Path>,
) -> Result<(), CliError> {
    let spec = CorruptionSpec::new(kind, severity, 0, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let loaded;
    let table = match table {
        Some(p) => {
            loaded = SeverityTable::load(p).map_err(|e| CliError::Config(e.to_string()))?;
            &loaded
        }
        None => SeverityTable::builtin(),
    };
    let params = table.params(kind, severity).map_err(|e| CliError::Config(e.to_string()))?;
    let img = read_ppm(input).map_err(|e| CliError::Missing(format!("{}: {e}", input.display())))?;
    let out = apply_with_params(spec.kind, params, &img, &mut Rng::derive(spec.seed, 0));
    write_ppm(output, &out).map_err(runtime)
}

pub fn cmd_demo(cfg: &RunConfig, opts: &RunOptions) -> Result<Report, CliError> {
    cmd_train(cfg, opts)?;
    cmd_record(cfg, opts)?;
    cmd_calibrate(cfg, opts)?;
    cmd_evaluate(cfg, opts)
}

/// Resolves the config and dispatches; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.workspace {
        cfg.workspace = w.clone();
    }
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cfg.log_level)).try_init();
    let opts = RunOptions {
        jobs: cli.jobs,
        force: cli.force,
    };
    match cli.command {
        Command::Train => cmd_train(&cfg, &opts),
        Command::Record => cmd_record(&cfg, &opts),
        Command::Calibrate => cmd_calibrate(&cfg, &opts).map(|t| {
            for (id, v) in &t.thresholds {
                println!("{id}\t{v:.6}");
            }
        }),
        Command::Evaluate => cmd_evaluate(&cfg, &opts).map(|r| print!("{}", r.summary_markdown(&cfg.plan.reaction_frames))),
        Command::Corrupt {
            input,
            output,
            kind,
            severity,
            rng_seed,
            table,
        } => cmd_corrupt(&input, &output, kind, severity, rng_seed, table.as_deref()),
        Command::Demo => cmd_demo(&cfg, &opts).map(|r| print!("{}", r.summary_markdown(&cfg.plan.reaction_frames))),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}
