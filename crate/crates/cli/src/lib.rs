//! Command-line front end. Every command runs an in-process simulated
//! network rebuilt from the workspace.

pub mod config;
pub mod workspace;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use filedag_core::cid::Cid;
use filedag_core::experiments;
use filedag_core::node::{ClientError, ClientOp, OpOutput};
use filedag_core::simnet::Sim;
use thiserror::Error;

use config::Config;
use workspace::{read_config, Workspace, WorkspaceError};

#[derive(Debug, Parser)]
#[command(name = "filedag", version, about = "Multi-version file storage on a simulated DAG ledger network")]
pub struct Cli {
    /// Workspace root.
    #[arg(long, global = true, env = "FILEDAG_WORKSPACE", default_value = ".")]
    pub workspace: PathBuf,
    /// Config file; defaults to <workspace>/filedag.conf. For `init`, the
    /// file to copy into the new workspace.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace.
    Init {
        /// Workspace seed (node keys and network schedule).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Store a new file; prints its version id.
    Put {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        miner: u32,
        /// Node acting as the client.
        #[arg(long, default_value_t = 0)]
        client: u32,
    },
    /// Store a new version of `base`; prints its version id.
    Update {
        base: Cid,
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        miner: u32,
        #[arg(long, default_value_t = 0)]
        client: u32,
    },
    /// Merge two versions of the same file; prints the merged version id.
    Merge {
        left: Cid,
        right: Cid,
        #[arg(long, default_value_t = 0)]
        client: u32,
    },
    /// Fork `base` into `count` children; prints one id per line.
    Fork {
        base: Cid,
        count: u32,
        #[arg(long, default_value_t = 0)]
        client: u32,
    },
    /// Download and recover a version into `--output`.
    Get {
        version: Cid,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        miner: u32,
        #[arg(long, default_value_t = 0)]
        client: u32,
    },
    /// Print committed transactions in ledger order.
    Log,
    /// Write the ledger graph in DOT format.
    DagExport {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a named experiment and write its tables and summary.
    Experiment {
        /// One of storage-growth, cost-model, consensus-faults.
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to <workspace>/experiments/<name>.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const WORKSPACE: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const TOO_LARGE: i32 = 5;
    pub const OUTPUT: i32 = 6;
    pub const EXPERIMENT_FAILED: i32 = 7;
    pub const STORE_FAILED: i32 = 10;
    pub const NOT_CONFIRMED: i32 = 11;
    pub const UNKNOWN_BASE: i32 = 12;
    pub const INVALID_TRANSACTION: i32 = 13;
    pub const NOT_FOUND: i32 = 14;
    pub const DOWNLOAD_TIMEOUT: i32 = 15;
    pub const CORRUPT_FRAGMENT: i32 = 16;
    pub const PATCH_FAILED: i32 = 17;
    pub const TIMEOUT: i32 = 18;
    pub const NO_REFERENCE: i32 = 19;
    pub const CLIENT_CRASHED: i32 = 20;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: io::Error },
    #[error("{path} is {size} bytes, above the {cap}-byte limit")]
    TooLarge { path: PathBuf, size: u64, cap: u64 },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("experiment {0} failed")]
    ExperimentFailed(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Workspace(_) => exit::WORKSPACE,
            CliError::Input { .. } => exit::INPUT,
            CliError::TooLarge { .. } => exit::TOO_LARGE,
            CliError::Output { .. } => exit::OUTPUT,
            CliError::ExperimentFailed(_) => exit::EXPERIMENT_FAILED,
            CliError::Client(e) => match e {
                ClientError::StoreFailed(_) => exit::STORE_FAILED,
                ClientError::NotConfirmed(_) => exit::NOT_CONFIRMED,
                ClientError::UnknownBase(_) => exit::UNKNOWN_BASE,
                ClientError::Invalid(_) => exit::INVALID_TRANSACTION,
                ClientError::NotFound(_) => exit::NOT_FOUND,
                ClientError::DownloadTimeout(_) => exit::DOWNLOAD_TIMEOUT,
                ClientError::Corrupt(_) => exit::CORRUPT_FRAGMENT,
                ClientError::Patch(_) => exit::PATCH_FAILED,
                ClientError::Timeout => exit::TIMEOUT,
                ClientError::NoReference(_) => exit::NO_REFERENCE,
                ClientError::ClientCrashed => exit::CLIENT_CRASHED,
            },
        }
    }
}

fn read_input(ws: &Workspace, path: &Path) -> Result<Vec<u8>, CliError> {
    let meta = fs::metadata(path).map_err(|source| CliError::Input { path: path.into(), source })?;
    if meta.len() > ws.config.max_file_size {
        return Err(CliError::TooLarge { path: path.into(), size: meta.len(), cap: ws.config.max_file_size });
    }
    fs::read(path).map_err(|source| CliError::Input { path: path.into(), source })
}

/// Writes through a temporary file so a failed command leaves no output.
fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Output { path: path.into(), source };
    let name = path.file_name().ok_or_else(|| err(io::Error::new(io::ErrorKind::InvalidInput, "not a file path")))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

fn check_node(ws: &Workspace, role: &str, id: u32) -> Result<(), CliError> {
    if id >= ws.config.n {
        return Err(CliError::Usage(format!("{role} {id} does not exist (n={})", ws.config.n)));
    }
    Ok(())
}

fn run_op(ws: &Workspace, client: u32, op: ClientOp, persist: bool) -> Result<OpOutput, CliError> {
    check_node(ws, "client", client)?;
    let mut sim: Sim = ws.load()?;
    let out = sim.run_op(client, op);
    if persist {
        ws.save(&mut sim)?;
    }
    Ok(out?)
}

/// Runs one command, writing normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let root = cli.workspace.as_path();
    if let Command::Init { seed } = cli.command {
        let mut config = match &cli.config {
            Some(p) => read_config(p)?,
            None => Config::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        let ws = Workspace::init(root, config)?;
        let _ = writeln!(out, "initialized {}", ws.root.display());
        return Ok(());
    }
    let ws = Workspace::open(root, cli.config.as_deref())?;
    let print = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Put { file, miner, client } => {
            check_node(&ws, "miner", miner)?;
            let file = read_input(&ws, &file)?;
            if let OpOutput::Created { version, .. } = run_op(&ws, client, ClientOp::Create { file, miner }, true)? {
                print(out, version.to_string());
            }
        }
        Command::Update { base, file, miner, client } => {
            check_node(&ws, "miner", miner)?;
            let file = read_input(&ws, &file)?;
            if let OpOutput::Updated { version, .. } = run_op(&ws, client, ClientOp::Update { base, file, miner }, true)? {
                print(out, version.to_string());
            }
        }
        Command::Merge { left, right, client } => {
            if let OpOutput::Merged { version, .. } = run_op(&ws, client, ClientOp::Merge { left, right }, true)? {
                print(out, version.to_string());
            }
        }
        Command::Fork { base, count, client } => {
            if count == 0 {
                return Err(CliError::Usage("fork count must be at least 1".into()));
            }
            if let OpOutput::Forked { children, .. } = run_op(&ws, client, ClientOp::Fork { base, count }, true)? {
                for c in children {
                    print(out, c.to_string());
                }
            }
        }
        Command::Get { version, output, miner, client } => {
            check_node(&ws, "miner", miner)?;
            if let OpOutput::Got { bytes, .. } = run_op(&ws, client, ClientOp::Get { version, miner }, false)? {
                write_output(&output, &bytes)?;
            }
        }
        Command::Log => {
            let sim = ws.load()?;
            let ledger = sim.node(0).ledger();
            for (seq, id) in ledger.committed().iter().enumerate() {
                let v = ledger.vertex(id).expect("committed vertex");
                let Some(tx) = v.tx() else { continue };
                let join = |cs: Vec<Cid>| cs.iter().map(Cid::to_string).collect::<Vec<_>>().join(",");
                print(
                    out,
                    format!(
                        "{seq}\tr={}\tauthor={}\t{}\t{}\t<- {}",
                        v.round(),
                        v.author(),
                        tx.kind().name(),
                        join(tx.defined_versions()),
                        join(tx.referenced_versions())
                    ),
                );
            }
        }
        Command::DagExport { output } => {
            let dot = ws.load()?.node(0).ledger().to_dot();
            match output {
                Some(p) => write_output(&p, dot.as_bytes())?,
                None => {
                    let _ = out.write_all(dot.as_bytes());
                }
            }
        }
        Command::Experiment { name, seed, output } => {
            let report = experiments::run(&name, seed.unwrap_or(ws.config.seed)).ok_or_else(|| {
                CliError::Usage(format!("unknown experiment {name:?}; expected one of {}", experiments::EXPERIMENTS.join(", ")))
            })?;
            let dir = output.unwrap_or_else(|| ws.root.join("experiments").join(&name));
            fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
            for (file, table) in &report.tables {
                write_output(&dir.join(file), table.as_bytes())?;
            }
            let summary = report.summary();
            write_output(&dir.join("summary.txt"), summary.as_bytes())?;
            let _ = out.write_all(summary.as_bytes());
            if !report.passed() {
                return Err(CliError::ExperimentFailed(name));
            }
        }
    }
    Ok(())
}
