//! On-disk workspace: config, per-node blob stores and the ledger log.
//!
//! ```text
//! <root>/filedag.conf
//! <root>/blobs/node<i>/
//! <root>/ledger.log
//! ```
//!
//! Each command rebuilds the simulated network from this state, runs, and
//! writes node 0's vertices back to the log in its insertion order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use filedag_core::ledger::{LedgerLog, LogError, Vertex};
use filedag_core::simnet::{Sim, SimConfig, SimError};
use filedag_core::store::{BlobStore, StoreError};
use thiserror::Error;

use crate::config::{Config, ConfigError};

pub const CONFIG_FILE: &str = "filedag.conf";
pub const LOG_FILE: &str = "ledger.log";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{0} is not an initialized workspace (run `filedag init`)")]
    NotInitialized(PathBuf),
    #[error("{0} already contains a workspace")]
    Exists(PathBuf),
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("blob store: {0}")]
    Store(#[from] StoreError),
    #[error("ledger log: {0}")]
    Log(#[from] LogError),
    #[error("ledger log does not replay on node {node}: {reason}")]
    Restore { node: u32, reason: &'static str },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub config: Config,
}

impl Workspace {
    pub fn blob_dir(&self, node: u32) -> PathBuf {
        self.root.join(BLOB_DIR).join(format!("node{node}"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    /// Creates the layout. `config` is written to `<root>/filedag.conf`.
    pub fn init(root: &Path, config: Config) -> Result<Self, WorkspaceError> {
        let config_path = root.join(CONFIG_FILE);
        if config_path.exists() {
            return Err(WorkspaceError::Exists(root.to_path_buf()));
        }
        fs::create_dir_all(root).map_err(io_err(root))?;
        let ws = Workspace { root: root.to_path_buf(), config_path, config };
        for i in 0..ws.config.n {
            let dir = ws.blob_dir(i);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::write(&ws.config_path, ws.config.to_string()).map_err(io_err(&ws.config_path))?;
        let log = ws.log_path();
        fs::write(&log, b"").map_err(io_err(&log))?;
        Ok(ws)
    }

    /// Opens an initialized workspace. `config_path` overrides the config
    /// file location.
    pub fn open(root: &Path, config_path: Option<&Path>) -> Result<Self, WorkspaceError> {
        let config_path = config_path.map_or_else(|| root.join(CONFIG_FILE), Path::to_path_buf);
        if !root.join(CONFIG_FILE).exists() {
            return Err(WorkspaceError::NotInitialized(root.to_path_buf()));
        }
        let config = read_config(&config_path)?;
        Ok(Workspace { root: root.to_path_buf(), config_path, config })
    }

    pub fn history(&self) -> Result<Vec<Vertex>, WorkspaceError> {
        Ok(LedgerLog::read_all(self.log_path())?)
    }

    /// Builds the network and restores every replica from the log.
    pub fn load(&self) -> Result<Sim, WorkspaceError> {
        let c = &self.config;
        let mut sim_config = SimConfig::new(c.n, c.f, c.seed);
        sim_config.timeouts = c.timeouts.clone();
        let stores = (0..c.n).map(|i| BlobStore::open(self.blob_dir(i))).collect::<Result<Vec<_>, _>>()?;
        let mut sim = Sim::with_stores(sim_config, stores)?;
        let history = self.history()?;
        for node in 0..c.n {
            sim.node_mut(node).restore(&history).map_err(|e| WorkspaceError::Restore { node, reason: e.reason() })?;
        }
        Ok(sim)
    }

    /// Lets replicas catch up, then rewrites the log from node 0.
    pub fn save(&self, sim: &mut Sim) -> Result<(), WorkspaceError> {
        sim.run_rounds(self.config.settle_rounds);
        let ledger = sim.node(0).ledger();
        let tmp = self.root.join(format!("{LOG_FILE}.tmp"));
        let _ = fs::remove_file(&tmp);
        {
            let mut log = LedgerLog::open(&tmp).map_err(io_err(&tmp))?;
            for id in ledger.insertion_order() {
                log.append(ledger.vertex(id).expect("inserted vertex")).map_err(io_err(&tmp))?;
            }
            log.sync().map_err(io_err(&tmp))?;
        }
        let path = self.log_path();
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

pub fn read_config(path: &Path) -> Result<Config, WorkspaceError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.parse().map_err(|source| WorkspaceError::Config { path: path.to_path_buf(), source })
}
