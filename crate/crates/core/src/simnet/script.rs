//! Scenario scripts.
//!
//! One action per line; `#` starts a comment.
//!
//! ```text
//! create    <node> <miner> <label> <content>
//! update    <node> <miner> <label> <base> <content>
//! merge     <node> <label> <left> <right>
//! fork      <node> <label> <base> <count>     # children are <label>.0 .. <label>.<count-1>
//! get       <node> <miner> <label>
//! challenge <node> <miner> <label>
//! rounds    <k>
//! wait
//!
//! content := text:<rest of line, \n \t \\ escapes> | hex:<hex> | random:<len>:<seed>
//! ```
//!
//! Client actions start asynchronously. An action that names a label waits
//! for the operation defining it; `wait` waits for everything started so
//! far. Actions whose inputs failed are skipped and noted.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cid::Cid;
use crate::ledger::NodeId;
use crate::node::{ClientOp, OpId, OpOutput};

use super::{Sim, SimConfig, SimError, Transcript};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    Bytes(Vec<u8>),
    Random { len: usize, seed: u64 },
}

impl Content {
    pub fn bytes(&self) -> Vec<u8> {
        match self {
            Content::Bytes(b) => b.clone(),
            Content::Random { len, seed } => {
                let mut b = vec![0u8; *len];
                ChaCha8Rng::seed_from_u64(*seed).fill_bytes(&mut b);
                b
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Create { node: NodeId, miner: NodeId, label: String, content: Content },
    Update { node: NodeId, miner: NodeId, label: String, base: String, content: Content },
    Merge { node: NodeId, label: String, left: String, right: String },
    Fork { node: NodeId, label: String, base: String, count: u32 },
    Get { node: NodeId, miner: NodeId, label: String },
    Challenge { node: NodeId, miner: NodeId, label: String },
    Rounds(u64),
    Wait,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("action {index}: node {node} is not configured")]
    UnknownNode { index: usize, node: NodeId },
    #[error("action {index}: label {label} is not defined earlier")]
    UnknownLabel { index: usize, label: String },
    #[error("action {index}: label {label} is defined twice")]
    DuplicateLabel { index: usize, label: String },
    #[error(transparent)]
    Config(#[from] SimError),
}

fn unescape(s: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push(b'\n'),
                Some('t') => out.push(b'\t'),
                Some('\\') => out.push(b'\\'),
                Some(o) => {
                    out.push(b'\\');
                    out.extend(o.to_string().as_bytes());
                }
                None => out.push(b'\\'),
            }
        } else {
            out.extend(c.to_string().as_bytes());
        }
    }
    out
}

fn parse_content(s: &str) -> Result<Content, String> {
    if let Some(t) = s.strip_prefix("text:") {
        Ok(Content::Bytes(unescape(t)))
    } else if let Some(h) = s.strip_prefix("hex:") {
        hex::decode(h.trim()).map(Content::Bytes).map_err(|e| format!("bad hex content: {e}"))
    } else if let Some(r) = s.strip_prefix("random:") {
        let (len, seed) = r.trim().split_once(':').ok_or("random content needs <len>:<seed>")?;
        let len = len.parse().map_err(|_| format!("bad length {len:?}"))?;
        let seed = seed.parse().map_err(|_| format!("bad seed {seed:?}"))?;
        Ok(Content::Random { len, seed })
    } else {
        Err(format!("content must start with text:, hex: or random:, got {s:?}"))
    }
}

/// Splits off the first `k` whitespace-separated fields and returns the rest.
fn fields(line: &str, k: usize) -> Option<(Vec<&str>, &str)> {
    let mut out = Vec::with_capacity(k);
    let mut rest = line.trim_start();
    for _ in 0..k {
        if rest.is_empty() {
            return None;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        out.push(&rest[..end]);
        rest = rest[end..].trim_start();
    }
    Some((out, rest))
}

pub fn parse_script(text: &str) -> Result<Vec<Action>, ScriptError> {
    let mut actions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| ScriptError::Parse { line: i + 1, msg };
        let verb = line.split_whitespace().next().unwrap();
        let arity = match verb {
            "create" => 4,
            "update" => 5,
            "merge" | "fork" => 5,
            "get" | "challenge" => 4,
            "rounds" => 2,
            "wait" => 1,
            other => return Err(err(format!("unknown action {other:?}"))),
        };
        let (f, rest) = fields(line, arity).ok_or_else(|| err(format!("{verb} needs {} arguments", arity - 1)))?;
        let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("expected a number, got {s:?}")));
        let node = |s: &str| num(s).map(|v| v as NodeId);
        let needs_content = matches!(verb, "create" | "update");
        if needs_content && rest.is_empty() {
            return Err(err(format!("{verb} needs content")));
        }
        if !needs_content && !rest.is_empty() {
            return Err(err(format!("unexpected trailing input {rest:?}")));
        }
        let content = || parse_content(rest).map_err(err);
        actions.push(match verb {
            "create" => Action::Create { node: node(f[1])?, miner: node(f[2])?, label: f[3].into(), content: content()? },
            "update" => {
                Action::Update { node: node(f[1])?, miner: node(f[2])?, label: f[3].into(), base: f[4].into(), content: content()? }
            }
            "merge" => Action::Merge { node: node(f[1])?, label: f[2].into(), left: f[3].into(), right: f[4].into() },
            "fork" => {
                let count = num(f[4])? as u32;
                if count == 0 {
                    return Err(err("fork count must be at least 1".into()));
                }
                Action::Fork { node: node(f[1])?, label: f[2].into(), base: f[3].into(), count }
            }
            "get" => Action::Get { node: node(f[1])?, miner: node(f[2])?, label: f[3].into() },
            "challenge" => Action::Challenge { node: node(f[1])?, miner: node(f[2])?, label: f[3].into() },
            "rounds" => Action::Rounds(num(f[1])?),
            _ => Action::Wait,
        });
    }
    Ok(actions)
}

fn validate(config: &SimConfig, script: &[Action]) -> Result<(), ScriptError> {
    let mut labels: HashMap<&str, ()> = HashMap::new();
    let mut forks: Vec<(String, u32)> = Vec::new();
    for (index, a) in script.iter().enumerate() {
        let (nodes, uses, defines): (Vec<NodeId>, Vec<&String>, Option<&String>) = match a {
            Action::Create { node, miner, label, .. } => (vec![*node, *miner], vec![], Some(label)),
            Action::Update { node, miner, label, base, .. } => (vec![*node, *miner], vec![base], Some(label)),
            Action::Merge { node, label, left, right } => (vec![*node], vec![left, right], Some(label)),
            Action::Fork { node, label, base, count } => {
                forks.push((label.clone(), *count));
                (vec![*node], vec![base], None)
            }
            Action::Get { node, miner, label } | Action::Challenge { node, miner, label } => (vec![*node, *miner], vec![label], None),
            Action::Rounds(_) | Action::Wait => (vec![], vec![], None),
        };
        if let Some(&node) = nodes.iter().find(|&&n| n >= config.n) {
            return Err(ScriptError::UnknownNode { index, node });
        }
        for u in uses {
            let is_child = forks.iter().any(|(l, c)| {
                u.strip_prefix(l.as_str()).and_then(|s| s.strip_prefix('.')).and_then(|i| i.parse::<u32>().ok()).is_some_and(|i| i < *c)
            });
            if !labels.contains_key(u.as_str()) && !is_child {
                return Err(ScriptError::UnknownLabel { index, label: u.clone() });
            }
        }
        if let Some(l) = defines {
            if labels.insert(l, ()).is_some() || forks.iter().any(|(f, _)| f == l) {
                return Err(ScriptError::DuplicateLabel { index, label: l.clone() });
            }
        }
        if let Action::Fork { label, .. } = a {
            if labels.contains_key(label.as_str()) {
                return Err(ScriptError::DuplicateLabel { index, label: label.clone() });
            }
        }
    }
    Ok(())
}

enum Label {
    Pending { node: NodeId, op: OpId },
    Ready(Cid),
    Failed,
}

struct Runner {
    sim: Sim,
    labels: HashMap<String, Label>,
    forks: HashMap<String, (NodeId, OpId)>,
    pending: Vec<(NodeId, OpId)>,
}

impl Runner {
    fn resolve(&mut self, name: &str) -> Option<Cid> {
        if let Some((base, idx)) = name.rsplit_once('.') {
            if let (Some(&(node, op)), Ok(i)) = (self.forks.get(base), idx.parse::<usize>()) {
                return match self.sim.wait_op(node, op) {
                    Ok(OpOutput::Forked { children, .. }) => children.get(i).copied(),
                    _ => None,
                };
            }
        }
        match self.labels.get(name)? {
            Label::Ready(c) => Some(*c),
            Label::Failed => None,
            &Label::Pending { node, op } => {
                let state = match self.sim.wait_op(node, op) {
                    Ok(OpOutput::Created { version, .. } | OpOutput::Updated { version, .. } | OpOutput::Merged { version, .. }) => {
                        Label::Ready(version)
                    }
                    _ => Label::Failed,
                };
                let out = match state {
                    Label::Ready(c) => Some(c),
                    _ => None,
                };
                self.labels.insert(name.to_string(), state);
                out
            }
        }
    }

    fn resolve_all(&mut self, index: usize, names: &[&String]) -> Option<Vec<Cid>> {
        let mut out = Vec::new();
        for n in names {
            match self.resolve(n) {
                Some(c) => out.push(c),
                None => {
                    self.sim.transcript.push(format!("{} script skip action {index}: input {n} unavailable", self.sim.now()));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn start(&mut self, node: NodeId, op: ClientOp) -> OpId {
        let id = self.sim.start_op(node, op);
        self.pending.push((node, id));
        id
    }

    fn wait_all(&mut self) {
        for (node, op) in std::mem::take(&mut self.pending) {
            let _ = self.sim.wait_op(node, op);
        }
    }
}

/// Runs `script` on a fresh simulation and returns the transcript.
pub fn run_scenario(config: SimConfig, script: &[Action]) -> Result<Transcript, ScriptError> {
    validate(&config, script)?;
    let mut r = Runner { sim: Sim::new(config)?, labels: HashMap::new(), forks: HashMap::new(), pending: Vec::new() };
    for (index, action) in script.iter().enumerate() {
        match action {
            Action::Create { node, miner, label, content } => {
                let op = r.start(*node, ClientOp::Create { file: content.bytes(), miner: *miner });
                r.labels.insert(label.clone(), Label::Pending { node: *node, op });
            }
            Action::Update { node, miner, label, base, content } => match r.resolve_all(index, &[base]) {
                Some(c) => {
                    let op = r.start(*node, ClientOp::Update { base: c[0], file: content.bytes(), miner: *miner });
                    r.labels.insert(label.clone(), Label::Pending { node: *node, op });
                }
                None => {
                    r.labels.insert(label.clone(), Label::Failed);
                }
            },
            Action::Merge { node, label, left, right } => match r.resolve_all(index, &[left, right]) {
                Some(c) => {
                    let op = r.start(*node, ClientOp::Merge { left: c[0], right: c[1] });
                    r.labels.insert(label.clone(), Label::Pending { node: *node, op });
                }
                None => {
                    r.labels.insert(label.clone(), Label::Failed);
                }
            },
            Action::Fork { node, label, base, count } => {
                if let Some(c) = r.resolve_all(index, &[base]) {
                    let op = r.start(*node, ClientOp::Fork { base: c[0], count: *count });
                    r.forks.insert(label.clone(), (*node, op));
                }
            }
            Action::Get { node, miner, label } => {
                if let Some(c) = r.resolve_all(index, &[label]) {
                    r.start(*node, ClientOp::Get { version: c[0], miner: *miner });
                }
            }
            Action::Challenge { node, miner, label } => {
                if let Some(c) = r.resolve_all(index, &[label]) {
                    r.start(*node, ClientOp::Challenge { cid: c[0], miner: *miner });
                }
            }
            Action::Rounds(k) => r.sim.run_rounds(*k),
            Action::Wait => r.wait_all(),
        }
    }
    r.wait_all();
    Ok(r.sim.transcript())
}
