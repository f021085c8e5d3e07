//! Run transcripts and the agreement checker.
//!
//! A transcript is line-delimited text: a header describing the config, one
//! line per delivered message (when recorded), node event and client
//! operation, then one snapshot block per node. The final `hash` line is the
//! SHA-256 of everything before it, message contents included.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::cid::Cid;
use crate::ledger::NodeId;
use crate::node::{ClientOp, Event, Message, Node, OpOutput};

use super::{DelayModel, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitRecord {
    pub vertex: Cid,
    pub round: u64,
    pub author: NodeId,
    /// The committing node's own round at commit time.
    pub node_round: u64,
}

pub type InsertRecord = CommitRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeReport {
    pub id: NodeId,
    pub honest: bool,
    pub crashed: bool,
    pub final_round: u64,
    pub fingerprint: [u8; 32],
    pub committed: Vec<CommitRecord>,
    pub inserted: Vec<InsertRecord>,
}

#[derive(Clone)]
pub struct Transcript {
    lines: Vec<String>,
    hasher: Sha256,
    nodes: Vec<NodeReport>,
    hash: [u8; 32],
}

fn delay_name(d: DelayModel) -> String {
    match d {
        DelayModel::Zero => "zero".into(),
        DelayModel::Uniform { max_rounds } => format!("uniform:{max_rounds}"),
    }
}

fn op_line(op: &ClientOp) -> String {
    match op {
        ClientOp::Create { file, miner } => format!("create miner={miner} bytes={}", file.len()),
        ClientOp::Update { base, file, miner } => format!("update miner={miner} base={} bytes={}", base.short(), file.len()),
        ClientOp::Merge { left, right } => format!("merge left={} right={}", left.short(), right.short()),
        ClientOp::Fork { base, count } => format!("fork base={} count={count}", base.short()),
        ClientOp::Get { version, miner } => format!("get miner={miner} version={}", version.short()),
        ClientOp::Challenge { cid, miner } => format!("challenge miner={miner} cid={}", cid.short()),
    }
}

fn output_line(out: &OpOutput) -> String {
    match out {
        OpOutput::Created { version, .. } => format!("created {version}"),
        OpOutput::Updated { version, full_file, stored, .. } => format!("updated {version} full_file={full_file} stored={stored}"),
        OpOutput::Merged { version, .. } => format!("merged {version}"),
        OpOutput::Forked { children, .. } => {
            let c: Vec<String> = children.iter().map(Cid::to_string).collect();
            format!("forked {}", c.join(","))
        }
        OpOutput::Got { bytes, plan } => {
            format!("got bytes={} plan={} digest={}", bytes.len(), plan.len(), hex::encode(&Sha256::digest(bytes)[..8]))
        }
        OpOutput::Proof { valid } => format!("proof valid={valid}"),
    }
}

impl Transcript {
    pub(super) fn new(config: &SimConfig) -> Self {
        let mut t = Transcript { lines: Vec::new(), hasher: Sha256::new(), nodes: Vec::new(), hash: [0; 32] };
        t.push(format!(
            "config n={} f={} seed={} delay={} verify_signatures={}",
            config.n,
            config.f,
            config.seed,
            delay_name(config.delay),
            config.verify_signatures
        ));
        for (id, b) in &config.faults {
            t.push(format!("fault node={id} {b:?}"));
        }
        t.nodes = (0..config.n)
            .map(|id| NodeReport {
                id,
                honest: config.is_honest(id),
                crashed: false,
                final_round: 0,
                fingerprint: [0; 32],
                committed: Vec::new(),
                inserted: Vec::new(),
            })
            .collect();
        t
    }

    pub(super) fn push(&mut self, line: String) {
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines.push(line);
    }

    pub(super) fn message(&mut self, tick: u64, msg: &Message, record: bool) {
        let digest = Sha256::digest(msg.encode());
        if record {
            self.push(format!("{tick} msg {}->{} {} {}", msg.from, msg.to, msg.body.name(), hex::encode(&digest[..8])));
        } else {
            self.hasher.update(tick.to_le_bytes());
            self.hasher.update(digest);
        }
    }

    pub(super) fn op_start(&mut self, tick: u64, node: NodeId, op: &ClientOp) {
        self.push(format!("{tick} node {node} op-start {}", op_line(op)));
    }

    pub(super) fn event(&mut self, tick: u64, node: NodeId, event: &Event) {
        let report = &mut self.nodes[node as usize];
        let line = match event {
            Event::Proposed { vertex, round, equivocated } => {
                format!("proposed r={round} {}{}", vertex.short(), if *equivocated { " equivocated" } else { "" })
            }
            Event::Inserted { vertex, round, author, node_round } => {
                report.inserted.push(CommitRecord { vertex: *vertex, round: *round, author: *author, node_round: *node_round });
                format!("inserted r={round} a={author} {}", vertex.short())
            }
            Event::Rejected { vertex, round, author, reason } => format!("rejected r={round} a={author} {} {reason}", vertex.short()),
            Event::Committed { vertex, round, author, node_round } => {
                report.committed.push(CommitRecord { vertex: *vertex, round: *round, author: *author, node_round: *node_round });
                format!("committed r={round} a={author} {} at={node_round}", vertex.short())
            }
            Event::Crashed { round } => format!("crashed r={round}"),
            Event::OpDone { op, result } => match result {
                Ok(out) => format!("op-done {op} ok {}", output_line(out)),
                Err(e) => format!("op-done {op} err {e}"),
            },
        };
        self.push(format!("{tick} node {node} {line}"));
    }

    pub(super) fn finish(&mut self, config: &SimConfig, nodes: &[Node]) {
        for (report, node) in self.nodes.iter_mut().zip(nodes) {
            report.honest = config.is_honest(node.id());
            report.crashed = node.is_crashed();
            report.final_round = node.round();
            report.fingerprint = node.ledger().fingerprint();
        }
        let mut h = self.hasher.clone();
        h.update(self.snapshot_text().as_bytes());
        self.hash = h.finalize().into();
    }

    fn snapshot_text(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "node {} honest={} crashed={} final_round={} commits={} ledger={}",
                n.id,
                n.honest,
                n.crashed,
                n.final_round,
                n.committed.len(),
                hex::encode(n.fingerprint)
            );
            for (i, c) in n.committed.iter().enumerate() {
                let _ = writeln!(s, "commit node={} seq={i} r={} a={} {} at={}", n.id, c.round, c.author, c.vertex, c.node_round);
            }
        }
        s
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn nodes(&self) -> &[NodeReport] {
        &self.nodes
    }

    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s.push_str(&self.snapshot_text());
        let _ = writeln!(s, "hash {}", hex::encode(self.hash));
        s
    }
}

/// Result of `check_agreement`: empty `failures` means the run agreed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Verdict {
    pub failures: Vec<String>,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Rounds a node must run past a commit elsewhere before it is expected to
/// have committed the same vertex.
pub const CATCH_UP_ROUNDS: u64 = 8;

/// Checks that honest committed sequences are prefix-compatible, that at
/// most one vertex per (author, round) is committed by honest nodes, and that
/// every honest commit is shared by honest nodes that ran long enough after.
pub fn check_agreement(t: &Transcript) -> Verdict {
    check_reports(&t.nodes)
}

/// `check_agreement` over bare node reports.
pub fn check_reports(nodes: &[NodeReport]) -> Verdict {
    let mut failures = Vec::new();
    let honest: Vec<&NodeReport> = nodes.iter().filter(|n| n.honest).collect();
    for (i, a) in honest.iter().enumerate() {
        for b in &honest[i + 1..] {
            let common = a.committed.len().min(b.committed.len());
            if let Some(k) = (0..common).find(|&k| a.committed[k].vertex != b.committed[k].vertex) {
                failures.push(format!("nodes {} and {} diverge at position {k}", a.id, b.id));
            }
        }
    }
    let mut slots: HashMap<(NodeId, u64), Cid> = HashMap::new();
    for n in &honest {
        for c in &n.committed {
            if let Some(prev) = slots.insert((c.author, c.round), c.vertex) {
                if prev != c.vertex {
                    failures.push(format!("two vertices committed for author {} round {}", c.author, c.round));
                }
            }
        }
    }
    for a in &honest {
        for b in &honest {
            if a.id == b.id {
                continue;
            }
            let have: HashSet<Cid> = b.committed.iter().map(|c| c.vertex).collect();
            for c in &a.committed {
                if b.final_round >= c.node_round + CATCH_UP_ROUNDS && !have.contains(&c.vertex) {
                    failures.push(format!(
                        "node {} committed {} at round {} but node {} (round {}) did not",
                        a.id, c.vertex, c.node_round, b.id, b.final_round
                    ));
                }
            }
        }
    }
    failures.sort();
    failures.dedup();
    Verdict { failures }
}

/// How long one honest observer took to commit one honest vertex, in the
/// observer's rounds from insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lag {
    pub observer: NodeId,
    pub vertex: Cid,
    pub round: u64,
    pub author: NodeId,
    pub inserted_at: u64,
    pub committed_at: Option<u64>,
    pub observer_final_round: u64,
}

impl Lag {
    /// Rounds from insertion to commit, or to the end of the run if the
    /// vertex never committed.
    pub fn rounds(&self) -> u64 {
        self.committed_at.unwrap_or(self.observer_final_round) - self.inserted_at
    }
}

/// Commit lags of honest-authored vertices as seen by every honest node.
pub fn commit_lags(t: &Transcript) -> Vec<Lag> {
    let honest: HashSet<NodeId> = t.nodes.iter().filter(|n| n.honest).map(|n| n.id).collect();
    let mut out = Vec::new();
    for n in t.nodes.iter().filter(|n| n.honest) {
        let at: HashMap<Cid, u64> = n.committed.iter().map(|c| (c.vertex, c.node_round)).collect();
        for i in n.inserted.iter().filter(|i| honest.contains(&i.author)) {
            out.push(Lag {
                observer: n.id,
                vertex: i.vertex,
                round: i.round,
                author: i.author,
                inserted_at: i.node_round,
                committed_at: at.get(&i.vertex).copied(),
                observer_final_round: n.final_round,
            });
        }
    }
    out
}
