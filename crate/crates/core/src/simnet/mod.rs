//! Deterministic in-process network simulator.
//!
//! Time advances in ticks. A message sent at tick `t` is delivered at
//! `t + 1 + delay`, where the delay is drawn per message from the configured
//! model. Each tick first delivers that tick's messages in send order, then
//! lets every node act. All randomness comes from the config seed.

mod script;
mod transcript;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cid::Cid;
use crate::ledger::{LedgerConfig, NodeId};
use crate::node::{Behavior, ClientError, ClientOp, Event, Message, Node, NodeSetup, OpId, OpOutput, Timeouts, TICKS_PER_ROUND};
use crate::store::BlobStore;

pub use script::{parse_script, run_scenario, Action, Content, ScriptError};
pub use transcript::{
    check_agreement, check_reports, commit_lags, CommitRecord, InsertRecord, Lag, NodeReport, Transcript, Verdict, CATCH_UP_ROUNDS,
};

/// Per-message network delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayModel {
    #[default]
    Zero,
    /// Uniform over `0 ..= max_rounds` rounds, drawn in ticks.
    Uniform { max_rounds: u64 },
}

impl DelayModel {
    pub fn max_ticks(&self) -> u64 {
        match self {
            DelayModel::Zero => 0,
            DelayModel::Uniform { max_rounds } => max_rounds * TICKS_PER_ROUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub n: u32,
    pub f: u32,
    pub seed: u64,
    pub faults: BTreeMap<NodeId, Behavior>,
    pub delay: DelayModel,
    pub timeouts: Timeouts,
    pub verify_signatures: bool,
    /// Keep one transcript line per delivered message.
    pub record_messages: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid configuration: N={n} requires N >= 3f+1 with f={f}")]
    Quorum { n: u32, f: u32 },
    #[error("fault plan names node {0}, which does not exist")]
    UnknownNode(NodeId),
    #[error("fault plan marks {got} nodes faulty, budget is f={f}")]
    TooManyFaults { got: usize, f: u32 },
    #[error("expected {want} blob stores, got {got}")]
    Stores { want: u32, got: usize },
}

impl SimConfig {
    pub fn new(n: u32, f: u32, seed: u64) -> Self {
        SimConfig {
            n,
            f,
            seed,
            faults: BTreeMap::new(),
            delay: DelayModel::Zero,
            timeouts: Timeouts::default(),
            verify_signatures: true,
            record_messages: true,
        }
    }

    pub fn with_fault(mut self, node: NodeId, behavior: Behavior) -> Self {
        self.faults.insert(node, behavior);
        self
    }

    /// Sets the delay model and scales the timeouts to it.
    pub fn with_delay(mut self, delay: DelayModel) -> Self {
        self.delay = delay;
        self.timeouts = Timeouts::for_max_delay(delay.max_ticks());
        self
    }

    pub fn behavior(&self, node: NodeId) -> Behavior {
        self.faults.get(&node).cloned().unwrap_or_default()
    }

    pub fn is_honest(&self, node: NodeId) -> bool {
        self.behavior(node).is_honest()
    }

    pub fn ledger_config(&self) -> Result<LedgerConfig, SimError> {
        LedgerConfig::new(self.n, self.f).map_err(|_| SimError::Quorum { n: self.n, f: self.f })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.ledger_config()?;
        if let Some(&id) = self.faults.keys().find(|&&id| id >= self.n) {
            return Err(SimError::UnknownNode(id));
        }
        let faulty = self.faults.values().filter(|b| !b.is_honest()).count();
        if faulty > self.f as usize {
            return Err(SimError::TooManyFaults { got: faulty, f: self.f });
        }
        Ok(())
    }
}

pub struct Sim {
    config: SimConfig,
    nodes: Vec<Node>,
    queue: BTreeMap<(u64, u64), Message>,
    seq: u64,
    now: u64,
    rng: ChaCha8Rng,
    transcript: Transcript,
    results: BTreeMap<(NodeId, OpId), Result<OpOutput, ClientError>>,
}

impl Sim {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let stores = (0..config.n).map(|_| BlobStore::in_memory()).collect();
        Sim::with_stores(config, stores)
    }

    /// Builds a simulation whose miners use the given blob stores.
    pub fn with_stores(config: SimConfig, stores: Vec<BlobStore>) -> Result<Self, SimError> {
        config.validate()?;
        if stores.len() != config.n as usize {
            return Err(SimError::Stores { want: config.n, got: stores.len() });
        }
        let ledger = config.ledger_config()?;
        let nodes = stores
            .into_iter()
            .enumerate()
            .map(|(id, store)| {
                Node::new(NodeSetup {
                    id: id as NodeId,
                    config: ledger,
                    seed: config.seed,
                    behavior: config.behavior(id as NodeId),
                    timeouts: config.timeouts.clone(),
                    store,
                    verify_signatures: config.verify_signatures,
                })
            })
            .collect();
        Ok(Sim {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            transcript: Transcript::new(&config),
            config,
            nodes,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            results: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.behavior().is_honest())
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    fn schedule(&mut self, msg: Message) {
        let delay = if msg.from == msg.to {
            0
        } else {
            match self.config.delay {
                DelayModel::Zero => 0,
                DelayModel::Uniform { .. } => self.rng.gen_range(0..=self.config.delay.max_ticks()),
            }
        };
        self.queue.insert((self.now + 1 + delay, self.seq), msg);
        self.seq += 1;
    }

    fn collect(&mut self, id: usize) {
        for msg in self.nodes[id].take_outbox() {
            self.schedule(msg);
        }
        for event in self.nodes[id].take_events() {
            if let Event::OpDone { op, result } = &event {
                self.results.insert((id as NodeId, *op), result.clone());
            }
            self.transcript.event(self.now, id as NodeId, &event);
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        self.now += 1;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let msg = entry.remove();
            self.transcript.message(self.now, &msg, self.config.record_messages);
            let to = msg.to as usize;
            self.nodes[to].handle(msg, self.now);
            self.collect(to);
        }
        for id in 0..self.nodes.len() {
            self.nodes[id].on_tick(self.now);
            self.collect(id);
        }
    }

    pub fn run_ticks(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    /// Lowest round among nodes that are still running.
    pub fn live_round(&self) -> u64 {
        self.nodes.iter().filter(|n| !n.is_crashed()).map(Node::round).min().unwrap_or(0)
    }

    /// Generous tick budget for `rounds` rounds under the delay model.
    pub fn tick_budget(&self, rounds: u64) -> u64 {
        let per_round = TICKS_PER_ROUND + 3 * self.config.delay.max_ticks() + self.config.timeouts.leader_wait_ticks;
        (rounds + 2) * per_round * 2
    }

    /// Runs until every live node has advanced `rounds` rounds.
    pub fn run_rounds(&mut self, rounds: u64) {
        let target = self.live_round() + rounds;
        let limit = self.now + self.tick_budget(rounds);
        while self.live_round() < target && self.now < limit {
            self.step();
        }
    }

    pub fn start_op(&mut self, node: NodeId, op: ClientOp) -> OpId {
        self.transcript.op_start(self.now, node, &op);
        let id = self.nodes[node as usize].start_op(op, self.now);
        self.collect(node as usize);
        id
    }

    pub fn result(&self, node: NodeId, op: OpId) -> Option<&Result<OpOutput, ClientError>> {
        self.results.get(&(node, op))
    }

    /// Steps until the operation finishes.
    pub fn wait_op(&mut self, node: NodeId, op: OpId) -> Result<OpOutput, ClientError> {
        let rounds = self.config.timeouts.commit_rounds * 3 + 10;
        let limit = self.now + self.tick_budget(rounds) + 4 * self.config.timeouts.request_ticks * (self.config.n as u64 + 4);
        loop {
            if let Some(r) = self.results.get(&(node, op)) {
                return r.clone();
            }
            if self.now >= limit {
                return Err(ClientError::Timeout);
            }
            self.step();
        }
    }

    pub fn run_op(&mut self, node: NodeId, op: ClientOp) -> Result<OpOutput, ClientError> {
        let id = self.start_op(node, op);
        self.wait_op(node, id)
    }

    pub fn client_create(&mut self, node: NodeId, file: Vec<u8>, miner: NodeId) -> Result<Cid, ClientError> {
        match self.run_op(node, ClientOp::Create { file, miner })? {
            OpOutput::Created { version, .. } => Ok(version),
            other => unreachable!("create produced {other:?}"),
        }
    }

    pub fn client_update(&mut self, node: NodeId, base: Cid, file: Vec<u8>, miner: NodeId) -> Result<Cid, ClientError> {
        match self.run_op(node, ClientOp::Update { base, file, miner })? {
            OpOutput::Updated { version, .. } => Ok(version),
            other => unreachable!("update produced {other:?}"),
        }
    }

    pub fn build_merge(&mut self, node: NodeId, left: Cid, right: Cid) -> Result<Cid, ClientError> {
        match self.run_op(node, ClientOp::Merge { left, right })? {
            OpOutput::Merged { version, .. } => Ok(version),
            other => unreachable!("merge produced {other:?}"),
        }
    }

    pub fn build_fork(&mut self, node: NodeId, base: Cid, count: u32) -> Result<Vec<Cid>, ClientError> {
        match self.run_op(node, ClientOp::Fork { base, count })? {
            OpOutput::Forked { children, .. } => Ok(children),
            other => unreachable!("fork produced {other:?}"),
        }
    }

    pub fn client_get(&mut self, node: NodeId, version: Cid, miner: NodeId) -> Result<Vec<u8>, ClientError> {
        match self.run_op(node, ClientOp::Get { version, miner })? {
            OpOutput::Got { bytes, .. } => Ok(bytes),
            other => unreachable!("get produced {other:?}"),
        }
    }

    /// Sends a fresh storage challenge; true if the proof verified.
    pub fn challenge(&mut self, node: NodeId, cid: Cid, miner: NodeId) -> Result<bool, ClientError> {
        match self.run_op(node, ClientOp::Challenge { cid, miner })? {
            OpOutput::Proof { valid } => Ok(valid),
            other => unreachable!("challenge produced {other:?}"),
        }
    }

    /// Miners that hold a blob for `cid`.
    pub fn holders(&self, cid: &Cid) -> BTreeSet<NodeId> {
        self.nodes.iter().filter(|n| n.store().contains(cid)).map(Node::id).collect()
    }

    /// Snapshot of the run so far.
    pub fn transcript(&self) -> Transcript {
        let mut t = self.transcript.clone();
        t.finish(&self.config, &self.nodes);
        t
    }
}
