//! Client and miner state machines.
//!
//! Every node is both a miner (stores blobs, serves plans and downloads,
//! proposes ledger vertices) and a client (runs create/update/merge/fork/get
//! operations). A node is a single-threaded event handler: the simulator
//! hands it one message or one tick at a time and collects what it emits.

mod client;
mod consensus;
pub mod message;
pub mod pos;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use ed25519_dalek::SigningKey;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cid::Cid;
use crate::ledger::{derive_signing_key, Keyring, LedgerConfig, LedgerState, NodeId, Transaction, Vertex};
use crate::recovery::retrieve;
use crate::store::{BlobStore, StoreError};

pub use client::{ClientError, ClientOp, OpId, OpOutput};
pub use message::{Body, Message};
pub use pos::StorageProof;

use consensus::Rbc;

/// Ticks one round takes without delays: propose, echo, ready.
pub const TICKS_PER_ROUND: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeouts {
    /// Ticks to wait for a reply before retrying or moving on.
    pub request_ticks: u64,
    pub store_retries: u32,
    /// Rounds of the client's replica to wait for a commit.
    pub commit_rounds: u64,
    /// Ticks a node waits for the wave leader before leaving a leader round.
    pub leader_wait_ticks: u64,
    /// Rounds a not-yet-valid transaction stays in a mempool.
    pub mempool_rounds: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts::for_max_delay(0)
    }
}

impl Timeouts {
    /// Defaults scaled to a worst-case per-message delay in ticks.
    pub fn for_max_delay(max_delay_ticks: u64) -> Self {
        let hop = max_delay_ticks + 1;
        Timeouts {
            request_ticks: 3 * TICKS_PER_ROUND.max(2 * hop),
            store_retries: 3,
            commit_rounds: 10,
            leader_wait_ticks: if max_delay_ticks == 0 { 0 } else { 3 * hop + TICKS_PER_ROUND },
            mempool_rounds: 20,
        }
    }
}

/// Rounds in which a node equivocates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rounds {
    All,
    Only(BTreeSet<u64>),
}

impl Rounds {
    pub fn contains(&self, r: u64) -> bool {
        match self {
            Rounds::All => true,
            Rounds::Only(s) => s.contains(&r),
        }
    }
}

/// Fault behavior of one node. The default is honest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Behavior {
    /// Stop for good when about to propose this round.
    pub crash_at_round: Option<u64>,
    /// Send conflicting vertices to disjoint halves of the network.
    pub equivocate: Option<Rounds>,
    /// Ignore STORE_REQUEST.
    pub drop_store: bool,
    /// Corrupt DOWNLOAD_RESPONSE payloads.
    pub garbage: bool,
}

impl Behavior {
    pub fn honest() -> Self {
        Behavior::default()
    }

    pub fn is_honest(&self) -> bool {
        *self == Behavior::default()
    }
}

/// Something a node did, for the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Proposed { vertex: Cid, round: u64, equivocated: bool },
    Inserted { vertex: Cid, round: u64, author: NodeId, node_round: u64 },
    Rejected { vertex: Cid, round: u64, author: NodeId, reason: &'static str },
    Committed { vertex: Cid, round: u64, author: NodeId, node_round: u64 },
    Crashed { round: u64 },
    OpDone { op: OpId, result: Result<OpOutput, ClientError> },
}

pub struct NodeSetup {
    pub id: NodeId,
    pub config: LedgerConfig,
    pub seed: u64,
    pub behavior: Behavior,
    pub timeouts: Timeouts,
    pub store: BlobStore,
    pub verify_signatures: bool,
}

/// No-op stand-in for the payment lanes: counts billable requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fees {
    pub paid: u64,
    pub earned: u64,
}

struct Pending {
    tx: Transaction,
    since_round: u64,
}

pub struct Node {
    id: NodeId,
    config: LedgerConfig,
    behavior: Behavior,
    timeouts: Timeouts,
    key: SigningKey,
    ledger: LedgerState,
    store: BlobStore,
    /// Highest round this node has proposed in.
    round: u64,
    started: bool,
    crashed: bool,
    /// (round, tick) at which the node could first leave `round` but chose to
    /// wait for the wave leader.
    waiting: Option<(u64, u64)>,
    mempool: VecDeque<Pending>,
    rbc: Rbc,
    orphans: Vec<Vertex>,
    ops: BTreeMap<OpId, client::Op>,
    requests: HashMap<u64, OpId>,
    next_req: u64,
    next_op: OpId,
    /// Version bytes this client knows.
    cache: HashMap<Cid, Vec<u8>>,
    /// Blobs this client uploaded, kept for storage challenges.
    uploads: HashMap<Cid, Vec<u8>>,
    rng: ChaCha8Rng,
    outbox: Vec<Message>,
    events: Vec<Event>,
    fees: Fees,
}

impl Node {
    pub fn new(setup: NodeSetup) -> Self {
        let NodeSetup { id, config, seed, behavior, timeouts, store, verify_signatures } = setup;
        let mut ledger = LedgerState::new(config, Keyring::derive(seed, config.n));
        ledger.set_verify_signatures(verify_signatures);
        Node {
            id,
            config,
            behavior,
            timeouts,
            key: derive_signing_key(seed, id),
            ledger,
            store,
            round: 0,
            started: false,
            crashed: false,
            waiting: None,
            mempool: VecDeque::new(),
            rbc: Rbc::default(),
            orphans: Vec::new(),
            ops: BTreeMap::new(),
            requests: HashMap::new(),
            next_req: 0,
            next_op: 0,
            cache: HashMap::new(),
            uploads: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(id as u64 + 1))),
            outbox: Vec::new(),
            events: Vec::new(),
            fees: Fees::default(),
        }
    }

    /// Loads previously committed history. The node resumes after the last
    /// round it has a vertex in.
    pub fn restore(&mut self, history: &[Vertex]) -> Result<(), crate::ledger::Rejection> {
        for v in history {
            self.ledger.insert_vertex(v.clone())?;
            self.ledger.try_commit();
            self.rbc.mark_delivered(v.author(), v.round());
            if v.author() == self.id {
                self.round = self.round.max(v.round());
            }
        }
        self.started = self.round > 0;
        Ok(())
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }

    pub fn store(&self) -> &BlobStore {
        &self.store
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn fees(&self) -> Fees {
        self.fees
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn has_pending_ops(&self) -> bool {
        !self.ops.is_empty()
    }

    /// Records bytes of a version this client already knows.
    pub fn remember(&mut self, version: Cid, bytes: Vec<u8>) {
        self.cache.insert(version, bytes);
    }

    pub fn known_bytes(&self, version: &Cid) -> Option<&[u8]> {
        self.cache.get(version).map(Vec::as_slice)
    }

    pub fn take_outbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn send(&mut self, to: NodeId, body: Body) {
        self.outbox.push(Message::new(self.id, to, body));
    }

    fn broadcast(&mut self, body: Body) {
        for to in 0..self.config.n {
            self.send(to, body.clone());
        }
    }

    /// Processes one delivered message.
    pub fn handle(&mut self, msg: Message, now: u64) {
        if self.crashed {
            return;
        }
        let from = msg.from;
        match msg.body {
            Body::VertexPropose { vertex } => self.on_propose(from, vertex),
            Body::VertexEcho { vertex } => self.on_echo(from, vertex),
            Body::VertexReady { author, round, digest } => self.on_ready(from, author, round, digest),
            Body::StoreAck { .. } | Body::PlanResponse { .. } | Body::DownloadResponse { .. } | Body::PosProof { .. } => {
                self.on_reply(msg.body, now)
            }
            body => {
                let replies = self.miner_serve(Message { from, to: msg.to, body });
                self.outbox.extend(replies);
            }
        }
    }

    /// Advances rounds, timeouts and waiting operations.
    pub fn on_tick(&mut self, now: u64) {
        if self.crashed {
            return;
        }
        self.advance_round(now);
        self.poll_ops(now);
    }

    /// Storage and ledger-query side of the protocol. Every request gets a
    /// reply, possibly an error, unless a fault behavior suppresses it.
    pub fn miner_serve(&mut self, msg: Message) -> Vec<Message> {
        let to = msg.from;
        let reply = |body| vec![Message::new(self.id, to, body)];
        match msg.body {
            Body::StoreRequest { req, tag, bytes } => {
                if self.behavior.drop_store {
                    return vec![];
                }
                self.fees.earned += 1;
                let result = self.store.put_blob(&bytes, tag).map_err(|e| e.to_string());
                reply(Body::StoreAck { req, result })
            }
            Body::TxBroadcast { tx } => {
                let id = tx.id();
                if self.ledger.tx_vertex(&id).is_none() && !self.mempool.iter().any(|p| p.tx.id() == id) {
                    self.mempool.push_back(Pending { tx, since_round: self.round });
                }
                vec![]
            }
            Body::RetrieveRequest { req, version } => {
                let committed = self.ledger.version_index(&version).is_some_and(|d| self.ledger.is_committed(&d));
                let result = if committed {
                    retrieve(&version, &self.ledger).map_err(|e| e.to_string())
                } else {
                    Err(format!("not-found: {version}"))
                };
                reply(Body::PlanResponse { req, version, result })
            }
            Body::DownloadRequest { req, cid } => {
                let result = match self.store.get_blob(&cid) {
                    Ok(mut bytes) => {
                        if self.behavior.garbage {
                            corrupt(&mut bytes);
                        }
                        Ok(bytes)
                    }
                    Err(StoreError::NotFound(_)) => Err(format!("not-found: {cid}")),
                    Err(e) => Err(e.to_string()),
                };
                reply(Body::DownloadResponse { req, cid, result })
            }
            Body::PosChallenge { req, cid, nonce } => {
                let result = match self.store.get_blob(&cid) {
                    Ok(bytes) => Ok(StorageProof::prove(cid, &bytes, nonce)),
                    Err(e) => Err(e.to_string()),
                };
                reply(Body::PosProof { req, result })
            }
            _ => vec![],
        }
    }
}

fn corrupt(bytes: &mut Vec<u8>) {
    match bytes.first_mut() {
        Some(b) => *b ^= 0xff,
        None => bytes.push(0),
    }
}
