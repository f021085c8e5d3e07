//! Client operations: create, update, merge, fork, get and storage challenges.
//!
//! Each operation is a small state machine advanced by replies and ticks.
//! Transactions are signed by the client and broadcast to every miner; an
//! operation that emits one finishes when the client's own replica commits it.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::cid::{Cid, CodecTag};
use crate::increment::{generate_increment, PatchError};
use crate::ledger::{fork_children, merge_version_cid, NodeId, Transaction, TxBody, Violation};
use crate::recovery::{recover, FragmentPlan, RecoveryError};

use super::message::Body;
use super::pos::fresh_challenge;
use super::{Event, Node};

pub type OpId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOp {
    Create { file: Vec<u8>, miner: NodeId },
    Update { base: Cid, file: Vec<u8>, miner: NodeId },
    Merge { left: Cid, right: Cid },
    Fork { base: Cid, count: u32 },
    Get { version: Cid, miner: NodeId },
    Challenge { cid: Cid, miner: NodeId },
}

impl ClientOp {
    pub fn name(&self) -> &'static str {
        match self {
            ClientOp::Create { .. } => "create",
            ClientOp::Update { .. } => "update",
            ClientOp::Merge { .. } => "merge",
            ClientOp::Fork { .. } => "fork",
            ClientOp::Get { .. } => "get",
            ClientOp::Challenge { .. } => "challenge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpOutput {
    Created { version: Cid, tx: Cid },
    Updated { version: Cid, tx: Cid, full_file: bool, stored: usize },
    Merged { version: Cid, tx: Cid },
    Forked { children: Vec<Cid>, tx: Cid },
    Got { bytes: Vec<u8>, plan: FragmentPlan },
    Proof { valid: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("store-failed: {0}")]
    StoreFailed(String),
    #[error("not-confirmed: transaction {0}")]
    NotConfirmed(Cid),
    #[error("unknown-base: {0}")]
    UnknownBase(Cid),
    #[error("invalid-transaction: {0}")]
    Invalid(Violation),
    #[error("not-found: {0}")]
    NotFound(Cid),
    #[error("download-timeout: {0}")]
    DownloadTimeout(Cid),
    #[error("corrupt-fragment: {0}")]
    Corrupt(Cid),
    #[error("patch-failed: {0}")]
    Patch(PatchError),
    #[error("timeout")]
    Timeout,
    #[error("no-reference: client holds no copy of {0}")]
    NoReference(Cid),
    #[error("client-crashed")]
    ClientCrashed,
}

impl ClientError {
    pub fn class(&self) -> &'static str {
        match self {
            ClientError::StoreFailed(_) => "store-failed",
            ClientError::NotConfirmed(_) => "not-confirmed",
            ClientError::UnknownBase(_) => "unknown-base",
            ClientError::Invalid(_) => "invalid-transaction",
            ClientError::NotFound(_) => "not-found",
            ClientError::DownloadTimeout(_) => "download-timeout",
            ClientError::Corrupt(_) => "corrupt-fragment",
            ClientError::Patch(_) => "patch-failed",
            ClientError::Timeout => "timeout",
            ClientError::NoReference(_) => "no-reference",
            ClientError::ClientCrashed => "client-crashed",
        }
    }
}

type OpResult = Result<OpOutput, ClientError>;

pub(super) struct Op {
    id: OpId,
    kind: ClientOp,
    /// Version bytes to cache once the transaction commits.
    remember: Option<(Cid, Vec<u8>)>,
    stage: Stage,
}

enum Stage {
    FetchBase(Fetch),
    Store { req: u64, bytes: Vec<u8>, tag: CodecTag, expect: Cid, miner: NodeId, attempts: u32, deadline: u64, then: TxBody },
    Validate { tx: Transaction, deadline_round: u64 },
    Commit { tx: Transaction, deadline_round: u64 },
    Get(Fetch),
    Challenge { req: u64, cid: Cid, nonce: [u8; 32], deadline: u64 },
    Done(OpResult),
}

struct Fetch {
    version: Cid,
    miner: NodeId,
    phase: Phase,
}

enum Phase {
    Plan { req: u64, deadline: u64 },
    Download { plan: FragmentPlan, fetched: HashMap<Cid, Vec<u8>>, slots: BTreeMap<Cid, Slot> },
}

struct Slot {
    candidates: Vec<NodeId>,
    next: usize,
    req: u64,
    deadline: u64,
    timed_out: bool,
}

enum Fetched {
    Pending,
    Done(Vec<u8>, FragmentPlan),
    Failed(ClientError),
}

impl Node {
    /// Starts a client operation; its result arrives as `Event::OpDone`.
    pub fn start_op(&mut self, kind: ClientOp, now: u64) -> OpId {
        let id = self.next_op;
        self.next_op += 1;
        let mut op = Op { id, kind: kind.clone(), remember: None, stage: Stage::Done(Err(ClientError::Timeout)) };
        if self.crashed {
            op.stage = Stage::Done(Err(ClientError::ClientCrashed));
            self.settle(op);
            return id;
        }
        op.stage = match kind {
            ClientOp::Create { file, miner } => {
                let version = Cid::of(&file, CodecTag::Original);
                self.uploads.insert(version, file.clone());
                let stage = self.store_stage(id, file.clone(), CodecTag::Original, miner, now, TxBody::Create { cid_v0: version });
                op.remember = Some((version, file));
                stage
            }
            ClientOp::Update { base, file, miner } => match self.cache.get(&base).cloned() {
                Some(old) => self.update_stage(&mut op, id, base, &old, file, miner, now),
                None => Stage::FetchBase(self.fetch(id, base, miner, now)),
            },
            ClientOp::Merge { left, right } => self.validate_stage(TxBody::Merge { left, right }),
            ClientOp::Fork { base, count } => {
                let children = fork_children(&base, count, self.id);
                self.validate_stage(TxBody::Fork { base_version: base, children })
            }
            ClientOp::Get { version, miner } => Stage::Get(self.fetch(id, version, miner, now)),
            ClientOp::Challenge { cid, miner } => {
                if self.uploads.contains_key(&cid) {
                    let nonce = fresh_challenge(&mut self.rng);
                    let req = self.request(id);
                    self.send(miner, Body::PosChallenge { req, cid, nonce });
                    Stage::Challenge { req, cid, nonce, deadline: now + self.timeouts.request_ticks }
                } else {
                    Stage::Done(Err(ClientError::NoReference(cid)))
                }
            }
        };
        self.poll(&mut op, now);
        self.settle(op);
        id
    }

    fn request(&mut self, op: OpId) -> u64 {
        let req = self.next_req;
        self.next_req += 1;
        self.requests.insert(req, op);
        req
    }

    fn settle(&mut self, op: Op) {
        match op.stage {
            Stage::Done(result) => {
                self.requests.retain(|_, o| *o != op.id);
                self.events.push(Event::OpDone { op: op.id, result });
            }
            _ => {
                self.ops.insert(op.id, op);
            }
        }
    }

    fn store_stage(&mut self, id: OpId, bytes: Vec<u8>, tag: CodecTag, miner: NodeId, now: u64, then: TxBody) -> Stage {
        let expect = Cid::of(&bytes, tag);
        let req = self.request(id);
        self.fees.paid += 1;
        self.send(miner, Body::StoreRequest { req, tag, bytes: bytes.clone() });
        Stage::Store { req, bytes, tag, expect, miner, attempts: 0, deadline: now + self.timeouts.request_ticks, then }
    }

    #[allow(clippy::too_many_arguments)]
    fn update_stage(&mut self, op: &mut Op, id: OpId, base: Cid, old: &[u8], file: Vec<u8>, miner: NodeId, now: u64) -> Stage {
        let inc = generate_increment(old, &file).with_base_hint(base);
        let cid_delta = inc.cid();
        self.uploads.insert(cid_delta, inc.encode());
        let then = TxBody::Update { base_version: base, cid_delta, full_file: inc.is_full_file() };
        op.remember = Some((cid_delta, file));
        self.store_stage(id, inc.encode(), CodecTag::Increment, miner, now, then)
    }

    fn validate_stage(&self, body: TxBody) -> Stage {
        let tx = Transaction::sign(self.id, body, &self.key);
        Stage::Validate { tx, deadline_round: self.round + self.timeouts.commit_rounds }
    }

    fn fetch(&mut self, id: OpId, version: Cid, miner: NodeId, now: u64) -> Fetch {
        let req = self.request(id);
        self.send(miner, Body::RetrieveRequest { req, version });
        Fetch { version, miner, phase: Phase::Plan { req, deadline: now + self.timeouts.request_ticks } }
    }

    /// Routes a reply to the operation that sent the request.
    pub(super) fn on_reply(&mut self, body: Body, now: u64) {
        let req = match &body {
            Body::StoreAck { req, .. }
            | Body::PlanResponse { req, .. }
            | Body::DownloadResponse { req, .. }
            | Body::PosProof { req, .. } => *req,
            _ => return,
        };
        let Some(id) = self.requests.remove(&req) else { return };
        let Some(mut op) = self.ops.remove(&id) else { return };
        self.reply(&mut op, req, body, now);
        self.poll(&mut op, now);
        self.settle(op);
    }

    pub(super) fn poll_ops(&mut self, now: u64) {
        let ids: Vec<OpId> = self.ops.keys().copied().collect();
        for id in ids {
            let mut op = self.ops.remove(&id).unwrap();
            if self.crashed {
                op.stage = Stage::Done(Err(ClientError::ClientCrashed));
            } else {
                self.poll(&mut op, now);
            }
            self.settle(op);
        }
    }

    fn reply(&mut self, op: &mut Op, req: u64, body: Body, now: u64) {
        let stage = std::mem::replace(&mut op.stage, Stage::Done(Err(ClientError::Timeout)));
        op.stage = match (stage, body) {
            (Stage::Store { req: r, expect, then, .. }, Body::StoreAck { result, .. }) if r == req => match result {
                Ok(cid) if cid == expect => self.validate_stage(then),
                Ok(cid) => Stage::Done(Err(ClientError::StoreFailed(format!("miner acknowledged {cid}, expected {expect}")))),
                Err(e) => Stage::Done(Err(ClientError::StoreFailed(e))),
            },
            (Stage::FetchBase(mut f), body) => match self.fetch_reply(op.id, &mut f, req, body, now) {
                Fetched::Pending => Stage::FetchBase(f),
                Fetched::Done(old, _) => self.base_fetched(op, f.version, old, now),
                Fetched::Failed(ClientError::NotFound(v)) if v == f.version => Stage::Done(Err(ClientError::UnknownBase(v))),
                Fetched::Failed(e) => Stage::Done(Err(e)),
            },
            (Stage::Get(mut f), body) => match self.fetch_reply(op.id, &mut f, req, body, now) {
                Fetched::Pending => Stage::Get(f),
                Fetched::Done(bytes, plan) => {
                    self.cache.insert(f.version, bytes.clone());
                    Stage::Done(Ok(OpOutput::Got { bytes, plan }))
                }
                Fetched::Failed(e) => Stage::Done(Err(e)),
            },
            (Stage::Challenge { req: r, cid, nonce, .. }, Body::PosProof { result, .. }) if r == req => {
                let content = &self.uploads[&cid];
                let valid = result.is_ok_and(|p| p.verify(&cid, &nonce, content));
                Stage::Done(Ok(OpOutput::Proof { valid }))
            }
            (stage, _) => stage,
        };
    }

    fn base_fetched(&mut self, op: &mut Op, base: Cid, old: Vec<u8>, now: u64) -> Stage {
        self.cache.insert(base, old.clone());
        let ClientOp::Update { file, miner, .. } = op.kind.clone() else { unreachable!() };
        let id = op.id;
        self.update_stage(op, id, base, &old, file, miner, now)
    }

    fn poll(&mut self, op: &mut Op, now: u64) {
        let stage = std::mem::replace(&mut op.stage, Stage::Done(Err(ClientError::Timeout)));
        op.stage = match stage {
            Stage::Store { req, bytes, tag, expect, miner, attempts, deadline, then } if now >= deadline => {
                self.requests.remove(&req);
                if attempts >= self.timeouts.store_retries {
                    Stage::Done(Err(ClientError::StoreFailed(format!("no reply from miner {miner} after {} attempts", attempts + 1))))
                } else {
                    let req = self.request(op.id);
                    self.fees.paid += 1;
                    self.send(miner, Body::StoreRequest { req, tag, bytes: bytes.clone() });
                    let deadline = now + self.timeouts.request_ticks;
                    Stage::Store { req, bytes, tag, expect, miner, attempts: attempts + 1, deadline, then }
                }
            }
            Stage::Validate { tx, deadline_round } => match self.ledger.validate_transaction(&tx) {
                Ok(()) => {
                    self.fees.paid += 1;
                    self.broadcast(Body::TxBroadcast { tx: tx.clone() });
                    Stage::Commit { tx, deadline_round: self.round + self.timeouts.commit_rounds }
                }
                Err(Violation::UnknownVersion(v)) if self.round > deadline_round => Stage::Done(Err(ClientError::UnknownBase(v))),
                Err(Violation::UnknownVersion(_)) => Stage::Validate { tx, deadline_round },
                Err(e) => Stage::Done(Err(ClientError::Invalid(e))),
            },
            Stage::Commit { tx, deadline_round } => {
                if self.ledger.is_tx_committed(&tx.id()) {
                    if let Some((v, bytes)) = op.remember.take() {
                        self.cache.insert(v, bytes);
                    }
                    Stage::Done(Ok(self.output(&tx)))
                } else if self.round > deadline_round {
                    Stage::Done(Err(ClientError::NotConfirmed(tx.id())))
                } else {
                    Stage::Commit { tx, deadline_round }
                }
            }
            Stage::FetchBase(mut f) => match self.fetch_poll(op.id, &mut f, now) {
                Some(e) => Stage::Done(Err(e)),
                None => Stage::FetchBase(f),
            },
            Stage::Get(mut f) => match self.fetch_poll(op.id, &mut f, now) {
                Some(e) => Stage::Done(Err(e)),
                None => Stage::Get(f),
            },
            Stage::Challenge { deadline, .. } if now >= deadline => Stage::Done(Err(ClientError::Timeout)),
            stage => stage,
        };
    }

    fn output(&self, tx: &Transaction) -> OpOutput {
        let id = tx.id();
        match tx.body() {
            TxBody::Create { cid_v0 } => OpOutput::Created { version: *cid_v0, tx: id },
            TxBody::Update { cid_delta, full_file, .. } => {
                let stored = self.uploads.get(cid_delta).map_or(0, Vec::len);
                OpOutput::Updated { version: *cid_delta, tx: id, full_file: *full_file, stored }
            }
            TxBody::Merge { left, right } => OpOutput::Merged { version: merge_version_cid(left, right, tx.author()), tx: id },
            TxBody::Fork { children, .. } => OpOutput::Forked { children: children.clone(), tx: id },
        }
    }

    fn fetch_reply(&mut self, op: OpId, f: &mut Fetch, req: u64, body: Body, now: u64) -> Fetched {
        match (&mut f.phase, body) {
            (Phase::Plan { req: r, .. }, Body::PlanResponse { result, .. }) if *r == req => match result {
                Ok(plan) => self.start_downloads(op, f, plan, now),
                Err(_) => Fetched::Failed(ClientError::NotFound(f.version)),
            },
            (Phase::Download { slots, fetched, .. }, Body::DownloadResponse { cid, result, .. }) => {
                if slots.get(&cid).is_none_or(|s| s.req != req) {
                    return Fetched::Pending;
                }
                match result {
                    Ok(bytes) if cid.verifies(&bytes) => {
                        slots.remove(&cid);
                        fetched.insert(cid, bytes);
                        self.finish_fetch(f)
                    }
                    Ok(_) => Fetched::Failed(ClientError::Corrupt(cid)),
                    Err(_) => match self.probe_next(op, cid, slots, now) {
                        Some(e) => Fetched::Failed(e),
                        None => Fetched::Pending,
                    },
                }
            }
            _ => Fetched::Pending,
        }
    }

    fn start_downloads(&mut self, op: OpId, f: &mut Fetch, plan: FragmentPlan, now: u64) -> Fetched {
        let mut candidates = vec![f.miner];
        candidates.extend((0..self.config.n).filter(|&m| m != f.miner));
        let mut slots = BTreeMap::new();
        for cid in plan.fetchable() {
            if slots.contains_key(cid) {
                continue;
            }
            let req = self.request(op);
            self.send(candidates[0], Body::DownloadRequest { req, cid: *cid });
            let deadline = now + self.timeouts.request_ticks;
            slots.insert(*cid, Slot { candidates: candidates.clone(), next: 0, req, deadline, timed_out: false });
        }
        f.phase = Phase::Download { plan, fetched: HashMap::new(), slots };
        self.finish_fetch(f)
    }

    fn finish_fetch(&self, f: &Fetch) -> Fetched {
        let Phase::Download { plan, fetched, slots } = &f.phase else { return Fetched::Pending };
        if !slots.is_empty() {
            return Fetched::Pending;
        }
        match recover(plan, |c| fetched.get(c)) {
            Ok(bytes) => Fetched::Done(bytes, plan.clone()),
            Err(RecoveryError::CorruptFragment(c)) => Fetched::Failed(ClientError::Corrupt(c)),
            Err(RecoveryError::Patch(e)) => Fetched::Failed(ClientError::Patch(e)),
            Err(RecoveryError::IncompletePlan(c) | RecoveryError::NotFound(c)) => Fetched::Failed(ClientError::NotFound(c)),
            Err(RecoveryError::EmptyPlan) => Fetched::Failed(ClientError::NotFound(f.version)),
        }
    }

    /// Asks the next candidate miner for `cid`, or gives up.
    fn probe_next(&mut self, op: OpId, cid: Cid, slots: &mut BTreeMap<Cid, Slot>, now: u64) -> Option<ClientError> {
        let slot = slots.get_mut(&cid).unwrap();
        self.requests.remove(&slot.req);
        slot.next += 1;
        if slot.next >= slot.candidates.len() {
            return Some(if slot.timed_out { ClientError::DownloadTimeout(cid) } else { ClientError::NotFound(cid) });
        }
        let to = slot.candidates[slot.next];
        let req = self.request(op);
        let slot = slots.get_mut(&cid).unwrap();
        slot.req = req;
        slot.deadline = now + self.timeouts.request_ticks;
        self.send(to, Body::DownloadRequest { req, cid });
        None
    }

    fn fetch_poll(&mut self, op: OpId, f: &mut Fetch, now: u64) -> Option<ClientError> {
        match &mut f.phase {
            Phase::Plan { deadline, .. } if now >= *deadline => Some(ClientError::Timeout),
            Phase::Plan { .. } => None,
            Phase::Download { slots, .. } => {
                let expired: Vec<Cid> = slots.iter().filter(|(_, s)| now >= s.deadline).map(|(c, _)| *c).collect();
                for cid in expired {
                    slots.get_mut(&cid).unwrap().timed_out = true;
                    if let Some(e) = self.probe_next(op, cid, slots, now) {
                        return Some(e);
                    }
                }
                None
            }
        }
    }
}
