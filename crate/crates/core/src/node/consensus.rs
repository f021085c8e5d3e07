//! Vertex dissemination and round advancement.
//!
//! Vertices travel by Bracha reliable broadcast: the author sends PROPOSE,
//! every node echoes the first vertex it sees per (author, round), sends
//! READY once echoes reach `ceil((N+f+1)/2)` or readies reach `f+1`, and
//! delivers on `2f+1` readies. Delivered vertices wait as orphans until
//! their parents are present, then go through `insert_vertex`.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::RngCore;

use crate::cid::{Cid, CodecTag};
use crate::ledger::{NodeId, Transaction, TxBody, Vertex, Violation, WAVE_LEN};

use super::message::Body;
use super::{Event, Node};

type Slot = (NodeId, u64);

#[derive(Default)]
pub(super) struct Rbc {
    echoed: HashSet<Slot>,
    readied: HashSet<Slot>,
    delivered: HashSet<Slot>,
    echo_from: HashSet<(NodeId, Slot)>,
    ready_from: HashSet<(NodeId, Slot)>,
    echoes: HashMap<(Slot, Cid), BTreeSet<NodeId>>,
    readies: HashMap<(Slot, Cid), BTreeSet<NodeId>>,
    bodies: HashMap<Cid, Vertex>,
}

impl Rbc {
    pub(super) fn mark_delivered(&mut self, author: NodeId, round: u64) {
        let slot = (author, round);
        self.echoed.insert(slot);
        self.readied.insert(slot);
        self.delivered.insert(slot);
    }
}

fn slot(v: &Vertex) -> Slot {
    (v.author(), v.round())
}

impl Node {
    fn echo_threshold(&self) -> usize {
        (self.config.n + self.config.f + 1).div_ceil(2) as usize
    }

    pub(super) fn on_propose(&mut self, from: NodeId, vertex: Vertex) {
        if from != vertex.author() || vertex.author() >= self.config.n {
            return;
        }
        if self.rbc.echoed.insert(slot(&vertex)) {
            self.broadcast(Body::VertexEcho { vertex });
        }
    }

    pub(super) fn on_echo(&mut self, from: NodeId, vertex: Vertex) {
        let s = slot(&vertex);
        if vertex.author() >= self.config.n || !self.rbc.echo_from.insert((from, s)) {
            return;
        }
        let digest = vertex.id();
        self.rbc.bodies.entry(digest).or_insert(vertex);
        let echoes = self.rbc.echoes.entry((s, digest)).or_default();
        echoes.insert(from);
        if echoes.len() >= self.echo_threshold() && self.rbc.readied.insert(s) {
            self.broadcast(Body::VertexReady { author: s.0, round: s.1, digest });
        }
        self.try_deliver(s, digest);
    }

    pub(super) fn on_ready(&mut self, from: NodeId, author: NodeId, round: u64, digest: Cid) {
        let s = (author, round);
        if author >= self.config.n || !self.rbc.ready_from.insert((from, s)) {
            return;
        }
        let readies = self.rbc.readies.entry((s, digest)).or_default();
        readies.insert(from);
        if readies.len() > self.config.f as usize && self.rbc.readied.insert(s) {
            self.broadcast(Body::VertexReady { author, round, digest });
        }
        self.try_deliver(s, digest);
    }

    fn try_deliver(&mut self, s: Slot, digest: Cid) {
        if self.rbc.delivered.contains(&s) {
            return;
        }
        let enough = self.rbc.readies.get(&(s, digest)).is_some_and(|r| r.len() >= self.config.quorum());
        let Some(body) = self.rbc.bodies.get(&digest) else { return };
        if !enough || slot(body) != s {
            return;
        }
        self.rbc.delivered.insert(s);
        let v = self.rbc.bodies.remove(&digest).unwrap();
        self.rbc.bodies.retain(|_, b| slot(b) != s);
        self.orphans.push(v);
        self.insert_ready_orphans();
    }

    /// Inserts every orphan whose parents are all present, then commits.
    fn insert_ready_orphans(&mut self) {
        let mut progress = true;
        while progress {
            progress = false;
            let mut i = 0;
            while i < self.orphans.len() {
                let v = &self.orphans[i];
                if !v.upper_parents().iter().all(|p| self.ledger.contains(p)) {
                    i += 1;
                    continue;
                }
                let v = self.orphans.swap_remove(i);
                progress = true;
                let (vertex, round, author) = (v.id(), v.round(), v.author());
                match self.ledger.insert_vertex(v) {
                    Ok(()) => self.events.push(Event::Inserted { vertex, round, author, node_round: self.round }),
                    Err(e) => self.events.push(Event::Rejected { vertex, round, author, reason: e.reason() }),
                }
            }
        }
        for vertex in self.ledger.try_commit() {
            let v = self.ledger.vertex(&vertex).unwrap();
            let (round, author) = (v.round(), v.author());
            self.events.push(Event::Committed { vertex, round, author, node_round: self.round });
        }
    }

    /// Proposes the next vertex once the highest round reached has a quorum.
    pub(super) fn advance_round(&mut self, now: u64) {
        let quorum = self.config.quorum();
        let mut r = self.ledger.max_round();
        while r > self.round && self.ledger.round_len(r) < quorum {
            r -= 1;
        }
        if self.ledger.round_len(r) < quorum || (self.started && r < self.round) {
            return;
        }
        if r % WAVE_LEN == 1 && self.ledger.wave_leader(r.div_ceil(WAVE_LEN)).is_none() && !self.leader_wait_over(r, now) {
            return;
        }
        let next = r + 1;
        if self.behavior.crash_at_round.is_some_and(|c| next >= c) {
            self.crashed = true;
            self.events.push(Event::Crashed { round: next });
            return;
        }
        self.started = true;
        self.waiting = None;
        let parents: Vec<Cid> = self.ledger.round(r).map(|(_, id)| id).collect();
        let tx = self.pick_transaction(&parents);
        let vertex = Vertex::new(next, self.id, parents.clone(), tx);
        self.round = next;
        let equivocate = self.behavior.equivocate.as_ref().is_some_and(|rs| rs.contains(next));
        self.events.push(Event::Proposed { vertex: vertex.id(), round: next, equivocated: equivocate });
        if equivocate {
            self.equivocate(vertex, parents);
        } else {
            self.broadcast(Body::VertexPropose { vertex });
        }
    }

    /// True once the node has waited `leader_wait_ticks` in round `r`.
    fn leader_wait_over(&mut self, r: u64, now: u64) -> bool {
        if self.timeouts.leader_wait_ticks == 0 {
            return true;
        }
        match self.waiting {
            Some((wr, since)) if wr == r => now >= since + self.timeouts.leader_wait_ticks,
            _ => {
                self.waiting = Some((r, now));
                false
            }
        }
    }

    /// Takes the first pending transaction that is valid on top of `parents`.
    ///
    /// A node includes transactions its own client signed at once and other
    /// clients' transactions only after they waited a few rounds, which
    /// keeps duplicate inclusion rare without relying on any single node.
    fn pick_transaction(&mut self, parents: &[Cid]) -> Option<Transaction> {
        const BACKUP_ROUNDS: u64 = 4;
        let mut chosen = None;
        let mut keep = std::collections::VecDeque::with_capacity(self.mempool.len());
        while let Some(p) = self.mempool.pop_front() {
            if chosen.is_some() {
                keep.push_back(p);
                continue;
            }
            if self.ledger.tx_vertex(&p.tx.id()).is_some() {
                continue;
            }
            let age = self.round.saturating_sub(p.since_round);
            if p.tx.author() != self.id && age < BACKUP_ROUNDS {
                keep.push_back(p);
                continue;
            }
            match self.ledger.validate_with_parents(&p.tx, parents) {
                Ok(()) => chosen = Some(p.tx),
                Err(Violation::UnknownVersion(_)) if age <= self.timeouts.mempool_rounds => keep.push_back(p),
                Err(_) => {}
            }
        }
        self.mempool = keep;
        chosen
    }

    /// Sends `honest` to the lower half of the peers and a conflicting vertex
    /// to the rest, then echoes and readies both.
    fn equivocate(&mut self, honest: Vertex, parents: Vec<Cid>) {
        let mut junk = vec![0u8; 32];
        self.rng.fill_bytes(&mut junk);
        let tx = Transaction::sign(self.id, TxBody::Create { cid_v0: Cid::of(&junk, CodecTag::Original) }, &self.key);
        let other = Vertex::new(honest.round(), self.id, parents, Some(tx));
        let peers: Vec<NodeId> = (0..self.config.n).filter(|&p| p != self.id).collect();
        let half = peers.len().div_ceil(2);
        self.send(self.id, Body::VertexPropose { vertex: honest.clone() });
        for (i, &p) in peers.iter().enumerate() {
            let vertex = if i < half { honest.clone() } else { other.clone() };
            self.send(p, Body::VertexPropose { vertex });
        }
        let s = slot(&honest);
        self.rbc.echoed.insert(s);
        self.rbc.readied.insert(s);
        for v in [honest, other] {
            let digest = v.id();
            self.broadcast(Body::VertexEcho { vertex: v });
            self.broadcast(Body::VertexReady { author: s.0, round: s.1, digest });
        }
    }
}
