//! Wave-based commit ordering.
//!
//! Wave `w >= 1` spans rounds `4w-3 ..= 4w`. Its leader is the vertex of node
//! `w mod N` in the first round. The leader commits once `2f+1` vertices of
//! the last round reach it over upper edges. Leaders of skipped earlier waves
//! that the committed leader reaches are committed first, oldest first.

use std::collections::HashSet;

use crate::cid::Cid;

use super::state::LedgerState;
use super::{NodeId, WAVE_LEN};

pub fn wave_first_round(w: u64) -> u64 {
    WAVE_LEN * w - (WAVE_LEN - 1)
}

pub fn wave_last_round(w: u64) -> u64 {
    WAVE_LEN * w
}

impl LedgerState {
    pub fn wave_leader_author(&self, w: u64) -> NodeId {
        (w % self.config.n as u64) as NodeId
    }

    pub fn wave_leader(&self, w: u64) -> Option<Cid> {
        self.vertex_at(wave_first_round(w), self.wave_leader_author(w))
    }

    /// Highest wave whose leader has been committed, or 0.
    pub fn decided_wave(&self) -> u64 {
        self.decided_wave
    }

    /// Number of last-round vertices of wave `w` that reach `leader`.
    fn support(&self, leader: &Cid, w: u64) -> usize {
        let mut reach: HashSet<Cid> = HashSet::from([*leader]);
        for r in wave_first_round(w) + 1..=wave_last_round(w) {
            for (_, id) in self.round(r) {
                let v = &self.entries[&id].vertex;
                if v.upper_parents().iter().any(|p| reach.contains(p)) {
                    reach.insert(id);
                }
            }
        }
        self.round(wave_last_round(w)).filter(|(_, id)| reach.contains(id)).count()
    }

    /// True if an upper-edge path leads from `from` to `to`.
    pub fn has_upper_path(&self, from: &Cid, to: &Cid) -> bool {
        let floor = self.entries[to].vertex.round();
        let mut seen = HashSet::from([*from]);
        let mut stack = vec![*from];
        while let Some(id) = stack.pop() {
            if id == *to {
                return true;
            }
            let v = &self.entries[&id].vertex;
            if v.round() <= floor {
                continue;
            }
            for p in v.upper_parents() {
                if seen.insert(*p) {
                    stack.push(*p);
                }
            }
        }
        false
    }

    fn commit_history(&mut self, leader: Cid, out: &mut Vec<Cid>) {
        let mut batch = Vec::new();
        let mut stack = vec![leader];
        let mut seen = HashSet::from([leader]);
        while let Some(id) = stack.pop() {
            if self.committed_set.contains(&id) {
                continue;
            }
            batch.push(id);
            let e = &self.entries[&id];
            for p in e.vertex.upper_parents().iter().chain(e.lower_targets.iter()) {
                if seen.insert(*p) {
                    stack.push(*p);
                }
            }
        }
        batch.sort_by_key(|id| {
            let v = &self.entries[id].vertex;
            (v.round(), v.author())
        });
        for id in batch {
            self.committed_set.insert(id);
            self.committed.push(id);
            out.push(id);
        }
    }

    /// Commits every wave that can be decided now and returns the newly
    /// committed vertex ids in order.
    pub fn try_commit(&mut self) -> Vec<Cid> {
        let mut out = Vec::new();
        let quorum = self.config.quorum();
        let top = self.max_round();
        let mut w = self.decided_wave + 1;
        while wave_last_round(w) <= top {
            let Some(leader) = self.wave_leader(w) else {
                w += 1;
                continue;
            };
            if self.support(&leader, w) < quorum {
                w += 1;
                continue;
            }
            let mut chain = vec![leader];
            let mut cur = leader;
            for prev in (self.decided_wave + 1..w).rev() {
                if let Some(l) = self.wave_leader(prev) {
                    if self.has_upper_path(&cur, &l) {
                        chain.push(l);
                        cur = l;
                    }
                }
            }
            for l in chain.into_iter().rev() {
                self.commit_history(l, &mut out);
            }
            self.decided_wave = w;
            w += 1;
        }
        out
    }
}
