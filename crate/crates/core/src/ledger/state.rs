use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::cid::{Cid, CodecTag};

use super::transaction::{fork_child_cid, Transaction, TxBody, TxKind};
use super::vertex::Vertex;
use super::{Keyring, LedgerConfig, NodeId, Rejection, UnknownVersion, Violation};

#[derive(Debug, Clone)]
pub(super) struct Entry {
    pub(super) vertex: Vertex,
    /// Defining vertex of each referenced version, in declared order.
    pub(super) lower_targets: Vec<Cid>,
    /// CREATE version this vertex's transaction descends from.
    origin: Option<Cid>,
}

/// What the ledger knows about one version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionInfo {
    pub version: Cid,
    pub kind: TxKind,
    /// Versions this one derives from.
    pub parents: Vec<Cid>,
    /// True when the version's data alone reconstructs the file.
    pub complete: bool,
    pub definer: Cid,
}

/// Replica of the ledger held by one node.
#[derive(Debug, Clone)]
pub struct LedgerState {
    pub(super) config: LedgerConfig,
    keys: Keyring,
    verify_signatures: bool,
    pub(super) entries: HashMap<Cid, Entry>,
    insertion: Vec<Cid>,
    pub(super) rounds: BTreeMap<u64, BTreeMap<NodeId, Cid>>,
    /// Every vertex that defines a version, ordered by (round, author).
    definers: HashMap<Cid, BTreeSet<(u64, NodeId, Cid)>>,
    tx_index: HashMap<Cid, (u64, NodeId, Cid)>,
    pub(super) committed: Vec<Cid>,
    pub(super) committed_set: HashSet<Cid>,
    pub(super) decided_wave: u64,
}

enum Visible<'a> {
    All,
    Only(&'a HashSet<Cid>),
}

impl Visible<'_> {
    fn contains(&self, id: &Cid) -> bool {
        match self {
            Visible::All => true,
            Visible::Only(s) => s.contains(id),
        }
    }
}

impl LedgerState {
    /// A state holding the `N` genesis vertices of round 0.
    pub fn new(config: LedgerConfig, keys: Keyring) -> Self {
        let mut s = LedgerState {
            config,
            keys,
            verify_signatures: true,
            entries: HashMap::new(),
            insertion: Vec::new(),
            rounds: BTreeMap::new(),
            definers: HashMap::new(),
            tx_index: HashMap::new(),
            committed: Vec::new(),
            committed_set: HashSet::new(),
            decided_wave: 0,
        };
        for a in 0..config.n {
            let g = Vertex::genesis(a);
            let id = g.id();
            s.rounds.entry(0).or_default().insert(a, id);
            s.entries.insert(id, Entry { vertex: g, lower_targets: vec![], origin: None });
            s.committed_set.insert(id);
        }
        s
    }

    pub fn set_verify_signatures(&mut self, on: bool) {
        self.verify_signatures = on;
    }

    pub fn config(&self) -> LedgerConfig {
        self.config
    }

    pub fn keys(&self) -> &Keyring {
        &self.keys
    }

    pub fn genesis_ids(&self) -> Vec<Cid> {
        self.rounds.get(&0).map(|m| m.values().copied().collect()).unwrap_or_default()
    }

    pub fn is_genesis(&self, id: &Cid) -> bool {
        self.entries.get(id).is_some_and(|e| e.vertex.round() == 0)
    }

    pub fn vertex(&self, id: &Cid) -> Option<&Vertex> {
        self.entries.get(id).map(|e| &e.vertex)
    }

    pub fn contains(&self, id: &Cid) -> bool {
        self.entries.contains_key(id)
    }

    /// Number of vertices, genesis included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Non-genesis vertices in the order they were inserted.
    pub fn insertion_order(&self) -> &[Cid] {
        &self.insertion
    }

    pub fn max_round(&self) -> u64 {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    /// Vertex ids of round `r`, by author.
    pub fn round(&self, r: u64) -> impl Iterator<Item = (NodeId, Cid)> + '_ {
        self.rounds.get(&r).into_iter().flat_map(|m| m.iter().map(|(a, id)| (*a, *id)))
    }

    pub fn round_len(&self, r: u64) -> usize {
        self.rounds.get(&r).map_or(0, |m| m.len())
    }

    pub fn vertex_at(&self, r: u64, author: NodeId) -> Option<Cid> {
        self.rounds.get(&r).and_then(|m| m.get(&author)).copied()
    }

    /// Defining vertices of the versions `id`'s transaction references.
    pub fn lower_targets(&self, id: &Cid) -> &[Cid] {
        self.entries.get(id).map_or(&[], |e| &e.lower_targets)
    }

    /// The vertex that defines `version`. Concurrent duplicate definitions
    /// resolve to the smallest (round, author).
    pub fn version_index(&self, version: &Cid) -> Option<Cid> {
        self.definers.get(version).and_then(|s| s.first()).map(|d| d.2)
    }

    pub fn version_count(&self) -> usize {
        self.definers.len()
    }

    pub fn versions(&self) -> impl Iterator<Item = (&Cid, Cid)> + '_ {
        self.definers.iter().map(|(v, s)| (v, s.first().unwrap().2))
    }

    pub fn version_info(&self, version: &Cid) -> Option<VersionInfo> {
        let definer = self.version_index(version)?;
        let tx = self.entries[&definer].vertex.tx()?;
        let complete = match tx.body() {
            TxBody::Create { .. } => true,
            TxBody::Update { full_file, .. } => *full_file,
            _ => false,
        };
        Some(VersionInfo { version: *version, kind: tx.kind(), parents: tx.referenced_versions(), complete, definer })
    }

    /// The CREATE version `version` descends from.
    pub fn lineage_origin(&self, version: &Cid) -> Result<Cid, UnknownVersion> {
        let definer = self.version_index(version).ok_or(UnknownVersion(*version))?;
        Ok(self.entries[&definer].origin.expect("defining vertex carries a transaction"))
    }

    /// Vertex that carries the transaction `tx_id`, if any.
    pub fn tx_vertex(&self, tx_id: &Cid) -> Option<Cid> {
        self.tx_index.get(tx_id).map(|t| t.2)
    }

    pub fn is_tx_committed(&self, tx_id: &Cid) -> bool {
        self.tx_vertex(tx_id).is_some_and(|v| self.committed_set.contains(&v))
    }

    pub fn committed(&self) -> &[Cid] {
        &self.committed
    }

    pub fn is_committed(&self, id: &Cid) -> bool {
        self.committed_set.contains(id) && !self.is_genesis(id)
    }

    /// Checks `tx` against everything this replica has seen.
    pub fn validate_transaction(&self, tx: &Transaction) -> Result<(), Violation> {
        self.validate_in(tx, &Visible::All).map(|_| ())
    }

    fn definer_in(&self, version: &Cid, visible: &Visible<'_>) -> Option<(u64, NodeId, Cid)> {
        self.definers.get(version)?.iter().find(|d| visible.contains(&d.2)).copied()
    }

    /// Returns the resolved lower targets and the lineage origin.
    fn validate_in(&self, tx: &Transaction, visible: &Visible<'_>) -> Result<(Vec<Cid>, Cid), Violation> {
        if self.verify_signatures && !tx.verify(&self.keys) {
            return Err(Violation::BadSignature);
        }
        match tx.body() {
            TxBody::Create { cid_v0 } => check_tag("cid_v0", cid_v0, CodecTag::Original)?,
            TxBody::Update { cid_delta, .. } => check_tag("cid_delta", cid_delta, CodecTag::Increment)?,
            TxBody::Merge { left, right } if left == right => return Err(Violation::MergeSameVersion(*left)),
            TxBody::Merge { .. } => {}
            TxBody::Fork { base_version, children } => {
                if children.is_empty() {
                    return Err(Violation::EmptyFork);
                }
                let mut seen = HashSet::new();
                for (i, c) in children.iter().enumerate() {
                    if !seen.insert(c) {
                        return Err(Violation::DuplicateForkChild(*c));
                    }
                    if *c != fork_child_cid(base_version, i as u32, tx.author()) {
                        return Err(Violation::ForkChildMismatch { index: i });
                    }
                }
            }
        }
        let mut targets = Vec::new();
        for v in tx.referenced_versions() {
            match self.definer_in(&v, visible) {
                Some(d) => targets.push(d.2),
                None => return Err(Violation::UnknownVersion(v)),
            }
        }
        for v in tx.defined_versions() {
            if self.definer_in(&v, visible).is_some() {
                return Err(Violation::DuplicateVersion(v));
            }
        }
        let origins: Vec<Cid> = targets.iter().map(|t| self.entries[t].origin.unwrap()).collect();
        let origin = match tx.body() {
            TxBody::Create { cid_v0 } => *cid_v0,
            TxBody::Merge { .. } => {
                if origins[0] != origins[1] {
                    return Err(Violation::CrossFileMerge { left: origins[0], right: origins[1] });
                }
                origins[0]
            }
            _ => origins[0],
        };
        Ok((targets, origin))
    }

    /// Vertices among `candidates` reachable from `parents` over upper edges.
    fn reachable_among(&self, parents: &[Cid], candidates: &HashSet<Cid>) -> HashSet<Cid> {
        let mut found = HashSet::new();
        if candidates.is_empty() {
            return found;
        }
        let floor = candidates.iter().map(|c| self.entries[c].vertex.round()).min().unwrap();
        let mut seen: HashSet<Cid> = parents.iter().copied().collect();
        let mut stack: Vec<Cid> = parents.to_vec();
        while let Some(id) = stack.pop() {
            if candidates.contains(&id) {
                found.insert(id);
                if found.len() == candidates.len() {
                    break;
                }
            }
            let e = &self.entries[&id];
            if e.vertex.round() <= floor {
                continue;
            }
            for p in e.vertex.upper_parents() {
                if seen.insert(*p) {
                    stack.push(*p);
                }
            }
        }
        found
    }

    /// Checks `tx` as it would be checked inside a vertex whose upper parents
    /// are `parents`, which must all be present.
    pub fn validate_with_parents(&self, tx: &Transaction, parents: &[Cid]) -> Result<(), Violation> {
        self.validate_causal(tx, parents).map(|_| ())
    }

    fn validate_causal(&self, tx: &Transaction, parents: &[Cid]) -> Result<(Vec<Cid>, Cid), Violation> {
        let candidates: HashSet<Cid> = tx
            .referenced_versions()
            .iter()
            .chain(tx.defined_versions().iter())
            .filter_map(|c| self.definers.get(c))
            .flat_map(|s| s.iter().map(|d| d.2))
            .collect();
        let past = self.reachable_among(parents, &candidates);
        self.validate_in(tx, &Visible::Only(&past))
    }

    /// Adds `v` if it is well formed. Inserting a vertex already present is a
    /// no-op.
    ///
    /// The transaction is validated against `v`'s causal past only, so every
    /// replica reaches the same verdict whatever order vertices arrive in.
    pub fn insert_vertex(&mut self, v: Vertex) -> Result<(), Rejection> {
        let id = v.id();
        if self.entries.contains_key(&id) {
            return Ok(());
        }
        let (round, author) = (v.round(), v.author());
        if author >= self.config.n {
            return Err(Rejection::UnknownAuthor(author));
        }
        if self.vertex_at(round, author).is_some() {
            return Err(Rejection::DuplicateAuthorRound { author, round });
        }
        let mut authors = HashSet::new();
        for p in v.upper_parents() {
            let pe = self.entries.get(p).ok_or(Rejection::UnknownParent(*p))?;
            if round == 0 || pe.vertex.round() != round - 1 {
                return Err(Rejection::BadParentRound { parent: *p, expected: round.saturating_sub(1) });
            }
            authors.insert(pe.vertex.author());
        }
        let need = self.config.quorum();
        if authors.len() < need {
            return Err(Rejection::InsufficientUpperParents { got: authors.len(), need });
        }

        let (lower_targets, origin) = match v.tx() {
            None => (vec![], None),
            Some(tx) => {
                let (t, o) = self.validate_causal(tx, v.upper_parents()).map_err(Rejection::InvalidTransaction)?;
                (t, Some(o))
            }
        };

        if let Some(tx) = v.tx() {
            for d in tx.defined_versions() {
                self.definers.entry(d).or_default().insert((round, author, id));
            }
            let key = (round, author, id);
            self.tx_index.entry(tx.id()).and_modify(|cur| *cur = (*cur).min(key)).or_insert(key);
        }
        self.rounds.entry(round).or_default().insert(author, id);
        self.insertion.push(id);
        self.entries.insert(id, Entry { vertex: v, lower_targets, origin });
        Ok(())
    }

    /// Digest over the vertex set, version index, commit order and wave
    /// progress. Equal digests mean equal ledger contents.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut ids: Vec<&Cid> = self.entries.keys().collect();
        ids.sort();
        for id in ids {
            h.update(id.to_bytes());
            for t in &self.entries[id].lower_targets {
                h.update(t.to_bytes());
            }
        }
        let mut idx: Vec<(&Cid, Cid)> = self.versions().collect();
        idx.sort();
        for (v, d) in idx {
            h.update(v.to_bytes());
            h.update(d.to_bytes());
        }
        h.update((self.committed.len() as u64).to_le_bytes());
        for c in &self.committed {
            h.update(c.to_bytes());
        }
        h.update(self.decided_wave.to_le_bytes());
        h.finalize().into()
    }

    /// Graphviz rendering of the DAG. Upper edges are solid, lower edges
    /// dashed; committed vertices are filled.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph ledger {\n  rankdir=RL;\n  node [shape=box, fontname=monospace];\n");
        for (r, m) in &self.rounds {
            for (a, id) in m {
                let e = &self.entries[id];
                let kind = e.vertex.tx().map_or("EMPTY", |t| t.kind().name());
                let fill = if self.committed_set.contains(id) { ", style=filled, fillcolor=lightgrey" } else { "" };
                let _ = writeln!(out, "  \"{}\" [label=\"{}\\nr={} a={} {}\"{}];", id, id.short(), r, a, kind, fill);
            }
        }
        for m in self.rounds.values() {
            for id in m.values() {
                let e = &self.entries[id];
                for p in e.vertex.upper_parents() {
                    let _ = writeln!(out, "  \"{}\" -> \"{}\";", id, p);
                }
                for t in &e.lower_targets {
                    let _ = writeln!(out, "  \"{}\" -> \"{}\" [style=dashed, color=blue];", id, t);
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn check_tag(field: &'static str, cid: &Cid, want: CodecTag) -> Result<(), Violation> {
    if cid.tag() == want {
        Ok(())
    } else {
        Err(Violation::BadCidTag { field, tag: cid.tag().name() })
    }
}
