//! Single-node lineage harness shared by the recovery and acceptance tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use filedag_core::cid::{Cid, CodecTag};
use filedag_core::increment::{apply_patch, generate_increment, Increment, PatchError};
use filedag_core::ledger::{
    derive_signing_key, fork_children, merge_version_cid, Keyring, LedgerConfig, LedgerState, Transaction, TxBody, Vertex,
};
use filedag_core::recovery::{retrieve, FragmentPlan, RecoveryError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A single-node ledger plus everything the test knows about each version.
pub struct Lineage {
    pub state: LedgerState,
    pub blobs: HashMap<Cid, Vec<u8>>,
    pub increments: HashMap<Cid, Increment>,
    /// Tracked bytes; `None` for merges whose replay failed.
    pub content: HashMap<Cid, Option<Vec<u8>>>,
    pub merges: HashSet<Cid>,
    pub order: Vec<Cid>,
}

impl Lineage {
    pub fn new() -> Self {
        Lineage {
            state: LedgerState::new(LedgerConfig::new(1, 0).unwrap(), Keyring::derive(3, 1)),
            blobs: HashMap::new(),
            increments: HashMap::new(),
            content: HashMap::new(),
            merges: HashSet::new(),
            order: Vec::new(),
        }
    }

    pub fn submit(&mut self, body: TxBody) -> bool {
        let tx = Transaction::sign(0, body, &derive_signing_key(3, 0));
        if self.state.validate_transaction(&tx).is_err() {
            return false;
        }
        let r = self.state.max_round() + 1;
        let parents = self.state.round(r - 1).map(|(_, id)| id).collect();
        self.state.insert_vertex(Vertex::new(r, 0, parents, Some(tx))).unwrap();
        true
    }

    pub fn create(&mut self, bytes: &[u8]) -> Cid {
        let v = Cid::of(bytes, CodecTag::Original);
        assert!(self.submit(TxBody::Create { cid_v0: v }));
        self.blobs.insert(v, bytes.to_vec());
        self.content.insert(v, Some(bytes.to_vec()));
        self.order.push(v);
        v
    }

    pub fn update(&mut self, base: Cid, new: &[u8]) -> Option<Cid> {
        let old = self.content[&base].clone().unwrap();
        let inc = generate_increment(&old, new).with_base_hint(base);
        let v = inc.cid();
        let body = TxBody::Update { base_version: base, cid_delta: v, full_file: inc.is_full_file() };
        if !self.submit(body) {
            return None;
        }
        self.blobs.insert(v, inc.encode());
        self.increments.insert(v, inc);
        self.content.insert(v, Some(new.to_vec()));
        self.order.push(v);
        Some(v)
    }

    pub fn fork(&mut self, base: Cid, k: u32) -> Vec<Cid> {
        let kids = fork_children(&base, k, 0);
        if !self.submit(TxBody::Fork { base_version: base, children: kids.clone() }) {
            return vec![];
        }
        for c in &kids {
            self.content.insert(*c, self.content[&base].clone());
            self.order.push(*c);
        }
        kids
    }

    pub fn merge(&mut self, left: Cid, right: Cid) -> Option<Cid> {
        if !self.submit(TxBody::Merge { left, right }) {
            return None;
        }
        let v = merge_version_cid(&left, &right, 0);
        self.merges.insert(v);
        self.content.insert(v, replay_oracle(self, &retrieve(&v, &self.state).unwrap()).ok());
        self.order.push(v);
        Some(v)
    }
}

/// Replays the increments the test generated, in plan order, without
/// touching encoded fragments.
pub fn replay_oracle(l: &Lineage, plan: &FragmentPlan) -> Result<Vec<u8>, PatchError> {
    let first = plan.versions()[0];
    let mut file = match first.tag() {
        CodecTag::Original => l.content[&first].clone().unwrap(),
        _ => apply_patch(&[], &l.increments[&first])?,
    };
    for v in &plan.versions()[1..] {
        if let Some(inc) = l.increments.get(v) {
            file = apply_patch(&file, inc)?;
        }
    }
    Ok(file)
}

pub fn patch_err(e: RecoveryError) -> PatchError {
    match e {
        RecoveryError::Patch(p) => p,
        other => panic!("unexpected recovery error {other:?}"),
    }
}

pub fn ancestors_of(state: &LedgerState, v: &Cid) -> HashSet<Cid> {
    let mut seen = HashSet::new();
    let mut todo = state.version_info(v).unwrap().parents;
    while let Some(x) = todo.pop() {
        if seen.insert(x) {
            todo.extend(state.version_info(&x).unwrap().parents);
        }
    }
    seen
}

/// Each element must come after every ancestor of it that is in the plan;
/// no element repeats; the first element is a complete file.
pub fn check_plan(state: &LedgerState, plan: &FragmentPlan) -> Result<(), String> {
    let vs = plan.versions();
    let uniq: HashSet<&Cid> = vs.iter().collect();
    if uniq.len() != vs.len() {
        return Err("duplicate in plan".into());
    }
    if !state.version_info(&vs[0]).is_some_and(|i| i.complete) {
        return Err(format!("plan starts with incomplete {}", vs[0]));
    }
    for (i, v) in vs.iter().enumerate() {
        for a in ancestors_of(state, v) {
            if let Some(j) = vs.iter().position(|x| *x == a) {
                if j > i {
                    return Err(format!("ancestor {a} after {v}"));
                }
            }
        }
    }
    Ok(())
}

pub fn text(lines: &[String]) -> Vec<u8> {
    lines.concat().into_bytes()
}

pub fn mutate(rng: &mut ChaCha8Rng, old: &[u8]) -> Vec<u8> {
    let s = String::from_utf8(old.to_vec()).unwrap();
    let mut lines: Vec<String> = s.split_inclusive('\n').map(str::to_string).collect();
    if rng.gen_ratio(1, 10) {
        // A rewrite large enough to trigger the full-file fallback.
        return text(&(0..rng.gen_range(1..30)).map(|i| format!("fresh {i} {}\n", rng.gen::<u32>())).collect::<Vec<_>>());
    }
    for _ in 0..rng.gen_range(1..4) {
        let at = rng.gen_range(0..=lines.len());
        match rng.gen_range(0..3) {
            0 => lines.insert(at, format!("added {}\n", rng.gen::<u16>())),
            1 if !lines.is_empty() => {
                lines.remove(at.min(lines.len() - 1));
            }
            _ if !lines.is_empty() => {
                let i = at.min(lines.len() - 1);
                lines[i] = format!("changed {} {}", rng.gen::<u16>(), lines[i]);
            }
            _ => lines.push("only\n".into()),
        }
    }
    text(&lines)
}

pub fn corpus(rng: &mut ChaCha8Rng) -> Vec<u8> {
    text(&(0..rng.gen_range(20..60)).map(|i| format!("line {i} of the corpus {}\n", rng.gen::<u8>())).collect::<Vec<_>>())
}

pub fn random_lineage(seed: u64, max_versions: usize) -> Lineage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = Lineage::new();
    let c = corpus(&mut rng);
    l.create(&c);
    while l.order.len() < max_versions {
        let known: Vec<Cid> = l.order.iter().copied().filter(|v| l.content[v].is_some()).collect();
        let base = *known.choose(&mut rng).unwrap();
        match rng.gen_range(0..10) {
            0 => {
                let c = corpus(&mut rng);
                l.create(&c);
            }
            1 => {
                l.fork(base, rng.gen_range(1..=3));
            }
            2 | 3 => {
                let origin = l.state.lineage_origin(&base).unwrap();
                let same: Vec<Cid> = l.order.iter().copied().filter(|v| *v != base && l.state.lineage_origin(v) == Ok(origin)).collect();
                if let Some(other) = same.choose(&mut rng) {
                    l.merge(base, *other);
                }
            }
            _ => {
                let old = l.content[&base].clone().unwrap();
                let new = mutate(&mut rng, &old);
                l.update(base, &new);
            }
        }
    }
    l
}
