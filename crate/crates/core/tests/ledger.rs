use std::collections::{BTreeSet, HashMap, HashSet};

use filedag_core::cid::{Cid, CodecTag};
use filedag_core::ledger::{
    derive_signing_key, fork_children, merge_version_cid, replay_log, wave_first_round, Keyring, LedgerConfig, LedgerLog, LedgerState,
    LogError, NodeId, Rejection, Transaction, TxBody, Vertex, Violation,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 11;

fn state(n: u32, f: u32) -> LedgerState {
    LedgerState::new(LedgerConfig::new(n, f).unwrap(), Keyring::derive(SEED, n))
}

fn sign(author: NodeId, body: TxBody) -> Transaction {
    Transaction::sign(author, body, &derive_signing_key(SEED, author))
}

fn orig(s: &str) -> Cid {
    Cid::of(s.as_bytes(), CodecTag::Original)
}

fn inc(s: &str) -> Cid {
    Cid::of(s.as_bytes(), CodecTag::Increment)
}

fn prev_round(s: &LedgerState, r: u64) -> Vec<Cid> {
    s.round(r - 1).map(|(_, id)| id).collect()
}

/// Inserts one vertex per author in `authors` for round `r`, each pointing at
/// all of round `r-1`.
fn full_round(s: &mut LedgerState, r: u64, authors: impl IntoIterator<Item = NodeId>) -> Vec<Cid> {
    let parents = prev_round(s, r);
    authors
        .into_iter()
        .map(|a| {
            let v = Vertex::new(r, a, parents.clone(), None);
            let id = v.id();
            s.insert_vertex(v).unwrap();
            id
        })
        .collect()
}

/// Appends a vertex carrying `tx` by `author` at the next round, with every
/// other author filling the round with empty vertices.
fn commit_tx(s: &mut LedgerState, tx: Transaction) -> Result<Cid, Rejection> {
    let r = s.max_round() + 1;
    let n = s.config().n;
    let parents = prev_round(s, r);
    let author = tx.author();
    let v = Vertex::new(r, author, parents, Some(tx));
    let id = v.id();
    s.insert_vertex(v)?;
    full_round(s, r, (0..n).filter(|a| *a != author));
    Ok(id)
}

#[test]
fn round_two_vertex_with_quorum_of_parents_is_accepted() {
    let mut s = state(4, 1);
    let r1 = full_round(&mut s, 1, 0..4);
    let v = Vertex::new(2, 0, r1[..3].to_vec(), None);
    assert_eq!(s.insert_vertex(v), Ok(()));
}

#[test]
fn two_parents_are_insufficient_for_f1() {
    let mut s = state(4, 1);
    let r1 = full_round(&mut s, 1, 0..4);
    let v = Vertex::new(2, 0, r1[..2].to_vec(), None);
    assert_eq!(s.insert_vertex(v), Err(Rejection::InsufficientUpperParents { got: 2, need: 3 }));
}

#[test]
fn second_vertex_in_same_round_is_rejected() {
    let mut s = state(4, 1);
    let r1 = full_round(&mut s, 1, 0..4);
    s.insert_vertex(Vertex::new(2, 1, r1[..3].to_vec(), None)).unwrap();
    let other = Vertex::new(2, 1, r1[1..].to_vec(), None);
    let err = s.insert_vertex(other).unwrap_err();
    assert_eq!(err.reason(), "duplicate-author-round");
    // Re-delivering the accepted vertex is harmless.
    assert_eq!(s.insert_vertex(Vertex::new(2, 1, r1[..3].to_vec(), None)), Ok(()));
    assert_eq!(s.round_len(2), 1);
}

#[test]
fn structural_rejections() {
    let mut s = state(4, 1);
    let g = s.genesis_ids();
    let missing = Vertex::new(1, 0, vec![g[0], g[1], orig("nope")], None);
    assert_eq!(s.insert_vertex(missing).unwrap_err().reason(), "unknown-parent");
    let r1 = full_round(&mut s, 1, 0..4);
    let skip = Vertex::new(3, 0, r1.clone(), None);
    assert_eq!(s.insert_vertex(skip).unwrap_err().reason(), "bad-parent-round");
    let stranger = Vertex::new(2, 9, r1.clone(), None);
    assert_eq!(s.insert_vertex(stranger).unwrap_err().reason(), "unknown-author");
    let genesis_again = Vertex::new(0, 0, vec![], Some(sign(0, TxBody::Create { cid_v0: orig("x") })));
    assert_eq!(s.insert_vertex(genesis_again).unwrap_err().reason(), "duplicate-author-round");
}

#[test]
fn create_on_empty_state_is_valid() {
    let s = state(4, 1);
    assert_eq!(s.validate_transaction(&sign(2, TxBody::Create { cid_v0: orig("file") })), Ok(()));
}

#[test]
fn update_of_unknown_base_is_rejected() {
    let s = state(4, 1);
    let tx = sign(0, TxBody::Update { base_version: orig("ghost"), cid_delta: inc("d"), full_file: false });
    assert_eq!(s.validate_transaction(&tx), Err(Violation::UnknownVersion(orig("ghost"))));
}

#[test]
fn merge_across_files_is_rejected() {
    let mut s = state(4, 1);
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: orig("a") })).unwrap();
    commit_tx(&mut s, sign(1, TxBody::Create { cid_v0: orig("b") })).unwrap();
    let tx = sign(2, TxBody::Merge { left: orig("a"), right: orig("b") });
    let err = s.validate_transaction(&tx).unwrap_err();
    assert_eq!(err.rule(), "cross-file-merge");
    assert_eq!(err, Violation::CrossFileMerge { left: orig("a"), right: orig("b") });
}

#[test]
fn transaction_rules() {
    let mut s = state(4, 1);
    let v0 = orig("v0");
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: v0 })).unwrap();

    let dup = sign(1, TxBody::Create { cid_v0: v0 });
    assert_eq!(s.validate_transaction(&dup).unwrap_err().rule(), "duplicate-version");

    let forged = Transaction::with_signature(1, TxBody::Create { cid_v0: orig("w") }, [7; 64]);
    assert_eq!(s.validate_transaction(&forged).unwrap_err().rule(), "bad-signature");
    s.set_verify_signatures(false);
    assert_eq!(s.validate_transaction(&forged), Ok(()));
    s.set_verify_signatures(true);

    let wrong_tag = sign(1, TxBody::Create { cid_v0: inc("w") });
    assert_eq!(s.validate_transaction(&wrong_tag).unwrap_err().rule(), "bad-cid-tag");
    let wrong_tag = sign(1, TxBody::Update { base_version: v0, cid_delta: orig("w"), full_file: false });
    assert_eq!(s.validate_transaction(&wrong_tag).unwrap_err().rule(), "bad-cid-tag");

    let self_merge = sign(1, TxBody::Merge { left: v0, right: v0 });
    assert_eq!(s.validate_transaction(&self_merge).unwrap_err().rule(), "merge-same-version");

    let empty = sign(1, TxBody::Fork { base_version: v0, children: vec![] });
    assert_eq!(s.validate_transaction(&empty).unwrap_err().rule(), "empty-fork");
    let mut kids = fork_children(&v0, 2, 1);
    kids.push(kids[0]);
    let repeated = sign(1, TxBody::Fork { base_version: v0, children: kids });
    assert_eq!(s.validate_transaction(&repeated).unwrap_err().rule(), "duplicate-fork-child");
    let foreign = sign(1, TxBody::Fork { base_version: v0, children: fork_children(&v0, 2, 3) });
    assert_eq!(s.validate_transaction(&foreign).unwrap_err().rule(), "fork-child-mismatch");

    let fork = sign(1, TxBody::Fork { base_version: v0, children: fork_children(&v0, 2, 1) });
    commit_tx(&mut s, fork.clone()).unwrap();
    assert_eq!(s.validate_transaction(&fork).unwrap_err().rule(), "duplicate-version");
    for k in fork_children(&v0, 2, 1) {
        assert!(s.version_index(&k).is_some());
        assert_eq!(s.lineage_origin(&k), Ok(v0));
    }
}

#[test]
fn invalid_transaction_rejects_vertex() {
    let mut s = state(4, 1);
    let tx = sign(0, TxBody::Update { base_version: orig("ghost"), cid_delta: inc("d"), full_file: false });
    let err = commit_tx(&mut s, tx).unwrap_err();
    assert_eq!(err, Rejection::InvalidTransaction(Violation::UnknownVersion(orig("ghost"))));
}

#[test]
fn references_must_be_in_the_causal_past() {
    let mut s = state(4, 1);
    let r1 = prev_round(&s, 1);
    let create = Vertex::new(1, 0, r1.clone(), Some(sign(0, TxBody::Create { cid_v0: orig("a") })));
    s.insert_vertex(create).unwrap();
    // Same round: the CREATE is known to this replica but not an ancestor.
    let upd = sign(1, TxBody::Update { base_version: orig("a"), cid_delta: inc("d"), full_file: false });
    assert_eq!(s.validate_transaction(&upd), Ok(()));
    let v = Vertex::new(1, 1, r1, Some(upd.clone()));
    assert_eq!(s.insert_vertex(v).unwrap_err().reason(), "invalid-transaction");
    full_round(&mut s, 1, [1, 2, 3]);
    let v = Vertex::new(2, 1, prev_round(&s, 2), Some(upd));
    assert_eq!(s.insert_vertex(v), Ok(()));
}

#[test]
fn concurrent_duplicate_definitions_resolve_to_smallest_author() {
    let mut s = state(4, 1);
    let parents = prev_round(&s, 1);
    let a = Vertex::new(1, 2, parents.clone(), Some(sign(2, TxBody::Create { cid_v0: orig("same") })));
    let b = Vertex::new(1, 1, parents, Some(sign(1, TxBody::Create { cid_v0: orig("same") })));
    let (ida, idb) = (a.id(), b.id());
    s.insert_vertex(a).unwrap();
    assert_eq!(s.version_index(&orig("same")), Some(ida));
    s.insert_vertex(b).unwrap();
    assert_eq!(s.version_index(&orig("same")), Some(idb));
    assert_eq!(s.version_count(), 1);
}

#[test]
fn lineage_of_create_is_itself() {
    let mut s = state(4, 1);
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: orig("v0") })).unwrap();
    assert_eq!(s.lineage_origin(&orig("v0")), Ok(orig("v0")));
    assert!(s.lineage_origin(&orig("nope")).is_err());
}

#[test]
fn lineage_of_chain_is_head() {
    let mut s = state(4, 1);
    let (v0, v1, v2) = (orig("v0"), inc("v1"), inc("v2"));
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: v0 })).unwrap();
    commit_tx(&mut s, sign(1, TxBody::Update { base_version: v0, cid_delta: v1, full_file: false })).unwrap();
    commit_tx(&mut s, sign(2, TxBody::Update { base_version: v1, cid_delta: v2, full_file: true })).unwrap();
    assert_eq!(s.lineage_origin(&v2), Ok(v0));
    let info = s.version_info(&v2).unwrap();
    assert!(info.complete);
    assert_eq!(info.parents, vec![v1]);
}

/// Ancestor versions of `v` by exhaustive enumeration of referenced versions.
fn brute_force_origins(s: &LedgerState, v: &Cid) -> BTreeSet<Cid> {
    let mut out = BTreeSet::new();
    let mut todo = vec![*v];
    let mut seen = HashSet::new();
    while let Some(x) = todo.pop() {
        if !seen.insert(x) {
            continue;
        }
        let info = s.version_info(&x).unwrap();
        if info.parents.is_empty() {
            out.insert(x);
        }
        todo.extend(info.parents);
    }
    out
}

#[test]
fn lineage_of_diamond_merge() {
    let mut s = state(4, 1);
    let (v0, v1, v2) = (orig("v0"), inc("v1"), inc("v2"));
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: v0 })).unwrap();
    commit_tx(&mut s, sign(1, TxBody::Update { base_version: v0, cid_delta: v1, full_file: false })).unwrap();
    commit_tx(&mut s, sign(2, TxBody::Update { base_version: v0, cid_delta: v2, full_file: false })).unwrap();
    commit_tx(&mut s, sign(3, TxBody::Merge { left: v1, right: v2 })).unwrap();
    let v3 = merge_version_cid(&v1, &v2, 3);
    assert_eq!(s.lineage_origin(&v3), Ok(v0));
    assert_eq!(brute_force_origins(&s, &v3), BTreeSet::from([v0]));
    let merge_vertex = s.version_index(&v3).unwrap();
    let targets: Vec<Cid> = s.lower_targets(&merge_vertex).to_vec();
    assert_eq!(targets, vec![s.version_index(&v1).unwrap(), s.version_index(&v2).unwrap()]);
}

#[test]
fn single_node_commits_in_insertion_order() {
    let mut s = state(1, 0);
    let mut inserted = Vec::new();
    let mut committed = Vec::new();
    for r in 1..=12 {
        inserted.extend(full_round(&mut s, r, [0]));
        committed.extend(s.try_commit());
    }
    // The leader of wave 3 sits in round 9 and is decided at round 12.
    assert_eq!(committed, inserted[..9].to_vec());
    assert_eq!(s.committed(), &committed[..]);
    for r in 13..=16 {
        inserted.extend(full_round(&mut s, r, [0]));
        committed.extend(s.try_commit());
    }
    assert_eq!(committed, inserted[..13].to_vec());
}

/// Every vertex reachable from `from` over upper and lower edges, itself included.
fn ancestors(s: &LedgerState, from: &Cid) -> HashSet<Cid> {
    let mut seen = HashSet::new();
    let mut todo = vec![*from];
    while let Some(x) = todo.pop() {
        if s.is_genesis(&x) || !seen.insert(x) {
            continue;
        }
        todo.extend(s.vertex(&x).unwrap().upper_parents().iter().copied());
        todo.extend(s.lower_targets(&x).iter().copied());
    }
    seen
}

#[test]
fn eight_full_rounds_commit_both_waves() {
    let mut s = state(4, 1);
    for r in 1..=8 {
        full_round(&mut s, r, 0..4);
    }
    let out = s.try_commit();
    assert_eq!(s.decided_wave(), 2);
    let leader1 = s.vertex_at(wave_first_round(1), 1).unwrap();
    let leader2 = s.vertex_at(wave_first_round(2), 2).unwrap();
    let mut expected: HashSet<Cid> = ancestors(&s, &leader1);
    expected.extend(ancestors(&s, &leader2));
    assert_eq!(out.iter().copied().collect::<HashSet<_>>(), expected);
    assert_eq!(out.len(), expected.len());
    for r in 1..=4 {
        for (_, id) in s.round(r) {
            assert!(s.is_committed(&id), "round {r} vertex uncommitted");
        }
    }
    assert!(s.is_committed(&leader2));
    // Wave 1's leader has no uncommitted ancestors, so it forms a batch of
    // its own ahead of wave 2's batch, which is ordered by (round, author).
    assert_eq!(out[0], leader1);
    let keys: Vec<(u64, NodeId)> = out[1..]
        .iter()
        .map(|id| {
            let v = s.vertex(id).unwrap();
            (v.round(), v.author())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn missing_leader_defers_to_next_wave() {
    let mut s = state(4, 1);
    // Node 1 leads wave 1 and never speaks.
    for r in 1..=8 {
        full_round(&mut s, r, [0, 2, 3]);
    }
    s.try_commit();
    assert_eq!(s.decided_wave(), 2);
    for (_, id) in s.round(1) {
        assert!(s.is_committed(&id));
    }
}

#[test]
fn weakly_supported_leader_waits() {
    let mut s = state(4, 1);
    let r1 = full_round(&mut s, 1, 0..4);
    let leader = r1[1];
    // Rounds 2..4 only reference the non-leader vertices of round 1.
    let others: Vec<Cid> = r1.iter().copied().filter(|x| *x != leader).collect();
    let mut prev = others;
    for r in 2..=4 {
        prev = (0..4)
            .map(|a| Vertex::new(r, a, prev.clone(), None))
            .map(|v| {
                let id = v.id();
                s.insert_vertex(v).unwrap();
                id
            })
            .collect();
    }
    assert!(s.try_commit().is_empty());
    assert_eq!(s.decided_wave(), 0);
}

#[test]
fn log_replay_rebuilds_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.log");
    let mut s = state(4, 1);
    let mut log = LedgerLog::open(&path).unwrap();
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: orig("v0") })).unwrap();
    commit_tx(&mut s, sign(1, TxBody::Update { base_version: orig("v0"), cid_delta: inc("d"), full_file: false })).unwrap();
    for r in 3..=9 {
        full_round(&mut s, r, 0..4);
    }
    for id in s.insertion_order().to_vec() {
        log.append(s.vertex(&id).unwrap()).unwrap();
    }
    log.sync().unwrap();
    drop(log);
    let mut fresh = state(4, 1);
    for id in s.insertion_order().to_vec() {
        fresh.insert_vertex(s.vertex(&id).unwrap().clone()).unwrap();
        fresh.try_commit();
    }
    s = fresh;
    let replayed = replay_log(&path, s.config(), s.keys().clone()).unwrap();
    assert_eq!(replayed.fingerprint(), s.fingerprint());
    assert_eq!(replayed.committed(), s.committed());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(LedgerLog::read_all(&path), Err(LogError::Truncated { .. })));
    assert!(LedgerLog::read_all(dir.path().join("absent")).unwrap().is_empty());
}

#[test]
fn dot_export_lists_both_edge_kinds() {
    let mut s = state(4, 1);
    commit_tx(&mut s, sign(0, TxBody::Create { cid_v0: orig("v0") })).unwrap();
    commit_tx(&mut s, sign(1, TxBody::Update { base_version: orig("v0"), cid_delta: inc("d"), full_file: false })).unwrap();
    let dot = s.to_dot();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("CREATE") && dot.contains("UPDATE"));
    assert!(dot.contains("style=dashed"));
    assert_eq!(dot.matches("->").count(), 2 * 4 * 4 + 1);
}

/// A random DAG of empty vertices for N=4, f=1. Each vertex picks a random
/// quorum of the previous round; some authors skip rounds.
fn random_dag(seed: u64, rounds: u64, max_vertices: usize) -> Vec<Vertex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = state(4, 1);
    let mut out = Vec::new();
    'outer: for r in 1..=rounds {
        let prev = prev_round(&s, r);
        let mut authors: Vec<NodeId> = (0..4).collect();
        authors.shuffle(&mut rng);
        let present = rng.gen_range(3..=4);
        for &a in &authors[..present] {
            if out.len() == max_vertices {
                break 'outer;
            }
            let mut ps = prev.clone();
            ps.shuffle(&mut rng);
            let k = rng.gen_range(3..=ps.len());
            let v = Vertex::new(r, a, ps[..k].to_vec(), None);
            s.insert_vertex(v.clone()).unwrap();
            out.push(v);
        }
    }
    out
}

/// Delivers `order` the way a node does: vertices whose parents are missing
/// wait in a buffer. `try_commit` runs after every insertion.
fn deliver(order: &[Vertex]) -> LedgerState {
    let mut s = state(4, 1);
    let mut pending: Vec<Vertex> = Vec::new();
    for v in order {
        pending.push(v.clone());
        loop {
            let ready = pending.iter().position(|p| p.upper_parents().iter().all(|x| s.contains(x)));
            let Some(i) = ready else { break };
            s.insert_vertex(pending.remove(i)).unwrap();
            s.try_commit();
        }
    }
    assert!(pending.is_empty());
    s
}

fn check_structure(s: &LedgerState) {
    let pos: HashMap<Cid, usize> = s.insertion_order().iter().enumerate().map(|(i, id)| (*id, i)).collect();
    for id in s.insertion_order() {
        let v = s.vertex(id).unwrap();
        for p in v.upper_parents() {
            assert_eq!(s.vertex(p).unwrap().round() + 1, v.round());
        }
        for t in s.lower_targets(id) {
            assert!(s.is_genesis(t) || pos[t] < pos[id]);
        }
    }
    let c: HashSet<&Cid> = s.committed().iter().collect();
    assert_eq!(c.len(), s.committed().len());
    assert!(s.committed().iter().all(|id| s.contains(id)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arrival_order_does_not_change_commits(seed in any::<u64>(), perm in any::<u64>()) {
        let dag = random_dag(seed, 6, 20);
        let a = deliver(&dag);
        let mut shuffled = dag.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm));
        let b = deliver(&shuffled);
        prop_assert_eq!(a.committed(), b.committed());
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        check_structure(&a);
        check_structure(&b);
    }

    #[test]
    fn fewer_vertices_give_a_commit_prefix(seed in any::<u64>(), cut in 0usize..20) {
        let dag = random_dag(seed, 8, 28);
        let full = deliver(&dag);
        let part = deliver(&dag[..cut.min(dag.len())]);
        prop_assert!(full.committed().starts_with(part.committed()));
    }

    #[test]
    fn one_vertex_per_author_round(seed in any::<u64>()) {
        let dag = random_dag(seed, 5, 20);
        let mut s = deliver(&dag);
        for v in &dag {
            let twin = Vertex::new(v.round(), v.author(), v.upper_parents().to_vec(),
                Some(sign(v.author(), TxBody::Create { cid_v0: orig(&format!("{seed}")) })));
            prop_assert_eq!(s.insert_vertex(twin).unwrap_err().reason(), "duplicate-author-round");
        }
    }
}
