use filedag_core::cid::{Cid, CodecTag};
use filedag_core::ledger::{TxBody, Violation};
use filedag_core::node::pos::proof_digest;
use filedag_core::node::{Behavior, Body, ClientError, ClientOp, Message, OpOutput};
use filedag_core::recovery::retrieve;
use filedag_core::simnet::{check_agreement, Sim, SimConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lines(n: usize, tag: &str) -> Vec<u8> {
    (0..n).map(|i| format!("{tag} line {i}\n")).collect::<String>().into_bytes()
}

fn edit_line(text: &[u8], at: usize, with: &str) -> Vec<u8> {
    let s = String::from_utf8(text.to_vec()).unwrap();
    let mut ls: Vec<String> = s.lines().map(String::from).collect();
    ls[at] = with.to_string();
    (ls.join("\n") + "\n").into_bytes()
}

fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut b = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut b);
    b
}

fn sim(seed: u64) -> Sim {
    Sim::new(SimConfig::new(4, 1, seed)).unwrap()
}

fn sim_with(seed: u64, node: u32, b: Behavior) -> Sim {
    Sim::new(SimConfig::new(4, 1, seed).with_fault(node, b)).unwrap()
}

/// Every honest miner answers RETRIEVE_REQUEST for `v` with the same plan.
fn assert_plans_agree(sim: &mut Sim, v: Cid) {
    let honest: Vec<u32> = (0..4).filter(|&m| sim.config().is_honest(m)).collect();
    let plans: Vec<_> = honest
        .into_iter()
        .map(|m| {
            let reply = sim.node_mut(m).miner_serve(Message::new(0, m, Body::RetrieveRequest { req: 9, version: v }));
            match &reply[0].body {
                Body::PlanResponse { result: Ok(p), .. } => p.clone(),
                other => panic!("miner {m} answered {other:?}"),
            }
        })
        .collect();
    assert!(plans.windows(2).all(|w| w[0] == w[1]), "{plans:?}");
}

#[test]
fn create_stores_blob_and_commits() {
    let mut s = sim(1);
    let file = random_bytes(1024, 5);
    let v = s.client_create(0, file.clone(), 2).unwrap();
    assert_eq!(v, Cid::of(&file, CodecTag::Original));
    assert_eq!(s.holders(&v).into_iter().collect::<Vec<_>>(), vec![2]);
    let ledger = s.node(0).ledger();
    let definer = ledger.version_index(&v).unwrap();
    assert!(ledger.is_committed(&definer));
    assert!(matches!(ledger.vertex(&definer).unwrap().tx().unwrap().body(), TxBody::Create { .. }));
}

#[test]
fn dropped_store_fails_after_retry_budget() {
    let mut s = sim_with(2, 3, Behavior { drop_store: true, ..Default::default() });
    let err = s.client_create(0, b"payload".to_vec(), 3).unwrap_err();
    assert_eq!(err.class(), "store-failed");
    let sent = s.transcript().lines().iter().filter(|l| l.contains("0->3 STORE_REQUEST")).count();
    assert_eq!(sent as u32, 1 + s.config().timeouts.store_retries);
}

#[test]
fn duplicate_create_is_rejected() {
    let mut s = sim(3);
    let v = s.client_create(0, b"same bytes".to_vec(), 1).unwrap();
    let err = s.client_create(2, b"same bytes".to_vec(), 3).unwrap_err();
    assert_eq!(err, ClientError::Invalid(Violation::DuplicateVersion(v)));
}

#[test]
fn one_line_update_stores_less_than_the_file() {
    let mut s = sim(4);
    let v0 = lines(100, "base");
    let c0 = s.client_create(0, v0.clone(), 1).unwrap();
    let v1 = edit_line(&v0, 40, "changed");
    let out = s.run_op(0, ClientOp::Update { base: c0, file: v1.clone(), miner: 1 }).unwrap();
    let OpOutput::Updated { version, full_file, stored, .. } = out else { panic!("{out:?}") };
    assert!(!full_file);
    assert!(stored < v1.len(), "{stored} >= {}", v1.len());
    assert!(s.node(1).store().contains(&version));
    s.run_rounds(10);
    assert_eq!(s.client_get(3, version, 1).unwrap(), v1);
}

#[test]
fn full_file_update_gives_single_version_plan() {
    let mut s = sim(5);
    let c0 = s.client_create(0, random_bytes(4096, 1), 1).unwrap();
    let other = random_bytes(4096, 2);
    let out = s.run_op(0, ClientOp::Update { base: c0, file: other.clone(), miner: 2 }).unwrap();
    let OpOutput::Updated { version, full_file: true, .. } = out else { panic!("{out:?}") };
    s.run_rounds(10);
    let out = s.run_op(1, ClientOp::Get { version, miner: 0 }).unwrap();
    let OpOutput::Got { bytes, plan } = out else { panic!() };
    assert_eq!(plan.versions(), &[version]);
    assert_eq!(bytes, other);
}

#[test]
fn fork_children_recover_to_base() {
    let mut s = sim(6);
    let v0 = lines(20, "fork");
    let c0 = s.client_create(1, v0.clone(), 0).unwrap();
    let kids = s.build_fork(2, c0, 3).unwrap();
    assert_eq!(kids.len(), 3);
    s.run_rounds(10);
    for k in &kids {
        assert_eq!(k.tag(), CodecTag::Transaction);
        assert_eq!(s.client_get(3, *k, 2).unwrap(), v0);
        assert_plans_agree(&mut s, *k);
    }
}

#[test]
fn get_chain_head_and_plan_consistency() {
    let mut s = sim(7);
    let v = [lines(30, "a"), edit_line(&lines(30, "a"), 3, "x"), edit_line(&edit_line(&lines(30, "a"), 3, "x"), 20, "y")];
    let c0 = s.client_create(0, v[0].clone(), 0).unwrap();
    let c1 = s.client_update(1, c0, v[1].clone(), 1).unwrap();
    let c2 = s.client_update(2, c1, v[2].clone(), 2).unwrap();
    s.run_rounds(10);
    for m in 0..4 {
        assert_eq!(s.client_get(3, c2, m).unwrap(), v[2]);
    }
    assert_plans_agree(&mut s, c2);
    let reply = s.node_mut(1).miner_serve(Message::new(3, 1, Body::RetrieveRequest { req: 1, version: c2 }));
    let expected = retrieve(&c2, s.node(1).ledger()).unwrap();
    assert_eq!(expected.versions(), &[c0, c1, c2]);
    assert_eq!(reply, vec![Message::new(1, 3, Body::PlanResponse { req: 1, version: c2, result: Ok(expected) })]);
    assert!(check_agreement(&s.transcript()).ok());
}

#[test]
fn get_uncommitted_is_not_found() {
    let mut s = sim(8);
    s.run_rounds(2);
    let ghost = Cid::of(b"never stored", CodecTag::Original);
    assert_eq!(s.client_get(0, ghost, 1).unwrap_err(), ClientError::NotFound(ghost));
}

#[test]
fn garbage_fragment_is_identified() {
    let mut s = sim_with(9, 3, Behavior { garbage: true, ..Default::default() });
    let v0 = lines(10, "g");
    let c0 = s.client_create(0, v0.clone(), 1).unwrap();
    let c1 = s.client_update(0, c0, edit_line(&v0, 2, "z"), 3).unwrap();
    s.run_rounds(10);
    assert_eq!(s.client_get(2, c1, 3).unwrap_err(), ClientError::Corrupt(c1));
    assert_eq!(s.client_get(2, c0, 1).unwrap(), v0);
}

#[test]
fn update_fetches_unknown_base_bytes() {
    let mut s = sim(10);
    let v0 = lines(15, "b");
    let c0 = s.client_create(0, v0.clone(), 0).unwrap();
    s.run_rounds(10);
    let v1 = edit_line(&v0, 7, "from another client");
    let c1 = s.client_update(3, c0, v1.clone(), 2).unwrap();
    s.run_rounds(10);
    assert_eq!(s.client_get(1, c1, 0).unwrap(), v1);
}

#[test]
fn update_of_unknown_base_fails() {
    let mut s = sim(11);
    let ghost = Cid::of(b"ghost", CodecTag::Original);
    assert_eq!(s.client_update(0, ghost, b"new".to_vec(), 1).unwrap_err(), ClientError::UnknownBase(ghost));
}

#[test]
fn cross_file_merge_is_invalid() {
    let mut s = sim(12);
    let a = s.client_create(0, b"file a\n".to_vec(), 0).unwrap();
    let b = s.client_create(1, b"file b\n".to_vec(), 1).unwrap();
    let err = s.build_merge(2, a, b).unwrap_err();
    assert!(matches!(err, ClientError::Invalid(Violation::CrossFileMerge { .. })), "{err:?}");
}

#[test]
fn crashed_client_reports_it() {
    let mut s = sim_with(13, 2, Behavior { crash_at_round: Some(3), ..Default::default() });
    s.run_rounds(4);
    assert!(s.node(2).is_crashed());
    assert_eq!(s.client_create(2, b"x".to_vec(), 0).unwrap_err(), ClientError::ClientCrashed);
}

#[test]
fn miner_serve_store_and_pos_examples() {
    let mut s = sim(14);
    let bytes = b"blob body".to_vec();
    let reply = s.node_mut(1).miner_serve(Message::new(0, 1, Body::StoreRequest { req: 5, tag: CodecTag::Original, bytes: bytes.clone() }));
    let cid = Cid::of(&bytes, CodecTag::Original);
    assert_eq!(reply, vec![Message::new(1, 0, Body::StoreAck { req: 5, result: Ok(cid) })]);
    let nonce = [7u8; 32];
    let reply = s.node_mut(1).miner_serve(Message::new(0, 1, Body::PosChallenge { req: 6, cid, nonce }));
    let Body::PosProof { result: Ok(p), .. } = &reply[0].body else { panic!() };
    assert_eq!(p.proof, proof_digest(&bytes, &nonce));
    let reply = s.node_mut(2).miner_serve(Message::new(0, 2, Body::DownloadRequest { req: 7, cid }));
    assert!(matches!(&reply[0].body, Body::DownloadResponse { result: Err(e), .. } if e.starts_with("not-found")));
}

#[test]
fn storage_proofs_fail_after_deletion() {
    let mut s = sim(15);
    let c = s.client_create(0, random_bytes(2048, 9), 2).unwrap();
    for _ in 0..100 {
        assert_eq!(s.challenge(0, c, 2), Ok(true));
    }
    assert!(s.node(2).store().delete(&c).unwrap());
    for _ in 0..100 {
        assert_eq!(s.challenge(0, c, 2), Ok(false));
    }
    let unknown = Cid::of(b"not uploaded", CodecTag::Original);
    assert_eq!(s.challenge(0, unknown, 2), Err(ClientError::NoReference(unknown)));
}

#[test]
fn fees_are_counted() {
    let mut s = sim(16);
    s.client_create(0, b"paid".to_vec(), 1).unwrap();
    assert!(s.node(0).fees().paid >= 2);
    assert_eq!(s.node(1).fees().earned, 1);
}
