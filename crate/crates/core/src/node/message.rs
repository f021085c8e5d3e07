//! Protocol messages.
//!
//! Encoding: `kind u8, from u32, to u32, body`. Replies that can fail carry a
//! status byte (0 ok, 1 error) followed by the payload or a UTF-8 reason.
//!
//! | kind | name              | body                                   |
//! |------|-------------------|----------------------------------------|
//! | 1    | STORE_REQUEST     | req u64, tag u8, bytes                 |
//! | 2    | STORE_ACK         | req u64, status, cid                   |
//! | 3    | TX_BROADCAST      | transaction                            |
//! | 4    | RETRIEVE_REQUEST  | req u64, version cid                   |
//! | 5    | PLAN_RESPONSE     | req u64, version cid, status, cids     |
//! | 6    | DOWNLOAD_REQUEST  | req u64, cid                           |
//! | 7    | DOWNLOAD_RESPONSE | req u64, cid, status, bytes            |
//! | 8    | POS_CHALLENGE     | req u64, cid, nonce [32]               |
//! | 9    | POS_PROOF         | req u64, status, cid, nonce, proof [32]|
//! | 10   | VERTEX_PROPOSE    | vertex                                 |
//! | 11   | VERTEX_ECHO       | vertex                                 |
//! | 12   | VERTEX_READY      | author u32, round u64, vertex id       |
//!
//! `bytes` and `cids` are u64-count prefixed.

use crate::cid::{Cid, CodecTag};
use crate::codec::{DecodeError, Reader, Writer};
use crate::ledger::{NodeId, Transaction, Vertex};
use crate::recovery::FragmentPlan;

use super::pos::StorageProof;

pub type Reply<T> = Result<T, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    StoreRequest { req: u64, tag: CodecTag, bytes: Vec<u8> },
    StoreAck { req: u64, result: Reply<Cid> },
    TxBroadcast { tx: Transaction },
    RetrieveRequest { req: u64, version: Cid },
    PlanResponse { req: u64, version: Cid, result: Reply<FragmentPlan> },
    DownloadRequest { req: u64, cid: Cid },
    DownloadResponse { req: u64, cid: Cid, result: Reply<Vec<u8>> },
    PosChallenge { req: u64, cid: Cid, nonce: [u8; 32] },
    PosProof { req: u64, result: Reply<StorageProof> },
    VertexPropose { vertex: Vertex },
    VertexEcho { vertex: Vertex },
    VertexReady { author: NodeId, round: u64, digest: Cid },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    pub body: Body,
}

impl Body {
    pub fn kind(&self) -> u8 {
        match self {
            Body::StoreRequest { .. } => 1,
            Body::StoreAck { .. } => 2,
            Body::TxBroadcast { .. } => 3,
            Body::RetrieveRequest { .. } => 4,
            Body::PlanResponse { .. } => 5,
            Body::DownloadRequest { .. } => 6,
            Body::DownloadResponse { .. } => 7,
            Body::PosChallenge { .. } => 8,
            Body::PosProof { .. } => 9,
            Body::VertexPropose { .. } => 10,
            Body::VertexEcho { .. } => 11,
            Body::VertexReady { .. } => 12,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Body::StoreRequest { .. } => "STORE_REQUEST",
            Body::StoreAck { .. } => "STORE_ACK",
            Body::TxBroadcast { .. } => "TX_BROADCAST",
            Body::RetrieveRequest { .. } => "RETRIEVE_REQUEST",
            Body::PlanResponse { .. } => "PLAN_RESPONSE",
            Body::DownloadRequest { .. } => "DOWNLOAD_REQUEST",
            Body::DownloadResponse { .. } => "DOWNLOAD_RESPONSE",
            Body::PosChallenge { .. } => "POS_CHALLENGE",
            Body::PosProof { .. } => "POS_PROOF",
            Body::VertexPropose { .. } => "VERTEX_PROPOSE",
            Body::VertexEcho { .. } => "VERTEX_ECHO",
            Body::VertexReady { .. } => "VERTEX_READY",
        }
    }

    pub fn is_consensus(&self) -> bool {
        matches!(self, Body::VertexPropose { .. } | Body::VertexEcho { .. } | Body::VertexReady { .. })
    }
}

fn write_reply<T>(w: &mut Writer, r: &Reply<T>, ok: impl FnOnce(&mut Writer, &T)) {
    match r {
        Ok(v) => {
            w.u8(0);
            ok(w, v);
        }
        Err(e) => {
            w.u8(1).bytes(e.as_bytes());
        }
    }
}

fn read_reply<T>(r: &mut Reader<'_>, ok: impl FnOnce(&mut Reader<'_>) -> Result<T, DecodeError>) -> Result<Reply<T>, DecodeError> {
    match r.u8()? {
        0 => Ok(Ok(ok(r)?)),
        1 => {
            let raw = r.bytes()?;
            let s = String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::Invalid { what: "reason utf-8", value: 0 })?;
            Ok(Err(s))
        }
        v => Err(DecodeError::Invalid { what: "reply status", value: v as u64 }),
    }
}

fn read_array32(r: &mut Reader<'_>) -> Result<[u8; 32], DecodeError> {
    Ok(r.take(32)?.try_into().unwrap())
}

impl Message {
    pub fn new(from: NodeId, to: NodeId, body: Body) -> Self {
        Message { from, to, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.body.kind()).u32(self.from).u32(self.to);
        match &self.body {
            Body::StoreRequest { req, tag, bytes } => {
                w.u64(*req).u8(*tag as u8).bytes(bytes);
            }
            Body::StoreAck { req, result } => {
                w.u64(*req);
                write_reply(&mut w, result, |w, c| {
                    w.cid(c);
                });
            }
            Body::TxBroadcast { tx } => tx.write(&mut w),
            Body::RetrieveRequest { req, version } => {
                w.u64(*req).cid(version);
            }
            Body::PlanResponse { req, version, result } => {
                w.u64(*req).cid(version);
                write_reply(&mut w, result, |w, p| {
                    w.cids(p.versions());
                });
            }
            Body::DownloadRequest { req, cid } => {
                w.u64(*req).cid(cid);
            }
            Body::DownloadResponse { req, cid, result } => {
                w.u64(*req).cid(cid);
                write_reply(&mut w, result, |w, b| {
                    w.bytes(b);
                });
            }
            Body::PosChallenge { req, cid, nonce } => {
                w.u64(*req).cid(cid).raw(nonce);
            }
            Body::PosProof { req, result } => {
                w.u64(*req);
                write_reply(&mut w, result, |w, p| {
                    w.cid(&p.cid).raw(&p.challenge).raw(&p.proof);
                });
            }
            Body::VertexPropose { vertex } | Body::VertexEcho { vertex } => vertex.write(&mut w),
            Body::VertexReady { author, round, digest } => {
                w.u32(*author).u64(*round).cid(digest);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let kind = r.u8()?;
        let from = r.u32()?;
        let to = r.u32()?;
        let body = match kind {
            1 => {
                let req = r.u64()?;
                let t = r.u8()?;
                let tag = CodecTag::from_u8(t).ok_or(DecodeError::Invalid { what: "codec tag", value: t as u64 })?;
                Body::StoreRequest { req, tag, bytes: r.bytes()?.to_vec() }
            }
            2 => {
                let req = r.u64()?;
                Body::StoreAck { req, result: read_reply(&mut r, |r| r.cid())? }
            }
            3 => Body::TxBroadcast { tx: Transaction::read(&mut r)? },
            4 => Body::RetrieveRequest { req: r.u64()?, version: r.cid()? },
            5 => {
                let req = r.u64()?;
                let version = r.cid()?;
                let result = read_reply(&mut r, |r| Ok(FragmentPlan::new(r.cids()?)))?;
                Body::PlanResponse { req, version, result }
            }
            6 => Body::DownloadRequest { req: r.u64()?, cid: r.cid()? },
            7 => {
                let req = r.u64()?;
                let cid = r.cid()?;
                Body::DownloadResponse { req, cid, result: read_reply(&mut r, |r| Ok(r.bytes()?.to_vec()))? }
            }
            8 => Body::PosChallenge { req: r.u64()?, cid: r.cid()?, nonce: read_array32(&mut r)? },
            9 => {
                let req = r.u64()?;
                let result =
                    read_reply(&mut r, |r| Ok(StorageProof { cid: r.cid()?, challenge: read_array32(r)?, proof: read_array32(r)? }))?;
                Body::PosProof { req, result }
            }
            10 => Body::VertexPropose { vertex: Vertex::read(&mut r)? },
            11 => Body::VertexEcho { vertex: Vertex::read(&mut r)? },
            12 => Body::VertexReady { author: r.u32()?, round: r.u64()?, digest: r.cid()? },
            k => return Err(DecodeError::Invalid { what: "message kind", value: k as u64 }),
        };
        r.finish()?;
        Ok(Message { from, to, body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{derive_signing_key, TxBody};

    fn samples() -> Vec<Body> {
        let c = Cid::of(b"x", CodecTag::Original);
        let tx = Transaction::sign(1, TxBody::Create { cid_v0: c }, &derive_signing_key(0, 1));
        let v = Vertex::new(1, 2, vec![Vertex::genesis(0).id()], Some(tx.clone()));
        let proof = StorageProof { cid: c, challenge: [3; 32], proof: [4; 32] };
        vec![
            Body::StoreRequest { req: 1, tag: CodecTag::Increment, bytes: vec![1, 2, 3] },
            Body::StoreAck { req: 1, result: Ok(c) },
            Body::StoreAck { req: 2, result: Err("refused".into()) },
            Body::TxBroadcast { tx },
            Body::RetrieveRequest { req: 3, version: c },
            Body::PlanResponse { req: 3, version: c, result: Ok(FragmentPlan::new(vec![c, c])) },
            Body::PlanResponse { req: 3, version: c, result: Err("not-found".into()) },
            Body::DownloadRequest { req: 4, cid: c },
            Body::DownloadResponse { req: 4, cid: c, result: Ok(b"data".to_vec()) },
            Body::PosChallenge { req: 5, cid: c, nonce: [9; 32] },
            Body::PosProof { req: 5, result: Ok(proof) },
            Body::VertexPropose { vertex: v.clone() },
            Body::VertexEcho { vertex: v.clone() },
            Body::VertexReady { author: 2, round: 1, digest: v.id() },
        ]
    }

    #[test]
    fn every_kind_round_trips() {
        let mut kinds = std::collections::BTreeSet::new();
        for body in samples() {
            kinds.insert(body.kind());
            let m = Message::new(0, 3, body);
            assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
        assert_eq!(kinds.len(), 12);
    }

    #[test]
    fn kind_mismatch_fails_to_decode() {
        let m = Message::new(0, 1, Body::DownloadRequest { req: 1, cid: Cid::of(b"x", CodecTag::Original) });
        let mut enc = m.encode();
        enc[0] = 1;
        assert!(Message::decode(&enc).is_err());
        enc[0] = 77;
        assert!(Message::decode(&enc).is_err());
    }
}
