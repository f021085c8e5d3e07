use crate::cid::{Cid, CodecTag};
use crate::codec::{DecodeError, Reader, Writer};

use super::transaction::Transaction;
use super::NodeId;

/// One vertex of the two-layer DAG.
///
/// `upper_parents` are round `round - 1` vertices (consensus edges). The
/// derivative edges are implied by the transaction's referenced versions.
/// A vertex without a transaction is an empty proposal; genesis vertices are
/// empty.
///
/// Encoding: `round u64, author u32, upper_parents (u64 count, cids), has_tx u8, [tx]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vertex {
    round: u64,
    author: NodeId,
    upper_parents: Vec<Cid>,
    tx: Option<Transaction>,
    id: Cid,
}

impl Vertex {
    /// Parents are sorted so the encoding is canonical.
    pub fn new(round: u64, author: NodeId, mut upper_parents: Vec<Cid>, tx: Option<Transaction>) -> Self {
        upper_parents.sort();
        upper_parents.dedup();
        Self::sealed(round, author, upper_parents, tx)
    }

    fn sealed(round: u64, author: NodeId, upper_parents: Vec<Cid>, tx: Option<Transaction>) -> Self {
        let mut v = Vertex { round, author, upper_parents, tx, id: Cid::from_raw(CodecTag::Transaction, [0; 32]) };
        v.id = Cid::of(&v.encode(), CodecTag::Transaction);
        v
    }

    pub fn genesis(author: NodeId) -> Self {
        Vertex::new(0, author, vec![], None)
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn author(&self) -> NodeId {
        self.author
    }

    pub fn upper_parents(&self) -> &[Cid] {
        &self.upper_parents
    }

    pub fn tx(&self) -> Option<&Transaction> {
        self.tx.as_ref()
    }

    /// Version cids named by the transaction's derivative fields.
    pub fn lower_parents(&self) -> Vec<Cid> {
        self.tx.as_ref().map(|t| t.referenced_versions()).unwrap_or_default()
    }

    pub fn write(&self, w: &mut Writer) {
        w.u64(self.round).u32(self.author).cids(&self.upper_parents);
        match &self.tx {
            None => {
                w.u8(0);
            }
            Some(tx) => {
                w.u8(1);
                tx.write(w);
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let round = r.u64()?;
        let author = r.u32()?;
        let parents = r.cids()?;
        if parents.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::Invalid { what: "parent order", value: round });
        }
        let tx = match r.u8()? {
            0 => None,
            1 => Some(Transaction::read(r)?),
            v => return Err(DecodeError::Invalid { what: "tx flag", value: v as u64 }),
        };
        Ok(Self::sealed(round, author, parents, tx))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::read(&mut r)?;
        r.finish()?;
        Ok(v)
    }

    pub fn id(&self) -> Cid {
        self.id
    }
}
