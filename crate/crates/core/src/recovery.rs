//! Fragment planning and file reassembly.
//!
//! `retrieve` walks the lower layer breadth-first from the requested version
//! back to the nearest complete files and returns the versions in patch
//! order. `recover` applies the fragments of such a plan.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cid::{Cid, CodecTag, ParseCidError};
use crate::increment::{apply_encoded, PatchError};
use crate::ledger::LedgerState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentPlan {
    versions: Vec<Cid>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("version not found: {0}")]
    NotFound(Cid),
    #[error("incomplete plan: no fragment for {0}")]
    IncompletePlan(Cid),
    #[error("fragment {0} does not match its cid")]
    CorruptFragment(Cid),
    #[error("empty plan")]
    EmptyPlan,
    #[error(transparent)]
    Patch(#[from] PatchError),
}

impl FragmentPlan {
    pub fn new(versions: Vec<Cid>) -> Self {
        FragmentPlan { versions }
    }

    pub fn versions(&self) -> &[Cid] {
        &self.versions
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    /// Versions whose fragments must be fetched. Fork children and merge
    /// versions have empty increments and no stored blob.
    pub fn fetchable(&self) -> impl Iterator<Item = &Cid> {
        self.versions.iter().filter(|c| c.tag() != CodecTag::Transaction)
    }
}

/// One Cid rendering per line.
impl fmt::Display for FragmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.versions {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for FragmentPlan {
    type Err = ParseCidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let versions = s.lines().map(str::trim).filter(|l| !l.is_empty()).map(Cid::from_str).collect::<Result<_, _>>()?;
        Ok(FragmentPlan { versions })
    }
}

/// Plans the fragments needed to rebuild `version`.
///
/// Expansion stops at complete files (CREATE versions and full-file updates).
/// A version is dequeued only once every version in the traversed sub-DAG
/// that descends from it has been dequeued, so the reversed list applies each
/// fragment after all of its ancestors even on uneven diamonds. On chains and
/// on the symmetric diamond this is the same order a plain breadth-first
/// search with a visited set gives.
pub fn retrieve(version: &Cid, state: &LedgerState) -> Result<FragmentPlan, RecoveryError> {
    let info_of = |v: &Cid| state.version_info(v).ok_or(RecoveryError::NotFound(*v));

    let mut parents: HashMap<Cid, Vec<Cid>> = HashMap::new();
    let mut referrers: HashMap<Cid, usize> = HashMap::from([(*version, 0)]);
    let mut todo = VecDeque::from([*version]);
    while let Some(v) = todo.pop_front() {
        let info = info_of(&v)?;
        let ps = if info.complete { vec![] } else { info.parents };
        for p in &ps {
            let n = referrers.entry(*p).or_insert(0);
            if *n == 0 && p != version {
                todo.push_back(*p);
            }
            *n += 1;
        }
        parents.insert(v, ps);
    }

    // Complete versions are not expanded, but other branches may still reach
    // their ancestors. Those ancestors must be applied first.
    let floor = parents.keys().map(|v| definer_round(state, v)).min().unwrap();
    let mut extra: HashMap<Cid, Vec<Cid>> = HashMap::new();
    for v in parents.keys() {
        if !state.version_info(v).is_some_and(|i| i.complete) {
            continue;
        }
        let mut seen = HashSet::new();
        let mut todo = state.version_info(v).unwrap().parents;
        while let Some(a) = todo.pop() {
            if !seen.insert(a) || definer_round(state, &a) < floor {
                continue;
            }
            if parents.contains_key(&a) {
                *referrers.get_mut(&a).unwrap() += 1;
                extra.entry(*v).or_default().push(a);
            }
            todo.extend(state.version_info(&a).map(|i| i.parents).unwrap_or_default());
        }
    }

    let mut order = Vec::with_capacity(parents.len());
    let mut queue = VecDeque::from([*version]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for p in parents[&v].iter().chain(extra.get(&v).into_iter().flatten()) {
            let n = referrers.get_mut(p).unwrap();
            *n -= 1;
            if *n == 0 {
                queue.push_back(*p);
            }
        }
    }
    order.reverse();
    Ok(FragmentPlan { versions: order })
}

fn definer_round(state: &LedgerState, v: &Cid) -> u64 {
    state.version_index(v).and_then(|d| state.vertex(&d)).map_or(0, |x| x.round())
}

/// Rebuilds the file described by `plan` from fetched fragments.
///
/// Original fragments replace the file, increments patch it, and
/// ledger-derived versions (fork children, merges) leave it unchanged.
/// Every fragment is checked against its Cid first.
pub fn recover<F, B>(plan: &FragmentPlan, mut fragment: F) -> Result<Vec<u8>, RecoveryError>
where
    F: FnMut(&Cid) -> Option<B>,
    B: AsRef<[u8]>,
{
    if plan.is_empty() {
        return Err(RecoveryError::EmptyPlan);
    }
    let mut file = Vec::new();
    for v in &plan.versions {
        if v.tag() == CodecTag::Transaction {
            continue;
        }
        let bytes = fragment(v).ok_or(RecoveryError::IncompletePlan(*v))?;
        let bytes = bytes.as_ref();
        if !v.verifies(bytes) {
            return Err(RecoveryError::CorruptFragment(*v));
        }
        file = match v.tag() {
            CodecTag::Original => bytes.to_vec(),
            _ => apply_encoded(&file, bytes)?,
        };
    }
    Ok(file)
}

/// `recover` over an in-memory fragment map.
pub fn recover_from_map(plan: &FragmentPlan, fragments: &HashMap<Cid, Vec<u8>>) -> Result<Vec<u8>, RecoveryError> {
    recover(plan, |c| fragments.get(c))
}
