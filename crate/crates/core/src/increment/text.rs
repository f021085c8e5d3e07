//! Line-granularity edit scripts.
//!
//! Lines are split after every `\n`; a trailing partial line is kept as its
//! own line, so concatenating the lines reproduces the input exactly.
//!
//! The diff is Myers' O(ND) shortest edit script in its linear-space
//! (middle snake) form, run over interned line ids.
//!
//! Payload layout, all integers `u64` little-endian:
//!
//! ```text
//! base_line_count
//! record_count
//! record_count x { copy, delete, insert_count, insert_count x { len, bytes } }
//! ```
//!
//! Each record copies `copy` base lines, skips `delete` base lines, then
//! emits the inserted lines. Base lines left after the last record are
//! copied. Identical inputs therefore produce zero records.

use std::collections::HashMap;

use crate::codec::{Reader, Writer};

use super::PatchError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub copy: u64,
    pub delete: u64,
    pub insert: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextScript {
    pub base_lines: u64,
    pub records: Vec<TextRecord>,
}

impl TextScript {
    /// Number of records, i.e. maximal runs of changed lines.
    pub fn edit_count(&self) -> usize {
        self.records.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.base_lines).u64(self.records.len() as u64);
        for r in &self.records {
            w.u64(r.copy).u64(r.delete).u64(r.insert.len() as u64);
            for line in &r.insert {
                w.bytes(line);
            }
        }
        w.finish()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PatchError> {
        let mut r = Reader::new(payload);
        let base_lines = r.u64()?;
        // Each record is at least 24 bytes.
        let n = r.len_prefix(24)?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let copy = r.u64()?;
            let delete = r.u64()?;
            let k = r.len_prefix(8)?;
            let mut insert = Vec::with_capacity(k);
            for _ in 0..k {
                insert.push(r.bytes()?.to_vec());
            }
            records.push(TextRecord { copy, delete, insert });
        }
        r.finish()?;
        Ok(TextScript { base_lines, records })
    }

    pub fn apply(&self, base: &[u8]) -> Result<Vec<u8>, PatchError> {
        let lines = split_lines(base);
        if lines.len() as u64 != self.base_lines {
            return Err(PatchError::Mismatch(format!("script expects {} base lines, base has {}", self.base_lines, lines.len())));
        }
        let mut out = Vec::with_capacity(base.len());
        let mut pos = 0usize;
        for (i, rec) in self.records.iter().enumerate() {
            let end = (pos as u64)
                .checked_add(rec.copy)
                .and_then(|e| e.checked_add(rec.delete))
                .filter(|&e| e <= lines.len() as u64)
                .ok_or_else(|| PatchError::Mismatch(format!("record {i} runs past base line {}", lines.len())))?
                as usize;
            for l in &lines[pos..pos + rec.copy as usize] {
                out.extend_from_slice(l);
            }
            for l in &rec.insert {
                out.extend_from_slice(l);
            }
            pos = end;
        }
        for l in &lines[pos..] {
            out.extend_from_slice(l);
        }
        Ok(out)
    }
}

pub fn split_lines(bytes: &[u8]) -> Vec<&[u8]> {
    bytes.split_inclusive(|&b| b == b'\n').collect()
}

/// Computes a minimal line-level edit script from `old` to `new`.
pub fn diff(old: &[u8], new: &[u8]) -> TextScript {
    let a_lines = split_lines(old);
    let b_lines = split_lines(new);

    let mut ids: HashMap<&[u8], u32> = HashMap::new();
    let a = intern(&mut ids, &a_lines);
    let b = intern(&mut ids, &b_lines);

    let mut ops = Vec::new();
    diff_ids(&a, 0, &b, 0, &mut ops);

    let mut records = Vec::new();
    let mut cur = TextRecord { copy: 0, delete: 0, insert: Vec::new() };
    let mut dirty = false;
    for op in ops {
        match op {
            Op::Equal(n) => {
                if dirty {
                    records.push(std::mem::replace(&mut cur, TextRecord { copy: 0, delete: 0, insert: Vec::new() }));
                    dirty = false;
                }
                cur.copy += n as u64;
            }
            Op::Delete(n) => {
                cur.delete += n as u64;
                dirty = true;
            }
            Op::Insert { b_start, len } => {
                cur.insert.extend(b_lines[b_start..b_start + len].iter().map(|l| l.to_vec()));
                dirty = true;
            }
        }
    }
    if dirty {
        records.push(cur);
    }
    TextScript { base_lines: a_lines.len() as u64, records }
}

fn intern<'a>(ids: &mut HashMap<&'a [u8], u32>, lines: &[&'a [u8]]) -> Vec<u32> {
    lines
        .iter()
        .map(|l| {
            let next = ids.len() as u32;
            *ids.entry(*l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal(usize),
    Delete(usize),
    Insert { b_start: usize, len: usize },
}

fn push(ops: &mut Vec<Op>, op: Op) {
    match (ops.last_mut(), op) {
        (_, Op::Equal(0)) | (_, Op::Delete(0)) | (_, Op::Insert { len: 0, .. }) => {}
        (Some(Op::Equal(n)), Op::Equal(m)) => *n += m,
        (Some(Op::Delete(n)), Op::Delete(m)) => *n += m,
        (Some(Op::Insert { b_start, len }), Op::Insert { b_start: s, len: l }) if *b_start + *len == s => *len += l,
        _ => ops.push(op),
    }
}

fn diff_ids(a: &[u32], a_off: usize, b: &[u32], b_off: usize, ops: &mut Vec<Op>) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let a = &a[prefix..];
    let b = &b[prefix..];
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let a = &a[..a.len() - suffix];
    let b = &b[..b.len() - suffix];
    let (a_off, b_off) = (a_off + prefix, b_off + prefix);

    push(ops, Op::Equal(prefix));
    if a.is_empty() {
        push(ops, Op::Insert { b_start: b_off, len: b.len() });
    } else if b.is_empty() {
        push(ops, Op::Delete(a.len()));
    } else {
        match bisect(a, b) {
            Some((x, y)) if (x, y) != (0, 0) && (x, y) != (a.len(), b.len()) => {
                diff_ids(&a[..x], a_off, &b[..y], b_off, ops);
                diff_ids(&a[x..], a_off + x, &b[y..], b_off + y, ops);
            }
            _ => {
                push(ops, Op::Delete(a.len()));
                push(ops, Op::Insert { b_start: b_off, len: b.len() });
            }
        }
    }
    push(ops, Op::Equal(suffix));
}

/// Finds a point on a shortest edit path by running the forward and reverse
/// searches until they overlap. Returns `None` when the sequences share no
/// element.
fn bisect(a: &[u32], b: &[u32]) -> Option<(usize, usize)> {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let max_d = (n + m + 1) / 2;
    let v_off = max_d;
    let v_len = (2 * max_d + 2) as usize;
    let mut v1 = vec![-1isize; v_len];
    let mut v2 = vec![-1isize; v_len];
    v1[(v_off + 1) as usize] = 0;
    v2[(v_off + 1) as usize] = 0;
    let delta = n - m;
    // With an odd delta the paths meet during a forward step.
    let front = delta % 2 != 0;
    let (mut k1_start, mut k1_end, mut k2_start, mut k2_end) = (0isize, 0isize, 0isize, 0isize);

    for d in 0..max_d {
        let mut k1 = -d + k1_start;
        while k1 <= d - k1_end {
            let k1_off = (v_off + k1) as usize;
            let mut x1 = if k1 == -d || (k1 != d && v1[k1_off - 1] < v1[k1_off + 1]) { v1[k1_off + 1] } else { v1[k1_off - 1] + 1 };
            let mut y1 = x1 - k1;
            while x1 < n && y1 < m && a[x1 as usize] == b[y1 as usize] {
                x1 += 1;
                y1 += 1;
            }
            v1[k1_off] = x1;
            if x1 > n {
                k1_end += 2;
            } else if y1 > m {
                k1_start += 2;
            } else if front {
                let k2_off = v_off + delta - k1;
                if k2_off >= 0 && (k2_off as usize) < v_len && v2[k2_off as usize] != -1 {
                    let x2 = n - v2[k2_off as usize];
                    if x1 >= x2 {
                        return Some((x1 as usize, y1 as usize));
                    }
                }
            }
            k1 += 2;
        }

        let mut k2 = -d + k2_start;
        while k2 <= d - k2_end {
            let k2_off = (v_off + k2) as usize;
            let mut x2 = if k2 == -d || (k2 != d && v2[k2_off - 1] < v2[k2_off + 1]) { v2[k2_off + 1] } else { v2[k2_off - 1] + 1 };
            let mut y2 = x2 - k2;
            while x2 < n && y2 < m && a[(n - x2 - 1) as usize] == b[(m - y2 - 1) as usize] {
                x2 += 1;
                y2 += 1;
            }
            v2[k2_off] = x2;
            if x2 > n {
                k2_end += 2;
            } else if y2 > m {
                k2_start += 2;
            } else if !front {
                let k1_off = v_off + delta - k2;
                if k1_off >= 0 && (k1_off as usize) < v_len && v1[k1_off as usize] != -1 {
                    let x1 = v1[k1_off as usize];
                    let y1 = v_off + x1 - k1_off;
                    if x1 >= n - x2 {
                        return Some((x1 as usize, y1 as usize));
                    }
                }
            }
            k2 += 2;
        }
    }
    None
}
