//! bsdiff-style binary deltas.
//!
//! The old file is indexed with a suffix array; the new file is scanned for
//! long approximate matches against it. Output follows the classic
//! control/diff/extra layout. There is no general-purpose compressor, but the
//! diff block is zero-run coded: it is mostly zeros wherever the match is
//! exact, and storing it raw would make every delta at least as large as the
//! new file.
//!
//! Payload layout (`uv` = LEB128 varint, `sv` = zigzag varint):
//!
//! ```text
//! new_size   uv
//! ctrl_count uv
//! ctrl_count x { add_len uv, copy_len uv, seek sv }
//! diff_enc_len uv, diff block (zero-run coded, decodes to sum(add_len) bytes)
//! extra_len  uv, extra block (raw)
//! ```
//!
//! The zero-run coding is a sequence of `{ zeros uv, lit_len uv, lit bytes }`.
//!
//! Applying a control triple adds `add_len` diff bytes (wrapping) to the old
//! file at the current old offset, appends `copy_len` extra bytes verbatim,
//! then moves the old offset by `add_len + seek`.

use crate::codec::{Reader, Writer};

use super::PatchError;

/// Suffix array of `s` including the empty suffix, which sorts first.
/// Prefix doubling with radix passes; O(n log n).
pub fn suffix_array(s: &[u8]) -> Vec<u32> {
    let n = s.len() + 1;
    assert!(n <= u32::MAX as usize, "input too large for a u32 suffix array");
    // rank 0 is the sentinel at position s.len()
    let mut rank: Vec<u32> = s.iter().map(|&c| c as u32 + 1).chain(std::iter::once(0)).collect();
    let mut sa: Vec<u32> = vec![0; n];
    let mut tmp: Vec<u32> = vec![0; n];

    // Initial counting sort on the first byte.
    let mut count = vec![0usize; 257];
    for &r in &rank {
        count[r as usize] += 1;
    }
    let mut sum = 0;
    for c in count.iter_mut() {
        let v = *c;
        *c = sum;
        sum += v;
    }
    for (i, &r) in rank.iter().enumerate() {
        let r = r as usize;
        sa[count[r]] = i as u32;
        count[r] += 1;
    }
    let mut classes = reclass(&sa, &mut tmp, |a, b| rank[a] == rank[b]);
    std::mem::swap(&mut rank, &mut tmp);

    let mut second: Vec<u32> = vec![0; n];
    let mut k = 1usize;
    while classes < n {
        // Order by second key: suffixes running off the end first, then the
        // current order shifted left by k.
        let mut p = 0;
        for i in (n - k.min(n))..n {
            second[p] = i as u32;
            p += 1;
        }
        for &j in &sa {
            if j as usize >= k {
                second[p] = j - k as u32;
                p += 1;
            }
        }
        // Stable counting sort by first key.
        let mut count = vec![0usize; classes];
        for &r in &rank {
            count[r as usize] += 1;
        }
        let mut sum = 0;
        for c in count.iter_mut() {
            let v = *c;
            *c = sum;
            sum += v;
        }
        for &i in &second {
            let r = rank[i as usize] as usize;
            sa[count[r]] = i;
            count[r] += 1;
        }
        let key2 = |i: usize| if i + k < n { rank[i + k] } else { u32::MAX };
        classes = reclass(&sa, &mut tmp, |a, b| rank[a] == rank[b] && key2(a) == key2(b));
        std::mem::swap(&mut rank, &mut tmp);
        k *= 2;
    }
    sa
}

fn reclass(sa: &[u32], out: &mut [u32], same: impl Fn(usize, usize) -> bool) -> usize {
    let mut c = 0u32;
    out[sa[0] as usize] = 0;
    for w in sa.windows(2) {
        if !same(w[0] as usize, w[1] as usize) {
            c += 1;
        }
        out[w[1] as usize] = c;
    }
    c as usize + 1
}

fn match_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Longest match of a prefix of `new` among the suffixes of `old`.
fn search(sa: &[u32], old: &[u8], new: &[u8]) -> (usize, usize) {
    let (mut st, mut en) = (0usize, sa.len() - 1);
    loop {
        if en - st < 2 {
            let x = match_len(&old[sa[st] as usize..], new);
            let y = match_len(&old[sa[en] as usize..], new);
            return if x > y { (sa[st] as usize, x) } else { (sa[en] as usize, y) };
        }
        let mid = st + (en - st) / 2;
        let suf = &old[sa[mid] as usize..];
        let l = suf.len().min(new.len());
        if suf[..l] < new[..l] {
            st = mid;
        } else {
            en = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Control {
    pub add: u64,
    pub copy: u64,
    pub seek: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDelta {
    pub new_size: u64,
    pub controls: Vec<Control>,
    pub diff: Vec<u8>,
    pub extra: Vec<u8>,
}

impl BinaryDelta {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(16 + 6 * self.controls.len() + self.extra.len());
        w.uvarint(self.new_size).uvarint(self.controls.len() as u64);
        for c in &self.controls {
            w.uvarint(c.add).uvarint(c.copy).svarint(c.seek);
        }
        let diff = zero_run_encode(&self.diff);
        w.uvarint(diff.len() as u64).raw(&diff);
        w.uvarint(self.extra.len() as u64).raw(&self.extra);
        w.finish()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PatchError> {
        let mut r = Reader::new(payload);
        let new_size = r.uvarint()?;
        let n_ctrl = r.uvarint()?;
        // Each control takes at least three bytes.
        if n_ctrl > r.remaining() as u64 / 3 {
            return Err(PatchError::Decode("control count exceeds payload".into()));
        }
        let mut controls = Vec::with_capacity(n_ctrl as usize);
        for _ in 0..n_ctrl {
            controls.push(Control { add: r.uvarint()?, copy: r.uvarint()?, seek: r.svarint()? });
        }
        let total_add = controls
            .iter()
            .try_fold(0u64, |acc, c| acc.checked_add(c.add))
            .ok_or_else(|| PatchError::Decode("control lengths overflow".into()))?;
        let diff_enc_len = r.uvarint()?;
        let diff_enc = r.take(usize::try_from(diff_enc_len).unwrap_or(usize::MAX))?;
        let diff = zero_run_decode(diff_enc, total_add)?;
        let extra_len = r.uvarint()?;
        let extra = r.take(usize::try_from(extra_len).unwrap_or(usize::MAX))?.to_vec();
        r.finish()?;
        Ok(BinaryDelta { new_size, controls, diff, extra })
    }

    pub fn apply(&self, old: &[u8]) -> Result<Vec<u8>, PatchError> {
        let sum = |f: fn(&Control) -> u64| self.controls.iter().try_fold(0u64, |a, c| a.checked_add(f(c)));
        let (total_add, total_copy) = match (sum(|c| c.add), sum(|c| c.copy)) {
            (Some(a), Some(c)) => (a, c),
            _ => return Err(PatchError::Decode("control lengths overflow".into())),
        };
        if total_add != self.diff.len() as u64 || total_copy != self.extra.len() as u64 {
            return Err(PatchError::Decode("control lengths disagree with diff/extra blocks".into()));
        }
        if total_add.checked_add(total_copy) != Some(self.new_size) {
            return Err(PatchError::Decode("control lengths disagree with new size".into()));
        }
        let mut out = Vec::with_capacity(self.new_size as usize);
        let (mut diff_pos, mut extra_pos) = (0usize, 0usize);
        let mut old_pos: i64 = 0;
        for (i, c) in self.controls.iter().enumerate() {
            let add = c.add as usize;
            if add > 0 {
                if old_pos < 0 || old_pos as u64 + c.add > old.len() as u64 {
                    return Err(PatchError::Mismatch(format!(
                        "control {i} reads old bytes {}..{} of {}",
                        old_pos,
                        old_pos + c.add as i64,
                        old.len()
                    )));
                }
                let base = &old[old_pos as usize..old_pos as usize + add];
                out.extend(self.diff[diff_pos..diff_pos + add].iter().zip(base).map(|(d, o)| d.wrapping_add(*o)));
                diff_pos += add;
            }
            out.extend_from_slice(&self.extra[extra_pos..extra_pos + c.copy as usize]);
            extra_pos += c.copy as usize;
            old_pos = old_pos
                .checked_add(c.add as i64)
                .and_then(|p| p.checked_add(c.seek))
                .ok_or_else(|| PatchError::Decode(format!("control {i} seek overflows")))?;
        }
        Ok(out)
    }
}

fn zero_run_encode(block: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    let mut i = 0;
    while i < block.len() {
        let zeros = block[i..].iter().take_while(|&&b| b == 0).count();
        i += zeros;
        let lit = block[i..].iter().take_while(|&&b| b != 0).count();
        w.uvarint(zeros as u64).uvarint(lit as u64).raw(&block[i..i + lit]);
        i += lit;
    }
    w.finish()
}

fn zero_run_decode(enc: &[u8], expect_len: u64) -> Result<Vec<u8>, PatchError> {
    // Every run pair covers at least one byte in a well-formed block, so the
    // decoded size is bounded by what the encoded size could describe.
    let mut out = Vec::with_capacity(expect_len.min(1 << 26) as usize);
    let mut r = Reader::new(enc);
    while r.remaining() > 0 {
        let zeros = r.uvarint()?;
        let lit = r.uvarint()?;
        if (out.len() as u64).saturating_add(zeros).saturating_add(lit) > expect_len {
            return Err(PatchError::Decode("diff block longer than controls describe".into()));
        }
        out.resize(out.len() + zeros as usize, 0);
        out.extend_from_slice(r.take(lit as usize)?);
    }
    if out.len() as u64 != expect_len {
        return Err(PatchError::Decode("diff block shorter than controls describe".into()));
    }
    Ok(out)
}

/// Computes a delta from `old` to `new`.
pub fn diff(old: &[u8], new: &[u8]) -> BinaryDelta {
    let sa = suffix_array(old);
    let (oldsize, newsize) = (old.len() as isize, new.len() as isize);
    let mut controls = Vec::new();
    let mut db = Vec::new();
    let mut eb = Vec::new();

    let (mut scan, mut len, mut pos) = (0isize, 0isize, 0isize);
    let (mut lastscan, mut lastpos, mut lastoffset) = (0isize, 0isize, 0isize);
    let at_old = |i: isize| old[i as usize];
    let at_new = |i: isize| new[i as usize];

    while scan < newsize {
        let mut oldscore = 0isize;
        scan += len;
        let mut scsc = scan;
        while scan < newsize {
            let (p, l) = search(&sa, old, &new[scan as usize..]);
            pos = p as isize;
            len = l as isize;
            while scsc < scan + len {
                if scsc + lastoffset < oldsize && at_old(scsc + lastoffset) == at_new(scsc) {
                    oldscore += 1;
                }
                scsc += 1;
            }
            if (len == oldscore && len != 0) || len > oldscore + 8 {
                break;
            }
            if scan + lastoffset < oldsize && at_old(scan + lastoffset) == at_new(scan) {
                oldscore -= 1;
            }
            scan += 1;
        }

        if len != oldscore || scan == newsize {
            // Extend the previous match forwards.
            let (mut s, mut sf, mut lenf) = (0isize, 0isize, 0isize);
            let mut i = 0isize;
            while lastscan + i < scan && lastpos + i < oldsize {
                if at_old(lastpos + i) == at_new(lastscan + i) {
                    s += 1;
                }
                i += 1;
                if s * 2 - i > sf * 2 - lenf {
                    sf = s;
                    lenf = i;
                }
            }

            // Extend the new match backwards.
            let mut lenb = 0isize;
            if scan < newsize {
                let (mut s, mut sb) = (0isize, 0isize);
                let mut i = 1isize;
                while scan >= lastscan + i && pos >= i {
                    if at_old(pos - i) == at_new(scan - i) {
                        s += 1;
                    }
                    if s * 2 - i > sb * 2 - lenb {
                        sb = s;
                        lenb = i;
                    }
                    i += 1;
                }
            }

            // Split any overlap at the point that maximises matches.
            if lastscan + lenf > scan - lenb {
                let overlap = (lastscan + lenf) - (scan - lenb);
                let (mut s, mut ss, mut lens) = (0isize, 0isize, 0isize);
                for i in 0..overlap {
                    if at_new(lastscan + lenf - overlap + i) == at_old(lastpos + lenf - overlap + i) {
                        s += 1;
                    }
                    if at_new(scan - lenb + i) == at_old(pos - lenb + i) {
                        s -= 1;
                    }
                    if s > ss {
                        ss = s;
                        lens = i + 1;
                    }
                }
                lenf += lens - overlap;
                lenb -= lens;
            }

            for i in 0..lenf {
                db.push(at_new(lastscan + i).wrapping_sub(at_old(lastpos + i)));
            }
            let extra_len = (scan - lenb) - (lastscan + lenf);
            eb.extend_from_slice(&new[(lastscan + lenf) as usize..(lastscan + lenf + extra_len) as usize]);
            controls.push(Control { add: lenf as u64, copy: extra_len as u64, seek: ((pos - lenb) - (lastpos + lenf)) as i64 });

            lastscan = scan - lenb;
            lastpos = pos - lenb;
            lastoffset = pos - scan;
        }
    }

    BinaryDelta { new_size: new.len() as u64, controls, diff: db, extra: eb }
}
