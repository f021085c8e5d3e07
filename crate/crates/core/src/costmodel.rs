//! Expected storage cost of a multi-versioned file, with and without
//! increments.
//!
//! Each version is produced by an ADD (probability `p`, increment size `a_t`)
//! or a REV (increment size `r_t`). File size grows only on ADD, starting
//! from `S_0 = 0`. Storing every full version costs `C = sum S_t`; storing
//! increments costs `C' = sum I_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::cid::CodecTag;
use crate::increment::generate_increment;
use crate::store::{BlobStore, StoreError};

/// Upper bound on `(1-p)/p * E(r)/E(a)` accepted as "O(1)".
pub const MAX_REV_WEIGHT: f64 = 100.0;

/// Shape of the sampled increment sizes. Only the means are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeDist {
    #[default]
    Exponential,
    /// Every sample equals the mean.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub n: u64,
    pub p: f64,
    pub mean_add: f64,
    pub mean_rev: f64,
    pub seed: u64,
    pub dist: SizeDist,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("p must lie in (0, 1], got {0}")]
    P(f64),
    #[error("mean ADD size must be positive, got {0}")]
    MeanAdd(f64),
    #[error("mean REV size must be non-negative, got {0}")]
    MeanRev(f64),
    #[error("n must be at least 1")]
    N,
    #[error("(1-p)/p * E(r)/E(a) = {0} exceeds {MAX_REV_WEIGHT}")]
    RevWeight(f64),
}

impl CostParams {
    pub fn new(n: u64, p: f64, mean_add: f64, mean_rev: f64) -> Self {
        CostParams { n, p, mean_add, mean_rev, seed: 0, dist: SizeDist::Exponential }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dist(mut self, dist: SizeDist) -> Self {
        self.dist = dist;
        self
    }

    /// `(1-p)/p * E(r)/E(a)`.
    pub fn rev_weight(&self) -> f64 {
        (1.0 - self.p) / self.p * self.mean_rev / self.mean_add
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.p.is_nan() || self.p <= 0.0 || self.p > 1.0 {
            return Err(ParamError::P(self.p));
        }
        if self.mean_add.is_nan() || self.mean_add <= 0.0 {
            return Err(ParamError::MeanAdd(self.mean_add));
        }
        if self.mean_rev.is_nan() || self.mean_rev < 0.0 {
            return Err(ParamError::MeanRev(self.mean_rev));
        }
        if self.n == 0 {
            return Err(ParamError::N);
        }
        let w = self.rev_weight();
        if w > MAX_REV_WEIGHT {
            return Err(ParamError::RevWeight(w));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub c: f64,
    pub c_prime: f64,
    pub ratio: f64,
    /// `S_0 ..= S_n`.
    pub sizes: Vec<f64>,
    /// `I_1 ..= I_n`.
    pub increments: Vec<f64>,
    /// Standard errors of `c` and `c_prime`; zero for the closed form.
    pub c_stderr: f64,
    pub c_prime_stderr: f64,
}

/// Expected costs from the model's formulas.
pub fn closed_form(params: &CostParams) -> Result<CostReport, ParamError> {
    params.validate()?;
    let CostParams { n, p, mean_add, mean_rev, .. } = *params;
    let nf = n as f64;
    let c = nf * (nf + 1.0) / 2.0 * p * mean_add;
    let c_prime = nf * p * mean_add + nf * (1.0 - p) * mean_rev;
    Ok(CostReport {
        c,
        c_prime,
        ratio: c_prime / c,
        sizes: (0..=n).map(|t| t as f64 * p * mean_add).collect(),
        increments: vec![p * mean_add + (1.0 - p) * mean_rev; n as usize],
        c_stderr: 0.0,
        c_prime_stderr: 0.0,
    })
}

struct Sampler {
    dist: SizeDist,
    add: Option<Exp<f64>>,
    rev: Option<Exp<f64>>,
    mean_add: f64,
    mean_rev: f64,
}

impl Sampler {
    fn new(params: &CostParams) -> Self {
        let exp = |mean: f64| (mean > 0.0).then(|| Exp::new(1.0 / mean).unwrap());
        Sampler {
            dist: params.dist,
            add: exp(params.mean_add),
            rev: exp(params.mean_rev),
            mean_add: params.mean_add,
            mean_rev: params.mean_rev,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, add: bool) -> f64 {
        let (exp, mean) = if add { (&self.add, self.mean_add) } else { (&self.rev, self.mean_rev) };
        match (self.dist, exp) {
            (SizeDist::Exponential, Some(e)) => e.sample(rng),
            _ => mean,
        }
    }
}

/// Averages `trials` sampled histories. Trial `i` draws from stream `i` of
/// the seeded generator, so results do not depend on evaluation order.
pub fn monte_carlo(params: &CostParams, trials: u64) -> Result<CostReport, ParamError> {
    params.validate()?;
    let trials = trials.max(1);
    let n = params.n as usize;
    let sampler = Sampler::new(params);
    let mut sizes = vec![0.0; n + 1];
    let mut increments = vec![0.0; n];
    let (mut sum_c, mut sum_c2, mut sum_cp, mut sum_cp2) = (0.0, 0.0, 0.0, 0.0);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(trial);
        let (mut s, mut c, mut cp) = (0.0, 0.0, 0.0);
        for t in 1..=n {
            let add = rng.gen_bool(params.p);
            let i = sampler.sample(&mut rng, add);
            if add {
                s += i;
            }
            c += s;
            cp += i;
            sizes[t] += s;
            increments[t - 1] += i;
        }
        sum_c += c;
        sum_c2 += c * c;
        sum_cp += cp;
        sum_cp2 += cp * cp;
    }
    let k = trials as f64;
    let stderr = |sum: f64, sum2: f64| {
        if trials < 2 {
            return 0.0;
        }
        let mean = sum / k;
        ((sum2 / k - mean * mean).max(0.0) * k / (k - 1.0) / k).sqrt()
    };
    let (c, c_prime) = (sum_c / k, sum_cp / k);
    Ok(CostReport {
        c,
        c_prime,
        ratio: c_prime / c,
        sizes: sizes.into_iter().map(|x| x / k).collect(),
        increments: increments.into_iter().map(|x| x / k).collect(),
        c_stderr: stderr(sum_c, sum_c2),
        c_prime_stderr: stderr(sum_cp, sum_cp2),
    })
}

/// Cumulative stored bytes after each version.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrowthSeries {
    /// Every version stored in full.
    pub full: Vec<u64>,
    /// First version in full, then increments (with the fallback rule),
    /// as measured by a content-addressed store.
    pub increment: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum GrowthError<E: std::error::Error + 'static> {
    #[error("version generator failed: {0}")]
    Generator(#[source] E),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Runs versions through the increment and blob-store pipeline.
pub fn empirical_growth<I, E>(versions: I, n: usize) -> Result<GrowthSeries, GrowthError<E>>
where
    I: IntoIterator<Item = Result<Vec<u8>, E>>,
    E: std::error::Error + 'static,
{
    let full_store = BlobStore::in_memory();
    let inc_store = BlobStore::in_memory();
    let mut out = GrowthSeries::default();
    let mut full_total = 0u64;
    let mut prev: Option<Vec<u8>> = None;
    for v in versions.into_iter().take(n) {
        let v = v.map_err(GrowthError::Generator)?;
        full_store.put_blob(&v, CodecTag::Original)?;
        full_total += v.len() as u64;
        match &prev {
            None => inc_store.put_blob(&v, CodecTag::Original)?,
            Some(old) => inc_store.put_blob(&generate_increment(old, &v).encode(), CodecTag::Increment)?,
        };
        out.full.push(full_total);
        out.increment.push(inc_store.total_bytes()?);
        prev = Some(v);
    }
    Ok(out)
}

/// Least-squares polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Coefficients, constant term first.
    pub coef: Vec<f64>,
    pub r2: f64,
}

/// Fits `y = c0 + c1 x + ... + cd x^d` by the normal equations.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Fit {
    assert_eq!(x.len(), y.len());
    let m = degree + 1;
    let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&xi, &yi) in x.iter().zip(y) {
        let xs = xi / scale;
        let pows: Vec<f64> = (0..m).map(|k| xs.powi(k as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][m] += pows[r] * yi;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        let pivot = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / d;
                for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|k| if a[k][k].abs() < 1e-300 { 0.0 } else { a[k][m] / a[k][k] / scale.powi(k as i32) }).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let pred: f64 = coef.iter().enumerate().map(|(k, c)| c * xi.powi(k as i32)).sum();
        ss_res += (yi - pred).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Fit { coef, r2 }
}

/// Synthetic text history: a `lines`-line file followed by versions that
/// each insert or replace one line.
pub fn text_lineage(seed: u64, lines: usize, versions: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc: Vec<String> = (0..lines).map(|i| format!("line {i}: {:016x}", rng.gen::<u64>())).collect();
    let render = |d: &[String]| d.iter().flat_map(|l| [l.as_bytes(), b"\n"]).flatten().copied().collect::<Vec<u8>>();
    let mut out = vec![render(&doc)];
    for v in 1..versions {
        let at = rng.gen_range(0..=doc.len());
        let line = format!("edit {v}: {:016x}", rng.gen::<u64>());
        if rng.gen_bool(0.5) || at == doc.len() {
            doc.insert(at, line);
        } else {
            doc[at] = line;
        }
        out.push(render(&doc));
    }
    out
}
