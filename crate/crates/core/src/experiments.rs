//! Desk-scale experiments: storage growth, the cost model and consensus
//! under faults. Each produces delimited tables and a list of pass/fail
//! checks.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costmodel::{closed_form, empirical_growth, monte_carlo, polyfit, text_lineage, CostParams};
use crate::increment::{generate_increment, FULL_FILE_OVERHEAD};
use crate::node::{Behavior, Rounds};
use crate::simnet::{check_agreement, commit_lags, DelayModel, Sim, SimConfig};

/// One pass/fail line.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub name: String,
    /// File name and tab-separated contents.
    pub tables: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// One line per check, then an `overall` line.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        let _ = writeln!(s, "overall {} {}", self.name, if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

pub const EXPERIMENTS: [&str; 3] = ["storage-growth", "cost-model", "consensus-faults"];

/// Runs an experiment by name with default sizes.
pub fn run(name: &str, seed: u64) -> Option<Report> {
    match name {
        "storage-growth" => Some(storage_growth(seed)),
        "cost-model" => Some(cost_model(seed)),
        "consensus-faults" => Some(consensus_faults(seed, &FaultPlan::default())),
        _ => None,
    }
}

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut b = vec![0u8; len];
    rng.fill_bytes(&mut b);
    b
}

/// Fallback on independent random binaries of `len` bytes.
pub fn fallback_check(seed: u64, pairs: usize, len: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0usize;
    let mut all_full = true;
    for _ in 0..pairs {
        let a = random_bytes(&mut rng, len);
        let b = random_bytes(&mut rng, len);
        let inc = generate_increment(&a, &b);
        all_full &= inc.is_full_file();
        worst = worst.max(inc.encode().len() - b.len());
    }
    Check::new(
        "fallback",
        all_full && worst <= 16,
        format!("{pairs} pairs of {len} bytes, full_file={all_full}, max overhead {worst} bytes (<= 16, container {FULL_FILE_OVERHEAD})"),
    )
}

/// 100-version synthetic text lineage with one-line edits.
pub fn storage_growth(seed: u64) -> Report {
    let versions = 100;
    let lineage = text_lineage(seed, 1000, versions);
    let g = empirical_growth(lineage.into_iter().map(Ok::<_, Infallible>), versions).expect("in-memory store");
    let x: Vec<f64> = (1..=versions).map(|v| v as f64).collect();
    let full: Vec<f64> = g.full.iter().map(|&b| b as f64).collect();
    let inc: Vec<f64> = g.increment.iter().map(|&b| b as f64).collect();
    let quad = polyfit(&x, &full, 2);
    let lin = polyfit(&x, &inc, 1);
    let ratio = inc[versions - 1] / full[versions - 1];

    let mut table = String::from("version\tfull_bytes\tincrement_bytes\n");
    for (i, (f, c)) in g.full.iter().zip(&g.increment).enumerate() {
        let _ = writeln!(table, "{}\t{f}\t{c}", i + 1);
    }
    let fits = format!(
        "series\tdegree\tr2\tcoefficients\nfull\t2\t{:.6}\t{:?}\nincrement\t1\t{:.6}\t{:?}\n",
        quad.r2, quad.coef, lin.r2, lin.coef
    );
    Report {
        name: "storage-growth".into(),
        tables: vec![("storage_growth.tsv".into(), table), ("storage_growth_fits.tsv".into(), fits)],
        checks: vec![
            Check::new("full-store-quadratic", quad.r2 > 0.99, format!("R2 {:.6} > 0.99", quad.r2)),
            Check::new("increment-store-linear", lin.r2 > 0.95, format!("R2 {:.6} > 0.95", lin.r2)),
            Check::new("final-ratio", ratio < 0.1, format!("increment/full {ratio:.5} < 0.1")),
            fallback_check(seed, 4, 1 << 20),
        ],
    }
}

/// Closed form against Monte Carlo, plus the 1/n band.
pub fn cost_model(seed: u64) -> Report {
    let base = CostParams::new(10, 0.1, 100.0, 1.0).with_seed(seed);
    let w = base.rev_weight();
    let (low, high) = (1.0, 2.0 * (1.0 + w));
    let mut table =
        String::from("n\tp\tmean_add\tmean_rev\tC\tC_prime\tratio\tratio_n\tmc_trials\tmc_C\tmc_C_prime\tmc_C_err\tmc_C_prime_err\n");
    let mut checks = Vec::new();
    let mut band = Vec::new();
    for (n, trials) in [(10u64, 100_000u64), (100, 10_000), (1000, 1_000)] {
        let params = CostParams { n, ..base };
        let cf = closed_form(&params).expect("valid params");
        let mc = monte_carlo(&params, trials).expect("valid params");
        let (ec, ecp) = ((mc.c - cf.c).abs() / cf.c, (mc.c_prime - cf.c_prime).abs() / cf.c_prime);
        let _ = writeln!(
            table,
            "{n}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.4}\t{trials}\t{:.3}\t{:.3}\t{ec:.5}\t{ecp:.5}",
            params.p,
            params.mean_add,
            params.mean_rev,
            cf.c,
            cf.c_prime,
            cf.ratio,
            cf.ratio * n as f64,
            mc.c,
            mc.c_prime
        );
        if n == 10 {
            checks.push(Check::new(
                "closed-form-n10",
                cf.c == 550.0 && cf.c_prime == 109.0,
                format!("C={} C'={} ratio={:.5}", cf.c, cf.c_prime, cf.ratio),
            ));
            checks.push(Check::new(
                "monte-carlo-n10",
                ec < 0.02 && ecp < 0.02,
                format!("{trials} trials, rel err C {ec:.5}, C' {ecp:.5} (< 0.02)"),
            ));
        }
        band.push((n, cf.ratio * n as f64, mc.ratio * n as f64));
    }
    let in_band = band.iter().all(|&(_, a, b)| (low..=high).contains(&a) && (low..=high).contains(&b));
    let detail = band.iter().map(|(n, a, b)| format!("n={n}: {a:.4}/{b:.4}")).collect::<Vec<_>>().join(", ");
    checks.push(Check::new("ratio-n-band", in_band, format!("closed/mc ratio*n in [{low}, {high:.2}]: {detail}")));
    Report { name: "cost-model".into(), tables: vec![("cost_model.tsv".into(), table)], checks }
}

/// Sizes of the consensus fault matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultPlan {
    pub safety_runs: u64,
    pub safety_rounds: u64,
    pub max_delay_rounds: u64,
    pub liveness_seeds: u64,
    pub liveness_rounds: u64,
    pub lag_bound: u64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan { safety_runs: 200, safety_rounds: 24, max_delay_rounds: 5, liveness_seeds: 50, liveness_rounds: 40, lag_bound: 8 }
    }
}

/// Safety under equivocation with random delays, and commit latency under
/// synchronous crash faults.
pub fn consensus_faults(seed: u64, plan: &FaultPlan) -> Report {
    let mut safety = String::from("run\tseed\tequivocator\tmax_delay_rounds\tagreement\tmin_commits\tfailures\n");
    let mut bad_runs = Vec::new();
    for run in 0..plan.safety_runs {
        let s = seed.wrapping_add(run);
        let equivocator = (run % 4) as u32;
        let delay = 1 + run % plan.max_delay_rounds.max(1);
        let mut cfg = SimConfig::new(4, 1, s)
            .with_delay(DelayModel::Uniform { max_rounds: delay })
            .with_fault(equivocator, Behavior { equivocate: Some(Rounds::All), ..Behavior::honest() });
        cfg.record_messages = false;
        let mut sim = Sim::new(cfg).expect("valid config");
        sim.run_rounds(plan.safety_rounds);
        let t = sim.transcript();
        let v = check_agreement(&t);
        let min_commits = t.nodes().iter().filter(|n| n.honest).map(|n| n.committed.len()).min().unwrap_or(0);
        let _ = writeln!(safety, "{run}\t{s}\t{equivocator}\t{delay}\t{}\t{min_commits}\t{}", v.ok(), v.failures.join("; "));
        if !v.ok() {
            bad_runs.push(run);
        }
    }

    let mut liveness = String::from("seed\tcrashed\tcrash_round\tmeasured\tuncommitted\tmax_lag\n");
    let mut hist: BTreeMap<u64, usize> = BTreeMap::new();
    let (mut worst, mut over, mut uncommitted, mut measured) = (0u64, 0usize, 0usize, 0usize);
    for i in 0..plan.liveness_seeds {
        let s = seed.wrapping_add(10_000 + i);
        let mut cfg = SimConfig::new(4, 1, s);
        // Every fifth seed runs without faults.
        let crash = (i % 5 != 4).then(|| ((i % 4) as u32, 2 + i % 10));
        if let Some((node, round)) = crash {
            cfg = cfg.with_fault(node, Behavior { crash_at_round: Some(round), ..Behavior::honest() });
        }
        cfg.record_messages = false;
        let mut sim = Sim::new(cfg).expect("valid config");
        sim.run_rounds(plan.liveness_rounds);
        let lags: Vec<_> =
            commit_lags(&sim.transcript()).into_iter().filter(|l| l.observer_final_round >= l.inserted_at + plan.lag_bound).collect();
        let missing = lags.iter().filter(|l| l.committed_at.is_none()).count();
        let max = lags.iter().map(|l| l.rounds()).max().unwrap_or(0);
        for l in &lags {
            *hist.entry(l.rounds()).or_default() += 1;
        }
        over += lags.iter().filter(|l| l.rounds() > plan.lag_bound).count();
        uncommitted += missing;
        measured += lags.len();
        worst = worst.max(max);
        let (cn, cr) = crash.map_or(("-".to_string(), "-".to_string()), |(n, r)| (n.to_string(), r.to_string()));
        let _ = writeln!(liveness, "{s}\t{cn}\t{cr}\t{}\t{missing}\t{max}", lags.len());
    }
    let mut lag_table = String::from("lag_rounds\tcount\n");
    for (lag, count) in &hist {
        let _ = writeln!(lag_table, "{lag}\t{count}");
    }

    Report {
        name: "consensus-faults".into(),
        tables: vec![
            ("consensus_safety.tsv".into(), safety),
            ("consensus_liveness.tsv".into(), liveness),
            ("consensus_lag_histogram.tsv".into(), lag_table),
        ],
        checks: vec![
            Check::new(
                "safety",
                bad_runs.is_empty(),
                format!(
                    "{} runs, N=4 f=1, one equivocator, delays <= {} rounds, agreement violated in {} {:?}",
                    plan.safety_runs,
                    plan.max_delay_rounds,
                    bad_runs.len(),
                    bad_runs
                ),
            ),
            Check::new(
                "liveness",
                over == 0 && uncommitted == 0,
                format!(
                    "{} seeds, {measured} (observer, vertex) pairs, {over} over {} rounds, {uncommitted} uncommitted, max lag {worst}",
                    plan.liveness_seeds, plan.lag_bound
                ),
            ),
        ],
    }
}
