//! Stimulus generation: transaction schema, sampling profiles, and
//! reproducible corpus generation with a JSONL on-disk format.
//!
//! A corpus mixes a bulk "uniform" profile with biased profiles (bursty
//! traffic, sparse data pacing) so that rare temporal coverage products exist
//! and are concentrated in a minority of tests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duvsim::DuvParams;

#[derive(Debug, Error)]
pub enum StimgenError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty corpus file: {0}")]
    EmptyCorpus(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TType {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BurstKind {
    Single,
    Incr,
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Priority {
    Low,
    High,
}

/// One bus stimulus: 5 categorical and 10 numeric attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub ttype: TType,
    pub master: u8,
    pub slave: u8,
    pub burst_kind: BurstKind,
    pub priority: Priority,
    pub burst_len: u8,
    pub addr: u16,
    pub gap: u8,
    pub w1: u8,
    pub w2: u8,
    pub w3: u8,
    pub w4: u8,
    pub data: u8,
    pub tag: u8,
    pub width: u8,
}

impl Transaction {
    /// Wait cycles for beat `i` (1-based). Beats beyond the 4 recorded waits
    /// reuse w1..w4 cyclically.
    pub fn wait_for_beat(&self, beat: usize) -> u8 {
        match (beat - 1) % 4 {
            0 => self.w1,
            1 => self.w2,
            2 => self.w3,
            _ => self.w4,
        }
    }

    pub fn waits(&self) -> [u8; 4] {
        [self.w1, self.w2, self.w3, self.w4]
    }

    /// Checks every schema invariant against the active DUV parameters.
    pub fn validate(&self, params: &DuvParams) -> Result<(), String> {
        if self.master >= params.masters {
            return Err(format!("master {} out of range [0,{})", self.master, params.masters));
        }
        if self.slave >= params.slaves {
            return Err(format!("slave {} out of range [0,{})", self.slave, params.slaves));
        }
        if self.burst_len < 1 || self.burst_len > params.max_burst {
            return Err(format!("burst_len {} out of range [1,{}]", self.burst_len, params.max_burst));
        }
        match self.burst_kind {
            BurstKind::Single if self.burst_len != 1 => {
                return Err(format!("SINGLE burst with burst_len {}", self.burst_len));
            }
            BurstKind::Wrap if ![2, 4, 8].contains(&self.burst_len) => {
                return Err(format!("WRAP burst with burst_len {}", self.burst_len));
            }
            _ => {}
        }
        if self.gap > 7 {
            return Err(format!("gap {} out of range [0,7]", self.gap));
        }
        for (i, w) in self.waits().iter().enumerate() {
            if *w > params.max_wait {
                return Err(format!("w{} = {} out of range [0,{}]", i + 1, w, params.max_wait));
            }
        }
        if self.tag > 15 {
            return Err(format!("tag {} out of range [0,15]", self.tag));
        }
        if ![1, 2, 4, 8].contains(&self.width) {
            return Err(format!("width {} not in {{1,2,4,8}}", self.width));
        }
        Ok(())
    }
}

/// An ordered stream of transactions; the atomic unit of simulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    pub test_id: u64,
    pub txns: Vec<Transaction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Uniform,
    Bursty,
    #[serde(rename = "sparse")]
    SparsePacing,
}

impl ProfileName {
    pub const ALL: [ProfileName; 3] =
        [ProfileName::Uniform, ProfileName::Bursty, ProfileName::SparsePacing];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileName::Uniform => "uniform",
            ProfileName::Bursty => "bursty",
            ProfileName::SparsePacing => "sparse",
        }
    }
}

impl std::str::FromStr for ProfileName {
    type Err = StimgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(ProfileName::Uniform),
            "bursty" => Ok(ProfileName::Bursty),
            "sparse" | "sparse_pacing" => Ok(ProfileName::SparsePacing),
            other => Err(StimgenError::Config(format!("unknown profile '{other}'"))),
        }
    }
}

/// Per-attribute sampling distributions for one generation profile.
///
/// Categorical weights must each sum to 1. Numeric attributes use weighted
/// draws over their value ranges; the wait/gap weights are where the biased
/// profiles concentrate probability mass to create rare coverage products.
#[derive(Debug, Clone, PartialEq)]
pub struct GenProfile {
    pub name: ProfileName,
    pub ttype_w: Vec<f64>,
    pub master_w: Vec<f64>,
    pub slave_w: Vec<f64>,
    pub burst_kind_w: Vec<f64>,
    pub priority_w: Vec<f64>,
    /// Weights over burst lengths 1..=max_burst for INCR bursts.
    pub incr_len_w: Vec<f64>,
    /// Weights over the legal WRAP lengths ({2,4,8} capped at max_burst).
    pub wrap_len_w: Vec<f64>,
    /// Weights over gap values 0..=7.
    pub gap_w: Vec<f64>,
    /// Weights over wait values 0..=max_wait, shared by w1..w4.
    pub wait_w: Vec<f64>,
    wrap_lens: Vec<u8>,
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for x in w.iter_mut() {
            *x /= s;
        }
    }
}

impl GenProfile {
    /// Builds the named profile for the given DUV parameter ranges.
    pub fn build(name: ProfileName, params: &DuvParams) -> GenProfile {
        let m = params.masters as usize;
        let s = params.slaves as usize;
        let nw = params.max_wait as usize + 1;
        let wrap_lens: Vec<u8> = [2u8, 4, 8].into_iter().filter(|l| *l <= params.max_burst).collect();
        let uni = |n: usize| vec![1.0 / n as f64; n];

        let mut p = match name {
            ProfileName::Uniform => GenProfile {
                name,
                ttype_w: uni(2),
                master_w: uni(m),
                slave_w: uni(s),
                burst_kind_w: vec![0.34, 0.33, 0.33],
                priority_w: uni(2),
                incr_len_w: uni(params.max_burst as usize),
                wrap_len_w: uni(wrap_lens.len().max(1)),
                gap_w: {
                    // Mostly paced traffic with an occasional back-to-back
                    // request, so shallow parallelism products stay common
                    // while deep pipelines remain rare.
                    let mut g = vec![0.9 / 7.0; 8];
                    g[0] = 0.1;
                    g
                },
                wait_w: {
                    // Wait cycles centered on 1..2; the maximum wait value is
                    // rare so heavily-stalled pacing patterns concentrate in
                    // the sparse-pacing profile.
                    let mut w = vec![0.0; nw];
                    if nw >= 4 {
                        w[0] = 0.30;
                        w[1] = 0.33;
                        w[2] = 0.33;
                        w[nw - 1] = 0.04;
                    } else {
                        w.fill(1.0 / nw as f64);
                    }
                    w
                },
                wrap_lens: wrap_lens.clone(),
            },
            ProfileName::Bursty => GenProfile {
                name,
                ttype_w: vec![0.6, 0.4],
                master_w: {
                    // A hot master issuing runs of requests drives the deep
                    // pipeline and parallelism products.
                    let mut w = vec![0.25 / (m as f64 - 1.0).max(1.0); m];
                    w[0] = if m > 1 { 0.75 } else { 1.0 };
                    w
                },
                slave_w: {
                    let mut w = uni(s);
                    if s >= 4 {
                        w = vec![0.4, 0.3, 0.2, 0.1];
                        w.extend(std::iter::repeat(0.0).take(s - 4));
                        normalize(&mut w);
                    }
                    w
                },
                burst_kind_w: vec![0.1, 0.5, 0.4],
                priority_w: vec![0.3, 0.7],
                incr_len_w: {
                    // Long bursts keep many transactions in flight at once.
                    let mut w = vec![0.0; params.max_burst as usize];
                    let lo = (params.max_burst as usize).saturating_sub(4);
                    for x in w.iter_mut().skip(lo) {
                        *x = 1.0;
                    }
                    normalize(&mut w);
                    w
                },
                wrap_len_w: uni(wrap_lens.len().max(1)),
                gap_w: {
                    let mut g = vec![0.0; 8];
                    g[0] = 0.75;
                    g[1] = 0.20;
                    g[2] = 0.05;
                    g
                },
                wait_w: {
                    let mut w = vec![0.0; nw];
                    w[0] = 0.5;
                    if nw > 1 {
                        w[1] = 0.3;
                    }
                    if nw > 2 {
                        w[2] = 0.2;
                    }
                    normalize(&mut w);
                    w
                },
                wrap_lens: wrap_lens.clone(),
            },
            ProfileName::SparsePacing => GenProfile {
                name,
                ttype_w: uni(2),
                master_w: uni(m),
                slave_w: uni(s),
                burst_kind_w: vec![0.2, 0.5, 0.3],
                priority_w: uni(2),
                incr_len_w: {
                    // Favor long bursts so all four wait slots are live.
                    let mut w = vec![1.0; params.max_burst as usize];
                    for (i, x) in w.iter_mut().enumerate() {
                        if i + 1 >= 4 {
                            *x = 2.5;
                        }
                    }
                    normalize(&mut w);
                    w
                },
                wrap_len_w: uni(wrap_lens.len().max(1)),
                gap_w: {
                    let mut g = vec![1.0; 8];
                    g[0] = 0.5;
                    g[1] = 0.5;
                    normalize(&mut g);
                    g
                },
                wait_w: {
                    // Beats almost always proceed immediately; the occasional
                    // stall is biased toward the maximum wait. Keys mixing a
                    // maximal wait with mid-range waits stay rare everywhere.
                    let mut w = vec![0.0; nw];
                    w[0] = 0.91;
                    if nw > 1 {
                        w[nw - 1] = 0.06;
                        let rest = 0.03 / (nw as f64 - 2.0).max(1.0);
                        for x in w.iter_mut().take(nw - 1).skip(1) {
                            *x = rest;
                        }
                    } else {
                        w[0] = 1.0;
                    }
                    normalize(&mut w);
                    w
                },
                wrap_lens: wrap_lens.clone(),
            },
        };
        // Guard against WRAP being sampled when no legal WRAP length exists.
        if p.wrap_lens.is_empty() {
            p.burst_kind_w[2] = 0.0;
            normalize(&mut p.burst_kind_w);
        }
        p
    }

    /// Validates that each categorical distribution sums to 1.
    pub fn validate(&self) -> Result<(), StimgenError> {
        for (attr, w) in [
            ("ttype", &self.ttype_w),
            ("master", &self.master_w),
            ("slave", &self.slave_w),
            ("burst_kind", &self.burst_kind_w),
            ("priority", &self.priority_w),
        ] {
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(StimgenError::Config(format!(
                    "profile {}: {attr} weights sum to {s}, expected 1",
                    self.name.as_str()
                )));
            }
        }
        Ok(())
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn sample_txn(rng: &mut ChaCha8Rng, profile: &GenProfile) -> Transaction {
    let ttype = if weighted_pick(rng, &profile.ttype_w) == 0 { TType::Read } else { TType::Write };
    let master = weighted_pick(rng, &profile.master_w) as u8;
    let slave = weighted_pick(rng, &profile.slave_w) as u8;
    let burst_kind = match weighted_pick(rng, &profile.burst_kind_w) {
        0 => BurstKind::Single,
        1 => BurstKind::Incr,
        _ => BurstKind::Wrap,
    };
    let burst_len = match burst_kind {
        BurstKind::Single => 1,
        BurstKind::Incr => weighted_pick(rng, &profile.incr_len_w) as u8 + 1,
        BurstKind::Wrap => profile.wrap_lens[weighted_pick(rng, &profile.wrap_len_w)],
    };
    let priority = if weighted_pick(rng, &profile.priority_w) == 0 { Priority::Low } else { Priority::High };
    let gap = weighted_pick(rng, &profile.gap_w) as u8;
    let w1 = weighted_pick(rng, &profile.wait_w) as u8;
    let w2 = weighted_pick(rng, &profile.wait_w) as u8;
    let w3 = weighted_pick(rng, &profile.wait_w) as u8;
    let w4 = weighted_pick(rng, &profile.wait_w) as u8;
    let addr = rng.gen_range(0..=65535u16);
    let data = rng.gen_range(0..=255u8);
    let tag = rng.gen_range(0..=15u8);
    let width = [1u8, 2, 4, 8][rng.gen_range(0..4usize)];
    Transaction {
        ttype,
        master,
        slave,
        burst_kind,
        priority,
        burst_len,
        addr,
        gap,
        w1,
        w2,
        w3,
        w4,
        data,
        tag,
        width,
    }
}

/// Generates one test deterministically from `(seed, profile, len_range)`.
pub fn gen_test(
    seed: u64,
    profile: &GenProfile,
    params: &DuvParams,
    len_range: (usize, usize),
) -> Result<Test, StimgenError> {
    let (lo, hi) = len_range;
    if lo < 1 || lo > hi {
        return Err(StimgenError::Config(format!("invalid len_range [{lo},{hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(lo..=hi);
    let txns = (0..len).map(|_| sample_txn(&mut rng, profile, params)).collect();
    Ok(Test { test_id: 0, txns })
}

/// Largest-remainder apportionment of `n` tests over profile fractions.
/// Ties between equal remainders resolve in canonical profile order.
pub fn largest_remainder_counts(
    n: usize,
    mix: &BTreeMap<ProfileName, f64>,
) -> Result<Vec<(ProfileName, usize)>, StimgenError> {
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(StimgenError::Config(format!("profile fractions sum to {total}, expected 1")));
    }
    let mut rows: Vec<(ProfileName, f64)> = ProfileName::ALL
        .iter()
        .filter_map(|p| mix.get(p).map(|f| (*p, *f)))
        .collect();
    rows.retain(|(_, f)| *f > 0.0);
    if rows.is_empty() {
        return Err(StimgenError::Config("empty profile mix".into()));
    }
    let mut counts: Vec<(ProfileName, usize)> =
        rows.iter().map(|(p, f)| (*p, (f * n as f64).floor() as usize)).collect();
    let assigned: usize = counts.iter().map(|(_, c)| c).sum();
    let mut leftover = n - assigned;
    // Sort candidate indices by remainder descending, canonical order on ties.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = rows[a].1 * n as f64 - counts[a].1 as f64;
        let rb = rows[b].1 * n as f64 - counts[b].1 as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut k = 0;
    while leftover > 0 {
        counts[order[k % order.len()]].1 += 1;
        leftover -= 1;
        k += 1;
    }
    Ok(counts)
}

/// Generates a reproducible mixed corpus with ids `0..n_tests`.
pub fn gen_corpus(
    seed: u64,
    n_tests: usize,
    mix: &BTreeMap<ProfileName, f64>,
    params: &DuvParams,
    len_range: (usize, usize),
) -> Result<Vec<Test>, StimgenError> {
    if n_tests == 0 {
        return Err(StimgenError::Config("empty corpus rejected: n_tests must be >= 1".into()));
    }
    let counts = largest_remainder_counts(n_tests, mix)?;
    let mut master_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_tests);
    let mut next_id: u64 = 0;
    for (name, count) in counts {
        let profile = GenProfile::build(name, params);
        profile.validate()?;
        for _ in 0..count {
            let test_seed: u64 = master_rng.gen();
            let mut t = gen_test(test_seed, &profile, params, len_range)?;
            t.test_id = next_id;
            next_id += 1;
            corpus.push(t);
        }
    }
    Ok(corpus)
}

/// Writes one JSON object per line: `{"test_id":…,"txns":[…]}`.
pub fn save_corpus(corpus: &[Test], path: &Path) -> Result<(), StimgenError> {
    let mut out = BufWriter::new(File::create(path)?);
    for test in corpus {
        serde_json::to_writer(&mut out, test)
            .map_err(|e| StimgenError::Config(format!("serialize test {}: {e}", test.test_id)))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL corpus; parse failures name the 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<Test>, StimgenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut corpus = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let test: Test = serde_json::from_str(&line)
            .map_err(|e| StimgenError::Parse { line: idx + 1, msg: e.to_string() })?;
        if test.txns.is_empty() {
            return Err(StimgenError::Parse { line: idx + 1, msg: "test with no transactions".into() });
        }
        corpus.push(test);
    }
    if corpus.is_empty() {
        return Err(StimgenError::EmptyCorpus(path.display().to_string()));
    }
    Ok(corpus)
}
