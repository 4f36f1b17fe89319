//! Transaction-level model of a pipelined bus crossbar ("MiniSRI").
//!
//! Turns a test into a deterministic schedule trace and cross-coverage
//! events over three groups: per-slave pipeline request patterns, in-flight
//! parallelism shapes, and per-burst data pacing. Semantics are
//! transaction-level: each slave owns a FIFO pipeline of depth `D`; a
//! transaction occupies a slot from its start cycle to its end cycle.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimgen::{BurstKind, TType, Test, Transaction};

#[derive(Debug, Error)]
pub enum DuvError {
    #[error("transaction {index} invalid: {reason}")]
    InvalidTransaction { index: usize, reason: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Crossbar dimensions and stimulus ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuvParams {
    /// Master count M.
    pub masters: u8,
    /// Slave count S.
    pub slaves: u8,
    /// Per-slave pipeline depth D.
    pub pipeline_depth: u8,
    /// Maximum per-beat wait W.
    pub max_wait: u8,
    /// Maximum burst length B.
    pub max_burst: u8,
}

impl Default for DuvParams {
    fn default() -> Self {
        DuvParams { masters: 4, slaves: 4, pipeline_depth: 3, max_wait: 3, max_burst: 8 }
    }
}

impl DuvParams {
    pub fn validate(&self) -> Result<(), DuvError> {
        if self.masters < 1 || self.slaves < 1 || self.pipeline_depth < 1 || self.max_burst < 1 {
            return Err(DuvError::InvalidParams("all dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cycle-level schedule for one test, one entry per transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub request: u64,
    pub start: u64,
    pub end: u64,
    /// (master, slave) of every transaction in flight at this start cycle,
    /// in request order, including this one. Only earlier-requested
    /// transactions are visible.
    pub in_flight: Vec<(u8, u8)>,
}

/// Equality partition of three consecutive masters, canonicalized so the
/// first distinct master is A, the second B, the third C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MasterPartition {
    Aaa,
    Aab,
    Aba,
    Abb,
    Abc,
}

impl MasterPartition {
    pub fn of(m: [u8; 3]) -> MasterPartition {
        match (m[0] == m[1], m[0] == m[2], m[1] == m[2]) {
            (true, true, true) => MasterPartition::Aaa,
            (true, false, false) => MasterPartition::Aab,
            (false, true, false) => MasterPartition::Aba,
            (false, false, true) => MasterPartition::Abb,
            _ => MasterPartition::Abc,
        }
    }

    /// Number of distinct masters this partition requires.
    pub fn distinct(&self) -> u8 {
        match self {
            MasterPartition::Aaa => 1,
            MasterPartition::Abc => 3,
            _ => 2,
        }
    }

    pub const ALL: [MasterPartition; 5] = [
        MasterPartition::Aaa,
        MasterPartition::Aab,
        MasterPartition::Aba,
        MasterPartition::Abb,
        MasterPartition::Abc,
    ];

    fn as_str(&self) -> &'static str {
        match self {
            MasterPartition::Aaa => "AAA",
            MasterPartition::Aab => "AAB",
            MasterPartition::Aba => "ABA",
            MasterPartition::Abb => "ABB",
            MasterPartition::Abc => "ABC",
        }
    }
}

/// One cross-coverage product key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoverageKey {
    /// (slave, R/W pattern of the last 3 requests to it, master partition).
    Pipeline { slave: u8, types: [TType; 3], partition: MasterPartition },
    /// (in-flight count clamped to 8, distinct masters, distinct slaves).
    Parallelism { in_flight: u8, masters: u8, slaves: u8 },
    /// (burst kind, length bucket min(len,4), per-beat waits with -1 beyond
    /// the burst length).
    Pacing { kind: BurstKind, len_bucket: u8, waits: [i8; 4] },
}

impl fmt::Display for CoverageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoverageKey::Pipeline { slave, types, partition } => {
                let t: String = types
                    .iter()
                    .map(|t| if *t == TType::Read { 'R' } else { 'W' })
                    .collect();
                write!(f, "PIPELINE:{slave}:{t}:{}", partition.as_str())
            }
            CoverageKey::Parallelism { in_flight, masters, slaves } => {
                write!(f, "PARALLELISM:{in_flight}:{masters}:{slaves}")
            }
            CoverageKey::Pacing { kind, len_bucket, waits } => {
                let k = match kind {
                    BurstKind::Single => "SINGLE",
                    BurstKind::Incr => "INCR",
                    BurstKind::Wrap => "WRAP",
                };
                write!(
                    f,
                    "PACING:{k}:{len_bucket}:{},{},{},{}",
                    waits[0], waits[1], waits[2], waits[3]
                )
            }
        }
    }
}

impl std::str::FromStr for CoverageKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("malformed coverage key '{s}'");
        match parts.as_slice() {
            ["PIPELINE", slave, types, partition] => {
                let slave = slave.parse::<u8>().map_err(|_| bad())?;
                if types.len() != 3 {
                    return Err(bad());
                }
                let mut t = [TType::Read; 3];
                for (i, c) in types.chars().enumerate() {
                    t[i] = match c {
                        'R' => TType::Read,
                        'W' => TType::Write,
                        _ => return Err(bad()),
                    };
                }
                let partition = MasterPartition::ALL
                    .iter()
                    .find(|p| p.as_str() == *partition)
                    .copied()
                    .ok_or_else(bad)?;
                Ok(CoverageKey::Pipeline { slave, types: t, partition })
            }
            ["PARALLELISM", f, m, sl] => Ok(CoverageKey::Parallelism {
                in_flight: f.parse().map_err(|_| bad())?,
                masters: m.parse().map_err(|_| bad())?,
                slaves: sl.parse().map_err(|_| bad())?,
            }),
            ["PACING", kind, bucket, waits] => {
                let kind = match *kind {
                    "SINGLE" => BurstKind::Single,
                    "INCR" => BurstKind::Incr,
                    "WRAP" => BurstKind::Wrap,
                    _ => return Err(bad()),
                };
                let len_bucket = bucket.parse::<u8>().map_err(|_| bad())?;
                let ws: Vec<i8> =
                    waits.split(',').map(|w| w.parse::<i8>().map_err(|_| bad())).collect::<Result<_, _>>()?;
                if ws.len() != 4 {
                    return Err(bad());
                }
                Ok(CoverageKey::Pacing { kind, len_bucket, waits: [ws[0], ws[1], ws[2], ws[3]] })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CoverageGroup {
    Pipeline,
    Parallelism,
    Pacing,
}

impl CoverageKey {
    pub fn group(&self) -> CoverageGroup {
        match self {
            CoverageKey::Pipeline { .. } => CoverageGroup::Pipeline,
            CoverageKey::Parallelism { .. } => CoverageGroup::Parallelism,
            CoverageKey::Pacing { .. } => CoverageGroup::Pacing,
        }
    }
}

/// Total cycles a transaction occupies its pipeline slot: one cycle per beat
/// plus that beat's wait cycles.
pub fn duration(txn: &Transaction) -> u64 {
    (1..=txn.burst_len as usize).map(|beat| 1 + txn.wait_for_beat(beat) as u64).sum()
}

/// Schedules a test through the crossbar.
///
/// Requests arrive at the cumulative gap offsets. A transaction starts at
/// the earliest cycle at or after its request where its slave holds fewer
/// than `D` in-flight transactions; queueing at a full slave is FIFO in
/// request order.
pub fn simulate(test: &Test, params: &DuvParams) -> Result<ScheduleTrace, DuvError> {
    params.validate()?;
    for (index, txn) in test.txns.iter().enumerate() {
        txn.validate(params)
            .map_err(|reason| DuvError::InvalidTransaction { index, reason })?;
    }

    let depth = params.pipeline_depth as usize;
    let mut entries: Vec<TraceEntry> = Vec::with_capacity(test.txns.len());
    let mut request = 0u64;
    for txn in &test.txns {
        request += txn.gap as u64;
        // Find the earliest start >= request with a free slot at this slave.
        let mut start = request;
        loop {
            let mut in_flight_ends: Vec<u64> = entries
                .iter()
                .zip(test.txns.iter())
                .filter(|(e, t)| t.slave == txn.slave && e.start <= start && start < e.end)
                .map(|(e, _)| e.end)
                .collect();
            if in_flight_ends.len() < depth {
                break;
            }
            in_flight_ends.sort_unstable();
            start = in_flight_ends[0];
        }
        let end = start + duration(txn);
        let mut in_flight: Vec<(u8, u8)> = entries
            .iter()
            .zip(test.txns.iter())
            .filter(|(e, _)| e.start <= start && start < e.end)
            .map(|(_, t)| (t.master, t.slave))
            .collect();
        in_flight.push((txn.master, txn.slave));
        entries.push(TraceEntry { request, start, end, in_flight });
    }
    Ok(ScheduleTrace { entries })
}

/// Extracts the coverage events a trace produces, in request order.
pub fn coverage_events(
    trace: &ScheduleTrace,
    test: &Test,
    params: &DuvParams,
) -> Vec<CoverageKey> {
    let mut events = Vec::new();
    // Per-slave request history of (type, master).
    let mut history: Vec<Vec<(TType, u8)>> = vec![Vec::new(); params.slaves as usize];

    for (k, txn) in test.txns.iter().enumerate() {
        let h = &mut history[txn.slave as usize];
        h.push((txn.ttype, txn.master));
        if h.len() >= 3 {
            let last3 = &h[h.len() - 3..];
            events.push(CoverageKey::Pipeline {
                slave: txn.slave,
                types: [last3[0].0, last3[1].0, last3[2].0],
                partition: MasterPartition::of([last3[0].1, last3[1].1, last3[2].1]),
            });
        }

        let flight = &trace.entries[k].in_flight;
        let distinct_masters =
            flight.iter().map(|(m, _)| m).collect::<BTreeSet<_>>().len() as u8;
        let distinct_slaves =
            flight.iter().map(|(_, s)| s).collect::<BTreeSet<_>>().len() as u8;
        events.push(CoverageKey::Parallelism {
            in_flight: (flight.len() as u8).min(8),
            masters: distinct_masters,
            slaves: distinct_slaves,
        });

        let mut waits = [-1i8; 4];
        for (i, w) in waits.iter_mut().enumerate() {
            if i < txn.burst_len as usize {
                *w = txn.waits()[i] as i8;
            }
        }
        events.push(CoverageKey::Pacing {
            kind: txn.burst_kind,
            len_bucket: txn.burst_len.min(4),
            waits,
        });
    }
    events
}

fn wait_combos(live: usize, max_wait: u8, out: &mut BTreeSet<[i8; 4]>) {
    let values = 0..=(max_wait as i8);
    let mut stack = vec![[-1i8; 4]];
    for slot in 0..live {
        let mut next = Vec::new();
        for combo in &stack {
            for v in values.clone() {
                let mut c = *combo;
                c[slot] = v;
                next.push(c);
            }
        }
        stack = next;
    }
    out.extend(stack);
}

/// Enumerates every coverage key reachable under the key rules.
pub fn enumerate_products(params: &DuvParams) -> BTreeSet<CoverageKey> {
    let mut universe = BTreeSet::new();

    // PIPELINE: every (slave, type pattern, partition) whose partition fits
    // within the master count.
    for slave in 0..params.slaves {
        for bits in 0..8u8 {
            let types = [
                if bits & 4 == 0 { TType::Read } else { TType::Write },
                if bits & 2 == 0 { TType::Read } else { TType::Write },
                if bits & 1 == 0 { TType::Read } else { TType::Write },
            ];
            for partition in MasterPartition::ALL {
                if partition.distinct() <= params.masters {
                    universe.insert(CoverageKey::Pipeline { slave, types, partition });
                }
            }
        }
    }

    // PARALLELISM: (clamped count, distinct masters, distinct slaves) is
    // feasible iff some real count f satisfies ds <= f <= ds*D and dm <= f:
    // each of the ds slaves holds at most D of the f transactions, and any
    // number of distinct masters up to min(f, M) can issue them.
    let d = params.pipeline_depth as u32;
    for ds in 1..=params.slaves as u32 {
        for f in ds..=(ds * d) {
            for dm in 1..=(f.min(params.masters as u32)) {
                universe.insert(CoverageKey::Parallelism {
                    in_flight: (f as u8).min(8),
                    masters: dm as u8,
                    slaves: ds as u8,
                });
            }
        }
    }

    // PACING: buckets follow from the legal burst lengths per kind; a bucket
    // below 4 has exactly that many live wait slots, bucket 4 has all four.
    let mut pacing = |kind: BurstKind, lens: &[u8]| {
        let mut buckets = BTreeSet::new();
        for len in lens {
            buckets.insert(len.min(&4));
        }
        for bucket in buckets {
            let mut combos = BTreeSet::new();
            wait_combos(*bucket as usize, params.max_wait, &mut combos);
            for waits in combos {
                universe.insert(CoverageKey::Pacing { kind, len_bucket: *bucket, waits });
            }
        }
    };
    pacing(BurstKind::Single, &[1]);
    let incr_lens: Vec<u8> = (1..=params.max_burst).collect();
    pacing(BurstKind::Incr, &incr_lens);
    let wrap_lens: Vec<u8> = [2u8, 4, 8].into_iter().filter(|l| *l <= params.max_burst).collect();
    if !wrap_lens.is_empty() {
        pacing(BurstKind::Wrap, &wrap_lens);
    }

    universe
}
