//! Hit-count tracking over the cross-coverage product universe.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::duvsim::{enumerate_products, CoverageGroup, CoverageKey, DuvParams};

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("coverage key outside universe: {0}")]
    UnknownKey(String),
}

/// Hit counts over a fixed product universe plus the coverage-progress
/// checkpoints recorded as tests are absorbed.
#[derive(Debug, Clone)]
pub struct CoverageState {
    hits: BTreeMap<CoverageKey, u64>,
    covered: usize,
    /// (tests_simulated, coverage_percent) checkpoints, nondecreasing.
    pub checkpoints: Vec<(u64, f64)>,
}

impl CoverageState {
    pub fn new(params: &DuvParams) -> CoverageState {
        let hits = enumerate_products(params).into_iter().map(|k| (k, 0)).collect();
        CoverageState { hits, covered: 0, checkpoints: Vec::new() }
    }

    pub fn universe_size(&self) -> usize {
        self.hits.len()
    }

    pub fn covered(&self) -> usize {
        self.covered
    }

    /// Increments each event's hit count by one.
    pub fn absorb(&mut self, events: &[CoverageKey]) -> Result<(), CoverageError> {
        for event in events {
            match self.hits.get_mut(event) {
                Some(count) => {
                    if *count == 0 {
                        self.covered += 1;
                    }
                    *count += 1;
                }
                None => return Err(CoverageError::UnknownKey(event.to_string())),
            }
        }
        Ok(())
    }

    pub fn coverage_percent(&self) -> f64 {
        if self.hits.is_empty() {
            return 0.0;
        }
        100.0 * self.covered as f64 / self.hits.len() as f64
    }

    /// Unhit keys in canonical order.
    pub fn remaining(&self) -> Vec<&CoverageKey> {
        self.hits.iter().filter(|(_, c)| **c == 0).map(|(k, _)| k).collect()
    }

    pub fn hit_count(&self, key: &CoverageKey) -> Option<u64> {
        self.hits.get(key).copied()
    }

    /// (covered, total) for one coverage group.
    pub fn group_progress(&self, group: CoverageGroup) -> (usize, usize) {
        let mut covered = 0;
        let mut total = 0;
        for (key, count) in &self.hits {
            if key.group() == group {
                total += 1;
                if *count > 0 {
                    covered += 1;
                }
            }
        }
        (covered, total)
    }

    /// Records a (tests_simulated, coverage_percent) checkpoint.
    pub fn checkpoint(&mut self, tests_simulated: u64) {
        self.checkpoints.push((tests_simulated, self.coverage_percent()));
    }
}
