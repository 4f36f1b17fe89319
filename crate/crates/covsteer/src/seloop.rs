//! The closed selection loop: warm up on a random draw, then iterate
//! train -> score unsimulated -> select batch -> simulate -> absorb
//! coverage, until every goal is reached or the corpus is exhausted.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{CoverageError, CoverageState};
use crate::derive_seed;
use crate::duvsim::{self, DuvError, DuvParams};
use crate::encode::{self, EncodeError, Window};
use crate::selectors::{
    aggregate_test, build_selector, rank_random, rank_tests, Method, ModelHyper, NoveltyScore,
    SelectError,
};
use crate::stimgen::Test;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Duv(#[from] DuvError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Knobs of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Randomly drawn tests that bootstrap the first training round.
    pub warmup: usize,
    /// Tests selected per iteration.
    pub batch: usize,
    /// Coverage goals in percent; the loop stops at the last one.
    pub goals: Vec<f64>,
    /// Window length; defaults to the pipeline depth when unset.
    pub window_len: Option<usize>,
    /// Window stride; defaults to the window length when unset.
    pub window_step: Option<usize>,
    /// Fit the standardizer once on the warm-up set instead of refitting on
    /// all simulated tests each round.
    pub fit_once: bool,
    pub hyper: ModelHyper,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            warmup: 50,
            batch: 100,
            goals: vec![90.0, 95.0, 97.0],
            window_len: None,
            window_step: None,
            fit_once: false,
            hyper: ModelHyper::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.warmup < 1 || self.batch < 1 {
            return Err(LoopError::Config("warmup and batch must be >= 1".into()));
        }
        if self.goals.is_empty() {
            return Err(LoopError::Config("at least one coverage goal required".into()));
        }
        let mut prev = 0.0;
        for g in &self.goals {
            if *g <= prev || *g > 100.0 {
                return Err(LoopError::Config(format!(
                    "goals must be strictly increasing in (0,100], got {:?}",
                    self.goals
                )));
            }
            prev = *g;
        }
        Ok(())
    }
}

/// One loop iteration as recorded in the run history. Iteration 0 is the
/// warm-up draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub selected: Vec<u64>,
    pub tests_simulated: u64,
    pub coverage_percent: f64,
    /// Cumulative wall-clock seconds spent in selector fit/score up to and
    /// including this iteration.
    pub selector_seconds_cum: f64,
}

/// Full record of one run: per-iteration selections and coverage, the
/// tests-to-goal summary, and the selector compute time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub method: Method,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    /// Per goal: (goal percent, first checkpointed test count reaching it),
    /// None when never reached.
    pub tests_to_goal: Vec<(f64, Option<u64>)>,
    /// Wall-clock seconds spent fitting and scoring the selector.
    pub selector_seconds: f64,
}

impl RunHistory {
    /// Linearly interpolates the test count at which `goal` was crossed
    /// within its batch. Returns None when the goal was never reached.
    pub fn interpolated_tests_to_goal(&self, goal: f64) -> Option<f64> {
        let mut prev: Option<&IterationRecord> = None;
        for it in &self.iterations {
            if it.coverage_percent >= goal {
                return Some(match prev {
                    None => it.tests_simulated as f64,
                    Some(p) => {
                        let dc = it.coverage_percent - p.coverage_percent;
                        if dc <= 0.0 {
                            it.tests_simulated as f64
                        } else {
                            p.tests_simulated as f64
                                + (goal - p.coverage_percent) / dc
                                    * (it.tests_simulated - p.tests_simulated) as f64
                        }
                    }
                });
            }
            prev = Some(it);
        }
        None
    }
}

/// Draws the warm-up set: a seeded uniform sample without replacement,
/// shared across methods that use the same seed.
pub fn warmup_draw(corpus: &[Test], warmup: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "warmup", 0));
    let ids: Vec<u64> = corpus.iter().map(|t| t.test_id).collect();
    rank_random(&ids, warmup, &mut rng)
}

struct LoopState<'a> {
    corpus: &'a [Test],
    by_id: std::collections::BTreeMap<u64, &'a Test>,
    params: DuvParams,
    coverage: CoverageState,
    simulated: BTreeSet<u64>,
    history: Vec<IterationRecord>,
}

impl<'a> LoopState<'a> {
    fn simulate_batch(
        &mut self,
        ids: &[u64],
        iteration: usize,
        selector_seconds_cum: f64,
    ) -> Result<(), LoopError> {
        for id in ids {
            let test = self.by_id[id];
            let trace = duvsim::simulate(test, &self.params)?;
            let events = duvsim::coverage_events(&trace, test, &self.params);
            self.coverage.absorb(&events)?;
            self.simulated.insert(*id);
        }
        let tests_simulated = self.simulated.len() as u64;
        self.coverage.checkpoint(tests_simulated);
        self.history.push(IterationRecord {
            iteration,
            selected: ids.to_vec(),
            tests_simulated,
            coverage_percent: self.coverage.coverage_percent(),
            selector_seconds_cum,
        });
        Ok(())
    }

    fn unsimulated(&self) -> Vec<&'a Test> {
        self.corpus.iter().filter(|t| !self.simulated.contains(&t.test_id)).collect()
    }
}

/// Runs the selection loop for one method and seed over a shared corpus.
/// Progress lines go through `progress` (iteration, tests, coverage).
pub fn run(
    corpus: &[Test],
    method: Method,
    duv_params: &DuvParams,
    config: &LoopConfig,
    seed: u64,
    mut progress: impl FnMut(usize, u64, f64),
) -> Result<(RunHistory, CoverageState), LoopError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(LoopError::Config("corpus is empty".into()));
    }
    if config.warmup > corpus.len() {
        return Err(LoopError::Config(format!(
            "warmup {} larger than corpus {}",
            config.warmup,
            corpus.len()
        )));
    }
    let window_len = config.window_len.unwrap_or(duv_params.pipeline_depth as usize);
    let window_step = config.window_step.unwrap_or(window_len);
    let last_goal = *config.goals.last().expect("validated nonempty");

    let mut state = LoopState {
        corpus,
        by_id: corpus.iter().map(|t| (t.test_id, t)).collect(),
        params: *duv_params,
        coverage: CoverageState::new(duv_params),
        simulated: BTreeSet::new(),
        history: Vec::new(),
    };

    let warmup_ids = warmup_draw(corpus, config.warmup, seed);
    state.simulate_batch(&warmup_ids, 0, 0.0)?;
    progress(0, state.simulated.len() as u64, state.coverage.coverage_percent());

    let mut tie_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ties", 0));
    let mut selector_seconds = 0.0;
    let mut warmup_standardizer: Option<encode::Standardizer> = None;
    let mut iteration = 0usize;

    while state.coverage.coverage_percent() < last_goal {
        let remaining = state.unsimulated();
        if remaining.is_empty() {
            break;
        }
        iteration += 1;
        let batch = config.batch.min(remaining.len());

        let selected: Vec<u64> = match build_selector(method, &config.hyper) {
            None => {
                let ids: Vec<u64> = remaining.iter().map(|t| t.test_id).collect();
                rank_random(&ids, batch, &mut tie_rng)
            }
            Some(mut selector) => {
                let timer = Instant::now();
                let simulated_tests: Vec<&Test> =
                    corpus.iter().filter(|t| state.simulated.contains(&t.test_id)).collect();
                let standardizer = if config.fit_once {
                    match &warmup_standardizer {
                        Some(s) => s.clone(),
                        None => {
                            let s = encode::fit_standardizer(&simulated_tests)?;
                            warmup_standardizer = Some(s.clone());
                            s
                        }
                    }
                } else {
                    encode::fit_standardizer(&simulated_tests)?
                };
                let schema = encode::FeatureSchema::from_params(duv_params);

                let mut train_windows: Vec<Window> = Vec::new();
                for test in &simulated_tests {
                    train_windows.extend(encode::windows_for_test(
                        test,
                        &schema,
                        &standardizer,
                        window_len,
                        window_step,
                    )?);
                }
                let model_seed = derive_seed(seed, "model", iteration as u64);
                selector.fit(&train_windows, model_seed)?;

                let mut scores: Vec<NoveltyScore> = Vec::with_capacity(remaining.len());
                for test in &remaining {
                    let windows = encode::windows_for_test(
                        test,
                        &schema,
                        &standardizer,
                        window_len,
                        window_step,
                    )?;
                    let ws = selector.score_windows(&windows)?;
                    scores.push(aggregate_test(test.test_id, ws)?);
                }
                selector_seconds += timer.elapsed().as_secs_f64();
                rank_tests(&scores, batch, &mut tie_rng)
            }
        };

        state.simulate_batch(&selected, iteration, selector_seconds)?;
        progress(iteration, state.simulated.len() as u64, state.coverage.coverage_percent());
    }

    let tests_to_goal = config
        .goals
        .iter()
        .map(|goal| {
            let reached = state
                .history
                .iter()
                .find(|it| it.coverage_percent >= *goal)
                .map(|it| it.tests_simulated);
            (*goal, reached)
        })
        .collect();

    Ok((
        RunHistory {
            method,
            seed,
            iterations: state.history,
            tests_to_goal,
            selector_seconds,
        },
        state.coverage,
    ))
}
