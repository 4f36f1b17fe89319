//! The five test-selection strategies behind one interface, plus the
//! aggregation from per-window novelty scores to per-test scores.
//!
//! Sequence models (LSTM autoencoder, transformer encoder) score a window by
//! its mean per-position reconstruction error; the flat autoencoder scores
//! the flattened window; the isolation forest scores by path length. A
//! test's score is the mean of its squared window scores, which favors
//! tests holding a few strongly novel windows over uniformly mild ones.

mod flat_ae;
mod iforest;
mod lstm;
mod net;
mod transformer;

pub use flat_ae::FlatAutoencoder;
pub use iforest::IsolationForest;
pub use lstm::LstmAutoencoder;
pub use transformer::{positional_encoding, TransformerEncoder};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::Window;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("selector '{0}' used before fit")]
    Unfitted(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot aggregate an empty window-score group")]
    EmptyGroup,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Test-selection method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RD")]
    Rd,
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "IF")]
    If,
    #[serde(rename = "TE")]
    Te,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rd, Method::Ae, Method::If, Method::Te, Method::Lstm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Rd => "RD",
            Method::Ae => "AE",
            Method::If => "IF",
            Method::Te => "TE",
            Method::Lstm => "LSTM",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RD" => Ok(Method::Rd),
            "AE" => Ok(Method::Ae),
            "IF" => Ok(Method::If),
            "TE" => Ok(Method::Te),
            "LSTM" => Ok(Method::Lstm),
            other => Err(SelectError::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Model hyperparameters. Layer widths follow the proportional rule: each
/// hidden layer is twice, half, or the same as its predecessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub ffn_dim: usize,
    /// LSTM hidden width; derived as ceil(F/2) when unset.
    pub lstm_hidden: Option<usize>,
    /// Flat-autoencoder hidden widths (encoder side, mirrored); derived as
    /// [2F, F, ceil(F/2)] when unset.
    pub ae_hidden: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub trees: usize,
    pub subsample: usize,
    pub dropout: f64,
    pub dropout_enabled: bool,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            d_model: 32,
            heads: 2,
            enc_layers: 2,
            ffn_dim: 64,
            lstm_hidden: None,
            ae_hidden: None,
            epochs: 20,
            batch: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            trees: 100,
            subsample: 256,
            dropout: 0.1,
            dropout_enabled: true,
        }
    }
}

impl ModelHyper {
    pub fn lstm_hidden_for(&self, feature_dim: usize) -> usize {
        self.lstm_hidden.unwrap_or((feature_dim + 1) / 2)
    }

    pub fn ae_hidden_for(&self, feature_dim: usize) -> Vec<usize> {
        self.ae_hidden
            .clone()
            .unwrap_or_else(|| vec![2 * feature_dim, feature_dim, (feature_dim + 1) / 2])
    }

    pub fn validate(&self, feature_dim: usize) -> Result<(), SelectError> {
        if self.d_model % self.heads != 0 {
            return Err(SelectError::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        let proportional = |a: usize, b: usize| b == 2 * a || b == a || 2 * b == a || 2 * b == a + 1;
        let chain = self.ae_hidden_for(feature_dim);
        for pair in chain.windows(2) {
            if !proportional(pair[0], pair[1]) {
                return Err(SelectError::Config(format!(
                    "hidden widths {} -> {} violate the proportional rule",
                    pair[0], pair[1]
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SelectError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.epochs == 0 || self.batch == 0 || self.trees == 0 || self.subsample == 0 {
            return Err(SelectError::Config("epochs, batch, trees, subsample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Novelty score for one test: per-window scores and their Eq-style
/// aggregate (mean of squared window scores).
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyScore {
    pub test_id: u64,
    pub window_scores: Vec<f64>,
    pub s_test: f64,
}

/// Aggregates window scores into a test score: `s_test = sum(s_j^2) / n`.
pub fn aggregate_test(test_id: u64, window_scores: Vec<f64>) -> Result<NoveltyScore, SelectError> {
    if window_scores.is_empty() {
        return Err(SelectError::EmptyGroup);
    }
    let n = window_scores.len() as f64;
    let s_test = window_scores.iter().map(|s| s * s).sum::<f64>() / n;
    Ok(NoveltyScore { test_id, window_scores, s_test })
}

/// Orders tests by descending aggregate score and returns the top `batch`
/// ids (or all remaining when fewer are left). Ties break by a uniform
/// random draw; with all-equal scores this is a uniform random permutation.
pub fn rank_tests(scores: &[NoveltyScore], batch: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    assert!(batch >= 1, "batch must be >= 1");
    let mut rows: Vec<(&NoveltyScore, u64)> = {
        let mut sorted: Vec<&NoveltyScore> = scores.iter().collect();
        sorted.sort_by_key(|s| s.test_id);
        sorted.into_iter().map(|s| (s, rng.gen::<u64>())).collect()
    };
    rows.sort_by(|(a, ta), (b, tb)| {
        b.s_test
            .partial_cmp(&a.s_test)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ta.cmp(tb))
            .then(a.test_id.cmp(&b.test_id))
    });
    rows.into_iter().take(batch).map(|(s, _)| s.test_id).collect()
}

/// Random ranking (the RD baseline): a seeded uniform permutation.
pub fn rank_random(test_ids: &[u64], batch: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let scores: Vec<NoveltyScore> = {
        let mut ids = test_ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|test_id| NoveltyScore { test_id, window_scores: Vec::new(), s_test: 0.0 })
            .collect()
    };
    rank_tests(&scores, batch, rng)
}

/// Common interface of the fitted novelty models.
pub trait NoveltySelector: Send {
    fn name(&self) -> &'static str;

    /// Retrains from scratch on the given training windows.
    fn fit(&mut self, windows: &[Window], seed: u64) -> Result<(), SelectError>;

    /// Novelty score of one window; requires a prior `fit`.
    fn score_window(&self, window: &Window) -> Result<f64, SelectError>;

    /// Batched scoring; identical values to repeated `score_window` calls.
    fn score_windows(&self, windows: &[Window]) -> Result<Vec<f64>, SelectError> {
        windows.iter().map(|w| self.score_window(w)).collect()
    }
}

/// Builds the selector for a method; `None` for random selection.
pub fn build_selector(method: Method, hyper: &ModelHyper) -> Option<Box<dyn NoveltySelector>> {
    match method {
        Method::Rd => None,
        Method::Ae => Some(Box::new(FlatAutoencoder::new(hyper.clone()))),
        Method::If => Some(Box::new(IsolationForest::new(hyper.clone()))),
        Method::Te => Some(Box::new(TransformerEncoder::new(hyper.clone()))),
        Method::Lstm => Some(Box::new(LstmAutoencoder::new(hyper.clone()))),
    }
}
