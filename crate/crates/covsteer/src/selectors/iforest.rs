//! Isolation-forest baseline on flattened windows.
//!
//! Standard construction: each tree isolates a subsample with random
//! axis-aligned splits; anomalies separate in fewer splits. The score is
//! 2^(-E[h(x)] / c(m)) with the usual average-unsuccessful-search
//! normalization c computed from exact harmonic numbers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::encode::Window;

use super::{ModelHyper, NoveltySelector, SelectError};

/// Exact harmonic number H(k).
fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Average path length of an unsuccessful BST search over `m` points:
/// c(m) = 2 H(m-1) - 2 (m-1)/m, with c(0) = c(1) = 0.
pub fn average_path_length(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    2.0 * harmonic(m - 1) - 2.0 * (m - 1) as f64 / m as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, value: f64, left: Box<Node>, right: Box<Node> },
    Leaf { size: usize },
}

impl Node {
    fn path_length(&self, x: &[f64], depth: f64) -> f64 {
        match self {
            Node::Leaf { size } => depth + average_path_length(*size),
            Node::Split { feature, value, left, right } => {
                if x[*feature] < *value {
                    left.path_length(x, depth + 1.0)
                } else {
                    right.path_length(x, depth + 1.0)
                }
            }
        }
    }
}

fn grow(rows: &[&[f64]], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Node {
    if rows.len() <= 1 || depth >= limit {
        return Node::Leaf { size: rows.len() };
    }
    let dim = rows[0].len();
    // Pick among features that actually vary in this node.
    let varying: Vec<usize> = (0..dim)
        .filter(|&f| {
            let first = rows[0][f];
            rows.iter().any(|r| r[f] != first)
        })
        .collect();
    if varying.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let feature = varying[rng.gen_range(0..varying.len())];
    let lo = rows.iter().map(|r| r[feature]).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r[feature]).fold(f64::NEG_INFINITY, f64::max);
    let value = rng.gen_range(lo..hi);
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = rows.iter().partition(|r| r[feature] < value);
    Node::Split {
        feature,
        value,
        left: Box::new(grow(&left, depth + 1, limit, rng)),
        right: Box::new(grow(&right, depth + 1, limit, rng)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Forest {
    trees: Vec<Node>,
    /// Subsample size each tree was grown on.
    sample_size: usize,
}

pub struct IsolationForest {
    hyper: ModelHyper,
    forest: Option<Forest>,
}

impl IsolationForest {
    pub fn new(hyper: ModelHyper) -> IsolationForest {
        IsolationForest { hyper, forest: None }
    }

    /// Fits trees on raw feature rows (used by tests on small datasets).
    pub fn fit_rows(&mut self, rows: &[Vec<f64>], seed: u64) -> Result<(), SelectError> {
        if rows.is_empty() {
            return Err(SelectError::Config("fit on empty dataset".into()));
        }
        let sample_size = self.hyper.subsample.min(rows.len());
        let limit = (sample_size as f64).log2().ceil().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "iforest", 0));
        let mut indices: Vec<usize> = (0..rows.len()).collect();
        let trees = (0..self.hyper.trees)
            .map(|_| {
                indices.shuffle(&mut rng);
                let sample: Vec<&[f64]> =
                    indices[..sample_size].iter().map(|i| rows[*i].as_slice()).collect();
                grow(&sample, 0, limit, &mut rng)
            })
            .collect();
        self.forest = Some(Forest { trees, sample_size });
        Ok(())
    }

    pub fn score_row(&self, row: &[f64]) -> Result<f64, SelectError> {
        let forest = self.forest.as_ref().ok_or(SelectError::Unfitted("IF"))?;
        let mean_path: f64 = forest
            .trees
            .iter()
            .map(|t| t.path_length(row, 0.0))
            .sum::<f64>()
            / forest.trees.len() as f64;
        Ok(2f64.powf(-mean_path / average_path_length(forest.sample_size).max(f64::MIN_POSITIVE)))
    }

    pub fn snapshot(&self) -> Result<String, SelectError> {
        let forest = self.forest.as_ref().ok_or(SelectError::Unfitted("IF"))?;
        serde_json::to_string(&(1u32, forest))
            .map_err(|e| SelectError::Config(format!("snapshot: {e}")))
    }

    pub fn restore(&mut self, text: &str) -> Result<(), SelectError> {
        let (version, forest): (u32, Forest) = serde_json::from_str(text)
            .map_err(|e| SelectError::Config(format!("bad snapshot: {e}")))?;
        if version != 1 {
            return Err(SelectError::Config(format!("snapshot version {version}, expected 1")));
        }
        self.forest = Some(forest);
        Ok(())
    }
}

impl NoveltySelector for IsolationForest {
    fn name(&self) -> &'static str {
        "IF"
    }

    fn fit(&mut self, windows: &[Window], seed: u64) -> Result<(), SelectError> {
        let rows: Vec<Vec<f64>> = windows.iter().map(|w| w.data.clone()).collect();
        self.fit_rows(&rows, seed)
    }

    fn score_window(&self, window: &Window) -> Result<f64, SelectError> {
        self.score_row(&window.data)
    }
}
