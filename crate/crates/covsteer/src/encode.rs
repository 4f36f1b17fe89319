//! Transaction encoding: one-hot categorical blocks, standardized numeric
//! attributes, and sliding-window sampling of tests into fixed-length
//! sequence inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duvsim::DuvParams;
use crate::stimgen::{BurstKind, Priority, TType, Test, Transaction};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown category for {attr}: {value}")]
    UnknownCategory { attr: &'static str, value: String },
}

/// Attributes with stddev below this are treated as constant and scaled by 1.
pub const CONST_STDDEV_EPS: f64 = 1e-12;

pub const NUMERIC_ATTRS: [&str; 10] =
    ["burst_len", "addr", "gap", "w1", "w2", "w3", "w4", "data", "tag", "width"];

/// Fixed attribute layout: categorical one-hot blocks followed by the
/// numeric attributes. The block widths depend on the DUV dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub masters: u8,
    pub slaves: u8,
}

impl FeatureSchema {
    pub fn from_params(params: &DuvParams) -> FeatureSchema {
        FeatureSchema { masters: params.masters, slaves: params.slaves }
    }

    /// Widths of the one-hot blocks in encoding order.
    pub fn categorical_widths(&self) -> [usize; 5] {
        [2, self.masters as usize, self.slaves as usize, 3, 2]
    }

    /// Total encoded dimension F.
    pub fn encoded_dim(&self) -> usize {
        self.categorical_widths().iter().sum::<usize>() + NUMERIC_ATTRS.len()
    }
}

fn numeric_values(txn: &Transaction) -> [f64; 10] {
    [
        txn.burst_len as f64,
        txn.addr as f64,
        txn.gap as f64,
        txn.w1 as f64,
        txn.w2 as f64,
        txn.w3 as f64,
        txn.w4 as f64,
        txn.data as f64,
        txn.tag as f64,
        txn.width as f64,
    ]
}

/// Per-numeric-attribute population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    /// Attributes whose stddev collapsed below [`CONST_STDDEV_EPS`].
    pub constant: Vec<bool>,
}

/// Fits population statistics over all transactions of the given tests.
pub fn fit_standardizer(tests: &[&Test]) -> Result<Standardizer, EncodeError> {
    let n: usize = tests.iter().map(|t| t.txns.len()).sum();
    if n == 0 {
        return Err(EncodeError::Config("cannot fit standardizer on zero transactions".into()));
    }
    let dim = NUMERIC_ATTRS.len();
    let mut mean = vec![0.0; dim];
    for test in tests {
        for txn in &test.txns {
            for (acc, v) in mean.iter_mut().zip(numeric_values(txn)) {
                *acc += v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for test in tests {
        for txn in &test.txns {
            for ((acc, v), m) in var.iter_mut().zip(numeric_values(txn)).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
    }
    let mut stddev = vec![0.0; dim];
    let mut constant = vec![false; dim];
    for i in 0..dim {
        stddev[i] = (var[i] / n as f64).sqrt();
        if stddev[i] < CONST_STDDEV_EPS {
            constant[i] = true;
        }
    }
    Ok(Standardizer { mean, stddev, constant })
}

/// Encodes one transaction: exact one-hot blocks for the 5 categorical
/// attributes, then `(x - mean) / stddev` per numeric attribute (constant
/// attributes are centered only).
pub fn encode_txn(
    txn: &Transaction,
    schema: &FeatureSchema,
    standardizer: &Standardizer,
) -> Result<Vec<f64>, EncodeError> {
    let mut out = Vec::with_capacity(schema.encoded_dim());

    let mut one_hot = |idx: usize, width: usize, attr: &'static str, value: String| {
        if idx >= width {
            return Err(EncodeError::UnknownCategory { attr, value });
        }
        for i in 0..width {
            out.push(if i == idx { 1.0 } else { 0.0 });
        }
        Ok(())
    };
    one_hot(txn.ttype as usize, 2, "ttype", format!("{:?}", txn.ttype))?;
    one_hot(txn.master as usize, schema.masters as usize, "master", txn.master.to_string())?;
    one_hot(txn.slave as usize, schema.slaves as usize, "slave", txn.slave.to_string())?;
    one_hot(txn.burst_kind as usize, 3, "burst_kind", format!("{:?}", txn.burst_kind))?;
    one_hot(txn.priority as usize, 2, "priority", format!("{:?}", txn.priority))?;

    for (i, v) in numeric_values(txn).into_iter().enumerate() {
        if standardizer.constant[i] {
            out.push(v - standardizer.mean[i]);
        } else {
            out.push((v - standardizer.mean[i]) / standardizer.stddev[i]);
        }
    }
    Ok(out)
}

const _: () = {
    // Enum discriminants double as one-hot indices.
    assert!(TType::Read as usize == 0 && TType::Write as usize == 1);
    assert!(BurstKind::Single as usize == 0 && BurstKind::Wrap as usize == 2);
    assert!(Priority::Low as usize == 0 && Priority::High as usize == 1);
};

/// A length-L sequence of encoded transaction vectors with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub test_id: u64,
    /// Index of the first transaction covered by this window (0 for the
    /// zero-padded window of a short test).
    pub offset: usize,
    pub len: usize,
    pub dim: usize,
    /// Row-major [len * dim] vector data.
    pub data: Vec<f64>,
}

impl Window {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }
}

/// Slices encoded vectors into windows of length `window_len` at stride
/// `step`. A remainder at the tail is covered by one extra window ending at
/// the last transaction; tests shorter than `window_len` yield a single
/// window left-padded with zero vectors.
pub fn sample_windows(
    test_id: u64,
    vectors: &[Vec<f64>],
    window_len: usize,
    step: usize,
) -> Vec<Window> {
    assert!(window_len >= 1 && step >= 1, "window_len and step must be >= 1");
    let len = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    let make = |offset: usize| {
        let mut data = Vec::with_capacity(window_len * dim);
        for v in &vectors[offset..offset + window_len] {
            data.extend_from_slice(v);
        }
        Window { test_id, offset, len: window_len, dim, data }
    };

    if len < window_len {
        let mut data = vec![0.0; (window_len - len) * dim];
        for v in vectors {
            data.extend_from_slice(v);
        }
        return vec![Window { test_id, offset: 0, len: window_len, dim, data }];
    }

    let mut windows = Vec::new();
    let mut offset = 0;
    while offset + window_len <= len {
        windows.push(make(offset));
        offset += step;
    }
    let covered_to = windows.last().map_or(0, |w| w.offset + window_len);
    if covered_to < len {
        let tail = len - window_len;
        if windows.last().map_or(true, |w| w.offset != tail) {
            windows.push(make(tail));
        }
    }
    windows
}

/// Encodes a test and samples its windows in one pass.
pub fn windows_for_test(
    test: &Test,
    schema: &FeatureSchema,
    standardizer: &Standardizer,
    window_len: usize,
    step: usize,
) -> Result<Vec<Window>, EncodeError> {
    let vectors: Vec<Vec<f64>> = test
        .txns
        .iter()
        .map(|t| encode_txn(t, schema, standardizer))
        .collect::<Result<_, _>>()?;
    Ok(sample_windows(test.test_id, &vectors, window_len, step))
}
