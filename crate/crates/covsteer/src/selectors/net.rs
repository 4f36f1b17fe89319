//! Shared plumbing for the reconstruction networks: seeded initialization,
//! batch assembly, the minibatch training loop, and per-window scoring.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::encode::Window;
use crate::numerics::{Adam, Parameter, Tensor};

use super::{ModelHyper, SelectError};

/// Glorot-uniform weight init.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(rows, cols, data).expect("xavier shape")
}

pub(crate) fn zeros_param(name: &str, rows: usize, cols: usize) -> Parameter {
    Parameter::new(name, Tensor::zeros(rows, cols))
}

pub(crate) fn weight_param(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Parameter {
    Parameter::new(name, xavier(rows, cols, rng))
}

/// Stacks windows into a row-major [n, len*dim] batch tensor.
pub(crate) fn batch_tensor(windows: &[&Window]) -> Tensor {
    let rows = windows.len();
    let cols = windows.first().map_or(0, |w| w.data.len());
    let mut data = Vec::with_capacity(rows * cols);
    for w in windows {
        data.extend_from_slice(&w.data);
    }
    Tensor::from_vec(rows, cols, data).expect("batch shape")
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else 1/(1-p).
pub(crate) fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("mask shape")
}

/// Mean squared reconstruction error per window, assuming `input` and
/// `recon` share a row-major layout in which each window occupies
/// `rows_per_window` consecutive rows.
pub(crate) fn per_window_mse(
    input: &Tensor,
    recon: &Tensor,
    rows_per_window: usize,
) -> Vec<f64> {
    debug_assert_eq!(input.shape(), recon.shape());
    let stride = rows_per_window * input.cols();
    let n_windows = input.rows() / rows_per_window;
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let a = &input.data()[w * stride..(w + 1) * stride];
        let b = &recon.data()[w * stride..(w + 1) * stride];
        let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        out.push(sum / stride as f64);
    }
    out
}

/// Per-position reconstruction errors of a single window laid out as
/// `len` rows of `dim` attributes.
pub(crate) fn positional_res(window: &Window, recon_rows: &[f64]) -> Vec<f64> {
    let dim = window.dim;
    (0..window.len)
        .map(|p| {
            let a = window.row(p);
            let b = &recon_rows[p * dim..(p + 1) * dim];
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / dim as f64
        })
        .collect()
}

/// Minibatch reconstruction training: seeded shuffle, fixed batch size, one
/// adaptive-moment step per batch.
pub(crate) fn train_batches(
    params: &mut [Parameter],
    hyper: &ModelHyper,
    windows: &[Window],
    seed: u64,
    mut loss_and_grads: impl FnMut(
        &[Parameter],
        &[&Window],
        Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>), SelectError>,
) -> Result<(), SelectError> {
    let mut adam = Adam::new(hyper.lr, hyper.beta1, hyper.beta2, hyper.adam_eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dropout", 0));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<&Window> = chunk.iter().map(|i| &windows[*i]).collect();
            let dropout = if hyper.dropout_enabled && hyper.dropout > 0.0 {
                Some(&mut dropout_rng)
            } else {
                None
            };
            let (_, grads) = loss_and_grads(params, &batch, dropout)?;
            adam.step(params, &grads)?;
        }
    }
    Ok(())
}

/// Central-difference check of a model's analytic gradients on one window.
/// Samples 5% of parameter entries (at least 20) and returns the max
/// relative error.
pub(crate) fn fd_check(
    params: &mut [Parameter],
    analytic: &[Tensor],
    mut loss_only: impl FnMut(&[Parameter]) -> Result<f64, SelectError>,
    seed: u64,
    h: f64,
) -> Result<f64, SelectError> {
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.value.len() {
            entries.push((pi, ei));
        }
    }
    let total = entries.len();
    let sample = ((total as f64 * 0.05).ceil() as usize).clamp(20.min(total), total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    entries.truncate(sample);

    let mut max_rel = 0.0f64;
    for (pi, ei) in entries {
        let orig = params[pi].value.data()[ei];
        params[pi].value.data_mut()[ei] = orig + h;
        let plus = loss_only(params)?;
        params[pi].value.data_mut()[ei] = orig - h;
        let minus = loss_only(params)?;
        params[pi].value.data_mut()[ei] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let an = analytic[pi].data()[ei];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
