//! Transformer-encoder novelty selector.
//!
//! Windows are projected per position into model space, tagged with
//! sinusoidal positional encodings, and passed through post-norm encoder
//! blocks of multi-head scaled dot-product attention and a position-wise
//! feed-forward layer. An output affine maps back to attribute space and the
//! window score is the mean per-position reconstruction error. Dropout on
//! the attention weights and FFN activations during training is the only
//! guard against the blocks collapsing onto the residual identity path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::encode::Window;
use crate::numerics::{Axis, Graph, NodeId, Parameter, Tensor};

use super::lstm::{restore_json, snapshot_json};
use super::net::{
    batch_tensor, dropout_mask, fd_check, per_window_mse, positional_res, train_batches,
    weight_param, zeros_param,
};
use super::{ModelHyper, NoveltySelector, SelectError};

const SCORE_CHUNK: usize = 512;
const LN_EPS: f64 = 1e-5;

/// Sinusoidal positional encoding: row `pos` holds
/// sin(pos / 10000^(2i/d)) in even slots and cos of the same argument in
/// odd slots.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Vec<Vec<f64>> {
    (0..seq_len)
        .map(|pos| {
            (0..d_model)
                .map(|slot| {
                    let i = slot / 2;
                    let arg = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
                    if slot % 2 == 0 {
                        arg.sin()
                    } else {
                        arg.cos()
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TeDims {
    window_len: usize,
    feature_dim: usize,
    d_model: usize,
    heads: usize,
    layers: usize,
    ffn_dim: usize,
    dropout: f64,
}

struct TeState {
    dims: TeDims,
    params: Vec<Parameter>,
}

pub struct TransformerEncoder {
    hyper: ModelHyper,
    state: Option<TeState>,
}

/// Parameter ids of one encoder block, in creation order.
struct BlockIds {
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
    ln1_g: NodeId,
    ln1_b: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    ln2_g: NodeId,
    ln2_b: NodeId,
}

const BLOCK_PARAMS: usize = 16;

fn block_param_names() -> [&'static str; BLOCK_PARAMS] {
    [
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2",
        "ln2_g", "ln2_b",
    ]
}

fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, SelectError> {
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

/// Post-norm residual: layer_norm(x + sub) followed by a learned affine.
fn add_norm(
    g: &mut Graph,
    x: NodeId,
    sub: NodeId,
    gain: NodeId,
    bias: NodeId,
) -> Result<NodeId, SelectError> {
    let sum = g.add(x, sub)?;
    let normed = g.layer_norm_rows(sum, LN_EPS);
    let scaled = g.mul(normed, gain)?;
    Ok(g.add(scaled, bias)?)
}

/// Builds the reconstruction graph over a batch viewed as [n*L, F] rows;
/// returns the graph, scalar loss, reconstruction node, and parameter ids.
fn build_graph(
    params: &[Parameter],
    dims: &TeDims,
    input: Tensor,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Graph, NodeId, NodeId, Vec<NodeId>), SelectError> {
    let (l, d) = (dims.window_len, dims.d_model);
    let rows = input.rows();
    let mut g = Graph::new();
    let x = g.leaf(input);
    let pids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.value.clone())).collect();
    let w_in = pids[0];
    let b_in = pids[1];
    let w_out = pids[2];
    let b_out = pids[3];
    let blocks: Vec<BlockIds> = (0..dims.layers)
        .map(|layer| {
            let at = 4 + layer * BLOCK_PARAMS;
            BlockIds {
                wq: pids[at],
                bq: pids[at + 1],
                wk: pids[at + 2],
                bk: pids[at + 3],
                wv: pids[at + 4],
                bv: pids[at + 5],
                wo: pids[at + 6],
                bo: pids[at + 7],
                ln1_g: pids[at + 8],
                ln1_b: pids[at + 9],
                w1: pids[at + 10],
                b1: pids[at + 11],
                w2: pids[at + 12],
                b2: pids[at + 13],
                ln2_g: pids[at + 14],
                ln2_b: pids[at + 15],
            }
        })
        .collect();

    // Positional encoding tiled over every window in the batch.
    let pe_rows = positional_encoding(l, d);
    let mut pe_data = Vec::with_capacity(rows * d);
    for r in 0..rows {
        pe_data.extend_from_slice(&pe_rows[r % l]);
    }
    let pe = g.leaf(Tensor::from_vec(rows, d, pe_data)?);

    let mut h = affine(&mut g, x, w_in, b_in)?;
    h = g.add(h, pe)?;

    let d_k = d / dims.heads;
    let scale = 1.0 / (d_k as f64).sqrt();
    for block in &blocks {
        let q = affine(&mut g, h, block.wq, block.bq)?;
        let k = affine(&mut g, h, block.wk, block.bk)?;
        let v = affine(&mut g, h, block.wv, block.bv)?;
        let mut heads = Vec::with_capacity(dims.heads);
        for hi in 0..dims.heads {
            let range = hi * d_k..(hi + 1) * d_k;
            let qh = g.slice(Axis::Cols, q, range.clone())?;
            let kh = g.slice(Axis::Cols, k, range.clone())?;
            let vh = g.slice(Axis::Cols, v, range)?;
            let scores = g.attn_scores(qh, kh, l)?;
            let scores = g.scale(scores, scale);
            let mut weights = g.softmax_rows(scores);
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let mask = g.leaf(dropout_mask(rows, l, dims.dropout, rng));
                weights = g.mul(weights, mask)?;
            }
            heads.push(g.attn_mix(weights, vh, l)?);
        }
        let merged = g.concat(Axis::Cols, &heads)?;
        let attn_out = affine(&mut g, merged, block.wo, block.bo)?;
        h = add_norm(&mut g, h, attn_out, block.ln1_g, block.ln1_b)?;

        let f1 = affine(&mut g, h, block.w1, block.b1)?;
        let mut act = g.tanh(f1);
        if let Some(rng) = dropout_rng.as_deref_mut() {
            let mask = g.leaf(dropout_mask(rows, dims.ffn_dim, dims.dropout, rng));
            act = g.mul(act, mask)?;
        }
        let f2 = affine(&mut g, act, block.w2, block.b2)?;
        h = add_norm(&mut g, h, f2, block.ln2_g, block.ln2_b)?;
    }

    let recon = affine(&mut g, h, w_out, b_out)?;
    let loss = g.mse(recon, x)?;
    Ok((g, loss, recon, pids))
}

fn loss_and_grads(
    params: &[Parameter],
    dims: &TeDims,
    batch: &[&Window],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>), SelectError> {
    let input = te_batch(batch);
    let (g, loss, _, pids) = build_graph(params, dims, input, dropout_rng)?;
    let grads = g.backward(loss)?;
    let out = pids
        .iter()
        .zip(params)
        .map(|(id, p)| grads.wrt(*id, &p.value))
        .collect();
    Ok((g.value(loss).item(), out))
}

/// Stacks windows as [n*L, F]: each window contributes L consecutive rows.
fn te_batch(batch: &[&Window]) -> Tensor {
    let flat = batch_tensor(batch);
    let (l, f) = batch.first().map_or((1, 1), |w| (w.len, w.dim));
    Tensor::from_vec(flat.rows() * l, f, flat.data().to_vec()).expect("te batch shape")
}

impl TransformerEncoder {
    pub fn new(hyper: ModelHyper) -> TransformerEncoder {
        TransformerEncoder { hyper, state: None }
    }

    pub fn init(&mut self, window_len: usize, feature_dim: usize, seed: u64) {
        let dims = TeDims {
            window_len,
            feature_dim,
            d_model: self.hyper.d_model,
            heads: self.hyper.heads,
            layers: self.hyper.enc_layers,
            ffn_dim: self.hyper.ffn_dim,
            dropout: self.hyper.dropout,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "te-init", 0));
        let d = dims.d_model;
        let mut params = vec![
            weight_param("w_in", feature_dim, d, &mut rng),
            zeros_param("b_in", 1, d),
            weight_param("w_out", d, feature_dim, &mut rng),
            zeros_param("b_out", 1, feature_dim),
        ];
        for layer in 0..dims.layers {
            for name in block_param_names() {
                let full = format!("l{layer}.{name}");
                let p = match name {
                    "wq" | "wk" | "wv" | "wo" => weight_param(&full, d, d, &mut rng),
                    "bq" | "bk" | "bv" | "bo" | "ln1_b" | "ln2_b" => zeros_param(&full, 1, d),
                    "ln1_g" | "ln2_g" => Parameter::new(full, Tensor::filled(1, d, 1.0)),
                    "w1" => weight_param(&full, d, dims.ffn_dim, &mut rng),
                    "b1" => zeros_param(&full, 1, dims.ffn_dim),
                    "w2" => weight_param(&full, dims.ffn_dim, d, &mut rng),
                    "b2" => zeros_param(&full, 1, d),
                    _ => unreachable!(),
                };
                params.push(p);
            }
        }
        self.state = Some(TeState { dims, params });
    }

    fn state(&self) -> Result<&TeState, SelectError> {
        self.state.as_ref().ok_or(SelectError::Unfitted("TE"))
    }

    pub(crate) fn params_mut(&mut self) -> Result<&mut [Parameter], SelectError> {
        Ok(&mut self.state.as_mut().ok_or(SelectError::Unfitted("TE"))?.params)
    }

    /// Per-position reconstruction errors of one window.
    pub fn positional_scores(&self, window: &Window) -> Result<Vec<f64>, SelectError> {
        let st = self.state()?;
        let (g, _, recon, _) = build_graph(&st.params, &st.dims, te_batch(&[window]), None)?;
        Ok(positional_res(window, g.value(recon).data()))
    }

    /// Max relative error of analytic vs central-difference gradients on one
    /// window (evaluated without dropout).
    pub fn grad_check(&mut self, window: &Window, seed: u64, h: f64) -> Result<f64, SelectError> {
        let st = self.state.as_mut().ok_or(SelectError::Unfitted("TE"))?;
        let (_, analytic) = loss_and_grads(&st.params, &st.dims, &[window], None)?;
        let dims = st.dims;
        fd_check(
            &mut st.params,
            &analytic,
            |ps| {
                let (g, loss, _, _) = build_graph(ps, &dims, te_batch(&[window]), None)?;
                Ok(g.value(loss).item())
            },
            seed,
            h,
        )
    }

    pub fn snapshot(&self) -> Result<String, SelectError> {
        let st = self.state()?;
        snapshot_json("transformer", serde_json::to_value(st.dims).unwrap(), &st.params)
    }

    pub fn restore(&mut self, text: &str) -> Result<(), SelectError> {
        let (meta, params) = restore_json("transformer", text)?;
        let dims: TeDims = serde_json::from_value(meta)
            .map_err(|e| SelectError::Config(format!("bad snapshot dims: {e}")))?;
        self.state = Some(TeState { dims, params });
        Ok(())
    }
}

impl NoveltySelector for TransformerEncoder {
    fn name(&self) -> &'static str {
        "TE"
    }

    fn fit(&mut self, windows: &[Window], seed: u64) -> Result<(), SelectError> {
        let first = windows
            .first()
            .ok_or_else(|| SelectError::Config("fit on empty window set".into()))?;
        self.hyper.validate(first.dim)?;
        self.init(first.len, first.dim, seed);
        let st = self.state.as_mut().expect("just initialized");
        let dims = st.dims;
        train_batches(&mut st.params, &self.hyper, windows, seed, |ps, batch, dropout| {
            loss_and_grads(ps, &dims, batch, dropout)
        })
    }

    fn score_window(&self, window: &Window) -> Result<f64, SelectError> {
        Ok(self.score_windows(std::slice::from_ref(window))?[0])
    }

    fn score_windows(&self, windows: &[Window]) -> Result<Vec<f64>, SelectError> {
        let st = self.state()?;
        let l = st.dims.window_len;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(SCORE_CHUNK) {
            let refs: Vec<&Window> = chunk.iter().collect();
            let input = te_batch(&refs);
            let (g, _, recon, _) = build_graph(&st.params, &st.dims, input.clone(), None)?;
            out.extend(per_window_mse(&input, g.value(recon), l));
        }
        Ok(out)
    }
}
