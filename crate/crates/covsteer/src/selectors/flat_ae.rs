//! Fully-connected autoencoder baseline operating on flattened windows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::encode::Window;
use crate::numerics::{Graph, NodeId, Parameter, Tensor};

use super::lstm::{restore_json, snapshot_json};
use super::net::{batch_tensor, fd_check, per_window_mse, train_batches, weight_param, zeros_param};
use super::{ModelHyper, NoveltySelector, SelectError};

const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AeDims {
    input_dim: usize,
    /// Full layer-width chain including input and output.
    widths: Vec<usize>,
}

struct AeState {
    dims: AeDims,
    params: Vec<Parameter>,
}

pub struct FlatAutoencoder {
    hyper: ModelHyper,
    state: Option<AeState>,
}

/// Builds the dense reconstruction graph over a [n, L*F] batch. Hidden
/// layers use tanh; the output layer is linear.
fn build_graph(
    params: &[Parameter],
    dims: &AeDims,
    input: Tensor,
) -> Result<(Graph, NodeId, NodeId, Vec<NodeId>), SelectError> {
    let mut g = Graph::new();
    let x = g.leaf(input);
    let pids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.value.clone())).collect();
    let layers = dims.widths.len() - 1;
    let mut h = x;
    for layer in 0..layers {
        let y = g.matmul(h, pids[2 * layer])?;
        let y = g.add(y, pids[2 * layer + 1])?;
        h = if layer + 1 < layers { g.tanh(y) } else { y };
    }
    let loss = g.mse(h, x)?;
    Ok((g, loss, h, pids))
}

fn loss_and_grads(
    params: &[Parameter],
    dims: &AeDims,
    batch: &[&Window],
) -> Result<(f64, Vec<Tensor>), SelectError> {
    let (g, loss, _, pids) = build_graph(params, dims, batch_tensor(batch))?;
    let grads = g.backward(loss)?;
    let out = pids
        .iter()
        .zip(params)
        .map(|(id, p)| grads.wrt(*id, &p.value))
        .collect();
    Ok((g.value(loss).item(), out))
}

impl FlatAutoencoder {
    pub fn new(hyper: ModelHyper) -> FlatAutoencoder {
        FlatAutoencoder { hyper, state: None }
    }

    pub fn init(&mut self, window_len: usize, feature_dim: usize, seed: u64) {
        let input_dim = window_len * feature_dim;
        let hidden = self.hyper.ae_hidden_for(feature_dim);
        let mut widths = vec![input_dim];
        widths.extend(&hidden);
        widths.extend(hidden.iter().rev().skip(1));
        widths.push(input_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ae-init", 0));
        let mut params = Vec::new();
        for (layer, pair) in widths.windows(2).enumerate() {
            params.push(weight_param(&format!("w{layer}"), pair[0], pair[1], &mut rng));
            params.push(zeros_param(&format!("b{layer}"), 1, pair[1]));
        }
        self.state = Some(AeState { dims: AeDims { input_dim, widths }, params });
    }

    fn state(&self) -> Result<&AeState, SelectError> {
        self.state.as_ref().ok_or(SelectError::Unfitted("AE"))
    }

    pub(crate) fn params_mut(&mut self) -> Result<&mut [Parameter], SelectError> {
        Ok(&mut self.state.as_mut().ok_or(SelectError::Unfitted("AE"))?.params)
    }

    pub fn grad_check(&mut self, window: &Window, seed: u64, h: f64) -> Result<f64, SelectError> {
        let st = self.state.as_mut().ok_or(SelectError::Unfitted("AE"))?;
        let (_, analytic) = loss_and_grads(&st.params, &st.dims, &[window])?;
        let dims = st.dims.clone();
        fd_check(
            &mut st.params,
            &analytic,
            |ps| {
                let (g, loss, _, _) = build_graph(ps, &dims, batch_tensor(&[window]))?;
                Ok(g.value(loss).item())
            },
            seed,
            h,
        )
    }

    pub fn snapshot(&self) -> Result<String, SelectError> {
        let st = self.state()?;
        snapshot_json("flat-ae", serde_json::to_value(&st.dims).unwrap(), &st.params)
    }

    pub fn restore(&mut self, text: &str) -> Result<(), SelectError> {
        let (meta, params) = restore_json("flat-ae", text)?;
        let dims: AeDims = serde_json::from_value(meta)
            .map_err(|e| SelectError::Config(format!("bad snapshot dims: {e}")))?;
        self.state = Some(AeState { dims, params });
        Ok(())
    }
}

impl NoveltySelector for FlatAutoencoder {
    fn name(&self) -> &'static str {
        "AE"
    }

    fn fit(&mut self, windows: &[Window], seed: u64) -> Result<(), SelectError> {
        let first = windows
            .first()
            .ok_or_else(|| SelectError::Config("fit on empty window set".into()))?;
        self.hyper.validate(first.dim)?;
        self.init(first.len, first.dim, seed);
        let st = self.state.as_mut().expect("just initialized");
        let dims = st.dims.clone();
        train_batches(&mut st.params, &self.hyper, windows, seed, |ps, batch, _| {
            loss_and_grads(ps, &dims, batch)
        })
    }

    fn score_window(&self, window: &Window) -> Result<f64, SelectError> {
        Ok(self.score_windows(std::slice::from_ref(window))?[0])
    }

    fn score_windows(&self, windows: &[Window]) -> Result<Vec<f64>, SelectError> {
        let st = self.state()?;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(SCORE_CHUNK) {
            let refs: Vec<&Window> = chunk.iter().collect();
            let input = batch_tensor(&refs);
            let (g, _, recon, _) = build_graph(&st.params, &st.dims, input.clone())?;
            out.extend(per_window_mse(&input, g.value(recon), 1));
        }
        Ok(out)
    }
}
