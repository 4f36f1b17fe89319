//! LSTM autoencoder novelty selector.
//!
//! The encoder LSTM consumes the window's vectors; its final hidden state is
//! repeated as the decoder input at every step, and a per-step affine layer
//! maps the decoder hidden state back to attribute space. Window novelty is
//! the mean per-position reconstruction error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::encode::Window;
use crate::numerics::{Axis, Graph, NodeId, Parameter, Tensor};

use super::net::{
    batch_tensor, fd_check, per_window_mse, positional_res, train_batches, weight_param,
    zeros_param,
};
use super::{ModelHyper, NoveltySelector, SelectError};

const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LstmDims {
    window_len: usize,
    feature_dim: usize,
    hidden: usize,
}

struct LstmState {
    dims: LstmDims,
    params: Vec<Parameter>,
}

pub struct LstmAutoencoder {
    hyper: ModelHyper,
    state: Option<LstmState>,
}

/// Runs one LSTM cell step: gates in [i | f | g | o] order from a single
/// affine transform of [x, h].
fn lstm_step(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    w: NodeId,
    b: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId), SelectError> {
    let xh = g.concat(Axis::Cols, &[x, h])?;
    let z = g.matmul(xh, w)?;
    let z = g.add(z, b)?;
    let zi = g.slice(Axis::Cols, z, 0..hidden)?;
    let zf = g.slice(Axis::Cols, z, hidden..2 * hidden)?;
    let zg = g.slice(Axis::Cols, z, 2 * hidden..3 * hidden)?;
    let zo = g.slice(Axis::Cols, z, 3 * hidden..4 * hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let gg = g.tanh(zg);
    let o = g.sigmoid(zo);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Builds the reconstruction graph over a batch laid out [n, L*F]; returns
/// the graph, the scalar loss, the reconstruction node, and the parameter
/// leaf ids in parameter order.
fn build_graph(
    params: &[Parameter],
    dims: &LstmDims,
    input: Tensor,
) -> Result<(Graph, NodeId, NodeId, Vec<NodeId>), SelectError> {
    let (l, f, hid) = (dims.window_len, dims.feature_dim, dims.hidden);
    let n = input.rows();
    let mut g = Graph::new();
    let x = g.leaf(input);
    let pids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.value.clone())).collect();
    let (w_enc, b_enc, w_dec, b_dec, w_out, b_out) =
        (pids[0], pids[1], pids[2], pids[3], pids[4], pids[5]);

    let mut h = g.leaf(Tensor::zeros(n, hid));
    let mut c = g.leaf(Tensor::zeros(n, hid));
    for t in 0..l {
        let xt = g.slice(Axis::Cols, x, t * f..(t + 1) * f)?;
        let (h2, c2) = lstm_step(&mut g, xt, h, c, w_enc, b_enc, hid)?;
        h = h2;
        c = c2;
    }
    let encoded = h;

    let mut hd = g.leaf(Tensor::zeros(n, hid));
    let mut cd = g.leaf(Tensor::zeros(n, hid));
    let mut outputs = Vec::with_capacity(l);
    for _ in 0..l {
        let (h2, c2) = lstm_step(&mut g, encoded, hd, cd, w_dec, b_dec, hid)?;
        hd = h2;
        cd = c2;
        let y = g.matmul(hd, w_out)?;
        let y = g.add(y, b_out)?;
        outputs.push(y);
    }
    let recon = g.concat(Axis::Cols, &outputs)?;
    let loss = g.mse(recon, x)?;
    Ok((g, loss, recon, pids))
}

fn loss_and_grads(
    params: &[Parameter],
    dims: &LstmDims,
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

impl LstmAutoencoder {
    pub fn new(hyper: ModelHyper) -> LstmAutoencoder {
        LstmAutoencoder { hyper, state: None }
    }

    /// Fresh seeded parameter initialization for the given window shape.
    pub fn init(&mut self, window_len: usize, feature_dim: usize, seed: u64) {
        let hidden = self.hyper.lstm_hidden_for(feature_dim);
        let dims = LstmDims { window_len, feature_dim, hidden };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "lstm-init", 0));
        let params = vec![
            weight_param("w_enc", feature_dim + hidden, 4 * hidden, &mut rng),
            zeros_param("b_enc", 1, 4 * hidden),
            weight_param("w_dec", 2 * hidden, 4 * hidden, &mut rng),
            zeros_param("b_dec", 1, 4 * hidden),
            weight_param("w_out", hidden, feature_dim, &mut rng),
            zeros_param("b_out", 1, feature_dim),
        ];
        self.state = Some(LstmState { dims, params });
    }

    fn state(&self) -> Result<&LstmState, SelectError> {
        self.state.as_ref().ok_or(SelectError::Unfitted("LSTM"))
    }

    pub(crate) fn params_mut(&mut self) -> Result<&mut [Parameter], SelectError> {
        Ok(&mut self.state.as_mut().ok_or(SelectError::Unfitted("LSTM"))?.params)
    }

    /// Per-position reconstruction errors of one window.
    pub fn positional_scores(&self, window: &Window) -> Result<Vec<f64>, SelectError> {
        let st = self.state()?;
        let (g, _, recon, _) =
            build_graph(&st.params, &st.dims, batch_tensor(&[window]))?;
        Ok(positional_res(window, g.value(recon).data()))
    }

    /// Max relative error of analytic vs central-difference gradients on one
    /// window.
    pub fn grad_check(&mut self, window: &Window, seed: u64, h: f64) -> Result<f64, SelectError> {
        let st = self.state.as_mut().ok_or(SelectError::Unfitted("LSTM"))?;
        let (_, analytic) = loss_and_grads(&st.params, &st.dims, &[window])?;
        let dims = st.dims;
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
        snapshot_json("lstm-ae", serde_json::to_value(st.dims).unwrap(), &st.params)
    }

    pub fn restore(&mut self, text: &str) -> Result<(), SelectError> {
        let (meta, params) = restore_json("lstm-ae", text)?;
        let dims: LstmDims = serde_json::from_value(meta)
            .map_err(|e| SelectError::Config(format!("bad snapshot dims: {e}")))?;
        self.state = Some(LstmState { dims, params });
        Ok(())
    }
}

impl NoveltySelector for LstmAutoencoder {
    fn name(&self) -> &'static str {
        "LSTM"
    }

    fn fit(&mut self, windows: &[Window], seed: u64) -> Result<(), SelectError> {
        let first = windows
            .first()
            .ok_or_else(|| SelectError::Config("fit on empty window set".into()))?;
        self.hyper.validate(first.dim)?;
        self.init(first.len, first.dim, seed);
        let st = self.state.as_mut().expect("just initialized");
        let dims = st.dims;
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

/// Versioned JSON snapshot shared by the parametric models.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    model: String,
    version: u32,
    meta: serde_json::Value,
    params: Vec<(String, usize, usize, Vec<f64>)>,
}

pub(crate) fn snapshot_json(
    model: &str,
    meta: serde_json::Value,
    params: &[Parameter],
) -> Result<String, SelectError> {
    let snap = Snapshot {
        model: model.to_string(),
        version: 1,
        meta,
        params: params
            .iter()
            .map(|p| (p.name.clone(), p.value.rows(), p.value.cols(), p.value.data().to_vec()))
            .collect(),
    };
    serde_json::to_string(&snap).map_err(|e| SelectError::Config(format!("snapshot: {e}")))
}

pub(crate) fn restore_json(
    model: &str,
    text: &str,
) -> Result<(serde_json::Value, Vec<Parameter>), SelectError> {
    let snap: Snapshot =
        serde_json::from_str(text).map_err(|e| SelectError::Config(format!("bad snapshot: {e}")))?;
    if snap.model != model || snap.version != 1 {
        return Err(SelectError::Config(format!(
            "snapshot is {} v{}, expected {model} v1",
            snap.model, snap.version
        )));
    }
    let params = snap
        .params
        .into_iter()
        .map(|(name, r, c, data)| {
            Tensor::from_vec(r, c, data)
                .map(|t| Parameter::new(name, t))
                .map_err(|e| SelectError::Config(format!("bad snapshot tensor: {e}")))
        })
        .collect::<Result<_, _>>()?;
    Ok((snap.meta, params))
}
