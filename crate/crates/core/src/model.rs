//! GRU state initialization, primal-dual message pooling, iterative
//! refinement, and the prediction heads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ChannelIndex, SceneGraphSample};
use crate::tensor::{Tape, Var};

/// How incoming messages are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Learned sigmoid-weighted sums.
    Weighted,
    /// Plain average over incoming messages.
    Avg,
    /// Elementwise max over incoming messages.
    Max,
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolingMode::Weighted => write!(f, "weighted"),
            PoolingMode::Avg => write!(f, "avg"),
            PoolingMode::Max => write!(f, "max"),
        }
    }
}

/// Model size configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// raw visual feature dimension D
    pub feature_dim: usize,
    /// hidden size H shared by node and edge GRUs
    pub hidden: usize,
    /// |C| including background
    pub num_classes: usize,
    /// |R| including none
    pub num_predicates: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 16,
            hidden: 32,
            num_classes: 6,
            num_predicates: 5,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 1 || self.hidden < 1 {
            return Err(Error::Config(
                "feature_dim and hidden must be positive".to_string(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(
                "num_classes must be at least 2 (background + one class)".to_string(),
            ));
        }
        if self.num_predicates < 2 {
            return Err(Error::Config(
                "num_predicates must be at least 2 (none + one predicate)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Named learnable tensor with a persistent gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    fn uniform(name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha20Rng) -> Self {
        let len: usize = shape.iter().product();
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..len).map(|_| rng.gen_range(-s..s)).collect();
        ParamTensor {
            name: name.to_string(),
            shape,
            values,
            grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One shared GRU parameter set (nodes and edges each get one).
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: ParamTensor,
    pub u_z: ParamTensor,
    pub b_z: ParamTensor,
    pub w_r: ParamTensor,
    pub u_r: ParamTensor,
    pub b_r: ParamTensor,
    pub w_h: ParamTensor,
    pub u_h: ParamTensor,
    pub b_h: ParamTensor,
}

impl GruParams {
    fn init(prefix: &str, d_in: usize, h: usize, rng: &mut ChaCha20Rng) -> Self {
        let m = |n: &str, r: usize, c: usize, rng: &mut ChaCha20Rng| {
            ParamTensor::uniform(&format!("{prefix}.{n}"), vec![r, c], c, rng)
        };
        let b = |n: &str, rng: &mut ChaCha20Rng| {
            ParamTensor::uniform(&format!("{prefix}.{n}"), vec![h], d_in, rng)
        };
        GruParams {
            w_z: m("w_z", h, d_in, rng),
            u_z: m("u_z", h, h, rng),
            b_z: b("b_z", rng),
            w_r: m("w_r", h, d_in, rng),
            u_r: m("u_r", h, h, rng),
            b_r: b("b_r", rng),
            w_h: m("w_h", h, d_in, rng),
            u_h: m("u_h", h, h, rng),
            b_h: b("b_h", rng),
        }
    }

    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h,
            &self.u_h, &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w_z, &mut self.u_z, &mut self.b_z, &mut self.w_r, &mut self.u_r,
            &mut self.b_r, &mut self.w_h, &mut self.u_h, &mut self.b_h,
        ]
    }
}

/// All learnable weights of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub input_proj_node: ParamTensor,
    pub input_proj_edge: ParamTensor,
    pub node_gru: GruParams,
    pub edge_gru: GruParams,
    pub v1: ParamTensor,
    pub v2: ParamTensor,
    pub w1: ParamTensor,
    pub w2: ParamTensor,
    pub cls_w: ParamTensor,
    pub cls_b: ParamTensor,
    pub bbox_w: ParamTensor,
    pub bbox_b: ParamTensor,
    pub pred_w: ParamTensor,
    pub pred_b: ParamTensor,
}

impl ModelParams {
    /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (d, h) = (dims.feature_dim, dims.hidden);
        let (c, r) = (dims.num_classes, dims.num_predicates);
        ModelParams {
            dims,
            input_proj_node: ParamTensor::uniform("input_proj_node", vec![h, d], d, &mut rng),
            input_proj_edge: ParamTensor::uniform("input_proj_edge", vec![h, d], d, &mut rng),
            node_gru: GruParams::init("node_gru", h, h, &mut rng),
            edge_gru: GruParams::init("edge_gru", h, h, &mut rng),
            v1: ParamTensor::uniform("v1", vec![2 * h], 2 * h, &mut rng),
            v2: ParamTensor::uniform("v2", vec![2 * h], 2 * h, &mut rng),
            w1: ParamTensor::uniform("w1", vec![2 * h], 2 * h, &mut rng),
            w2: ParamTensor::uniform("w2", vec![2 * h], 2 * h, &mut rng),
            cls_w: ParamTensor::uniform("cls_w", vec![c, h], h, &mut rng),
            cls_b: ParamTensor::uniform("cls_b", vec![c], h, &mut rng),
            bbox_w: ParamTensor::uniform("bbox_w", vec![4 * c, h], h, &mut rng),
            bbox_b: ParamTensor::uniform("bbox_b", vec![4 * c], h, &mut rng),
            pred_w: ParamTensor::uniform("pred_w", vec![r, h], h, &mut rng),
            pred_b: ParamTensor::uniform("pred_b", vec![r], h, &mut rng),
        }
    }

    /// All-zero parameters; useful for fixed-point tests.
    pub fn zeros(dims: ModelDims) -> Self {
        let mut p = ModelParams::init(dims, 0);
        for t in p.tensors_mut() {
            for v in t.values.iter_mut() {
                *v = 0.0;
            }
        }
        p
    }

    /// Fixed enumeration order; the checkpoint format, optimizer state,
    /// and gradient accumulation all rely on it.
    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.input_proj_node, &self.input_proj_edge];
        out.extend(self.node_gru.tensors());
        out.extend(self.edge_gru.tensors());
        out.extend([
            &self.v1, &self.v2, &self.w1, &self.w2, &self.cls_w, &self.cls_b, &self.bbox_w,
            &self.bbox_b, &self.pred_w, &self.pred_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let ModelParams {
            dims: _,
            input_proj_node,
            input_proj_edge,
            node_gru,
            edge_gru,
            v1,
            v2,
            w1,
            w2,
            cls_w,
            cls_b,
            bbox_w,
            bbox_b,
            pred_w,
            pred_b,
        } = self;
        let mut out = vec![input_proj_node, input_proj_edge];
        out.extend(node_gru.tensors_mut());
        out.extend(edge_gru.tensors_mut());
        out.extend([v1, v2, w1, w2, cls_w, cls_b, bbox_w, bbox_b, pred_w, pred_b]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            for g in t.grad.iter_mut() {
                *g = 0.0;
            }
        }
    }
}

/// Tape handles for one GRU parameter set.
#[derive(Debug, Clone, Copy)]
pub struct TapeGru {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// Tape handles for every model parameter, staged for one forward pass.
#[derive(Debug, Clone)]
pub struct TapeModel {
    pub dims: ModelDims,
    pub input_proj_node: Var,
    pub input_proj_edge: Var,
    pub node_gru: TapeGru,
    pub edge_gru: TapeGru,
    pub v1: Var,
    pub v2: Var,
    pub w1: Var,
    pub w2: Var,
    pub cls_w: Var,
    pub cls_b: Var,
    pub bbox_w: Var,
    pub bbox_b: Var,
    pub pred_w: Var,
    pub pred_b: Var,
    /// same order as [`ModelParams::tensors`]
    pub all: Vec<Var>,
}

/// Copies parameters onto a fresh tape as requires-grad leaves.
pub fn stage_params(tape: &mut Tape, p: &ModelParams, requires_grad: bool) -> Result<TapeModel> {
    let mut all = Vec::new();
    let stage = |tape: &mut Tape, t: &ParamTensor, all: &mut Vec<Var>| -> Result<Var> {
        let v = tape.leaf(t.values.clone(), t.shape.clone(), requires_grad)?;
        all.push(v);
        Ok(v)
    };
    let input_proj_node = stage(tape, &p.input_proj_node, &mut all)?;
    let input_proj_edge = stage(tape, &p.input_proj_edge, &mut all)?;
    let gru = |tape: &mut Tape, g: &GruParams, all: &mut Vec<Var>| -> Result<TapeGru> {
        Ok(TapeGru {
            w_z: stage(tape, &g.w_z, all)?,
            u_z: stage(tape, &g.u_z, all)?,
            b_z: stage(tape, &g.b_z, all)?,
            w_r: stage(tape, &g.w_r, all)?,
            u_r: stage(tape, &g.u_r, all)?,
            b_r: stage(tape, &g.b_r, all)?,
            w_h: stage(tape, &g.w_h, all)?,
            u_h: stage(tape, &g.u_h, all)?,
            b_h: stage(tape, &g.b_h, all)?,
        })
    };
    let node_gru = gru(tape, &p.node_gru, &mut all)?;
    let edge_gru = gru(tape, &p.edge_gru, &mut all)?;
    let v1 = stage(tape, &p.v1, &mut all)?;
    let v2 = stage(tape, &p.v2, &mut all)?;
    let w1 = stage(tape, &p.w1, &mut all)?;
    let w2 = stage(tape, &p.w2, &mut all)?;
    let cls_w = stage(tape, &p.cls_w, &mut all)?;
    let cls_b = stage(tape, &p.cls_b, &mut all)?;
    let bbox_w = stage(tape, &p.bbox_w, &mut all)?;
    let bbox_b = stage(tape, &p.bbox_b, &mut all)?;
    let pred_w = stage(tape, &p.pred_w, &mut all)?;
    let pred_b = stage(tape, &p.pred_b, &mut all)?;
    Ok(TapeModel {
        dims: p.dims,
        input_proj_node,
        input_proj_edge,
        node_gru,
        edge_gru,
        v1,
        v2,
        w1,
        w2,
        cls_w,
        cls_b,
        bbox_w,
        bbox_b,
        pred_w,
        pred_b,
        all,
    })
}

/// Adds tape gradients into the persistent parameter grad buffers.
pub fn accumulate_grads(params: &mut ModelParams, tape: &Tape, tm: &TapeModel) {
    for (t, &v) in params.tensors_mut().into_iter().zip(&tm.all) {
        for (g, tg) in t.grad.iter_mut().zip(tape.grad(v)) {
            *g += tg;
        }
    }
}

/// One GRU update: z and r gates, candidate, then the gated blend
/// h' = (1-z)*h + z*h_tilde.
pub fn gru_step(tape: &mut Tape, x: Var, h: Var, g: &TapeGru) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, hh: Var| -> Result<Var> {
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, hh)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };
    let z_pre = gate(tape, g.w_z, g.u_z, g.b_z, h)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, g.w_r, g.u_r, g.b_r, h)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, g.w_h, g.u_h, g.b_h, rh)?;
    let cand = tape.tanh(cand_pre)?;
    let one_minus_z = tape.affine(z, -1.0, 1.0)?;
    let keep = tape.mul(one_minus_z, h)?;
    let take = tape.mul(z, cand)?;
    tape.add(keep, take)
}

/// Hidden state handles for one sample on one tape.
#[derive(Debug, Clone)]
pub struct StateVars {
    pub node_hidden: Vec<Var>,
    pub edge_hidden: Vec<Var>,
}

/// Plain-value snapshot of the hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceState {
    pub node_hidden: Vec<Vec<f64>>,
    pub edge_hidden: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl StateVars {
    pub fn extract(&self, tape: &Tape, iteration: usize) -> InferenceState {
        InferenceState {
            node_hidden: self.node_hidden.iter().map(|&v| tape.values(v).to_vec()).collect(),
            edge_hidden: self.edge_hidden.iter().map(|&v| tape.values(v).to_vec()).collect(),
            iteration,
        }
    }
}

/// First GRU step from the projected visual features, zero initial state.
pub fn init_state_vars(
    tape: &mut Tape,
    sample: &SceneGraphSample,
    channels: &ChannelIndex,
    tm: &TapeModel,
) -> Result<StateVars> {
    let h = tm.dims.hidden;
    let mut node_hidden = Vec::with_capacity(sample.num_nodes());
    for f in &sample.node_features {
        let fv = tape.vector(f.clone())?;
        let x = tape.matvec(tm.input_proj_node, fv)?;
        let h0 = tape.zeros(h)?;
        node_hidden.push(gru_step(tape, x, h0, &tm.node_gru)?);
    }
    let mut edge_hidden = Vec::with_capacity(channels.num_edges());
    for &(i, j) in &channels.edges {
        let f = sample.edge_features.get(&(i, j)).ok_or_else(|| {
            Error::Validation(format!(
                "sample {}: missing edge feature for pair ({i}, {j})",
                sample.image_id
            ))
        })?;
        let fv = tape.vector(f.clone())?;
        let x = tape.matvec(tm.input_proj_edge, fv)?;
        let h0 = tape.zeros(h)?;
        edge_hidden.push(gru_step(tape, x, h0, &tm.edge_gru)?);
    }
    Ok(StateVars {
        node_hidden,
        edge_hidden,
    })
}

/// Aggregates the hidden states of node i's incident edges into m_i.
pub fn pool_node_messages(
    tape: &mut Tape,
    i: usize,
    state: &StateVars,
    channels: &ChannelIndex,
    tm: &TapeModel,
    mode: PoolingMode,
) -> Result<Var> {
    let h = tm.dims.hidden;
    let hi = state.node_hidden[i];
    let incident: Vec<(Var, bool)> = channels.outbound[i]
        .iter()
        .map(|&e| (state.edge_hidden[e], true))
        .chain(channels.inbound[i].iter().map(|&e| (state.edge_hidden[e], false)))
        .collect();
    if incident.is_empty() {
        return tape.zeros(h);
    }
    match mode {
        PoolingMode::Weighted => {
            let mut acc = tape.zeros(h)?;
            for (he, outgoing) in incident {
                let cat = tape.concat(hi, he)?;
                let v = if outgoing { tm.v1 } else { tm.v2 };
                let d = tape.dot(v, cat)?;
                let s = tape.sigmoid(d)?;
                let term = tape.smul(s, he)?;
                acc = tape.add(acc, term)?;
            }
            Ok(acc)
        }
        PoolingMode::Avg => {
            let k = incident.len() as f64;
            let mut acc = tape.zeros(h)?;
            for (he, _) in incident {
                acc = tape.add(acc, he)?;
            }
            tape.scale(acc, 1.0 / k)
        }
        PoolingMode::Max => {
            let mut acc = incident[0].0;
            for (he, _) in &incident[1..] {
                acc = tape.emax(acc, *he)?;
            }
            Ok(acc)
        }
    }
}

/// Aggregates the subject and object node states into m_{i->j}.
pub fn pool_edge_messages(
    tape: &mut Tape,
    e: usize,
    state: &StateVars,
    channels: &ChannelIndex,
    tm: &TapeModel,
    mode: PoolingMode,
) -> Result<Var> {
    let (i, j) = channels.edges[e];
    let he = state.edge_hidden[e];
    let hi = state.node_hidden[i];
    let hj = state.node_hidden[j];
    match mode {
        PoolingMode::Weighted => {
            let cat1 = tape.concat(hi, he)?;
            let d1 = tape.dot(tm.w1, cat1)?;
            let s1 = tape.sigmoid(d1)?;
            let t1 = tape.smul(s1, hi)?;
            let cat2 = tape.concat(hj, he)?;
            let d2 = tape.dot(tm.w2, cat2)?;
            let s2 = tape.sigmoid(d2)?;
            let t2 = tape.smul(s2, hj)?;
            tape.add(t1, t2)
        }
        PoolingMode::Avg => {
            let s = tape.add(hi, hj)?;
            tape.scale(s, 0.5)
        }
        PoolingMode::Max => tape.emax(hi, hj),
    }
}

/// T synchronous rounds: all messages are computed from the pre-round
/// state, then every node and edge commits its GRU update.
pub fn iterate_vars(
    tape: &mut Tape,
    state: StateVars,
    channels: &ChannelIndex,
    tm: &TapeModel,
    t: usize,
    mode: PoolingMode,
) -> Result<StateVars> {
    let mut cur = state;
    for _ in 0..t {
        let mut node_msgs = Vec::with_capacity(cur.node_hidden.len());
        for i in 0..cur.node_hidden.len() {
            node_msgs.push(pool_node_messages(tape, i, &cur, channels, tm, mode)?);
        }
        let mut edge_msgs = Vec::with_capacity(cur.edge_hidden.len());
        for e in 0..cur.edge_hidden.len() {
            edge_msgs.push(pool_edge_messages(tape, e, &cur, channels, tm, mode)?);
        }
        let mut node_hidden = Vec::with_capacity(cur.node_hidden.len());
        for (i, m) in node_msgs.into_iter().enumerate() {
            node_hidden.push(gru_step(tape, m, cur.node_hidden[i], &tm.node_gru)?);
        }
        let mut edge_hidden = Vec::with_capacity(cur.edge_hidden.len());
        for (e, m) in edge_msgs.into_iter().enumerate() {
            edge_hidden.push(gru_step(tape, m, cur.edge_hidden[e], &tm.edge_gru)?);
        }
        cur = StateVars {
            node_hidden,
            edge_hidden,
        };
    }
    Ok(cur)
}

/// Head outputs still on the tape (logits; losses consume these).
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub cls_logits: Vec<Var>,
    /// per node, 4*|C| flat offsets
    pub bbox_offsets: Vec<Var>,
    pub pred_logits: Vec<Var>,
}

pub fn predict_heads_vars(tape: &mut Tape, state: &StateVars, tm: &TapeModel) -> Result<HeadVars> {
    let mut cls_logits = Vec::with_capacity(state.node_hidden.len());
    let mut bbox_offsets = Vec::with_capacity(state.node_hidden.len());
    for &h in &state.node_hidden {
        let l = tape.matvec(tm.cls_w, h)?;
        cls_logits.push(tape.add(l, tm.cls_b)?);
        let b = tape.matvec(tm.bbox_w, h)?;
        bbox_offsets.push(tape.add(b, tm.bbox_b)?);
    }
    let mut pred_logits = Vec::with_capacity(state.edge_hidden.len());
    for &h in &state.edge_hidden {
        let l = tape.matvec(tm.pred_w, h)?;
        pred_logits.push(tape.add(l, tm.pred_b)?);
    }
    Ok(HeadVars {
        cls_logits,
        bbox_offsets,
        pred_logits,
    })
}

/// Numerically stable softmax over a slice (same max-subtraction scheme
/// as the tape op, so values agree bitwise).
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Mean-field output distributions and per-class box offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// n x |C|
    pub class_probs: Vec<Vec<f64>>,
    /// n x |C| x 4
    pub bbox_offsets: Vec<Vec<[f64; 4]>>,
    /// |edges| x |R|
    pub pred_probs: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn from_heads(tape: &Tape, heads: &HeadVars, num_classes: usize) -> Prediction {
        let class_probs = heads
            .cls_logits
            .iter()
            .map(|&v| softmax_slice(tape.values(v)))
            .collect();
        let bbox_offsets = heads
            .bbox_offsets
            .iter()
            .map(|&v| {
                let flat = tape.values(v);
                (0..num_classes)
                    .map(|c| {
                        let r = &flat[c * 4..(c + 1) * 4];
                        [r[0], r[1], r[2], r[3]]
                    })
                    .collect()
            })
            .collect();
        let pred_probs = heads
            .pred_logits
            .iter()
            .map(|&v| softmax_slice(tape.values(v)))
            .collect();
        Prediction {
            class_probs,
            bbox_offsets,
            pred_probs,
        }
    }
}

/// Complete forward pass kept on one tape, for training.
pub struct ForwardPass {
    pub tape: Tape,
    pub tm: TapeModel,
    pub state: StateVars,
    pub heads: HeadVars,
}

pub fn forward_pass(
    sample: &SceneGraphSample,
    channels: &ChannelIndex,
    params: &ModelParams,
    t: usize,
    mode: PoolingMode,
    requires_grad: bool,
) -> Result<ForwardPass> {
    let mut tape = Tape::new();
    let tm = stage_params(&mut tape, params, requires_grad)?;
    let state = init_state_vars(&mut tape, sample, channels, &tm)?;
    let state = iterate_vars(&mut tape, state, channels, &tm, t, mode)?;
    let heads = predict_heads_vars(&mut tape, &state, &tm)?;
    Ok(ForwardPass {
        tape,
        tm,
        state,
        heads,
    })
}

/// Inference-only forward returning plain values.
pub fn run_forward(
    sample: &SceneGraphSample,
    channels: &ChannelIndex,
    params: &ModelParams,
    t: usize,
    mode: PoolingMode,
) -> Result<(Prediction, InferenceState)> {
    let fp = forward_pass(sample, channels, params, t, mode, false)?;
    let pred = Prediction::from_heads(&fp.tape, &fp.heads, params.dims.num_classes);
    let state = fp.state.extract(&fp.tape, t);
    Ok((pred, state))
}

/// Value-level state initialization.
pub fn init_state(
    sample: &SceneGraphSample,
    channels: &ChannelIndex,
    params: &ModelParams,
) -> Result<InferenceState> {
    let mut tape = Tape::new();
    let tm = stage_params(&mut tape, params, false)?;
    let sv = init_state_vars(&mut tape, sample, channels, &tm)?;
    Ok(sv.extract(&tape, 0))
}

/// Runs T rounds starting from an explicit state snapshot. Composing
/// calls is bit-identical to a single call with the summed T.
pub fn iterate(
    state: &InferenceState,
    channels: &ChannelIndex,
    params: &ModelParams,
    t: usize,
    mode: PoolingMode,
) -> Result<InferenceState> {
    let mut tape = Tape::new();
    let tm = stage_params(&mut tape, params, false)?;
    let node_hidden = state
        .node_hidden
        .iter()
        .map(|h| tape.vector(h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let edge_hidden = state
        .edge_hidden
        .iter()
        .map(|h| tape.vector(h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let sv = StateVars {
        node_hidden,
        edge_hidden,
    };
    let sv = iterate_vars(&mut tape, sv, channels, &tm, t, mode)?;
    Ok(sv.extract(&tape, state.iteration + t))
}

/// Heads applied to a state snapshot.
pub fn predict_heads(state: &InferenceState, params: &ModelParams) -> Result<Prediction> {
    let mut tape = Tape::new();
    let tm = stage_params(&mut tape, params, false)?;
    let node_hidden = state
        .node_hidden
        .iter()
        .map(|h| tape.vector(h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let edge_hidden = state
        .edge_hidden
        .iter()
        .map(|h| tape.vector(h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let sv = StateVars {
        node_hidden,
        edge_hidden,
    };
    let heads = predict_heads_vars(&mut tape, &sv, &tm)?;
    Ok(Prediction::from_heads(&tape, &heads, params.dims.num_classes))
}
