//! Losses, target encoding, minibatch sampling, optimizer, and the
//! epoch loop.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_channel_index, BBox, SceneGraphSample};
use crate::model::{
    accumulate_grads, forward_pass, HeadVars, ModelDims, ModelParams, PoolingMode,
};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// message passing rounds T
    pub iterations: usize,
    pub pooling_mode: PoolingMode,
    pub max_boxes: usize,
    pub max_edges: usize,
    pub bbox_loss_weight: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            iterations: 2,
            pooling_mode: PoolingMode::Weighted,
            max_boxes: 128,
            max_edges: 128,
            bbox_loss_weight: 1.0,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.bbox_loss_weight >= 0.0) {
            return Err(Error::Config(format!(
                "bbox_loss_weight must be non-negative, got {}",
                self.bbox_loss_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub pred_loss: f64,
    pub bbox_loss: f64,
    pub total: f64,
}

/// Cross-entropy of a softmax distribution given its logits, computed
/// in log space.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let k = tape.values(logits).len();
    if label >= k {
        return Err(Error::Validation(format!(
            "cross_entropy label {label} out of range for {k} classes"
        )));
    }
    let log_probs = tape.log_softmax(logits)?;
    let picked = tape.pick(log_probs, label)?;
    tape.scale(picked, -1.0)
}

/// Sum of absolute differences against a constant target.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    if tape.values(pred).len() != target.len() {
        return Err(Error::shape(
            "l1_loss",
            format!("{} vs {}", tape.values(pred).len(), target.len()),
        ));
    }
    let t = tape.vector(target.to_vec())?;
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d)?;
    tape.sum(a)
}

/// Box regression targets in center/size form:
/// ((gx-px)/pw, (gy-py)/ph, log(gw/pw), log(gh/ph)).
pub fn encode_offsets(proposal: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    let (pw, ph) = (proposal.width(), proposal.height());
    if pw <= 0.0 || ph <= 0.0 {
        return Err(Error::Validation(format!(
            "degenerate proposal {:?} has zero width or height",
            proposal
        )));
    }
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    Ok([
        (gcx - pcx) / pw,
        (gcy - pcy) / ph,
        (gt.width() / pw).ln(),
        (gt.height() / ph).ln(),
    ])
}

/// Boxes and edges selected for one training step. Edge order here is
/// the forward pass's edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub boxes: Vec<usize>,
    /// (subject, object, predicate label); unlabeled filler pairs carry 0
    pub edges: Vec<(usize, usize, usize)>,
}

/// Labeled edges first, then seeded-choice unlabeled pairs as "none"
/// up to the edge quota.
pub fn sample_minibatch(
    s: &SceneGraphSample,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Selection {
    let n = s.num_nodes();
    let boxes: Vec<usize> = if n <= cfg.max_boxes {
        (0..n).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        let mut kept: Vec<usize> = all.into_iter().take(cfg.max_boxes).collect();
        kept.sort_unstable();
        kept
    };
    let selected: BTreeSet<usize> = boxes.iter().cloned().collect();

    let mut edges: Vec<(usize, usize, usize)> = s
        .gt_predicates
        .iter()
        .filter(|(&(i, j), _)| selected.contains(&i) && selected.contains(&j))
        .map(|(&(i, j), &p)| (i, j, p))
        .collect();
    let labeled: BTreeSet<(usize, usize)> = edges.iter().map(|&(i, j, _)| (i, j)).collect();
    let mut unlabeled: Vec<(usize, usize)> = Vec::new();
    for &i in &boxes {
        for &j in &boxes {
            if i != j && !labeled.contains(&(i, j)) {
                unlabeled.push((i, j));
            }
        }
    }
    unlabeled.shuffle(rng);
    for (i, j) in unlabeled {
        if edges.len() >= cfg.max_edges {
            break;
        }
        edges.push((i, j, 0));
    }
    if edges.len() > cfg.max_edges && cfg.max_edges < labeled.len() {
        // quota smaller than the labeled set: honor the quota
        edges.truncate(cfg.max_edges);
    }
    Selection { boxes, edges }
}

/// Mean cross-entropy over selected boxes and edges plus weighted mean
/// l1 over non-background boxes (ground-truth class row only).
pub fn compute_loss(
    tape: &mut Tape,
    heads: &HeadVars,
    s: &SceneGraphSample,
    selection: &Selection,
    bbox_loss_weight: f64,
) -> Result<(LossBreakdown, Var)> {
    let mut cls_terms: Vec<Var> = Vec::new();
    let mut bbox_terms: Vec<Var> = Vec::new();
    for &i in &selection.boxes {
        let label = s.gt_classes[i];
        cls_terms.push(cross_entropy(tape, heads.cls_logits[i], label)?);
        if label != 0 {
            let row = tape.slice(heads.bbox_offsets[i], label * 4, 4)?;
            bbox_terms.push(l1_loss(tape, row, &s.gt_offsets[i])?);
        }
    }
    let mut pred_terms: Vec<Var> = Vec::new();
    for (e, &(_, _, label)) in selection.edges.iter().enumerate() {
        pred_terms.push(cross_entropy(tape, heads.pred_logits[e], label)?);
    }

    let mean = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        if terms.is_empty() {
            return tape.vector(vec![0.0]);
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        tape.scale(acc, 1.0 / terms.len() as f64)
    };
    let cls = mean(tape, &cls_terms)?;
    let pred = mean(tape, &pred_terms)?;
    let bbox = mean(tape, &bbox_terms)?;
    let bbox_weighted = tape.scale(bbox, bbox_loss_weight)?;
    let partial = tape.add(cls, pred)?;
    let total = tape.add(partial, bbox_weighted)?;
    Ok((
        LossBreakdown {
            cls_loss: tape.scalar(cls),
            pred_loss: tape.scalar(pred),
            bbox_loss: tape.scalar(bbox),
            total: tape.scalar(total),
        },
        total,
    ))
}

/// SGD or Adam over the parameter list; Adam keeps per-entry moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams) -> Result<()> {
        for t in params.tensors() {
            if t.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {}", t.name)));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for tensor in params.tensors_mut() {
                    for (v, g) in tensor.values.iter_mut().zip(&tensor.grad) {
                        *v -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
                    for (i, (v, g)) in tensor.values.iter_mut().zip(&tensor.grad).enumerate() {
                        let m = &mut self.m[k][i];
                        let s = &mut self.v[k][i];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        let m_hat = *m / bc1;
                        let s_hat = *s / bc2;
                        *v -= self.lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls_loss: f64,
    pub pred_loss: f64,
    pub bbox_loss: f64,
    pub total: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    /// Training-log line format.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} cls_loss={:.6} pred_loss={:.6} bbox_loss={:.6} total={:.6} wall_ms={}",
            self.epoch, self.cls_loss, self.pred_loss, self.bbox_loss, self.total, self.wall_ms
        )
    }
}

/// One gradient step on one sample; returns the loss breakdown.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    s: &SceneGraphSample,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<LossBreakdown> {
    let selection = sample_minibatch(s, cfg, rng);
    let pairs: Vec<(usize, usize)> = selection.edges.iter().map(|&(i, j, _)| (i, j)).collect();
    let channels = build_channel_index(&pairs, s.num_nodes())?;
    let mut fp = forward_pass(s, &channels, params, cfg.iterations, cfg.pooling_mode, true)?;
    let (breakdown, total) = compute_loss(
        &mut fp.tape,
        &fp.heads,
        s,
        &selection,
        cfg.bbox_loss_weight,
    )?;
    fp.tape.backward(total)?;
    params.zero_grads();
    accumulate_grads(params, &fp.tape, &fp.tm);
    opt.step(params)?;
    Ok(breakdown)
}

/// Epoch loop: per-image forward, loss, backward, optimizer step, with
/// a seeded and therefore reproducible trajectory.
pub fn fit(
    samples: &[SceneGraphSample],
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no images in dataset".to_string()));
    }
    let mut params = ModelParams::init(dims, cfg.seed);
    let mut opt = Optimizer::new(cfg, &params);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5367_4d50_7472_6e31);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (idx, s) in samples.iter().enumerate() {
            let b = train_step(&mut params, &mut opt, s, cfg, &mut rng).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} (epoch {epoch}, image {} [{}])",
                    idx, s.image_id
                )),
                other => other,
            })?;
            sums.0 += b.cls_loss;
            sums.1 += b.pred_loss;
            sums.2 += b.bbox_loss;
            sums.3 += b.total;
        }
        let n = samples.len() as f64;
        records.push(EpochRecord {
            epoch,
            cls_loss: sums.0 / n,
            pred_loss: sums.1 / n,
            bbox_loss: sums.2 / n,
            total: sums.3 / n,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((params, records))
}

/// Inverse of [`encode_offsets`]; optionally clips to image bounds.
pub fn decode_offsets(proposal: &BBox, t: &[f64; 4], bounds: Option<(f64, f64)>) -> Result<BBox> {
    let (pw, ph) = (proposal.width(), proposal.height());
    if pw <= 0.0 || ph <= 0.0 {
        return Err(Error::Validation(format!(
            "degenerate proposal {:?} has zero width or height",
            proposal
        )));
    }
    let (pcx, pcy) = proposal.center();
    let cx = pcx + t[0] * pw;
    let cy = pcy + t[1] * ph;
    let w = pw * t[2].exp();
    let h = ph * t[3].exp();
    let (mut x1, mut y1, mut x2, mut y2) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
    if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("decode_offsets".to_string()));
    }
    if let Some((iw, ih)) = bounds {
        x1 = x1.clamp(0.0, iw);
        x2 = x2.clamp(0.0, iw);
        y1 = y1.clamp(0.0, ih);
        y2 = y2.clamp(0.0, ih);
    } else {
        // corner-form invariant still requires non-negative coordinates
        x1 = x1.max(0.0);
        y1 = y1.max(0.0);
        x2 = x2.max(x1);
        y2 = y2.max(y1);
    }
    BBox::new(x1, y1, x2, y2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VocabMeta;
    use std::collections::BTreeMap;

    #[test]
    fn cross_entropy_cases() {
        // uniform over 4 -> ln 4
        let mut tape = Tape::new();
        let logits = tape.vector(vec![0.0; 4]).unwrap();
        let ce = cross_entropy(&mut tape, logits, 2).unwrap();
        assert!((tape.scalar(ce) - 4.0f64.ln()).abs() < 1e-12);

        // near-one-hot correct -> near 0
        let mut tape = Tape::new();
        let logits = tape.vector(vec![100.0, 0.0]).unwrap();
        let ce = cross_entropy(&mut tape, logits, 0).unwrap();
        assert!(tape.scalar(ce).abs() < 1e-12);

        // probs [0.7, 0.3], label 1 -> -ln 0.3
        let mut tape = Tape::new();
        let logits = tape.vector(vec![0.7f64.ln(), 0.3f64.ln()]).unwrap();
        let ce = cross_entropy(&mut tape, logits, 1).unwrap();
        assert!((tape.scalar(ce) - 1.2039728043259361).abs() < 1e-5);

        // label out of range
        let mut tape = Tape::new();
        let logits = tape.vector(vec![0.0; 3]).unwrap();
        assert!(cross_entropy(&mut tape, logits, 3).is_err());
    }

    #[test]
    fn l1_loss_cases() {
        let mut tape = Tape::new();
        let p = tape.vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = l1_loss(&mut tape, p, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let mut tape = Tape::new();
        let p = tape.vector(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = l1_loss(&mut tape, p, &[0.0; 4]).unwrap();
        assert_eq!(tape.scalar(l), 1.0);

        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut tape = Tape::new();
            let p = tape.vector(a.clone()).unwrap();
            let l = l1_loss(&mut tape, p, &b).unwrap();
            let want: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!((tape.scalar(l) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_offsets_cases() {
        let p = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(encode_offsets(&p, &p).unwrap(), [0.0; 4]);

        let gt = BBox::new(0.0, 0.0, 20.0, 10.0).unwrap();
        let t = encode_offsets(&p, &gt).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(t[3], 0.0);

        let degenerate = BBox::new(1.0, 1.0, 1.0, 5.0).unwrap();
        assert!(encode_offsets(&degenerate, &gt).is_err());
    }

    #[test]
    fn offsets_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let mk = |rng: &mut ChaCha20Rng| {
                let x1 = rng.gen_range(0.0..200.0);
                let y1 = rng.gen_range(0.0..200.0);
                BBox::new(
                    x1,
                    y1,
                    x1 + rng.gen_range(1.0..100.0),
                    y1 + rng.gen_range(1.0..100.0),
                )
                .unwrap()
            };
            let p = mk(&mut rng);
            let g = mk(&mut rng);
            let t = encode_offsets(&p, &g).unwrap();
            let back = decode_offsets(&p, &t, None).unwrap();
            for (a, b) in [
                (back.x1, g.x1),
                (back.y1, g.y1),
                (back.x2, g.x2),
                (back.y2, g.y2),
            ] {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    fn labeled_sample() -> SceneGraphSample {
        let d = 4;
        let mut edge_features = BTreeMap::new();
        for i in 0..3usize {
            for j in 0..3usize {
                if i != j {
                    edge_features.insert((i, j), vec![0.1 * (i as f64) - 0.2 * (j as f64); d]);
                }
            }
        }
        let mut gt_predicates = BTreeMap::new();
        gt_predicates.insert((0, 1), 1);
        gt_predicates.insert((1, 2), 2);
        SceneGraphSample {
            image_id: "s".into(),
            width: 100.0,
            height: 100.0,
            proposals: vec![
                BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                BBox::new(20.0, 0.0, 40.0, 15.0).unwrap(),
                BBox::new(5.0, 30.0, 25.0, 60.0).unwrap(),
            ],
            node_features: vec![vec![0.5; d], vec![-0.5; d], vec![0.25; d]],
            edge_features,
            gt_classes: vec![1, 2, 1],
            gt_offsets: vec![[0.1, -0.1, 0.0, 0.05]; 3],
            gt_predicates,
        }
    }

    #[test]
    fn sample_minibatch_cases() {
        let s = labeled_sample();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sel = sample_minibatch(&s, &cfg, &mut rng);
        assert_eq!(sel.boxes, vec![0, 1, 2]);
        // both labeled edges first, then up to 4 none fillers
        assert_eq!(sel.edges[0].2, 1);
        assert_eq!(sel.edges[1].2, 2);
        assert_eq!(sel.edges.len(), 6);
        assert!(sel.edges[2..].iter().all(|e| e.2 == 0));

        let cfg0 = TrainConfig {
            max_edges: 0,
            ..cfg.clone()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sel0 = sample_minibatch(&s, &cfg0, &mut rng);
        assert!(sel0.edges.is_empty());

        // determinism
        let mut r1 = ChaCha20Rng::seed_from_u64(9);
        let mut r2 = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(
            sample_minibatch(&s, &cfg, &mut r1),
            sample_minibatch(&s, &cfg, &mut r2)
        );
    }

    #[test]
    fn compute_loss_uniform_and_perfect() {
        // uniform predictions: cls -> ln|C|, pred -> ln|R|
        let s = labeled_sample();
        let dims = ModelDims {
            feature_dim: 4,
            hidden: 4,
            num_classes: 4,
            num_predicates: 3,
        };
        let mut params = ModelParams::zeros(dims);
        // zero params give uniform heads and zero offsets
        let cfg = TrainConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let sel = sample_minibatch(&s, &cfg, &mut rng);
        let pairs: Vec<(usize, usize)> = sel.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let channels = build_channel_index(&pairs, 3).unwrap();
        let mut fp = forward_pass(&s, &channels, &params, 2, PoolingMode::Weighted, false).unwrap();
        let (b, _) = compute_loss(&mut fp.tape, &fp.heads, &s, &sel, 1.0).unwrap();
        assert!((b.cls_loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((b.pred_loss - 3.0f64.ln()).abs() < 1e-12);
        // zero offsets vs targets [0.1, -0.1, 0.0, 0.05] -> mean 0.25
        assert!((b.bbox_loss - 0.25).abs() < 1e-12);
        assert!((b.total - (b.cls_loss + b.pred_loss + b.bbox_loss)).abs() < 1e-12);

        // loss is zero iff predictions are exactly right: push the heads
        // toward one-hot and offsets toward targets
        params.cls_w.values.iter_mut().for_each(|v| *v = 0.0);
        let sz = TrainConfig::default();
        let mut s2 = s.clone();
        s2.gt_offsets = vec![[0.0; 4]; 3];
        let mut fp = forward_pass(&s2, &channels, &params, 0, PoolingMode::Weighted, false).unwrap();
        let (b2, _) = compute_loss(&mut fp.tape, &fp.heads, &s2, &sel, sz.bbox_loss_weight).unwrap();
        assert!(b2.total > 0.0); // uniform is not one-hot
    }

    #[test]
    fn optimizer_step_cases() {
        let dims = ModelDims {
            feature_dim: 2,
            hidden: 2,
            num_classes: 2,
            num_predicates: 2,
        };
        // zero grads -> unchanged (both optimizers)
        for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
            let cfg = TrainConfig {
                optimizer: kind,
                ..TrainConfig::default()
            };
            let mut p = ModelParams::init(dims, 3);
            let before = p.clone();
            let mut opt = Optimizer::new(&cfg, &p);
            p.zero_grads();
            opt.step(&mut p).unwrap();
            assert_eq!(p, before);
        }

        // SGD with lr=1 and g=theta zeroes the parameter
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::init(dims, 3);
        let theta0 = p.v1.values.clone();
        p.zero_grads();
        p.v1.grad.copy_from_slice(&theta0);
        let mut opt = Optimizer::new(&cfg, &p);
        opt.step(&mut p).unwrap();
        assert!(p.v1.values.iter().all(|v| *v == 0.0));

        // SGD with lr=0 changes nothing, bitwise
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: f64::MIN_POSITIVE,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::init(dims, 5);
        let before = p.clone();
        p.zero_grads();
        let mut opt = Optimizer::new(&cfg, &p);
        opt.step(&mut p).unwrap();
        for (a, b) in p
            .tensors()
            .iter()
            .flat_map(|t| &t.values)
            .zip(before.tensors().iter().flat_map(|t| &t.values))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // Adam single scalar step matches the textbook formula
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::zeros(dims);
        p.v1.values[0] = 3.0;
        p.zero_grads();
        p.v1.grad[0] = 2.0;
        let mut opt = Optimizer::new(&cfg, &p);
        opt.step(&mut p).unwrap();
        let g: f64 = 2.0;
        let m = (1.0 - beta1) * g / (1.0 - beta1);
        let v = (1.0 - beta2) * g * g / (1.0 - beta2);
        let want = 3.0 - 0.1 * m / (v.sqrt() + eps);
        assert!((p.v1.values[0] - want).abs() < 1e-12);

        // non-finite grad errors with the parameter name
        let mut p = ModelParams::zeros(dims);
        p.zero_grads();
        p.w2.grad[0] = f64::NAN;
        let cfg = TrainConfig::default();
        let mut opt = Optimizer::new(&cfg, &p);
        let err = opt.step(&mut p).unwrap_err().to_string();
        assert!(err.contains("w2"), "{err}");
    }

    #[test]
    fn fit_zero_epochs_and_determinism() {
        let s = labeled_sample();
        let vocab = VocabMeta {
            class_names: vec!["background".into(), "a".into(), "b".into(), "c".into()],
            predicate_names: vec!["none".into(), "p".into(), "q".into()],
        };
        vocab.validate().unwrap();
        let dims = ModelDims {
            feature_dim: 4,
            hidden: 4,
            num_classes: 4,
            num_predicates: 3,
        };
        let cfg = TrainConfig {
            epochs: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let (p, recs) = fit(&[s.clone()], dims, &cfg).unwrap();
        assert!(recs.is_empty());
        assert_eq!(p, ModelParams::init(dims, 11));

        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let (p1, r1) = fit(&[s.clone()], dims, &cfg).unwrap();
        let (p2, r2) = fit(&[s], dims, &cfg).unwrap();
        assert_eq!(p1, p2);
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }

    #[test]
    fn fit_loss_decreases_early() {
        let s = labeled_sample();
        let dims = ModelDims {
            feature_dim: 4,
            hidden: 8,
            num_classes: 4,
            num_predicates: 3,
        };
        let cfg = TrainConfig {
            epochs: 5,
            seed: 2,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let (_, recs) = fit(&[s], dims, &cfg).unwrap();
        let drops = recs
            .windows(2)
            .filter(|w| w[1].total <= w[0].total)
            .count();
        assert!(drops >= 3, "loss failed to trend down: {:?}", recs);
    }
}
