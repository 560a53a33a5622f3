//! Finite-difference verification of the end-to-end gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{build_channel_index, BBox, ChannelIndex, SceneGraphSample};
use crate::model::{
    forward_pass, ModelDims, ModelParams, PoolingMode, TapeModel,
};
use crate::tensor::{Tape, Var};
use crate::train::{compute_loss, Selection};

/// A scalar function of the parameters, still on its tape.
pub struct LossGraph {
    pub tape: Tape,
    pub tm: TapeModel,
    pub loss: Var,
}

/// Compares analytic gradients against central differences for every
/// parameter entry. Returns (max relative error, worst parameter name).
///
/// Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn grad_check<F>(params: &ModelParams, eps: f64, build: F) -> Result<(f64, String)>
where
    F: Fn(&ModelParams) -> Result<LossGraph>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut lg = build(params)?;
    let loss_value = lg.tape.scalar(lg.loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".to_string()));
    }
    lg.tape.backward(lg.loss)?;
    let analytic: Vec<Vec<f64>> = lg
        .tm
        .all
        .iter()
        .map(|&v| lg.tape.grad(v).to_vec())
        .collect();

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let names: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    for (k, name) in names.iter().enumerate() {
        let len = params.tensors()[k].len();
        for i in 0..len {
            let mut hi = params.clone();
            hi.tensors_mut()[k].values[i] += eps;
            let mut lo = params.clone();
            lo.tensors_mut()[k].values[i] -= eps;
            let eval = |p: &ModelParams| -> Result<f64> {
                let lg = build(p)?;
                let v = lg.tape.scalar(lg.loss);
                if !v.is_finite() {
                    return Err(Error::NonFinite("grad_check objective".to_string()));
                }
                Ok(v)
            };
            let numeric = (eval(&hi)? - eval(&lo)?) / (2.0 * eps);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]");
            }
        }
    }
    Ok((max_rel, worst))
}

/// Seeded 3-node fully connected sample (6 edges) with labeled classes,
/// offsets, and predicates, used by the CLI gradient check.
pub fn seeded_check_sample(dims: ModelDims, seed: u64) -> (SceneGraphSample, ChannelIndex, Selection) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = dims.feature_dim;
    let n = 3usize;
    let mut proposals = Vec::new();
    for _ in 0..n {
        let x1 = rng.gen_range(0.0..80.0);
        let y1 = rng.gen_range(0.0..80.0);
        proposals.push(
            BBox::new(
                x1,
                y1,
                x1 + rng.gen_range(5.0..20.0),
                y1 + rng.gen_range(5.0..20.0),
            )
            .unwrap(),
        );
    }
    let node_features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut edge_features = BTreeMap::new();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edge_features.insert(
                    (i, j),
                    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
                );
                edges.push((i, j));
            }
        }
    }
    let gt_classes: Vec<usize> = (0..n)
        .map(|_| rng.gen_range(1..dims.num_classes.max(2)))
        .collect();
    let gt_offsets: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            ]
        })
        .collect();
    let mut gt_predicates = BTreeMap::new();
    gt_predicates.insert((0, 1), rng.gen_range(1..dims.num_predicates.max(2)));
    gt_predicates.insert((2, 0), rng.gen_range(1..dims.num_predicates.max(2)));
    let sample = SceneGraphSample {
        image_id: "gradcheck".into(),
        width: 100.0,
        height: 100.0,
        proposals,
        node_features,
        edge_features,
        gt_classes,
        gt_offsets,
        gt_predicates: gt_predicates.clone(),
    };
    let channels = build_channel_index(&edges, n).unwrap();
    let selection = Selection {
        boxes: (0..n).collect(),
        edges: edges
            .iter()
            .map(|&(i, j)| (i, j, *gt_predicates.get(&(i, j)).unwrap_or(&0)))
            .collect(),
    };
    (sample, channels, selection)
}

/// Full-model gradient check through `t` message passing rounds.
pub fn grad_check_model(
    dims: ModelDims,
    seed: u64,
    t: usize,
    mode: PoolingMode,
    eps: f64,
) -> Result<(f64, String)> {
    let (sample, channels, selection) = seeded_check_sample(dims, seed);
    let params = ModelParams::init(dims, seed.wrapping_add(1));
    grad_check(&params, eps, |p| {
        let mut fp = forward_pass(&sample, &channels, p, t, mode, true)?;
        let (_, loss) = compute_loss(&mut fp.tape, &fp.heads, &sample, &selection, 1.0)?;
        Ok(LossGraph {
            tape: fp.tape,
            tm: fp.tm,
            loss,
        })
    })
}
