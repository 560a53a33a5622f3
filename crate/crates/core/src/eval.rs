//! IoU, NMS, triplet extraction and ranking, recall@K for the three
//! evaluation tasks, and per-predicate recall@5.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_channel_index, build_edge_set, BBox, ChannelIndex, EdgeSetMode, SceneGraphSample, VocabMeta};
use crate::model::{run_forward, ModelParams, PoolingMode, Prediction};
pub use crate::train::decode_offsets;

/// NMS settings applied to detected boxes before SGGen scoring.
pub const SGGEN_NMS_IOU: f64 = 0.3;
pub const SGGEN_NMS_MAX_KEEP: usize = 50;
pub const SGGEN_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lower")]
pub enum Task {
    /// ground-truth boxes and classes; predict predicates
    PredCls,
    /// ground-truth boxes; predict classes and predicates
    SgCls,
    /// predicted boxes, classes, and predicates
    SgGen,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::PredCls => write!(f, "predcls"),
            Task::SgCls => write!(f, "sgcls"),
            Task::SgGen => write!(f, "sggen"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "predcls" => Ok(Task::PredCls),
            "sgcls" => Ok(Task::SgCls),
            "sggen" => Ok(Task::SgGen),
            other => Err(Error::Config(format!(
                "unknown task {other:?}; expected predcls, sgcls, or sggen"
            ))),
        }
    }
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy descending-score suppression. Score ties break toward the
/// lower index.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64, max_keep: usize) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::shape(
            "nms",
            format!("{} boxes vs {} scores", boxes.len(), scores.len()),
        ));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= iou_thresh) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Scored (subject, predicate, object) candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletPrediction {
    pub subj: usize,
    pub pred: usize,
    pub obj: usize,
    pub score: f64,
    pub subj_box: BBox,
    pub obj_box: BBox,
    pub subj_class: usize,
    pub obj_class: usize,
}

fn argmax_nonzero(row: &[f64]) -> (usize, f64) {
    let mut best = 1;
    for i in 2..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Per ordered pair: one triplet from the argmax predicate, skipped when
/// the argmax is "none"; score is the product of the class and predicate
/// factor probabilities (class factors are 1 under PredCls). Sorted by
/// descending score with ties broken by (subj, obj).
pub fn extract_triplets(
    pred: &Prediction,
    s: &SceneGraphSample,
    channels: &ChannelIndex,
    task: Task,
    k_cap: usize,
) -> Result<Vec<TripletPrediction>> {
    let n = s.num_nodes();
    // per node: (class, class score factor, box)
    let mut node_info: Vec<Option<(usize, f64, BBox)>> = Vec::with_capacity(n);
    match task {
        Task::PredCls => {
            for i in 0..n {
                let c = s.gt_classes[i];
                node_info.push(if c == 0 {
                    None
                } else {
                    Some((c, 1.0, s.proposals[i]))
                });
            }
        }
        Task::SgCls => {
            for i in 0..n {
                let (c, p) = argmax_nonzero(&pred.class_probs[i]);
                node_info.push(Some((c, p, s.proposals[i])));
            }
        }
        Task::SgGen => {
            let mut boxes = Vec::with_capacity(n);
            let mut scores = Vec::with_capacity(n);
            let mut classes = Vec::with_capacity(n);
            let mut probs = Vec::with_capacity(n);
            for i in 0..n {
                let (c, p) = argmax_nonzero(&pred.class_probs[i]);
                let t = pred.bbox_offsets[i][c];
                let decoded = decode_offsets(&s.proposals[i], &t, Some((s.width, s.height)))?;
                boxes.push(decoded);
                scores.push(p);
                classes.push(c);
                probs.push(p);
            }
            let kept = nms(&boxes, &scores, SGGEN_NMS_IOU, SGGEN_NMS_MAX_KEEP)?;
            let kept: std::collections::BTreeSet<usize> = kept.into_iter().collect();
            for i in 0..n {
                node_info.push(if kept.contains(&i) {
                    Some((classes[i], probs[i], boxes[i]))
                } else {
                    None
                });
            }
        }
    }

    let mut out: Vec<TripletPrediction> = Vec::new();
    for (e, &(i, j)) in channels.edges.iter().enumerate() {
        let (Some((ci, pi, bi)), Some((cj, pj, bj))) = (node_info[i], node_info[j]) else {
            continue;
        };
        let row = &pred.pred_probs[e];
        let best = argmax(row);
        if best == 0 {
            continue;
        }
        out.push(TripletPrediction {
            subj: i,
            pred: best,
            obj: j,
            score: pi * row[best] * pj,
            subj_box: bi,
            obj_box: bj,
            subj_class: ci,
            obj_class: cj,
        });
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.subj, a.obj).cmp(&(b.subj, b.obj)))
    });
    out.truncate(k_cap);
    Ok(out)
}

/// Fraction of ground-truth triplets matched within the top k
/// predictions; `None` when the image has no ground-truth triplets.
/// Matching is greedy in rank order and each predicted triplet consumes
/// at most one ground-truth triplet.
pub fn recall_at_k(
    triplets: &[TripletPrediction],
    s: &SceneGraphSample,
    k: usize,
    task: Task,
) -> Result<Option<f64>> {
    let gt = s.gt_triplets();
    if gt.is_empty() {
        return Ok(None);
    }
    let gt_boxes: Vec<Option<BBox>> = if matches!(task, Task::SgGen) {
        s.proposals
            .iter()
            .zip(&s.gt_offsets)
            .zip(&s.gt_classes)
            .map(|((p, t), &c)| {
                if c == 0 {
                    Ok(None)
                } else {
                    decode_offsets(p, t, Some((s.width, s.height))).map(Some)
                }
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; s.num_nodes()]
    };
    let mut matched = vec![false; gt.len()];
    for t in triplets.iter().take(k) {
        for (g, &(i, p, j)) in gt.iter().enumerate() {
            if matched[g] || t.pred != p {
                continue;
            }
            let hit = match task {
                Task::PredCls => t.subj == i && t.obj == j,
                Task::SgCls => {
                    t.subj == i
                        && t.obj == j
                        && t.subj_class == s.gt_classes[i]
                        && t.obj_class == s.gt_classes[j]
                }
                Task::SgGen => {
                    t.subj_class == s.gt_classes[i]
                        && t.obj_class == s.gt_classes[j]
                        && gt_boxes[i]
                            .map(|b| iou(&t.subj_box, &b) >= SGGEN_MATCH_IOU)
                            .unwrap_or(false)
                        && gt_boxes[j]
                            .map(|b| iou(&t.obj_box, &b) >= SGGEN_MATCH_IOU)
                            .unwrap_or(false)
                }
            };
            if hit {
                matched[g] = true;
                break;
            }
        }
    }
    let hits = matched.iter().filter(|m| **m).count();
    Ok(Some(hits as f64 / gt.len() as f64))
}

/// Per labeled relationship, whether the true predicate ranks within the
/// top 5 real (non-none) predicates of that edge's distribution; ties
/// break toward the lower index. Aggregated as (hits, total) per
/// predicate type.
pub fn per_predicate_recall5(
    pred: &Prediction,
    s: &SceneGraphSample,
    channels: &ChannelIndex,
) -> BTreeMap<usize, (usize, usize)> {
    let mut out: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (e, &(i, j)) in channels.edges.iter().enumerate() {
        let Some(&p) = s.gt_predicates.get(&(i, j)) else {
            continue;
        };
        if p == 0 {
            continue;
        }
        let row = &pred.pred_probs[e];
        let mut real: Vec<usize> = (1..row.len()).collect();
        real.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let hit = real.iter().take(5).any(|&c| c == p);
        let entry = out.entry(p).or_insert((0, 0));
        entry.1 += 1;
        if hit {
            entry.0 += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iterations: usize,
    pub pooling_mode: PoolingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateRecall {
    pub name: String,
    pub total: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub r_at_50: f64,
    pub r_at_100: f64,
    /// PredCls only; sorted by frequency descending
    pub per_predicate_recall5: Vec<PredicateRecall>,
    pub images_evaluated: usize,
    pub images_skipped: usize,
}

impl EvalReport {
    /// Fixed-field-order key/value text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task: {}\n", self.task));
        out.push_str(&format!("images_evaluated: {}\n", self.images_evaluated));
        out.push_str(&format!("images_skipped: {}\n", self.images_skipped));
        out.push_str(&format!("r_at_50: {:.6}\n", self.r_at_50));
        out.push_str(&format!("r_at_100: {:.6}\n", self.r_at_100));
        if !self.per_predicate_recall5.is_empty() {
            out.push_str("per_predicate_recall5:\n");
            for p in &self.per_predicate_recall5 {
                out.push_str(&format!("  {} total={} recall={:.6}\n", p.name, p.total, p.recall));
            }
        }
        out
    }
}

/// Runs the full task pipeline over a dataset. Images without
/// ground-truth triplets are excluded from the image-wise recall mean.
pub fn evaluate(
    samples: &[SceneGraphSample],
    vocab: &VocabMeta,
    params: &ModelParams,
    cfg: &EvalConfig,
    task: Task,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("no images".to_string()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].image_id.cmp(&samples[b].image_id));

    let mut sum50 = 0.0;
    let mut sum100 = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut per_pred: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &idx in &order {
        let s = &samples[idx];
        let labeled = std::collections::BTreeSet::new();
        let edges = build_edge_set(s.num_nodes(), &labeled, EdgeSetMode::Test)?;
        let channels = build_channel_index(&edges, s.num_nodes())?;
        let (pred, _) = run_forward(s, &channels, params, cfg.iterations, cfg.pooling_mode)
            .map_err(|e| Error::Eval(format!("image {}: {e}", s.image_id)))?;
        if matches!(task, Task::PredCls) {
            for (p, (h, t)) in per_predicate_recall5(&pred, s, &channels) {
                let entry = per_pred.entry(p).or_insert((0, 0));
                entry.0 += h;
                entry.1 += t;
            }
        }
        let triplets = extract_triplets(&pred, s, &channels, task, 100)?;
        match recall_at_k(&triplets, s, 50, task)? {
            Some(r50) => {
                let r100 = recall_at_k(&triplets, s, 100, task)?.unwrap();
                sum50 += r50;
                sum100 += r100;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Eval(
            "no images with ground-truth triplets to evaluate".to_string(),
        ));
    }
    let mut per_predicate: Vec<PredicateRecall> = per_pred
        .into_iter()
        .map(|(p, (h, t))| PredicateRecall {
            name: vocab
                .predicate_names
                .get(p)
                .cloned()
                .unwrap_or_else(|| format!("predicate_{p}")),
            total: t,
            recall: h as f64 / t as f64,
        })
        .collect();
    // mirror the frequency-sorted table layout
    per_predicate.sort_by(|a, b| b.total.cmp(&a.total).then(a.name.cmp(&b.name)));
    Ok(EvalReport {
        task,
        r_at_50: sum50 / evaluated as f64,
        r_at_100: sum100 / evaluated as f64,
        per_predicate_recall5: per_predicate,
        images_evaluated: evaluated,
        images_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeMap as Map;

    #[test]
    fn iou_cases() {
        let a = BBox::new(1.0, 1.0, 5.0, 7.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);

        let b = BBox::new(100.0, 100.0, 110.0, 110.0).unwrap();
        assert_eq!(iou(&a, &b), 0.0);

        let p = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let q = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
        assert!((iou(&p, &q) - 1.0 / 3.0).abs() < 1e-12);

        // zero-area union
        let z1 = BBox::new(3.0, 3.0, 3.0, 3.0).unwrap();
        assert_eq!(iou(&z1, &z1), 0.0);
    }

    fn brute_force_nms(
        boxes: &[BBox],
        scores: &[f64],
        thresh: f64,
        max_keep: usize,
    ) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..boxes.len()).collect();
        let mut kept = Vec::new();
        while kept.len() < max_keep && !remaining.is_empty() {
            // highest score, lowest index on tie
            let mut best = remaining[0];
            for &i in &remaining {
                if scores[i] > scores[best] || (scores[i] == scores[best] && i < best) {
                    best = i;
                }
            }
            kept.push(best);
            remaining.retain(|&i| i != best && iou(&boxes[i], &boxes[best]) <= thresh);
        }
        kept
    }

    #[test]
    fn nms_cases() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(nms(&[b], &[0.5], 0.3, 50).unwrap(), vec![0]);

        let kept = nms(&[b, b], &[0.9, 0.8], 0.3, 50).unwrap();
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn nms_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.gen_range(1..8);
            let boxes: Vec<BBox> = (0..n)
                .map(|_| {
                    let x1 = rng.gen_range(0.0..50.0);
                    let y1 = rng.gen_range(0.0..50.0);
                    BBox::new(
                        x1,
                        y1,
                        x1 + rng.gen_range(1.0..30.0),
                        y1 + rng.gen_range(1.0..30.0),
                    )
                    .unwrap()
                })
                .collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let max_keep = rng.gen_range(1..6);
            let thresh = rng.gen_range(0.1..0.7);
            assert_eq!(
                nms(&boxes, &scores, thresh, max_keep).unwrap(),
                brute_force_nms(&boxes, &scores, thresh, max_keep)
            );
        }
    }

    fn simple_sample(n: usize, preds: &[(usize, usize, usize)]) -> SceneGraphSample {
        let mut gt_predicates = Map::new();
        for &(i, j, p) in preds {
            gt_predicates.insert((i, j), p);
        }
        SceneGraphSample {
            image_id: "e".into(),
            width: 100.0,
            height: 100.0,
            proposals: (0..n)
                .map(|i| BBox::new(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0).unwrap())
                .collect(),
            node_features: vec![vec![0.0; 2]; n],
            edge_features: Map::new(),
            gt_classes: (0..n).map(|i| 1 + (i % 2)).collect(),
            gt_offsets: vec![[0.0; 4]; n],
            gt_predicates,
        }
    }

    fn full_channels(n: usize) -> ChannelIndex {
        let labeled = std::collections::BTreeSet::new();
        let edges = build_edge_set(n, &labeled, EdgeSetMode::Test).unwrap();
        build_channel_index(&edges, n).unwrap()
    }

    /// one-hot-ish prediction for the sample's ground truth
    fn one_hot_prediction(s: &SceneGraphSample, ci: &ChannelIndex, c: usize, r: usize) -> Prediction {
        let one_hot = |k: usize, hot: usize| {
            let mut v = vec![0.0; k];
            v[hot] = 1.0;
            v
        };
        Prediction {
            class_probs: s.gt_classes.iter().map(|&g| one_hot(c, g)).collect(),
            bbox_offsets: s
                .gt_classes
                .iter()
                .map(|_| vec![[0.0; 4]; c])
                .collect(),
            pred_probs: ci
                .edges
                .iter()
                .map(|&(i, j)| one_hot(r, *s.gt_predicates.get(&(i, j)).unwrap_or(&0)))
                .collect(),
        }
    }

    #[test]
    fn extract_triplets_cases() {
        let s = simple_sample(2, &[(0, 1, 1)]);
        let ci = full_channels(2);
        let pred = one_hot_prediction(&s, &ci, 3, 2);
        let t = extract_triplets(&pred, &s, &ci, Task::PredCls, 100).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].subj, t[0].pred, t[0].obj), (0, 1, 1));
        assert_eq!(t[0].score, 1.0);

        // argmax none everywhere -> empty
        let s2 = simple_sample(2, &[]);
        let pred2 = one_hot_prediction(&s2, &ci, 3, 2);
        assert!(extract_triplets(&pred2, &s2, &ci, Task::PredCls, 100)
            .unwrap()
            .is_empty());
    }

    /// brute force: enumerate pairs, score, sort, truncate
    fn brute_force_triplets(
        pred: &Prediction,
        s: &SceneGraphSample,
        ci: &ChannelIndex,
        k: usize,
    ) -> Vec<(usize, usize, usize, f64)> {
        let mut all = Vec::new();
        for (e, &(i, j)) in ci.edges.iter().enumerate() {
            if s.gt_classes[i] == 0 || s.gt_classes[j] == 0 {
                continue;
            }
            let row = &pred.pred_probs[e];
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best != 0 {
                all.push((i, best, j, row[best]));
            }
        }
        all.sort_by(|a, b| {
            b.3.partial_cmp(&a.3)
                .unwrap()
                .then((a.0, a.2).cmp(&(b.0, b.2)))
        });
        all.truncate(k);
        all.into_iter().map(|(i, p, j, sc)| (i, p, j, sc)).collect()
    }

    #[test]
    fn extract_triplets_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = 3;
            let s = simple_sample(n, &[(0, 1, 1)]);
            let ci = full_channels(n);
            let r = 4;
            let pred_probs: Vec<Vec<f64>> = ci
                .edges
                .iter()
                .map(|_| {
                    let raw: Vec<f64> = (0..r).map(|_| rng.gen_range(0.1..1.0)).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / z).collect()
                })
                .collect();
            let pred = Prediction {
                class_probs: s.gt_classes.iter().map(|_| vec![0.0, 1.0, 0.0]).collect(),
                bbox_offsets: s.gt_classes.iter().map(|_| vec![[0.0; 4]; 3]).collect(),
                pred_probs,
            };
            let got = extract_triplets(&pred, &s, &ci, Task::PredCls, 4).unwrap();
            let want = brute_force_triplets(&pred, &s, &ci, 4);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert_eq!((g.subj, g.pred, g.obj), (w.0, w.1, w.2));
                assert!((g.score - w.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recall_at_k_cases() {
        let s = simple_sample(3, &[(0, 1, 1), (1, 2, 2)]);
        let ci = full_channels(3);
        let pred = one_hot_prediction(&s, &ci, 3, 3);
        let t = extract_triplets(&pred, &s, &ci, Task::PredCls, 100).unwrap();
        assert_eq!(recall_at_k(&t, &s, 50, Task::PredCls).unwrap(), Some(1.0));

        // no ground truth -> skip
        let s0 = simple_sample(2, &[]);
        assert_eq!(recall_at_k(&[], &s0, 50, Task::PredCls).unwrap(), None);

        // 2 GT, ranked 1st and 3rd, k = 2 -> 0.5
        let mk = |subj: usize, pred: usize, obj: usize, score: f64| TripletPrediction {
            subj,
            pred,
            obj,
            score,
            subj_box: s.proposals[subj],
            obj_box: s.proposals[obj],
            subj_class: s.gt_classes[subj],
            obj_class: s.gt_classes[obj],
        };
        let ranked = vec![mk(0, 1, 1, 0.9), mk(2, 1, 0, 0.8), mk(1, 2, 2, 0.7)];
        assert_eq!(
            recall_at_k(&ranked, &s, 2, Task::PredCls).unwrap(),
            Some(0.5)
        );
        // monotone in k
        assert_eq!(
            recall_at_k(&ranked, &s, 3, Task::PredCls).unwrap(),
            Some(1.0)
        );
    }

    #[test]
    fn per_predicate_recall5_cases() {
        // |R| = 6: top-5 over the 5 real predicates always hits
        let s = simple_sample(2, &[(0, 1, 5)]);
        let ci = full_channels(2);
        let pred = Prediction {
            class_probs: vec![vec![0.0, 1.0, 0.0]; 2],
            bbox_offsets: vec![vec![[0.0; 4]; 3]; 2],
            pred_probs: vec![vec![1.0 / 6.0; 6]; 2],
        };
        let m = per_predicate_recall5(&pred, &s, &ci);
        assert_eq!(m.get(&5), Some(&(1, 1)));

        // |R| = 10 uniform, tie-break by index: real predicates 1..=5 hit
        for p in 1..10usize {
            let s = simple_sample(2, &[(0, 1, p)]);
            let pred = Prediction {
                class_probs: vec![vec![0.0, 1.0, 0.0]; 2],
                bbox_offsets: vec![vec![[0.0; 4]; 3]; 2],
                pred_probs: vec![vec![0.1; 10]; 2],
            };
            let m = per_predicate_recall5(&pred, &s, &ci);
            let expect_hit = p <= 5;
            assert_eq!(m.get(&p), Some(&(expect_hit as usize, 1)), "predicate {p}");
        }
    }

    #[test]
    fn per_predicate_recall5_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..200 {
            let r = rng.gen_range(3..12);
            let p_true = rng.gen_range(1..r);
            let s = simple_sample(2, &[(0, 1, p_true)]);
            let ci = full_channels(2);
            let row: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pred = Prediction {
                class_probs: vec![vec![0.0, 1.0, 0.0]; 2],
                bbox_offsets: vec![vec![[0.0; 4]; 3]; 2],
                pred_probs: vec![row.clone(); 2],
            };
            let m = per_predicate_recall5(&pred, &s, &ci);
            // brute force: count real predicates strictly better, or equal
            // with lower index
            let better = (1..r)
                .filter(|&c| {
                    c != p_true
                        && (row[c] > row[p_true] || (row[c] == row[p_true] && c < p_true))
                })
                .count();
            let expect_hit = better < 5;
            assert_eq!(m.get(&p_true), Some(&(expect_hit as usize, 1)));
        }
    }

    #[test]
    fn decode_offsets_formula() {
        let p = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(decode_offsets(&p, &[0.0; 4], None).unwrap(), p);

        // width doubles about the center; left edge clips at 0
        let b = decode_offsets(&p, &[0.0, 0.0, 2.0f64.ln(), 0.0], Some((100.0, 100.0))).unwrap();
        assert_eq!(b, BBox::new(0.0, 0.0, 15.0, 10.0).unwrap());
        let b = decode_offsets(&p, &[5.0, 0.0, 2.0f64.ln(), 0.0], Some((100.0, 100.0))).unwrap();
        assert_eq!(b, BBox::new(45.0, 0.0, 65.0, 10.0).unwrap());
    }

    #[test]
    fn task_ordering_on_identical_predictions() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..5);
            let mut labels = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.gen_bool(0.4) {
                        labels.push((i, j, rng.gen_range(1..3)));
                    }
                }
            }
            if labels.is_empty() {
                continue;
            }
            let s = simple_sample(n, &labels);
            let ci = full_channels(n);
            let pred = Prediction {
                class_probs: (0..n)
                    .map(|_| {
                        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let z: f64 = raw.iter().sum();
                        raw.iter().map(|v| v / z).collect()
                    })
                    .collect(),
                bbox_offsets: (0..n).map(|_| vec![[0.0; 4]; 3]).collect(),
                pred_probs: ci
                    .edges
                    .iter()
                    .map(|_| {
                        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let z: f64 = raw.iter().sum();
                        raw.iter().map(|v| v / z).collect()
                    })
                    .collect(),
            };
            let mut recalls = Vec::new();
            for task in [Task::PredCls, Task::SgCls, Task::SgGen] {
                let t = extract_triplets(&pred, &s, &ci, task, 100).unwrap();
                recalls.push(recall_at_k(&t, &s, 50, task).unwrap().unwrap());
            }
            assert!(recalls[0] >= recalls[1] && recalls[1] >= recalls[2], "{recalls:?}");
        }
    }
}
