//! Data model for proposals, features, ground truth, and the message
//! channel topology derived from the scene graph.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form. Inclusive geometry, area with no
/// +1 pixel correction, so IoU is bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Validation(format!(
                "box coordinates must be finite and non-negative: {:?}",
                coords
            )));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::Validation(format!(
                "box corners out of order: ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Smallest axis-aligned box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// Class and predicate vocabularies. Index 0 is reserved for
/// "background" (classes) and "none" (predicates).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabMeta {
    pub class_names: Vec<String>,
    pub predicate_names: Vec<String>,
}

impl VocabMeta {
    pub fn validate(&self) -> Result<()> {
        for (kind, names) in [("class", &self.class_names), ("predicate", &self.predicate_names)] {
            if names.is_empty() {
                return Err(Error::Validation(format!("{kind} name list is empty")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(Error::Validation(format!("duplicate {kind} name {n:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_names.len()
    }
}

/// One image worth of proposals, precomputed features, and ground truth.
///
/// `gt_predicates` distinguishes labeled pairs from unlabeled ones:
/// an absent pair is unlabeled (unknown), while an explicit 0 entry is a
/// labeled "none". The synthetic generator only emits real predicates,
/// but both forms are accepted; unlabeled pairs sampled at train time
/// are treated as "none".
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphSample {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<BBox>,
    /// per-node visual feature, n x D
    pub node_features: Vec<Vec<f64>>,
    /// per ordered pair (i, j), i != j
    pub edge_features: BTreeMap<(usize, usize), Vec<f64>>,
    /// class index per node, 0 = background
    pub gt_classes: Vec<usize>,
    /// regression targets per node; meaningful only for non-background nodes
    pub gt_offsets: Vec<[f64; 4]>,
    /// labeled predicate per ordered pair; 0 = labeled none
    pub gt_predicates: BTreeMap<(usize, usize), usize>,
}

impl SceneGraphSample {
    pub fn num_nodes(&self) -> usize {
        self.proposals.len()
    }

    /// Labeled pairs whose predicate is a real relationship (not "none").
    pub fn gt_triplets(&self) -> Vec<(usize, usize, usize)> {
        self.gt_predicates
            .iter()
            .filter(|(_, p)| **p != 0)
            .map(|(&(i, j), &p)| (i, p, j))
            .collect()
    }
}

/// Checks every sample invariant against the vocabulary; each violation
/// names the offending field and index.
pub fn validate_sample(s: &SceneGraphSample, v: &VocabMeta) -> Result<()> {
    let n = s.num_nodes();
    if n < 1 {
        return Err(Error::Validation(format!(
            "sample {}: proposals is empty",
            s.image_id
        )));
    }
    if !(s.width > 0.0 && s.height > 0.0) {
        return Err(Error::Validation(format!(
            "sample {}: width/height must be positive",
            s.image_id
        )));
    }
    for (i, b) in s.proposals.iter().enumerate() {
        b.validate()
            .map_err(|e| Error::Validation(format!("sample {}: proposals[{i}]: {e}", s.image_id)))?;
    }
    if s.node_features.len() != n {
        return Err(Error::Validation(format!(
            "sample {}: node_features has {} rows, expected {n}",
            s.image_id,
            s.node_features.len()
        )));
    }
    let d = s.node_features.first().map(|f| f.len()).unwrap_or(0);
    for (i, f) in s.node_features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::Validation(format!(
                "sample {}: node_features[{i}] has dim {}, expected {d}",
                s.image_id,
                f.len()
            )));
        }
    }
    for (&(i, j), f) in &s.edge_features {
        if i == j {
            return Err(Error::Validation(format!(
                "sample {}: edge_features contains self-pair ({i}, {j})",
                s.image_id
            )));
        }
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "sample {}: edge_features pair ({i}, {j}) out of range for {n} nodes",
                s.image_id
            )));
        }
        if f.len() != d {
            return Err(Error::Validation(format!(
                "sample {}: edge_features[({i}, {j})] has dim {}, expected {d}",
                s.image_id,
                f.len()
            )));
        }
    }
    if s.gt_classes.len() != n {
        return Err(Error::Validation(format!(
            "sample {}: gt_classes has {} entries, expected {n}",
            s.image_id,
            s.gt_classes.len()
        )));
    }
    for (i, &c) in s.gt_classes.iter().enumerate() {
        if c >= v.num_classes() {
            return Err(Error::Validation(format!(
                "sample {}: gt_classes[{i}] = {c} out of range for {} classes",
                s.image_id,
                v.num_classes()
            )));
        }
    }
    if s.gt_offsets.len() != n {
        return Err(Error::Validation(format!(
            "sample {}: gt_offsets has {} rows, expected {n}",
            s.image_id,
            s.gt_offsets.len()
        )));
    }
    for (&(i, j), &p) in &s.gt_predicates {
        if i == j {
            return Err(Error::Validation(format!(
                "sample {}: gt_predicates contains self-pair ({i}, {j})",
                s.image_id
            )));
        }
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "sample {}: gt_predicates pair ({i}, {j}) out of range for {n} nodes",
                s.image_id
            )));
        }
        if p >= v.num_predicates() {
            return Err(Error::Validation(format!(
                "sample {}: gt_predicates[({i}, {j})] = {p} out of range for {} predicates",
                s.image_id,
                v.num_predicates()
            )));
        }
        if !s.edge_features.is_empty() && !s.edge_features.contains_key(&(i, j)) {
            return Err(Error::Validation(format!(
                "sample {}: labeled pair ({i}, {j}) has no edge feature",
                s.image_id
            )));
        }
    }
    Ok(())
}

/// Edge list plus per-node incidence, the two message channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelIndex {
    pub edges: Vec<(usize, usize)>,
    /// per node, indices into `edges` whose source is that node
    pub outbound: Vec<Vec<usize>>,
    /// per node, indices into `edges` whose target is that node
    pub inbound: Vec<Vec<usize>>,
}

impl ChannelIndex {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_index(&self, pair: (usize, usize)) -> Option<usize> {
        self.edges.iter().position(|e| *e == pair)
    }
}

pub fn build_channel_index(edges: &[(usize, usize)], n: usize) -> Result<ChannelIndex> {
    let mut seen = std::collections::BTreeSet::new();
    let mut outbound = vec![Vec::new(); n];
    let mut inbound = vec![Vec::new(); n];
    for (idx, &(i, j)) in edges.iter().enumerate() {
        if i == j {
            return Err(Error::Validation(format!("self-edge ({i}, {j})")));
        }
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "edge ({i}, {j}) out of range for {n} nodes"
            )));
        }
        if !seen.insert((i, j)) {
            return Err(Error::Validation(format!("duplicate edge ({i}, {j})")));
        }
        outbound[i].push(idx);
        inbound[j].push(idx);
    }
    Ok(ChannelIndex {
        edges: edges.to_vec(),
        outbound,
        inbound,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum EdgeSetMode {
    /// All n(n-1) ordered pairs, self-connections excluded.
    Test,
    /// Labeled pairs first, then seeded-shuffled unlabeled pairs up to
    /// the quota. Labeled pairs are always all included.
    Train { quota: usize, seed: u64 },
}

pub fn build_edge_set(
    n: usize,
    labeled_pairs: &std::collections::BTreeSet<(usize, usize)>,
    mode: EdgeSetMode,
) -> Result<Vec<(usize, usize)>> {
    for &(i, j) in labeled_pairs {
        if i == j {
            return Err(Error::Validation(format!("labeled self-pair ({i}, {j})")));
        }
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "labeled pair ({i}, {j}) out of range for {n} nodes"
            )));
        }
    }
    match mode {
        EdgeSetMode::Test => {
            let mut out = Vec::with_capacity(n.saturating_mul(n.saturating_sub(1)));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        out.push((i, j));
                    }
                }
            }
            Ok(out)
        }
        EdgeSetMode::Train { quota, seed } => {
            let mut out: Vec<(usize, usize)> = labeled_pairs.iter().cloned().collect();
            let mut unlabeled: Vec<(usize, usize)> = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && !labeled_pairs.contains(&(i, j)) {
                        unlabeled.push((i, j));
                    }
                }
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            unlabeled.shuffle(&mut rng);
            for p in unlabeled {
                if out.len() >= quota {
                    break;
                }
                out.push(p);
            }
            Ok(out)
        }
    }
}
