//! Dataset serialization and the synthetic scene generator.
//!
//! File format: line-delimited JSON with a versioned header line, fixed
//! key order, and 17-significant-digit decimal floats, so a dataset
//! round-trips bit-exactly and serializes byte-identically across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{union_box, validate_sample, BBox, SceneGraphSample, VocabMeta};
use crate::model::Prediction;
use crate::train::encode_offsets;

pub const FORMAT_NAME: &str = "sgmp-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Where the samples came from; real precomputed features can be
/// substituted later under the same schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub vocab: VocabMeta,
    pub feature_dim: usize,
    pub provenance: Provenance,
    pub samples: Vec<SceneGraphSample>,
}

/// Synthetic scene configuration. `context_ambiguity` is the fraction of
/// ordered class pairs whose predicate depends on the class pair itself,
/// not just the spatial relation visible in the edge feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// |C| including background
    pub num_classes: usize,
    /// |R| including none
    pub num_predicates: usize,
    pub feature_dim: usize,
    pub feature_noise_sigma: f64,
    pub context_ambiguity: f64,
    pub seed: u64,
    /// global index of the first image. The class/spatial embeddings and
    /// the predicate rule table depend only on `seed`, while each image
    /// is derived from its global index, so two runs with the same seed
    /// and disjoint offsets form a train/test split of one world.
    pub image_offset: usize,
    pub canvas_width: f64,
    pub canvas_height: f64,
    /// probability that an ordered pair is annotated
    pub label_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_images: 20,
            min_objects: 2,
            max_objects: 5,
            num_classes: 6,
            num_predicates: 5,
            feature_dim: 16,
            feature_noise_sigma: 0.05,
            context_ambiguity: 0.7,
            seed: 0,
            image_offset: 0,
            canvas_width: 256.0,
            canvas_height: 256.0,
            label_prob: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 1 || self.max_objects < self.min_objects {
            return Err(Error::Config(format!(
                "object count range [{}, {}] is invalid",
                self.min_objects, self.max_objects
            )));
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
        if self.feature_dim < 1 {
            return Err(Error::Config("feature_dim must be positive".to_string()));
        }
        if !(self.feature_noise_sigma >= 0.0) {
            return Err(Error::Config("feature_noise_sigma must be >= 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.context_ambiguity) {
            return Err(Error::Config("context_ambiguity must be in [0, 1]".to_string()));
        }
        if !(0.0..=1.0).contains(&self.label_prob) {
            return Err(Error::Config("label_prob must be in [0, 1]".to_string()));
        }
        if self.canvas_width < 64.0 || self.canvas_height < 64.0 {
            return Err(Error::Config("canvas must be at least 64 x 64".to_string()));
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------
// serialization

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn write_floats(out: &mut String, v: &[f64]) {
    out.push('[');
    for (k, x) in v.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

fn header_line(d: &DatasetFile) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{{\"format\":{},\"version\":{},\"classes\":{},\"predicates\":{},\"feature_dim\":{},\"provenance\":{}}}",
        serde_json::to_string(FORMAT_NAME).unwrap(),
        FORMAT_VERSION,
        serde_json::to_string(&d.vocab.class_names).unwrap(),
        serde_json::to_string(&d.vocab.predicate_names).unwrap(),
        d.feature_dim,
        serde_json::to_string(&d.provenance).unwrap(),
    ));
    out
}

fn sample_line(s: &SceneGraphSample) -> String {
    let mut out = String::new();
    out.push_str("{\"image_id\":");
    out.push_str(&serde_json::to_string(&s.image_id).unwrap());
    let _ = write!(out, ",\"width\":{},\"height\":{}", fmt_f64(s.width), fmt_f64(s.height));
    out.push_str(",\"proposals\":[");
    for (k, b) in s.proposals.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write_floats(&mut out, &[b.x1, b.y1, b.x2, b.y2]);
    }
    out.push_str("],\"node_features\":[");
    for (k, f) in s.node_features.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write_floats(&mut out, f);
    }
    out.push_str("],\"edge_features\":[");
    for (k, (&(i, j), f)) in s.edge_features.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{i},{j},");
        write_floats(&mut out, f);
        out.push(']');
    }
    out.push_str("],\"gt_classes\":[");
    for (k, c) in s.gt_classes.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{c}");
    }
    out.push_str("],\"gt_offsets\":[");
    for (k, o) in s.gt_offsets.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write_floats(&mut out, o);
    }
    out.push_str("],\"gt_predicates\":[");
    for (k, (&(i, j), &p)) in s.gt_predicates.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{i},{j},{p}]");
    }
    out.push_str("]}");
    out
}

/// Canonical serialization: one header line plus one sample per line.
pub fn save_dataset(d: &DatasetFile, path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{}", header_line(d)).map_err(io_err)?;
    for s in &d.samples {
        writeln!(w, "{}", sample_line(s)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Deserialize)]
struct HeaderRecord {
    format: String,
    version: u32,
    classes: Vec<String>,
    predicates: Vec<String>,
    feature_dim: usize,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct SampleRecord {
    image_id: String,
    width: f64,
    height: f64,
    proposals: Vec<[f64; 4]>,
    node_features: Vec<Vec<f64>>,
    edge_features: Vec<(usize, usize, Vec<f64>)>,
    gt_classes: Vec<usize>,
    gt_offsets: Vec<[f64; 4]>,
    gt_predicates: Vec<(usize, usize, usize)>,
}

/// Parses and fully validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file, expected header line".to_string()))?;
    let header = header.map_err(|e| parse_err(line_no, e.to_string()))?;
    let header: HeaderRecord =
        serde_json::from_str(&header).map_err(|e| parse_err(line_no, e.to_string()))?;
    if header.format != FORMAT_NAME {
        return Err(parse_err(
            line_no,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(
            line_no,
            format!("unsupported version {}", header.version),
        ));
    }
    let vocab = VocabMeta {
        class_names: header.classes,
        predicate_names: header.predicates,
    };
    vocab.validate()?;

    let mut samples = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let proposals = rec
            .proposals
            .iter()
            .map(|&[x1, y1, x2, y2]| BBox::new(x1, y1, x2, y2))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        let s = SceneGraphSample {
            image_id: rec.image_id,
            width: rec.width,
            height: rec.height,
            proposals,
            node_features: rec.node_features,
            edge_features: rec
                .edge_features
                .into_iter()
                .map(|(i, j, f)| ((i, j), f))
                .collect(),
            gt_classes: rec.gt_classes,
            gt_offsets: rec.gt_offsets,
            gt_predicates: rec
                .gt_predicates
                .into_iter()
                .map(|(i, j, p)| ((i, j), p))
                .collect(),
        };
        validate_sample(&s, &vocab).map_err(|e| parse_err(line_no, e.to_string()))?;
        if s.node_features.first().map(|f| f.len()).unwrap_or(header.feature_dim) != header.feature_dim {
            return Err(parse_err(
                line_no,
                format!(
                    "feature dim {} does not match header {}",
                    s.node_features[0].len(),
                    header.feature_dim
                ),
            ));
        }
        samples.push(s);
    }
    Ok(DatasetFile {
        vocab,
        feature_dim: header.feature_dim,
        provenance: header.provenance,
        samples,
    })
}

// ---------------------------------------------------------------------
// synthetic generator

/// Spatial relation between an ordered pair of boxes, with deterministic
/// tie-breaks. This is what an edge feature can "see".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialRelation {
    LeftOf = 0,
    Above = 1,
    Overlapping = 2,
    Containing = 3,
}

pub const NUM_SPATIAL: usize = 4;

pub fn spatial_relation(a: &BBox, b: &BBox) -> SpatialRelation {
    let contains = a.x1 <= b.x1 && a.y1 <= b.y1 && a.x2 >= b.x2 && a.y2 >= b.y2;
    if contains {
        return SpatialRelation::Containing;
    }
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    if ix * iy > 0.0 {
        return SpatialRelation::Overlapping;
    }
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    if (bcx - acx).abs() >= (bcy - acy).abs() {
        SpatialRelation::LeftOf
    } else {
        SpatialRelation::Above
    }
}

/// Predicate lookup keyed on (subject class, object class, spatial
/// relation). Entry 0 of the class axes (background) is unused.
///
/// Non-contextual class pairs map each spatial relation straight to a
/// predicate; contextual pairs apply a per-pair cyclic offset, so their
/// predicate cannot be recovered from the spatial relation alone.
pub fn predicate_rule_table(cfg: &SynthConfig) -> Vec<Vec<[usize; NUM_SPATIAL]>> {
    let c = cfg.num_classes;
    let r_real = cfg.num_predicates - 1;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x72756c65));
    let mut table = vec![vec![[0usize; NUM_SPATIAL]; c]; c];
    for cs in 1..c {
        for co in 1..c {
            let contextual = rng.gen_bool(cfg.context_ambiguity);
            let offset = if contextual && r_real > 1 {
                rng.gen_range(1..r_real)
            } else {
                0
            };
            for s in 0..NUM_SPATIAL {
                table[cs][co][s] = 1 + (s + offset) % r_real;
            }
        }
    }
    table
}

fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn embedding(rows: usize, dim: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dim).map(|_| gaussian(rng)).collect())
        .collect()
}

fn geometry_encoding(b: &BBox, canvas_w: f64, canvas_h: f64, proj: &[Vec<f64>]) -> Vec<f64> {
    let (cx, cy) = b.center();
    let geom = [
        cx / canvas_w,
        cy / canvas_h,
        b.width() / canvas_w,
        b.height() / canvas_h,
    ];
    proj.iter()
        .map(|row| row.iter().zip(&geom).map(|(w, g)| w * g).sum())
        .collect()
}

/// Deterministic synthetic dataset. Node features reveal the class,
/// edge features reveal only the spatial relation, so contextual
/// predicates are only solvable via node-edge message exchange.
pub fn synth_generate(cfg: &SynthConfig) -> Result<DatasetFile> {
    cfg.validate()?;
    let vocab = VocabMeta {
        class_names: std::iter::once("background".to_string())
            .chain((1..cfg.num_classes).map(|i| format!("class_{i}")))
            .collect(),
        predicate_names: std::iter::once("none".to_string())
            .chain((1..cfg.num_predicates).map(|i| format!("predicate_{i}")))
            .collect(),
    };
    let d = cfg.feature_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let class_emb = embedding(cfg.num_classes, d, &mut rng);
    let spatial_emb = embedding(NUM_SPATIAL, d, &mut rng);
    let geom_proj_node = embedding(d, 4, &mut rng);
    let geom_proj_edge = embedding(d, 4, &mut rng);
    let table = predicate_rule_table(cfg);

    let mut samples = Vec::with_capacity(cfg.num_images);
    for img in 0..cfg.num_images {
        let global = cfg.image_offset + img;
        let mut rng = ChaCha20Rng::seed_from_u64(
            cfg.seed ^ (global as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let mut gt_boxes = Vec::with_capacity(n);
        let mut proposals = Vec::with_capacity(n);
        let mut gt_classes = Vec::with_capacity(n);
        for _ in 0..n {
            let w = rng.gen_range(20.0..80.0f64).min(cfg.canvas_width - 1.0);
            let h = rng.gen_range(20.0..80.0f64).min(cfg.canvas_height - 1.0);
            let x1 = rng.gen_range(0.0..cfg.canvas_width - w);
            let y1 = rng.gen_range(0.0..cfg.canvas_height - h);
            let gt = BBox::new(x1, y1, x1 + w, y1 + h)?;
            // proposal: jittered ground truth, clipped to the canvas
            let jx = rng.gen_range(-0.1..0.1) * w;
            let jy = rng.gen_range(-0.1..0.1) * h;
            let sx = rng.gen_range(0.9..1.1);
            let sy = rng.gen_range(0.9..1.1);
            let (cx, cy) = gt.center();
            let (pw, ph) = (w * sx, h * sy);
            let px1 = (cx + jx - pw / 2.0).clamp(0.0, cfg.canvas_width - 1.0);
            let py1 = (cy + jy - ph / 2.0).clamp(0.0, cfg.canvas_height - 1.0);
            let px2 = (cx + jx + pw / 2.0).clamp(px1 + 1.0, cfg.canvas_width);
            let py2 = (cy + jy + ph / 2.0).clamp(py1 + 1.0, cfg.canvas_height);
            proposals.push(BBox::new(px1, py1, px2, py2)?);
            gt_boxes.push(gt);
            gt_classes.push(rng.gen_range(1..cfg.num_classes));
        }
        let gt_offsets: Vec<[f64; 4]> = proposals
            .iter()
            .zip(&gt_boxes)
            .map(|(p, g)| encode_offsets(p, g))
            .collect::<Result<_>>()?;

        let node_features: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let geo = geometry_encoding(&proposals[i], cfg.canvas_width, cfg.canvas_height, &geom_proj_node);
                class_emb[gt_classes[i]]
                    .iter()
                    .zip(&geo)
                    .map(|(c, g)| c + 0.3 * g + cfg.feature_noise_sigma * gaussian(&mut rng))
                    .collect()
            })
            .collect();

        let mut edge_features = BTreeMap::new();
        let mut gt_predicates = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let rel = spatial_relation(&proposals[i], &proposals[j]);
                let ub = union_box(&proposals[i], &proposals[j]);
                let geo = geometry_encoding(&ub, cfg.canvas_width, cfg.canvas_height, &geom_proj_edge);
                let feat: Vec<f64> = spatial_emb[rel as usize]
                    .iter()
                    .zip(&geo)
                    .map(|(s, g)| s + 0.3 * g + cfg.feature_noise_sigma * gaussian(&mut rng))
                    .collect();
                edge_features.insert((i, j), feat);
                if rng.gen_bool(cfg.label_prob) {
                    gt_predicates.insert((i, j), table[gt_classes[i]][gt_classes[j]][rel as usize]);
                }
            }
        }
        if gt_predicates.is_empty() && n >= 2 {
            // keep every image evaluable
            let rel = spatial_relation(&proposals[0], &proposals[1]);
            gt_predicates.insert((0, 1), table[gt_classes[0]][gt_classes[1]][rel as usize]);
        }

        let s = SceneGraphSample {
            image_id: format!("synth_{global:05}"),
            width: cfg.canvas_width,
            height: cfg.canvas_height,
            proposals,
            node_features,
            edge_features,
            gt_classes,
            gt_offsets,
            gt_predicates,
        };
        validate_sample(&s, &vocab)?;
        samples.push(s);
    }
    Ok(DatasetFile {
        vocab,
        feature_dim: d,
        provenance: Provenance {
            generator: "synth".to_string(),
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
        },
        samples,
    })
}

// ---------------------------------------------------------------------
// visualization

/// DOT graph text: object nodes, predicate nodes, directed edges.
/// Predicted labels, when given, are carried as a separate attribute so
/// they stay distinguishable from ground truth.
pub fn export_dot(
    s: &SceneGraphSample,
    vocab: &VocabMeta,
    prediction: Option<(&Prediction, &crate::graph::ChannelIndex)>,
) -> String {
    let mut out = String::from("digraph scene_graph {\n");
    for (i, &c) in s.gt_classes.iter().enumerate() {
        let mut attrs = format!(
            "label=\"{}\" kind=object gt_class=\"{}\"",
            vocab.class_names[c], vocab.class_names[c]
        );
        if let Some((pred, _)) = prediction {
            let row = &pred.class_probs[i];
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            let _ = write!(attrs, " pred_class=\"{}\"", vocab.class_names[best]);
        }
        let _ = writeln!(out, "  obj{i} [{attrs}];");
    }
    for (k, (&(i, j), &p)) in s.gt_predicates.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let mut attrs = format!(
            "label=\"{}\" kind=predicate gt_predicate=\"{}\"",
            vocab.predicate_names[p], vocab.predicate_names[p]
        );
        if let Some((pred, ci)) = prediction {
            if let Some(e) = ci.edge_index((i, j)) {
                let row = &pred.pred_probs[e];
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                let _ = write!(attrs, " pred_predicate=\"{}\"", vocab.predicate_names[best]);
            }
        }
        let _ = writeln!(out, "  rel{k} [{attrs}];");
        let _ = writeln!(out, "  obj{i} -> rel{k};");
        let _ = writeln!(out, "  rel{k} -> obj{j};");
    }
    out.push_str("}\n");
    out
}
