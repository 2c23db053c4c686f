//! Desk-scale query-based HOI detector.
//!
//! A patch-embedding transformer encoder reads the image once; three
//! parallel decoder branches with independent learned queries read the
//! shared memory and emit, per query index: a human box, an object box
//! with class logits, and verb logits. Boxes go through a sigmoid so they
//! stay in `[0,1]^4` for any parameter values. Branch outputs associate by
//! query index; there is no cross-branch fusion.
//!
//! The forward pass builds on the autodiff tape, so training and
//! inference share one code path; inference just never calls backward.
//!
//! Checkpoint format (version 1): magic `HOIKPT01`, then a little-endian
//! u32 JSON-config length and the config bytes, then a u32 array count,
//! then per array: u32 name length, name bytes, u32 rows, u32 cols, and
//! rows*cols little-endian f32 values in row-major order.

use crate::autodiff::{sigmoid_value, softmax_rows_value, Tape, Var};
use crate::geometry::BBox;
use crate::matching::QueryPrediction;
use crate::types::HOITriplet;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: u32,
    pub patch_size: u32,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_queries: usize,
    pub num_objects: usize,
    pub num_verbs: usize,
    /// Self-attention among queries in decoder layers. Off by default at
    /// desk scale: cross-attention-only decoders organize much faster on
    /// small data, and with a handful of queries duplicate suppression is
    /// the matcher's job anyway.
    #[serde(default)]
    pub decoder_self_attention: bool,
}

impl ModelConfig {
    /// Defaults sized for the synthetic shape world; vocabulary sizes are
    /// filled in from the dataset.
    pub fn desk_default(num_objects: usize, num_verbs: usize) -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            mlp_ratio: 2,
            num_queries: 12,
            num_objects,
            num_verbs,
            decoder_self_attention: false,
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.num_queries == 0 {
            return Err(DetectorError::BadConfig("need at least one query".into()));
        }
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(DetectorError::BadConfig(format!(
                "embed dim {} must be divisible by head count {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(DetectorError::BadConfig(format!(
                "image size {} must be a multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_objects == 0 || self.num_verbs == 0 {
            return Err(DetectorError::BadConfig(
                "vocabulary sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let per_side = (self.image_size / self.patch_size) as usize;
        per_side * per_side
    }

    pub fn token_features(&self) -> usize {
        (self.patch_size * self.patch_size * 3) as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("image shape mismatch: expected {expected} rgb bytes for size {size}, got {got}")]
    ImageShape {
        expected: usize,
        size: u32,
        got: usize,
    },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Named parameter store with deterministic iteration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    map: BTreeMap<String, Array2<f64>>,
}

impl Params {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }
}

/// Per-query outputs in value space.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub human_boxes: Vec<BBox>,
    pub object_boxes: Vec<BBox>,
    /// N x (K + 1) logits, trailing column is the no-object class.
    pub object_logits: Array2<f64>,
    /// N x V logits (independent sigmoids, no sentinel column).
    pub verb_logits: Array2<f64>,
}

/// Tape handles to the differentiable outputs of one forward pass.
pub struct ForwardVars {
    pub human_box: Var,
    pub object_box: Var,
    pub object_logits: Var,
    pub verb_logits: Var,
    /// Parameter name -> leaf node, for gradient readback.
    pub param_vars: BTreeMap<String, Var>,
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: ModelConfig,
    pub params: Params,
}

const BRANCHES: [&str; 3] = ["human", "object", "interaction"];

impl Detector {
    /// Seeded initialization: truncated normal (std 0.02, clipped at two
    /// sigma) for weights and embeddings, zeros for biases, ones for
    /// layer-norm gains. The seed fully determines the parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, DetectorError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        let d = cfg.embed_dim;
        let hidden = d * cfg.mlp_ratio;

        let tn = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| truncated_normal(rng, 0.02))
        };

        params.insert("embed.weight", tn(&mut rng, cfg.token_features(), d));
        params.insert("embed.bias", Array2::zeros((1, d)));
        params.insert("embed.pos", tn(&mut rng, cfg.tokens(), d));

        let attention = |params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str| {
            for name in ["q", "k", "v", "o"] {
                params.insert(
                    format!("{prefix}.{name}.weight"),
                    Array2::from_shape_fn((d, d), |_| truncated_normal(rng, 0.02)),
                );
                params.insert(format!("{prefix}.{name}.bias"), Array2::zeros((1, d)));
            }
        };
        let norm = |params: &mut Params, prefix: &str| {
            params.insert(format!("{prefix}.gain"), Array2::ones((1, d)));
            params.insert(format!("{prefix}.bias"), Array2::zeros((1, d)));
        };
        let mlp = |params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str| {
            params.insert(
                format!("{prefix}.fc1.weight"),
                Array2::from_shape_fn((d, hidden), |_| truncated_normal(rng, 0.02)),
            );
            params.insert(format!("{prefix}.fc1.bias"), Array2::zeros((1, hidden)));
            params.insert(
                format!("{prefix}.fc2.weight"),
                Array2::from_shape_fn((hidden, d), |_| truncated_normal(rng, 0.02)),
            );
            params.insert(format!("{prefix}.fc2.bias"), Array2::zeros((1, d)));
        };

        for layer in 0..cfg.encoder_layers {
            let p = format!("encoder.{layer}");
            norm(&mut params, &format!("{p}.ln1"));
            attention(&mut params, &mut rng, &format!("{p}.attn"));
            norm(&mut params, &format!("{p}.ln2"));
            mlp(&mut params, &mut rng, &format!("{p}.mlp"));
        }
        norm(&mut params, "encoder.final_ln");

        for branch in BRANCHES {
            params.insert(
                format!("{branch}.queries"),
                tn(&mut rng, cfg.num_queries, d),
            );
            for layer in 0..cfg.decoder_layers {
                let p = format!("{branch}.{layer}");
                if cfg.decoder_self_attention {
                    norm(&mut params, &format!("{p}.ln1"));
                    attention(&mut params, &mut rng, &format!("{p}.self_attn"));
                }
                norm(&mut params, &format!("{p}.ln2"));
                attention(&mut params, &mut rng, &format!("{p}.cross_attn"));
                norm(&mut params, &format!("{p}.ln3"));
                mlp(&mut params, &mut rng, &format!("{p}.mlp"));
            }
            norm(&mut params, &format!("{branch}.final_ln"));
        }

        params.insert("head.human_box.weight", tn(&mut rng, d, 4));
        params.insert("head.human_box.bias", Array2::zeros((1, 4)));
        params.insert("head.object_box.weight", tn(&mut rng, d, 4));
        params.insert("head.object_box.bias", Array2::zeros((1, 4)));
        params.insert(
            "head.object_class.weight",
            tn(&mut rng, d, cfg.num_objects + 1),
        );
        params.insert(
            "head.object_class.bias",
            Array2::zeros((1, cfg.num_objects + 1)),
        );
        params.insert("head.verb_class.weight", tn(&mut rng, d, cfg.num_verbs));
        params.insert("head.verb_class.bias", Array2::zeros((1, cfg.num_verbs)));

        Ok(Self { cfg, params })
    }

    /// Flatten interleaved RGB into per-patch token features in `[0,1]`.
    pub fn tokenize(&self, rgb: &[u8], size: u32) -> Result<Array2<f64>, DetectorError> {
        let expected = (self.cfg.image_size * self.cfg.image_size * 3) as usize;
        if size != self.cfg.image_size || rgb.len() != expected {
            return Err(DetectorError::ImageShape {
                expected,
                size: self.cfg.image_size,
                got: rgb.len(),
            });
        }
        let p = self.cfg.patch_size as usize;
        let per_side = (self.cfg.image_size / self.cfg.patch_size) as usize;
        let n = self.cfg.image_size as usize;
        let mut tokens = Array2::zeros((self.cfg.tokens(), self.cfg.token_features()));
        for ty in 0..per_side {
            for tx in 0..per_side {
                let token = ty * per_side + tx;
                let mut f = 0usize;
                for dy in 0..p {
                    for dx in 0..p {
                        let y = ty * p + dy;
                        let x = tx * p + dx;
                        let idx = (y * n + x) * 3;
                        for c in 0..3 {
                            tokens[(token, f)] = rgb[idx + c] as f64 / 255.0;
                            f += 1;
                        }
                    }
                }
            }
        }
        Ok(tokens)
    }

    /// Differentiable forward pass on the given tape.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        rgb: &[u8],
        size: u32,
    ) -> Result<ForwardVars, DetectorError> {
        let tokens = self.tokenize(rgb, size)?;
        let mut vars: BTreeMap<String, Var> = BTreeMap::new();
        for (name, value) in self.params.iter() {
            vars.insert(name.clone(), tape.leaf(value.clone()));
        }
        let v = |name: &str| -> Var { vars[name] };

        let linear = |tape: &mut Tape, x: Var, prefix: &str| -> Var {
            let w = v(&format!("{prefix}.weight"));
            let b = v(&format!("{prefix}.bias"));
            let xw = tape.matmul(x, w);
            tape.add_row(xw, b)
        };
        let norm = |tape: &mut Tape, x: Var, prefix: &str| -> Var {
            let normed = tape.layer_norm_rows(x, 1e-5);
            let gained = tape.mul_row(normed, v(&format!("{prefix}.gain")));
            tape.add_row(gained, v(&format!("{prefix}.bias")))
        };
        let heads = self.cfg.heads;
        let dh = self.cfg.embed_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let attention = |tape: &mut Tape, queries: Var, memory: Var, prefix: &str| -> Var {
            let q = linear(tape, queries, &format!("{prefix}.q"));
            let k = linear(tape, memory, &format!("{prefix}.k"));
            let val = linear(tape, memory, &format!("{prefix}.v"));
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(val, h * dh, dh);
                let kt = tape.transpose(kh);
                let logits = tape.matmul(qh, kt);
                let scaled = tape.scale(logits, scale);
                let weights = tape.softmax_rows(scaled);
                outs.push(tape.matmul(weights, vh));
            }
            let merged = tape.concat_cols(&outs);
            linear(tape, merged, &format!("{prefix}.o"))
        };
        let mlp = |tape: &mut Tape, x: Var, prefix: &str| -> Var {
            let h = linear(tape, x, &format!("{prefix}.fc1"));
            let a = tape.relu(h);
            linear(tape, a, &format!("{prefix}.fc2"))
        };

        // encoder
        let token_leaf = tape.leaf(tokens);
        let embedded = linear(tape, token_leaf, "embed");
        let mut x = tape.add(embedded, v("embed.pos"));
        for layer in 0..self.cfg.encoder_layers {
            let p = format!("encoder.{layer}");
            let a_in = norm(tape, x, &format!("{p}.ln1"));
            let a = attention(tape, a_in, a_in, &format!("{p}.attn"));
            x = tape.add(x, a);
            let m_in = norm(tape, x, &format!("{p}.ln2"));
            let m = mlp(tape, m_in, &format!("{p}.mlp"));
            x = tape.add(x, m);
        }
        let memory = norm(tape, x, "encoder.final_ln");

        // three parallel branches over shared memory
        let mut branch_out = BTreeMap::new();
        for branch in BRANCHES {
            let mut q = v(&format!("{branch}.queries"));
            for layer in 0..self.cfg.decoder_layers {
                let p = format!("{branch}.{layer}");
                if self.cfg.decoder_self_attention {
                    let a_in = norm(tape, q, &format!("{p}.ln1"));
                    let a = attention(tape, a_in, a_in, &format!("{p}.self_attn"));
                    q = tape.add(q, a);
                }
                let c_in = norm(tape, q, &format!("{p}.ln2"));
                let c = attention(tape, c_in, memory, &format!("{p}.cross_attn"));
                q = tape.add(q, c);
                let m_in = norm(tape, q, &format!("{p}.ln3"));
                let m = mlp(tape, m_in, &format!("{p}.mlp"));
                q = tape.add(q, m);
            }
            branch_out.insert(branch, norm(tape, q, &format!("{branch}.final_ln")));
        }

        let human_raw = linear(tape, branch_out["human"], "head.human_box");
        let human_box = tape.sigmoid(human_raw);
        let object_raw = linear(tape, branch_out["object"], "head.object_box");
        let object_box = tape.sigmoid(object_raw);
        let object_logits = linear(tape, branch_out["object"], "head.object_class");
        let verb_logits = linear(tape, branch_out["interaction"], "head.verb_class");

        Ok(ForwardVars {
            human_box,
            object_box,
            object_logits,
            verb_logits,
            param_vars: vars,
        })
    }

    /// Value-only forward pass.
    pub fn forward(&self, rgb: &[u8], size: u32) -> Result<DetectorOutput, DetectorError> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, rgb, size)?;
        Ok(extract_output(&tape, &out))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_values()
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std).expect("std > 0");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Read the value-space output of a completed forward pass.
pub fn extract_output(tape: &Tape, vars: &ForwardVars) -> DetectorOutput {
    let boxes = |v: Var| -> Vec<BBox> {
        tape.value(v)
            .rows()
            .into_iter()
            .map(|r| BBox::new(r[0], r[1], r[2], r[3]))
            .collect()
    };
    DetectorOutput {
        human_boxes: boxes(vars.human_box),
        object_boxes: boxes(vars.object_box),
        object_logits: tape.value(vars.object_logits).clone(),
        verb_logits: tape.value(vars.verb_logits).clone(),
    }
}

impl DetectorOutput {
    pub fn num_queries(&self) -> usize {
        self.human_boxes.len()
    }

    /// Probability-space view consumed by the matcher.
    pub fn to_query_predictions(&self) -> Vec<QueryPrediction> {
        let obj_probs = softmax_rows_value(&self.object_logits);
        (0..self.num_queries())
            .map(|i| QueryPrediction {
                human_box: self.human_boxes[i],
                object_box: self.object_boxes[i],
                obj_probs: obj_probs.row(i).to_vec(),
                verb_probs: self
                    .verb_logits
                    .row(i)
                    .iter()
                    .map(|&x| sigmoid_value(x))
                    .collect(),
            })
            .collect()
    }
}

/// One triplet per query with argmax labels, aligned with query indices
/// and keeping no-object predictions (sentinel object id = K). This is the
/// trainer's view; [`decode`] is the inference view that drops sentinels
/// and sorts.
pub fn query_triplets(output: &DetectorOutput) -> Vec<HOITriplet> {
    let obj_probs = softmax_rows_value(&output.object_logits);
    (0..output.num_queries())
        .map(|q| {
            let row = obj_probs.row(q);
            let (obj_id, obj_p) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                .expect("non-empty row");
            let (verb_id, verb_p) = output
                .verb_logits
                .row(q)
                .iter()
                .map(|&x| sigmoid_value(x))
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite probs"))
                .expect("non-empty verbs");
            HOITriplet::new(
                output.human_boxes[q],
                output.object_boxes[q],
                obj_id,
                verb_id,
                obj_p * verb_p,
            )
        })
        .collect()
}

/// Multi-verb expansion mode for [`decode`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VerbDecode {
    /// One triplet per query with the argmax verb.
    Argmax,
    /// One triplet per verb whose sigmoid probability reaches the bound.
    MultiLabel { min_prob: f64 },
}

/// Turn raw outputs into scored triplets: argmax object (dropping
/// no-object queries), verb(s) per `verb_decode`, score = p_obj * p_verb,
/// filtered at `score_threshold` and sorted by descending score.
pub fn decode(
    output: &DetectorOutput,
    score_threshold: f64,
    verb_decode: VerbDecode,
) -> Vec<HOITriplet> {
    let obj_probs = softmax_rows_value(&output.object_logits);
    let no_object = output.object_logits.ncols() - 1;
    let mut triplets = Vec::new();
    for q in 0..output.num_queries() {
        let row = obj_probs.row(q);
        let (obj_id, obj_p) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
            .expect("non-empty row");
        if obj_id == no_object {
            continue;
        }
        let verb_probs: Vec<f64> = output
            .verb_logits
            .row(q)
            .iter()
            .map(|&x| sigmoid_value(x))
            .collect();
        let verbs: Vec<(usize, f64)> = match verb_decode {
            VerbDecode::Argmax => {
                let (v, p) = verb_probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                    .expect("non-empty verbs");
                vec![(v, *p)]
            }
            VerbDecode::MultiLabel { min_prob } => verb_probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p >= min_prob)
                .map(|(v, &p)| (v, p))
                .collect(),
        };
        for (verb_id, verb_p) in verbs {
            let score = obj_p * verb_p;
            if score >= score_threshold {
                triplets.push(HOITriplet::new(
                    output.human_boxes[q],
                    output.object_boxes[q],
                    obj_id,
                    verb_id,
                    score,
                ));
            }
        }
    }
    triplets.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    triplets
}

/// Per-component learnable parameter counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>12}\n", "component", "parameters"));
        for (name, count) in &self.rows {
            out.push_str(&format!("{name:<24} {count:>12}\n"));
        }
        out.push_str(&format!("{:<24} {:>12}\n", "total (learnable)", self.total));
        out.push_str(&format!("{:<24} {:>12}\n", "scorer (frozen)", 0));
        out
    }
}

pub fn parameter_report(cfg: &ModelConfig) -> Result<ParameterReport, DetectorError> {
    let det = Detector::new(*cfg, 0)?;
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (name, value) in det.params.iter() {
        let group = match name.split('.').next().unwrap_or("other") {
            "embed" => "encoder.embedding".to_string(),
            "encoder" => "encoder.layers".to_string(),
            "head" => format!("heads.{}", name.split('.').nth(1).unwrap_or("other")),
            branch => format!("branch.{branch}"),
        };
        *groups.entry(group).or_insert(0) += value.len();
    }
    let total = det.parameter_count();
    Ok(ParameterReport {
        rows: groups.into_iter().collect(),
        total,
    })
}

// -- checkpoints -------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"HOIKPT01";

pub fn save_checkpoint(detector: &Detector, path: &Path) -> Result<(), DetectorError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    let cfg = serde_json::to_vec(&detector.cfg)
        .map_err(|e| DetectorError::Corrupt(e.to_string()))?;
    file.write_all(&(cfg.len() as u32).to_le_bytes())?;
    file.write_all(&cfg)?;
    file.write_all(&(detector.params.len() as u32).to_le_bytes())?;
    for (name, value) in detector.params.iter() {
        file.write_all(&(name.len() as u32).to_le_bytes())?;
        file.write_all(name.as_bytes())?;
        file.write_all(&(value.nrows() as u32).to_le_bytes())?;
        file.write_all(&(value.ncols() as u32).to_le_bytes())?;
        for &v in value.iter() {
            file.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Detector, DetectorError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DetectorError::Corrupt(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let read_u32 = |file: &mut dyn Read| -> Result<u32, DetectorError> {
        let mut b = [0u8; 4];
        file.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let cfg_len = read_u32(&mut file)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    file.read_exact(&mut cfg_bytes)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_bytes)
        .map_err(|e| DetectorError::Corrupt(format!("config: {e}")))?;
    let n_arrays = read_u32(&mut file)? as usize;
    let mut params = Params::default();
    for _ in 0..n_arrays {
        let name_len = read_u32(&mut file)? as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| DetectorError::Corrupt(format!("name: {e}")))?;
        let rows = read_u32(&mut file)? as usize;
        let cols = read_u32(&mut file)? as usize;
        let mut data = vec![0f64; rows * cols];
        for v in &mut data {
            let mut b = [0u8; 4];
            file.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b) as f64;
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| DetectorError::Corrupt(e.to_string()))?;
        params.insert(name, arr);
    }
    cfg.validate()?;
    Ok(Detector { cfg, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::desk_default(3, 3)
    }

    fn gray_image(size: u32, level: u8) -> Vec<u8> {
        vec![level; (size * size * 3) as usize]
    }

    #[test]
    fn output_shape_and_range_contract() {
        let det = Detector::new(cfg(), 0).unwrap();
        let out = det.forward(&gray_image(64, 128), 64).unwrap();
        assert_eq!(out.num_queries(), 12);
        assert_eq!(out.object_logits.dim(), (12, 4));
        assert_eq!(out.verb_logits.dim(), (12, 3));
        for b in out.human_boxes.iter().chain(out.object_boxes.iter()) {
            for v in b.as_array() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let det = Detector::new(cfg(), 3).unwrap();
        let img = gray_image(64, 77);
        let a = det.forward(&img, 64).unwrap();
        let b = det.forward(&img, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_images_produce_identical_rows() {
        // batch processing is a loop over images; two equal images must
        // produce equal outputs, and order cannot matter
        let det = Detector::new(cfg(), 5).unwrap();
        let img1 = gray_image(64, 10);
        let img2 = gray_image(64, 200);
        let out_a = [det.forward(&img1, 64).unwrap(), det.forward(&img2, 64).unwrap()];
        let out_b = [det.forward(&img2, 64).unwrap(), det.forward(&img1, 64).unwrap()];
        assert_eq!(out_a[0], out_b[1]);
        assert_eq!(out_a[1], out_b[0]);
    }

    #[test]
    fn seeds_determine_parameters() {
        let a = Detector::new(cfg(), 11).unwrap();
        let b = Detector::new(cfg(), 11).unwrap();
        let c = Detector::new(cfg(), 12).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let det = Detector::new(cfg(), 0).unwrap();
        assert!(matches!(
            det.forward(&gray_image(32, 0), 32),
            Err(DetectorError::ImageShape { .. })
        ));
    }

    #[test]
    fn parameter_budget() {
        let report = parameter_report(&cfg()).unwrap();
        assert!(report.total <= 2_000_000, "total {}", report.total);
        assert!(report.total > 100_000);
        let sum: usize = report.rows.iter().map(|(_, c)| c).sum();
        assert_eq!(sum, report.total);
    }

    #[test]
    fn doubling_embed_dim_quadruples_attention_projections() {
        let mut big = cfg();
        big.embed_dim *= 2;
        let d = cfg().embed_dim;
        // one attention projection matrix is d x d
        let base = Detector::new(cfg(), 0).unwrap();
        let scaled = Detector::new(big, 0).unwrap();
        let w_base = base.params.get("encoder.0.attn.q.weight").len();
        let w_scaled = scaled.params.get("encoder.0.attn.q.weight").len();
        assert_eq!(w_base, d * d);
        assert_eq!(w_scaled, 4 * w_base);
    }

    #[test]
    fn decode_drops_no_object_queries() {
        let det = Detector::new(cfg(), 0).unwrap();
        let mut out = det.forward(&gray_image(64, 90), 64).unwrap();
        // force every query to predict no-object
        for mut row in out.object_logits.rows_mut() {
            row.fill(0.0);
            row[3] = 10.0;
        }
        assert!(decode(&out, 0.0, VerbDecode::Argmax).is_empty());
    }

    #[test]
    fn decode_score_is_probability_product() {
        let det = Detector::new(cfg(), 0).unwrap();
        let mut out = det.forward(&gray_image(64, 90), 64).unwrap();
        for mut row in out.object_logits.rows_mut() {
            row.fill(0.0);
            row[3] = 30.0; // all other queries decode to no-object
        }
        out.object_logits.row_mut(0).fill(0.0);
        // p_obj(0) = 0.9 over 4 classes: logit ln(27) against three zeros
        out.object_logits[(0, 0)] = 27.0f64.ln();
        for mut row in out.verb_logits.rows_mut() {
            row.fill(-30.0);
        }
        out.verb_logits[(0, 1)] = (0.8f64 / 0.2).ln(); // sigmoid -> 0.8
        let triplets = decode(&out, 0.0, VerbDecode::Argmax);
        assert_eq!(triplets.len(), 1);
        assert_eq!(triplets[0].object_id, 0);
        assert_eq!(triplets[0].verb_id, 1);
        assert!((triplets[0].score - 0.72).abs() < 1e-9);
    }

    #[test]
    fn decode_threshold_one_empties_output() {
        let det = Detector::new(cfg(), 0).unwrap();
        let out = det.forward(&gray_image(64, 90), 64).unwrap();
        assert!(decode(&out, 1.0, VerbDecode::Argmax).is_empty());
    }

    #[test]
    fn decode_scores_are_nonincreasing() {
        let det = Detector::new(cfg(), 2).unwrap();
        let out = det.forward(&gray_image(64, 30), 64).unwrap();
        let triplets = decode(&out, 0.0, VerbDecode::Argmax);
        for w in triplets.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn multi_verb_decode_expands_queries() {
        let det = Detector::new(cfg(), 0).unwrap();
        let mut out = det.forward(&gray_image(64, 90), 64).unwrap();
        for mut row in out.object_logits.rows_mut() {
            row.fill(0.0);
            row[3] = 30.0;
        }
        out.object_logits.row_mut(0).fill(0.0);
        out.object_logits[(0, 0)] = 5.0;
        out.verb_logits.row_mut(0).fill(5.0); // all verbs confident
        let triplets = decode(&out, 0.0, VerbDecode::MultiLabel { min_prob: 0.5 });
        assert_eq!(triplets.len(), 3);
    }

    #[test]
    fn checkpoint_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let det = Detector::new(cfg(), 9).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&det, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.cfg, det.cfg);
        assert_eq!(loaded.params.len(), det.params.len());
        for (name, value) in det.params.iter() {
            let round: Vec<f64> = value.iter().map(|&v| (v as f32) as f64).collect();
            let loaded_vals: Vec<f64> = loaded.params.get(name).iter().cloned().collect();
            assert_eq!(round, loaded_vals, "parameter {name}");
        }
        // same detector saved twice is byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&det, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DetectorError::Corrupt(_))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg();
        c.embed_dim = 65; // not divisible by heads
        assert!(Detector::new(c, 0).is_err());
        let mut c = cfg();
        c.num_queries = 0;
        assert!(Detector::new(c, 0).is_err());
    }
}
