//! The distance-biased self-attention encoder and its prediction heads.
//!
//! An input unit becomes four integer sequences (token id, position inside
//! the owning instruction, and the owner's in- and out-degree); their table
//! rows are summed per token. Each attention layer then computes, per head,
//!
//! ```text
//! out = (softmax(Q Kᵀ / √d_head) + Bias) V
//! ```
//!
//! where `Bias[s][t]` is a learned scalar looked up from the token pair's
//! distance entry. The bias is added after the softmax and the rows are not
//! renormalised. The first half of the heads read the positive distance, the
//! second half the negative one. Heads are concatenated and projected by
//! `Wo`.

mod checkpoint;
mod tape;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use tape::{Grads, Precision, Tape, Var};
pub use tensor::Mat;
pub use train::{example_loss, train, Example, Task, TrainConfig, TrainTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::CodeUnit;
use crate::pdg::{build_pdg, degree_sequences_with, DegreeSequences, DistanceMatrix, Pdg, TokenDistance};
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("activation has {found} tokens but the distance matrix covers {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("layer {layer} does not exist; the model has {layers}")]
    NoSuchLayer { layer: usize, layers: usize },
    #[error("cannot pool an empty activation")]
    Empty,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("example {index}: label {label} is outside 0..{classes}")]
    Label { index: usize, label: usize, classes: usize },
    #[error("example {index}: {detail}")]
    Example { index: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Distances above this share one bias bucket.
    pub max_distance_bucket: u32,
    pub token_vocab: usize,
    pub position_vocab: usize,
    pub degree_vocab: usize,
    /// Hidden width of the pooling head's feed-forward network.
    pub ffn_hidden: usize,
    /// Output classes of the token and pooling heads.
    pub classes: usize,
    /// Width of the pair head's projection.
    pub pair_dim: usize,
    /// Wrap each layer as `norm(e + GA(e))` instead of the bare `GA(e)`.
    pub residual: bool,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            d_model: 32,
            heads: 4,
            layers: 2,
            max_distance_bucket: 16,
            token_vocab: crate::vocab::STANDARD_VOCAB_SIZE,
            position_vocab: 128,
            degree_vocab: 64,
            ffn_hidden: 32,
            classes: 2,
            pair_dim: 16,
            residual: false,
            seed: 0,
            precision: Precision::Wide,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks.
    pub fn small() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            heads: 2,
            layers: 2,
            ffn_hidden: 8,
            pair_dim: 8,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("token_vocab", self.token_vocab),
            ("position_vocab", self.position_vocab),
            ("degree_vocab", self.degree_vocab),
            ("ffn_hidden", self.ffn_hidden),
            ("classes", self.classes),
            ("pair_dim", self.pair_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.heads.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "heads must be even so they split between the two distance channels, got {}",
                self.heads
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.token_vocab <= 12 {
            return Err(ModelError::Config("token_vocab must exceed the 12 reserved tokens".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Buckets per head: distances `0..=max_distance_bucket` plus one for
    /// pairs without a common ancestor.
    pub fn buckets(&self) -> usize {
        self.max_distance_bucket as usize + 2
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.token_vocab)
    }
}

/// Model inputs for one unit: the four integer sequences and the token-level
/// distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub seq: DegreeSequences,
    pub dist: TokenDistance,
}

impl Features {
    pub fn from_unit(unit: &CodeUnit, vocab: &Vocab) -> Features {
        let g = build_pdg(unit);
        Features::from_graph(unit, &g, vocab)
    }

    pub fn from_graph(unit: &CodeUnit, g: &Pdg, vocab: &Vocab) -> Features {
        Features {
            seq: degree_sequences_with(unit, g, vocab),
            dist: TokenDistance::expand(&DistanceMatrix::build(g), unit),
        }
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Replaces the intra-instruction positions by absolute token indices,
    /// the conventional encoding that the negative control uses.
    pub fn with_absolute_positions(mut self) -> Features {
        self.seq.x_pos = (0..self.len()).collect();
        self
    }

    /// Features with token `s` moved to `map[s]`.
    pub fn permuted(&self, map: &[usize]) -> Features {
        assert_eq!(map.len(), self.len());
        let mv = |v: &[usize]| {
            let mut out = vec![0; v.len()];
            for (s, &m) in map.iter().enumerate() {
                out[m] = v[s];
            }
            out
        };
        Features {
            seq: DegreeSequences {
                x_c: mv(&self.seq.x_c),
                x_pos: mv(&self.seq.x_pos),
                x_ind: mv(&self.seq.x_ind),
                x_outd: mv(&self.seq.x_outd),
            },
            dist: self.dist.permuted(map),
        }
    }
}

/// Result of [`GaModel::pair_similarity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub cosine: f64,
    /// Set when a projection had zero norm and the cosine was defined as 0.
    pub degenerate: bool,
}

/// Slot of every parameter tensor in [`GaModel::params`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub emb_tok: usize,
    pub emb_pos: usize,
    pub emb_ind: usize,
    pub emb_outd: usize,
    pub layers: Vec<LayerSlots>,
    pub tok_w: usize,
    pub tok_b: usize,
    pub pool_w1: usize,
    pub pool_b1: usize,
    pub pool_w2: usize,
    pub pool_b2: usize,
    pub pair_w: usize,
    pub pair_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    /// `heads x buckets`; row `i` is head `i`'s table.
    pub bias: usize,
}

impl Layout {
    fn new(layers: usize) -> Layout {
        let base = 4 + 5 * layers;
        Layout {
            emb_tok: 0,
            emb_pos: 1,
            emb_ind: 2,
            emb_outd: 3,
            layers: (0..layers)
                .map(|l| {
                    let b = 4 + 5 * l;
                    LayerSlots {
                        wq: b,
                        wk: b + 1,
                        wv: b + 2,
                        wo: b + 3,
                        bias: b + 4,
                    }
                })
                .collect(),
            tok_w: base,
            tok_b: base + 1,
            pool_w1: base + 2,
            pool_b1: base + 3,
            pool_w2: base + 4,
            pool_b2: base + 5,
            pair_w: base + 6,
            pair_b: base + 7,
        }
    }

    pub fn len(&self) -> usize {
        self.pair_b + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn bias_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().map(|l| l.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Mat>,
}

impl GaModel {
    /// A freshly initialised model; `config.seed` fixes every weight.
    pub fn new(config: ModelConfig) -> Result<GaModel, ModelError> {
        config.validate()?;
        let layout = Layout::new(config.layers);
        let shapes = param_shapes(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::with_capacity(shapes.len());
        for (slot, (_, rows, cols)) in shapes.iter().enumerate() {
            let std = init_std(&layout, slot, *rows);
            let mut m = Mat::zeros(*rows, *cols);
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("finite std");
                m.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            params.push(m);
        }
        Ok(GaModel { config, layout, params })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_params(config: ModelConfig, params: Vec<Mat>) -> Result<GaModel, ModelError> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if shapes.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, r, c), p) in shapes.iter().zip(&params) {
            if p.shape() != (*r, *c) {
                return Err(ModelError::Config(format!(
                    "{name} has shape {:?}, expected ({r}, {c})",
                    p.shape()
                )));
            }
        }
        Ok(GaModel {
            layout: Layout::new(config.layers),
            config,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    /// Names of the parameter tensors, in slot order.
    pub fn param_names(&self) -> Vec<String> {
        param_shapes(&self.config).into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn with_precision(mut self, precision: Precision) -> GaModel {
        self.config.precision = precision;
        self
    }

    /// A copy whose position, degree and distance-bias tables are all zero,
    /// leaving attention that sees token identities only.
    pub fn without_structure(&self) -> GaModel {
        let mut m = self.clone();
        let l = &self.layout;
        let zeroed: Vec<usize> = [l.emb_pos, l.emb_ind, l.emb_outd]
            .into_iter()
            .chain(l.bias_slots())
            .collect();
        for slot in zeroed {
            m.params[slot].data.iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    /// Starts a forward pass in the model's precision.
    pub fn session(&self) -> Session<'_> {
        Session::new(self, self.config.precision)
    }

    /// Summed input embedding, one row per token.
    pub fn embed(&self, f: &Features) -> Mat {
        let mut s = self.session();
        let e = s.embed(f);
        s.value(e)
    }

    /// One attention layer applied to `e`.
    pub fn ga_forward(&self, e: &Mat, dist: &TokenDistance, layer: usize) -> Result<Mat, ModelError> {
        let mut s = self.session();
        let x = s.tape.leaf(e.clone());
        let y = s.layer(x, dist, layer)?;
        Ok(s.value(y))
    }

    /// Embedding followed by the full layer stack.
    pub fn encode(&self, f: &Features) -> Result<Mat, ModelError> {
        let mut s = self.session();
        let y = s.encode(f)?;
        Ok(s.value(y))
    }

    /// Per-token label logits.
    pub fn token_head(&self, e: &Mat) -> Mat {
        let mut s = self.session();
        let x = s.tape.leaf(e.clone());
        let y = s.token_head(x);
        s.value(y)
    }

    /// Unit-level logits from the mean over tokens.
    pub fn pool_head(&self, e: &Mat) -> Result<Mat, ModelError> {
        let mut s = self.session();
        let x = s.tape.leaf(e.clone());
        let y = s.pool_head(x)?;
        Ok(s.value(y))
    }

    pub fn pair_similarity(&self, e1: &Mat, e2: &Mat) -> Result<Similarity, ModelError> {
        let mut s = self.session();
        let a = s.tape.leaf(e1.clone());
        let b = s.tape.leaf(e2.clone());
        let (c, degenerate) = s.pair_cosine(a, b)?;
        Ok(Similarity {
            cosine: s.tape.value(c).data[0],
            degenerate,
        })
    }

    /// Unit logits for a whole input.
    pub fn predict_unit(&self, f: &Features) -> Result<Vec<f64>, ModelError> {
        let mut s = self.session();
        let e = s.encode(f)?;
        let y = s.pool_head(e)?;
        Ok(s.tape.value(y).data.clone())
    }
}

fn param_shapes(c: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = c.d_model;
    let mut v = vec![
        ("emb_tok".to_string(), c.token_vocab, d),
        ("emb_pos".to_string(), c.position_vocab, d),
        ("emb_ind".to_string(), c.degree_vocab, d),
        ("emb_outd".to_string(), c.degree_vocab, d),
    ];
    for l in 0..c.layers {
        for w in ["wq", "wk", "wv", "wo"] {
            v.push((format!("layer{l}.{w}"), d, d));
        }
        v.push((format!("layer{l}.bias"), c.heads, c.buckets()));
    }
    v.extend([
        ("tok_w".to_string(), d, c.classes),
        ("tok_b".to_string(), 1, c.classes),
        ("pool_w1".to_string(), d, c.ffn_hidden),
        ("pool_b1".to_string(), 1, c.ffn_hidden),
        ("pool_w2".to_string(), c.ffn_hidden, c.classes),
        ("pool_b2".to_string(), 1, c.classes),
        ("pair_w".to_string(), d, c.pair_dim),
        ("pair_b".to_string(), 1, c.pair_dim),
    ]);
    v
}

fn init_std(l: &Layout, slot: usize, rows: usize) -> f64 {
    if slot <= l.emb_outd {
        0.5
    } else if l.bias_slots().any(|b| b == slot) {
        0.02
    } else if [l.tok_b, l.pool_b1, l.pool_b2, l.pair_b].contains(&slot) {
        0.0
    } else {
        1.0 / (rows as f64).sqrt()
    }
}

/// A forward pass recorded on a [`Tape`]; each parameter tensor is put on the
/// tape at most once, so gradients come back one per slot.
pub struct Session<'m> {
    model: &'m GaModel,
    pub tape: Tape,
    loaded: Vec<Option<Var>>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m GaModel, precision: Precision) -> Session<'m> {
        Session {
            model,
            tape: Tape::new(precision),
            loaded: vec![None; model.params.len()],
        }
    }

    pub fn value(&self, v: Var) -> Mat {
        self.tape.value(v).clone()
    }

    fn p(&mut self, slot: usize) -> Var {
        if let Some(v) = self.loaded[slot] {
            return v;
        }
        let v = self.tape.param(slot, &self.model.params[slot]);
        self.loaded[slot] = Some(v);
        v
    }

    pub fn embed(&mut self, f: &Features) -> Var {
        let c = &self.model.config;
        let l = &self.model.layout;
        let clamp = |v: &[usize], size: usize| v.iter().map(|&x| x.min(size - 1)).collect::<Vec<_>>();
        let parts = [
            (l.emb_tok, clamp(&f.seq.x_c, c.token_vocab)),
            (l.emb_pos, clamp(&f.seq.x_pos, c.position_vocab)),
            (l.emb_ind, clamp(&f.seq.x_ind, c.degree_vocab)),
            (l.emb_outd, clamp(&f.seq.x_outd, c.degree_vocab)),
        ];
        let mut acc: Option<Var> = None;
        for (slot, idx) in parts {
            let table = self.p(slot);
            let rows = self.tape.gather(table, idx);
            acc = Some(match acc {
                None => rows,
                Some(a) => self.tape.add(a, rows),
            });
        }
        acc.expect("four tables")
    }

    pub fn layer(&mut self, e: Var, dist: &TokenDistance, layer: usize) -> Result<Var, ModelError> {
        let c = self.model.config.clone();
        let Some(&slots) = self.model.layout.layers.get(layer) else {
            return Err(ModelError::NoSuchLayer {
                layer,
                layers: c.layers,
            });
        };
        let n = self.tape.value(e).rows;
        if dist.len() != n {
            return Err(ModelError::Dimension {
                expected: dist.len(),
                found: n,
            });
        }
        let (wq, wk, wv, wo, bias) = (
            self.p(slots.wq),
            self.p(slots.wk),
            self.p(slots.wv),
            self.p(slots.wo),
            self.p(slots.bias),
        );
        let q = self.tape.matmul(e, wq);
        let k = self.tape.matmul(e, wk);
        let v = self.tape.matmul(e, wv);
        let dh = c.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(c.heads);
        for head in 0..c.heads {
            let negative = head >= c.heads / 2;
            let qh = self.tape.slice_cols(q, head * dh, dh);
            let kh = self.tape.slice_cols(k, head * dh, dh);
            let vh = self.tape.slice_cols(v, head * dh, dh);
            let scores = self.tape.matmul_t(qh, kh);
            let scores = self.tape.scale(scores, scale);
            let attn = self.tape.softmax_rows(scores);
            let idx = bias_indices(dist, head, negative, &c);
            let b = self.tape.gather_scalars(bias, idx, n, n);
            let mixed = self.tape.add(attn, b);
            outs.push(self.tape.matmul(mixed, vh));
        }
        let cat = self.tape.concat_cols(outs);
        let out = self.tape.matmul(cat, wo);
        Ok(if c.residual {
            let sum = self.tape.add(e, out);
            self.tape.layer_norm_rows(sum)
        } else {
            out
        })
    }

    pub fn encode(&mut self, f: &Features) -> Result<Var, ModelError> {
        let mut e = self.embed(f);
        for layer in 0..self.model.config.layers {
            e = self.layer(e, &f.dist, layer)?;
        }
        Ok(e)
    }

    pub fn token_head(&mut self, e: Var) -> Var {
        let (w, b) = (self.p(self.model.layout.tok_w), self.p(self.model.layout.tok_b));
        let y = self.tape.matmul(e, w);
        self.tape.add_row(y, b)
    }

    fn mean(&mut self, e: Var) -> Result<Var, ModelError> {
        if self.tape.value(e).rows == 0 {
            return Err(ModelError::Empty);
        }
        Ok(self.tape.mean_rows(e))
    }

    pub fn pool_head(&mut self, e: Var) -> Result<Var, ModelError> {
        let l = &self.model.layout;
        let (w1, b1, w2, b2) = (l.pool_w1, l.pool_b1, l.pool_w2, l.pool_b2);
        let m = self.mean(e)?;
        let (w1, b1, w2, b2) = (self.p(w1), self.p(b1), self.p(w2), self.p(b2));
        let h = self.tape.matmul(m, w1);
        let h = self.tape.add_row(h, b1);
        let h = self.tape.relu(h);
        let y = self.tape.matmul(h, w2);
        Ok(self.tape.add_row(y, b2))
    }

    fn project(&mut self, e: Var) -> Result<Var, ModelError> {
        let m = self.mean(e)?;
        let (w, b) = (self.p(self.model.layout.pair_w), self.p(self.model.layout.pair_b));
        let y = self.tape.matmul(m, w);
        Ok(self.tape.add_row(y, b))
    }

    /// Cosine of the two projected means, plus whether a zero norm forced it
    /// to 0.
    pub fn pair_cosine(&mut self, a: Var, b: Var) -> Result<(Var, bool), ModelError> {
        let pa = self.project(a)?;
        let pb = self.project(b)?;
        let degenerate = self.tape.value(pa).max_abs() == 0.0 || self.tape.value(pb).max_abs() == 0.0;
        Ok((self.tape.cosine(pa, pb), degenerate))
    }
}

/// Flat indices into a layer's `heads x buckets` bias table.
fn bias_indices(dist: &TokenDistance, head: usize, negative: bool, c: &ModelConfig) -> Vec<usize> {
    let n = dist.len();
    let buckets = c.buckets();
    let none = buckets - 1;
    let mut idx = Vec::with_capacity(n * n);
    for s in 0..n {
        for t in 0..n {
            let bucket = match dist.get(s, t) {
                Some((p, q)) => (if negative { q } else { p }).min(c.max_distance_bucket) as usize,
                None => none,
            };
            idx.push(head * buckets + bucket);
        }
    }
    idx
}
