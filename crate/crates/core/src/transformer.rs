//! Encoder-stack transformer whose blocks are the unit of partitioning.
//!
//! Each block computes `h = LN1(x + MultiHead(x))`, `y = LN2(h + FFN(h))`
//! with `FFN(h) = ReLU(h W1) W2`. Embedding (plus sinusoidal positions) and
//! the output projection belong to the client; only blocks are sharded.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::tensor::{matmul, softmax_rows, Matrix, TensorError};

/// Added to the row variance inside layer norm.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {token} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid partition plan: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_layers: 4,
            d_ff: 64,
            vocab_size: 101,
            max_seq_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

/// Position of a parameter tensor inside a block, in a fixed enumeration
/// order (all heads' Q, K, V, then W_O, W1, W2, then the norm vectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightSlot {
    Query(u16),
    Key(u16),
    Value(u16),
    Output,
    Ffn1,
    Ffn2,
    Ln1Gain,
    Ln1Bias,
    Ln2Gain,
    Ln2Bias,
}

impl WeightSlot {
    /// Dense weight matrices are candidates for low-rank compression;
    /// norm vectors are not.
    pub fn is_matrix(self) -> bool {
        !matches!(
            self,
            WeightSlot::Ln1Gain | WeightSlot::Ln1Bias | WeightSlot::Ln2Gain | WeightSlot::Ln2Bias
        )
    }

    pub fn code(self) -> u16 {
        match self {
            WeightSlot::Query(h) => h * 4,
            WeightSlot::Key(h) => h * 4 + 1,
            WeightSlot::Value(h) => h * 4 + 2,
            WeightSlot::Output => 3,
            WeightSlot::Ffn1 => 7,
            WeightSlot::Ffn2 => 11,
            WeightSlot::Ln1Gain => 15,
            WeightSlot::Ln1Bias => 19,
            WeightSlot::Ln2Gain => 23,
            WeightSlot::Ln2Bias => 27,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Some(match (code % 4, code / 4) {
            (0, h) => WeightSlot::Query(h),
            (1, h) => WeightSlot::Key(h),
            (2, h) => WeightSlot::Value(h),
            (3, 0) => WeightSlot::Output,
            (3, 1) => WeightSlot::Ffn1,
            (3, 2) => WeightSlot::Ffn2,
            (3, 3) => WeightSlot::Ln1Gain,
            (3, 4) => WeightSlot::Ln1Bias,
            (3, 5) => WeightSlot::Ln2Gain,
            (3, 6) => WeightSlot::Ln2Bias,
            _ => return None,
        })
    }

    pub fn name(self) -> String {
        match self {
            WeightSlot::Query(h) => format!("head{h}.w_q"),
            WeightSlot::Key(h) => format!("head{h}.w_k"),
            WeightSlot::Value(h) => format!("head{h}.w_v"),
            WeightSlot::Output => "w_o".into(),
            WeightSlot::Ffn1 => "w1".into(),
            WeightSlot::Ffn2 => "w2".into(),
            WeightSlot::Ln1Gain => "ln1.gain".into(),
            WeightSlot::Ln1Bias => "ln1.bias".into(),
            WeightSlot::Ln2Gain => "ln2.gain".into(),
            WeightSlot::Ln2Bias => "ln2.bias".into(),
        }
    }
}

fn row_vector(v: &[f64]) -> Matrix {
    Matrix::new(1, v.len(), v.to_vec()).expect("length matches")
}

impl LayerParams {
    pub fn random(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let dh = cfg.d_head();
        let s_in = 1.0 / (d as f64).sqrt();
        let heads = (0..cfg.n_heads)
            .map(|_| HeadParams {
                w_q: Matrix::random_normal(d, dh, s_in, rng),
                w_k: Matrix::random_normal(d, dh, s_in, rng),
                w_v: Matrix::random_normal(d, dh, s_in, rng),
            })
            .collect();
        let w_o = Matrix::random_normal(d, d, s_in, rng);
        let w1 = Matrix::random_normal(d, cfg.d_ff, s_in, rng);
        let w2 = Matrix::random_normal(cfg.d_ff, d, 1.0 / (cfg.d_ff as f64).sqrt(), rng);
        let ln = |rng: &mut ChaCha8Rng| LayerNorm {
            gain: Matrix::random_normal(1, d, 0.1, rng)
                .into_vec()
                .into_iter()
                .map(|g| 1.0 + g)
                .collect(),
            bias: Matrix::random_normal(1, d, 0.1, rng).into_vec(),
        };
        let ln1 = ln(rng);
        let ln2 = ln(rng);
        Self {
            heads,
            w_o,
            w1,
            w2,
            ln1,
            ln2,
        }
    }

    pub fn slots(n_heads: usize) -> Vec<WeightSlot> {
        let n = n_heads as u16;
        let mut v = Vec::with_capacity(3 * n_heads + 7);
        for h in 0..n {
            v.extend([
                WeightSlot::Query(h),
                WeightSlot::Key(h),
                WeightSlot::Value(h),
            ]);
        }
        v.extend([
            WeightSlot::Output,
            WeightSlot::Ffn1,
            WeightSlot::Ffn2,
            WeightSlot::Ln1Gain,
            WeightSlot::Ln1Bias,
            WeightSlot::Ln2Gain,
            WeightSlot::Ln2Bias,
        ]);
        v
    }

    /// Every parameter tensor with its slot, norm vectors as `1 x d` rows.
    pub fn tensors(&self) -> Vec<(WeightSlot, Matrix)> {
        Self::slots(self.heads.len())
            .into_iter()
            .map(|s| (s, self.tensor(s)))
            .collect()
    }

    pub fn tensor(&self, slot: WeightSlot) -> Matrix {
        match slot {
            WeightSlot::Query(h) => self.heads[h as usize].w_q.clone(),
            WeightSlot::Key(h) => self.heads[h as usize].w_k.clone(),
            WeightSlot::Value(h) => self.heads[h as usize].w_v.clone(),
            WeightSlot::Output => self.w_o.clone(),
            WeightSlot::Ffn1 => self.w1.clone(),
            WeightSlot::Ffn2 => self.w2.clone(),
            WeightSlot::Ln1Gain => row_vector(&self.ln1.gain),
            WeightSlot::Ln1Bias => row_vector(&self.ln1.bias),
            WeightSlot::Ln2Gain => row_vector(&self.ln2.gain),
            WeightSlot::Ln2Bias => row_vector(&self.ln2.bias),
        }
    }

    /// Rebuilds a block from `(slot, tensor)` pairs; every slot for
    /// `n_heads` heads must be present exactly once.
    pub fn from_tensors(
        cfg: &ModelConfig,
        tensors: Vec<(WeightSlot, Matrix)>,
    ) -> Result<Self, ModelError> {
        let d = cfg.d_model;
        let dh = cfg.d_head();
        let expected = Self::slots(cfg.n_heads);
        if tensors.len() != expected.len() {
            return Err(ModelError::BadPlan(format!(
                "expected {} tensors per block, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut by_slot = std::collections::BTreeMap::new();
        for (s, m) in tensors {
            if by_slot.insert(s, m).is_some() {
                return Err(ModelError::BadPlan(format!(
                    "duplicate tensor {}",
                    s.name()
                )));
            }
        }
        let mut take = |s: WeightSlot, rows: usize, cols: usize| -> Result<Matrix, ModelError> {
            let m = by_slot
                .remove(&s)
                .ok_or_else(|| ModelError::BadPlan(format!("missing tensor {}", s.name())))?;
            if m.rows() != rows || m.cols() != cols {
                return Err(ModelError::BadPlan(format!(
                    "tensor {} has shape {}, expected {rows}x{cols}",
                    s.name(),
                    m.shape()
                )));
            }
            Ok(m)
        };
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads as u16 {
            heads.push(HeadParams {
                w_q: take(WeightSlot::Query(h), d, dh)?,
                w_k: take(WeightSlot::Key(h), d, dh)?,
                w_v: take(WeightSlot::Value(h), d, dh)?,
            });
        }
        let w_o = take(WeightSlot::Output, d, d)?;
        let w1 = take(WeightSlot::Ffn1, d, cfg.d_ff)?;
        let w2 = take(WeightSlot::Ffn2, cfg.d_ff, d)?;
        let ln1 = LayerNorm {
            gain: take(WeightSlot::Ln1Gain, 1, d)?.into_vec(),
            bias: take(WeightSlot::Ln1Bias, 1, d)?.into_vec(),
        };
        let ln2 = LayerNorm {
            gain: take(WeightSlot::Ln2Gain, 1, d)?.into_vec(),
            bias: take(WeightSlot::Ln2Bias, 1, d)?.into_vec(),
        };
        Ok(Self {
            heads,
            w_o,
            w1,
            w2,
            ln1,
            ln2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab_size x d_model`
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `d_model x vocab_size`
    pub output: Matrix,
}

impl ModelParams {
    /// Deterministic random initialisation from `seed`.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let embedding = Matrix::random_normal(config.vocab_size, d, 1.0, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::random(&config, &mut rng))
            .collect();
        let output = Matrix::random_normal(d, config.vocab_size, 1.0 / (d as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            embedding,
            layers,
            output,
        })
    }
}

/// Sinusoidal position table, `max_seq_len x d_model`. Even columns use
/// `sin`, odd columns `cos`, at angle `pos / 10000^(2i/d)`.
pub fn positional_encoding(max_seq_len: usize, d_model: usize) -> Matrix {
    let d = d_model as f64;
    Matrix::from_fn(max_seq_len, d_model, |pos, c| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn embed(tokens: &[usize], params: &ModelParams) -> Result<Matrix, ModelError> {
    let cfg = &params.config;
    if tokens.len() > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfVocab {
            token: bad,
            vocab: cfg.vocab_size,
        });
    }
    let pe = positional_encoding(tokens.len(), cfg.d_model);
    Ok(Matrix::from_fn(tokens.len(), cfg.d_model, |t, j| {
        params.embedding.get(tokens[t], j) + pe.get(t, j)
    }))
}

/// `softmax(Q K^T / sqrt(d_head)) V`, with `d_head = q.cols()`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, ModelError> {
    if q.cols() != k.cols() {
        return Err(TensorError::DimensionMismatch {
            op: "attention(q, k)",
            left: q.shape(),
            right: k.shape(),
        }
        .into());
    }
    if k.rows() != v.rows() {
        return Err(TensorError::DimensionMismatch {
            op: "attention(k, v)",
            left: k.shape(),
            right: v.shape(),
        }
        .into());
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = matmul(q, &k.transpose())?.scale(scale);
    Ok(matmul(&softmax_rows(&scores)?, v)?)
}

/// Standardizes each row to zero mean, unit variance (up to `LN_EPS`).
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let d = x.cols() as f64;
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

pub fn layer_norm(x: &Matrix, ln: &LayerNorm) -> Matrix {
    let mut out = normalize_rows(x);
    for i in 0..out.rows() {
        for ((v, g), b) in out.row_mut(i).iter_mut().zip(&ln.gain).zip(&ln.bias) {
            *v = *v * g + b;
        }
    }
    out
}

pub fn multi_head(x: &Matrix, layer: &LayerParams) -> Result<Matrix, ModelError> {
    let outs: Vec<Result<Matrix, ModelError>> = Exec::default().map_slice(&layer.heads, |h| {
        let q = matmul(x, &h.w_q)?;
        let k = matmul(x, &h.w_k)?;
        let v = matmul(x, &h.w_v)?;
        attention(&q, &k, &v)
    });
    let outs = outs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(matmul(&Matrix::hcat(&outs)?, &layer.w_o)?)
}

pub fn feed_forward(h: &Matrix, layer: &LayerParams) -> Result<Matrix, ModelError> {
    let inner = matmul(h, &layer.w1)?.map(|v| v.max(0.0));
    Ok(matmul(&inner, &layer.w2)?)
}

/// One encoder block. Shape is preserved.
pub fn layer_forward(x: &Matrix, layer: &LayerParams) -> Result<Matrix, ModelError> {
    let d = layer.w_o.rows();
    if x.cols() != d {
        return Err(TensorError::DimensionMismatch {
            op: "layer_forward",
            left: x.shape(),
            right: layer.w_o.shape(),
        }
        .into());
    }
    let h = layer_norm(&x.add(&multi_head(x, layer)?)?, &layer.ln1);
    let y = layer_norm(&h.add(&feed_forward(&h, layer)?)?, &layer.ln2);
    Ok(y)
}

/// Client-side tail: output projection followed by row softmax.
pub fn project_output(x: &Matrix, params: &ModelParams) -> Result<Matrix, ModelError> {
    Ok(softmax_rows(&matmul(x, &params.output)?)?)
}

/// Full forward pass; rows of the result are next-token distributions.
pub fn model_forward(tokens: &[usize], params: &ModelParams) -> Result<Matrix, ModelError> {
    model_forward_counted(tokens, params).map(|(m, _)| m)
}

/// Forward pass that also reports how many block evaluations ran.
pub fn model_forward_counted(
    tokens: &[usize],
    params: &ModelParams,
) -> Result<(Matrix, usize), ModelError> {
    let mut x = embed(tokens, params)?;
    let mut calls = 0;
    for layer in &params.layers {
        x = layer_forward(&x, layer)?;
        calls += 1;
    }
    Ok((project_output(&x, params)?, calls))
}

/// One server's assignment: a contiguous block range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub server: usize,
    pub layers: Range<usize>,
}

impl PlanEntry {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Ordered pipeline assignment of blocks to servers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionPlan {
    entries: Vec<PlanEntry>,
}

impl PartitionPlan {
    pub fn new(entries: Vec<PlanEntry>, n_layers: usize) -> Result<Self, ModelError> {
        let plan = Self { entries };
        plan.validate(n_layers)?;
        Ok(plan)
    }

    /// Servers `0..sizes.len()` taking `sizes[i]` consecutive blocks each.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self, ModelError> {
        let mut start = 0;
        let entries = sizes
            .iter()
            .enumerate()
            .map(|(server, &n)| {
                let e = PlanEntry {
                    server,
                    layers: start..start + n,
                };
                start += n;
                e
            })
            .collect();
        Self::new(entries, start)
    }

    /// Splits `n_layers` over `n_servers` as evenly as possible, earlier
    /// servers taking the remainder.
    pub fn even(n_servers: usize, n_layers: usize) -> Result<Self, ModelError> {
        if n_servers == 0 || n_servers > n_layers {
            return Err(ModelError::BadPlan(format!(
                "cannot split {n_layers} layers over {n_servers} servers"
            )));
        }
        let base = n_layers / n_servers;
        let extra = n_layers % n_servers;
        let sizes: Vec<usize> = (0..n_servers)
            .map(|i| base + usize::from(i < extra))
            .collect();
        Self::from_sizes(&sizes)
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), ModelError> {
        let mut next = 0;
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.server) {
                return Err(ModelError::BadPlan(format!(
                    "server {} listed twice",
                    e.server
                )));
            }
            if e.layers.start != next {
                return Err(ModelError::BadPlan(format!(
                    "server {} starts at layer {}, expected {next}",
                    e.server, e.layers.start
                )));
            }
            if e.layers.is_empty() {
                return Err(ModelError::BadPlan(format!(
                    "server {} has no layers",
                    e.server
                )));
            }
            next = e.layers.end;
        }
        if next != n_layers {
            return Err(ModelError::BadPlan(format!(
                "plan covers {next} layers, model has {n_layers}"
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn position(&self, server: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.server == server)
    }

    pub fn entry(&self, server: usize) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.server == server)
    }

    /// Largest block count held by any server.
    pub fn max_layers(&self) -> usize {
        self.entries.iter().map(PlanEntry::len).max().unwrap_or(0)
    }

    /// Moves `from`'s range into the adjacent `into`, keeping contiguity.
    pub fn merge(&self, from: usize, into: usize) -> Result<Self, ModelError> {
        let pf = self
            .position(from)
            .ok_or_else(|| ModelError::BadPlan(format!("server {from} not in plan")))?;
        let pi = self
            .position(into)
            .ok_or_else(|| ModelError::BadPlan(format!("server {into} not in plan")))?;
        if pf.abs_diff(pi) != 1 {
            return Err(ModelError::BadPlan(format!(
                "servers {from} and {into} are not adjacent"
            )));
        }
        let mut entries = self.entries.clone();
        let moved = entries[pf].layers.clone();
        let target = &mut entries[pi].layers;
        *target = target.start.min(moved.start)..target.end.max(moved.end);
        entries.remove(pf);
        Ok(Self { entries })
    }
}

/// A server's slice of the block stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShard {
    pub server: usize,
    pub layers: Range<usize>,
    pub params: Vec<LayerParams>,
}

pub fn split_model(
    params: &ModelParams,
    plan: &PartitionPlan,
) -> Result<Vec<LayerShard>, ModelError> {
    plan.validate(params.layers.len())?;
    Ok(plan
        .entries()
        .iter()
        .map(|e| LayerShard {
            server: e.server,
            layers: e.layers.clone(),
            params: params.layers[e.layers.clone()].to_vec(),
        })
        .collect())
}

/// Inverse of [`split_model`]: concatenates shard blocks in pipeline order.
pub fn reassemble(shards: &[LayerShard]) -> Result<Vec<LayerParams>, ModelError> {
    let mut next = 0;
    let mut out = Vec::new();
    for s in shards {
        if s.layers.start != next || s.layers.len() != s.params.len() {
            return Err(ModelError::BadPlan(format!(
                "shard for server {} does not continue at layer {next}",
                s.server
            )));
        }
        next = s.layers.end;
        out.extend(s.params.iter().cloned());
    }
    Ok(out)
}
