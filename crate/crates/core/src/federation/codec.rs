//! Binary wire format.
//!
//! Frame: magic `EF 4C`, version `01`, kind byte, `from` and `to` node ids
//! (u32 LE, role in the high byte), `seq` (u64 LE), payload length (u32 LE),
//! payload. All integers little-endian, all reals IEEE-754 doubles.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::svdkit::LowRankFactors;
use crate::tensor::Matrix;
use crate::transformer::{LayerParams, ModelConfig, ModelParams, WeightSlot};

pub const MAGIC: [u8; 2] = [0xEF, 0x4C];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 24;
/// Largest payload a decoder accepts.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic bytes {0:02x} {1:02x}")]
    BadMagic(u8, u8),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("declared length {declared} exceeds available {limit}")]
    LengthOverflow { declared: u64, limit: u64 },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Client,
    Server,
    Verifier,
}

/// A participant. Indices must fit in 24 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub role: Role,
    pub index: u32,
}

impl NodeId {
    pub const CLIENT: NodeId = NodeId {
        role: Role::Client,
        index: 0,
    };

    pub fn server(index: usize) -> Self {
        Self {
            role: Role::Server,
            index: index as u32,
        }
    }

    pub fn verifier(index: usize) -> Self {
        Self {
            role: Role::Verifier,
            index: index as u32,
        }
    }

    pub fn to_wire(self) -> u32 {
        let role = match self.role {
            Role::Client => 0u32,
            Role::Server => 1,
            Role::Verifier => 2,
        };
        (role << 24) | (self.index & 0x00FF_FFFF)
    }

    pub fn from_wire(v: u32) -> Result<Self, DecodeError> {
        let role = match v >> 24 {
            0 => Role::Client,
            1 => Role::Server,
            2 => Role::Verifier,
            r => {
                return Err(DecodeError::InvalidPayload(format!(
                    "unknown node role {r}"
                )))
            }
        };
        Ok(Self {
            role,
            index: v & 0x00FF_FFFF,
        })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = match self.role {
            Role::Client => "client",
            Role::Server => "server",
            Role::Verifier => "verifier",
        };
        write!(f, "{r}{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    WeightShard,
    Activation,
    ValidationProbe,
    ProbeResult,
    TrustReport,
    StatusUpdate,
    Reassignment,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::WeightShard,
        MessageKind::Activation,
        MessageKind::ValidationProbe,
        MessageKind::ProbeResult,
        MessageKind::TrustReport,
        MessageKind::StatusUpdate,
        MessageKind::Reassignment,
    ];

    pub fn code(self) -> u8 {
        match self {
            MessageKind::WeightShard => 1,
            MessageKind::Activation => 2,
            MessageKind::ValidationProbe => 3,
            MessageKind::ProbeResult => 4,
            MessageKind::TrustReport => 5,
            MessageKind::StatusUpdate => 6,
            MessageKind::Reassignment => 7,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, DecodeError> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == c)
            .ok_or(DecodeError::UnknownKind(c))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::WeightShard => "weight_shard",
            MessageKind::Activation => "activation",
            MessageKind::ValidationProbe => "validation_probe",
            MessageKind::ProbeResult => "probe_result",
            MessageKind::TrustReport => "trust_report",
            MessageKind::StatusUpdate => "status_update",
            MessageKind::Reassignment => "reassignment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServerStatus {
    Active,
    Deactivated,
}

impl ServerStatus {
    pub fn code(self) -> u8 {
        match self {
            ServerStatus::Active => 0,
            ServerStatus::Deactivated => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, DecodeError> {
        match c {
            0 => Ok(ServerStatus::Active),
            1 => Ok(ServerStatus::Deactivated),
            _ => Err(DecodeError::InvalidPayload(format!(
                "unknown status byte {c}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ServerStatus::Active => "active",
            ServerStatus::Deactivated => "deactivated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightEncoding {
    Dense(Matrix),
    LowRank(LowRankFactors),
}

impl WeightEncoding {
    /// The tensor the receiver ends up holding.
    pub fn to_matrix(&self) -> Matrix {
        match self {
            WeightEncoding::Dense(m) => m.clone(),
            WeightEncoding::LowRank(f) => f.reconstruct(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    WeightShard {
        layer: u32,
        slot: WeightSlot,
        weights: WeightEncoding,
    },
    Activation(Matrix),
    ValidationProbe {
        probe: u32,
        input: Matrix,
    },
    ProbeResult {
        probe: u32,
        output: Matrix,
    },
    TrustReport {
        server: NodeId,
        acc: f64,
        layers: f64,
        score: f64,
        status: ServerStatus,
    },
    StatusUpdate(ServerStatus),
    Reassignment {
        failed: NodeId,
        replacement: NodeId,
        layers: Range<u32>,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::WeightShard { .. } => MessageKind::WeightShard,
            Payload::Activation(_) => MessageKind::Activation,
            Payload::ValidationProbe { .. } => MessageKind::ValidationProbe,
            Payload::ProbeResult { .. } => MessageKind::ProbeResult,
            Payload::TrustReport { .. } => MessageKind::TrustReport,
            Payload::StatusUpdate(_) => MessageKind::StatusUpdate,
            Payload::Reassignment { .. } => MessageKind::Reassignment,
        }
    }

    /// Serialized payload size in bytes.
    pub fn encoded_len(&self) -> usize {
        match self {
            Payload::WeightShard { weights, .. } => 7 + encoding_len(weights),
            Payload::Activation(m) => matrix_len(m),
            Payload::ValidationProbe { input: m, .. } | Payload::ProbeResult { output: m, .. } => {
                4 + matrix_len(m)
            }
            Payload::TrustReport { .. } => 4 + 3 * 8 + 1,
            Payload::StatusUpdate(_) => 1,
            Payload::Reassignment { .. } => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    pub seq: u64,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.encoded_len()
    }
}

pub fn matrix_len(m: &Matrix) -> usize {
    8 + 8 * m.len()
}

pub fn factors_len(f: &LowRankFactors) -> usize {
    12 + 8 * (f.m() * f.k() + f.k() + f.k() * f.n())
}

fn encoding_len(w: &WeightEncoding) -> usize {
    match w {
        WeightEncoding::Dense(m) => matrix_len(m),
        WeightEncoding::LowRank(f) => factors_len(f),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u32(out, m.rows());
    put_u32(out, m.cols());
    put_f64s(out, m.as_slice());
}

fn put_factors(out: &mut Vec<u8>, f: &LowRankFactors) {
    put_u32(out, f.m());
    put_u32(out, f.n());
    put_u32(out, f.k());
    put_f64s(out, f.u().as_slice());
    put_f64s(out, f.sigma());
    put_f64s(out, f.v_t().as_slice());
}

fn put_payload(out: &mut Vec<u8>, p: &Payload) {
    match p {
        Payload::WeightShard {
            layer,
            slot,
            weights,
        } => {
            out.extend_from_slice(&layer.to_le_bytes());
            out.extend_from_slice(&slot.code().to_le_bytes());
            match weights {
                WeightEncoding::Dense(m) => {
                    out.push(0);
                    put_matrix(out, m);
                }
                WeightEncoding::LowRank(f) => {
                    out.push(1);
                    put_factors(out, f);
                }
            }
        }
        Payload::Activation(m) => put_matrix(out, m),
        Payload::ValidationProbe { probe, input: m }
        | Payload::ProbeResult { probe, output: m } => {
            out.extend_from_slice(&probe.to_le_bytes());
            put_matrix(out, m);
        }
        Payload::TrustReport {
            server,
            acc,
            layers,
            score,
            status,
        } => {
            out.extend_from_slice(&server.to_wire().to_le_bytes());
            put_f64s(out, &[*acc, *layers, *score]);
            out.push(status.code());
        }
        Payload::StatusUpdate(s) => out.push(s.code()),
        Payload::Reassignment {
            failed,
            replacement,
            layers,
        } => {
            out.extend_from_slice(&failed.to_wire().to_le_bytes());
            out.extend_from_slice(&replacement.to_wire().to_le_bytes());
            out.extend_from_slice(&layers.start.to_le_bytes());
            out.extend_from_slice(&layers.end.to_le_bytes());
        }
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let len = msg.payload.encoded_len();
    let mut out = Vec::with_capacity(HEADER_LEN + len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind().code());
    out.extend_from_slice(&msg.from.to_wire().to_le_bytes());
    out.extend_from_slice(&msg.to.to_wire().to_le_bytes());
    out.extend_from_slice(&msg.seq.to_le_bytes());
    put_u32(&mut out, len);
    put_payload(&mut out, &msg.payload);
    debug_assert_eq!(out.len(), HEADER_LEN + len);
    out
}

/// Cursor over a payload. Running out of bytes inside a payload means a
/// declared dimension overstates the payload.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if n > self.remaining() {
            return Err(DecodeError::LengthOverflow {
                declared: n as u64,
                limit: self.remaining() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: u64) -> Result<Vec<f64>, DecodeError> {
        let bytes = count
            .checked_mul(8)
            .filter(|&b| b <= self.remaining() as u64)
            .ok_or(DecodeError::LengthOverflow {
                declared: count.saturating_mul(8),
                limit: self.remaining() as u64,
            })?;
        Ok(self
            .take(bytes as usize)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix_body(&mut self, rows: u32, cols: u32) -> Result<Matrix, DecodeError> {
        let data = self.f64s(rows as u64 * cols as u64)?;
        Matrix::new(rows as usize, cols as usize, data)
            .map_err(|e| DecodeError::InvalidPayload(e.to_string()))
    }

    pub fn matrix(&mut self) -> Result<Matrix, DecodeError> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        self.matrix_body(rows, cols)
    }

    fn factors(&mut self) -> Result<LowRankFactors, DecodeError> {
        let m = self.u32()?;
        let n = self.u32()?;
        let k = self.u32()?;
        let u = self.matrix_body(m, k)?;
        let sigma = self.f64s(k as u64)?;
        let v_t = self.matrix_body(k, n)?;
        LowRankFactors::new(u, sigma, v_t).map_err(|e| DecodeError::InvalidPayload(e.to_string()))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

fn read_payload(kind: MessageKind, r: &mut Reader<'_>) -> Result<Payload, DecodeError> {
    Ok(match kind {
        MessageKind::WeightShard => {
            let layer = r.u32()?;
            let code = r.u16()?;
            let slot = WeightSlot::from_code(code).ok_or_else(|| {
                DecodeError::InvalidPayload(format!("unknown weight slot {code}"))
            })?;
            let weights = match r.u8()? {
                0 => WeightEncoding::Dense(r.matrix()?),
                1 => WeightEncoding::LowRank(r.factors()?),
                e => {
                    return Err(DecodeError::InvalidPayload(format!(
                        "unknown weight encoding {e}"
                    )))
                }
            };
            Payload::WeightShard {
                layer,
                slot,
                weights,
            }
        }
        MessageKind::Activation => Payload::Activation(r.matrix()?),
        MessageKind::ValidationProbe => Payload::ValidationProbe {
            probe: r.u32()?,
            input: r.matrix()?,
        },
        MessageKind::ProbeResult => Payload::ProbeResult {
            probe: r.u32()?,
            output: r.matrix()?,
        },
        MessageKind::TrustReport => Payload::TrustReport {
            server: NodeId::from_wire(r.u32()?)?,
            acc: r.f64()?,
            layers: r.f64()?,
            score: r.f64()?,
            status: ServerStatus::from_code(r.u8()?)?,
        },
        MessageKind::StatusUpdate => Payload::StatusUpdate(ServerStatus::from_code(r.u8()?)?),
        MessageKind::Reassignment => Payload::Reassignment {
            failed: NodeId::from_wire(r.u32()?)?,
            replacement: NodeId::from_wire(r.u32()?)?,
            layers: r.u32()?..r.u32()?,
        },
    })
}

/// Parses the fixed header and returns the total frame length it declares.
pub fn frame_len_from_header(header: &[u8]) -> Result<usize, DecodeError> {
    if header.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN,
            available: header.len(),
        });
    }
    if header[..2] != MAGIC {
        return Err(DecodeError::BadMagic(header[0], header[1]));
    }
    if header[2] != VERSION {
        return Err(DecodeError::UnsupportedVersion(header[2]));
    }
    MessageKind::from_code(header[3])?;
    let len = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(DecodeError::LengthOverflow {
            declared: len as u64,
            limit: MAX_PAYLOAD as u64,
        });
    }
    Ok(HEADER_LEN + len)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    let total = frame_len_from_header(bytes)?;
    if bytes.len() < total {
        return Err(DecodeError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    let kind = MessageKind::from_code(bytes[3])?;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let from = NodeId::from_wire(word(4))?;
    let to = NodeId::from_wire(word(8))?;
    let seq = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let mut r = Reader::new(&bytes[HEADER_LEN..total]);
    let payload = read_payload(kind, &mut r)?;
    r.finish()?;
    Ok((
        Message {
            from,
            to,
            seq,
            payload,
        },
        total,
    ))
}

/// Decodes exactly one frame; extra bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// A standalone matrix file: the matrix payload encoding on its own.
pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(matrix_len(m));
    put_matrix(&mut out, m);
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, DecodeError> {
    if bytes.len() < 8 {
        return Err(DecodeError::Truncated {
            needed: 8,
            available: bytes.len(),
        });
    }
    let mut r = Reader::new(bytes);
    let m = r.matrix()?;
    r.finish()?;
    Ok(m)
}

const MODEL_MAGIC: [u8; 4] = [0xEF, 0x4C, 0x4D, 0x44];
/// Layer index used for tensors outside the block stack.
const CLIENT_LAYER: u32 = u32::MAX;
const TAG_EMBEDDING: u16 = 0;
const TAG_OUTPUT: u16 = 1;

fn put_tagged(out: &mut Vec<u8>, layer: u32, tag: u16, m: &Matrix) {
    out.extend_from_slice(&layer.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    put_matrix(out, m);
}

/// Model file: magic, version, the six config fields (u32 LE), a tensor
/// count, then `(layer u32, slot u16, matrix)` entries.
pub fn encode_model(p: &ModelParams) -> Vec<u8> {
    let c = &p.config;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(VERSION);
    for v in [
        c.d_model,
        c.n_heads,
        c.n_layers,
        c.d_ff,
        c.vocab_size,
        c.max_seq_len,
    ] {
        put_u32(&mut out, v);
    }
    let per_layer = LayerParams::slots(c.n_heads).len();
    put_u32(&mut out, 2 + per_layer * p.layers.len());
    put_tagged(&mut out, CLIENT_LAYER, TAG_EMBEDDING, &p.embedding);
    put_tagged(&mut out, CLIENT_LAYER, TAG_OUTPUT, &p.output);
    for (i, layer) in p.layers.iter().enumerate() {
        for (slot, m) in layer.tensors() {
            put_tagged(&mut out, i as u32, slot.code(), &m);
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams, DecodeError> {
    if bytes.len() < 5 + 28 {
        return Err(DecodeError::Truncated {
            needed: 33,
            available: bytes.len(),
        });
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(DecodeError::BadMagic(bytes[0], bytes[1]));
    }
    if bytes[4] != VERSION {
        return Err(DecodeError::UnsupportedVersion(bytes[4]));
    }
    let mut r = Reader::new(&bytes[5..]);
    let mut field = || r.u32().map(|v| v as usize);
    let config = ModelConfig {
        d_model: field()?,
        n_heads: field()?,
        n_layers: field()?,
        d_ff: field()?,
        vocab_size: field()?,
        max_seq_len: field()?,
    };
    config
        .validate()
        .map_err(|e| DecodeError::InvalidPayload(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut embedding = None;
    let mut output = None;
    let mut blocks: Vec<Vec<(WeightSlot, Matrix)>> = vec![Vec::new(); config.n_layers];
    for _ in 0..count {
        let layer = r.u32()?;
        let tag = r.u16()?;
        let m = r.matrix()?;
        match (layer, tag) {
            (CLIENT_LAYER, TAG_EMBEDDING) => embedding = Some(m),
            (CLIENT_LAYER, TAG_OUTPUT) => output = Some(m),
            (l, t) if (l as usize) < config.n_layers => {
                let slot = WeightSlot::from_code(t).ok_or_else(|| {
                    DecodeError::InvalidPayload(format!("unknown weight slot {t}"))
                })?;
                blocks[l as usize].push((slot, m));
            }
            (l, t) => {
                return Err(DecodeError::InvalidPayload(format!(
                    "unexpected tensor tag {l}/{t}"
                )))
            }
        }
    }
    r.finish()?;
    let missing = |what: &str| DecodeError::InvalidPayload(format!("missing {what} matrix"));
    let embedding = embedding.ok_or_else(|| missing("embedding"))?;
    let output = output.ok_or_else(|| missing("output"))?;
    if embedding.rows() != config.vocab_size || embedding.cols() != config.d_model {
        return Err(DecodeError::InvalidPayload(format!(
            "embedding shape {} does not match config",
            embedding.shape()
        )));
    }
    if output.rows() != config.d_model || output.cols() != config.vocab_size {
        return Err(DecodeError::InvalidPayload(format!(
            "output shape {} does not match config",
            output.shape()
        )));
    }
    let layers = blocks
        .into_iter()
        .map(|t| LayerParams::from_tensors(&config, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DecodeError::InvalidPayload(e.to_string()))?;
    Ok(ModelParams {
        config,
        embedding,
        layers,
        output,
    })
}
