//! Memory-access accounting for matrix products under a flat ("centralized")
//! and a hierarchical ("federated") memory model, plus the combined
//! low-rank + hierarchy bandwidth model.
//!
//! Centralized: every output element of `A (m x n) * B (n x k)` re-reads a
//! row of `A` and a column of `B`, `T_c = 2 n m k`. Hierarchical: each global
//! element is read once and reused from block-local memory, `T_f = m n + n k`.
//! The reduction `1 - T_f / T_c` simplifies to `1 - 1/(2k) - 1/(2m)`.
//!
//! Alongside the closed forms, [`counted_matmul`] performs the product while
//! counting actual global reads, so every formula is checked by execution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::svdkit::rank_for_compression;
use crate::tensor::{Matrix, TensorError};

/// Bytes per element in byte-denominated reports (32-bit floats).
pub const ELEMENT_BYTES: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("matrix dimensions must be >= 1, got {0:?}")]
    InvalidShape((usize, usize, usize)),
    #[error("compression ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("batch size must be >= 1")]
    InvalidBatch,
    #[error("matrix chain is empty")]
    EmptyChain,
    #[error("chain operand {index} has {rows} rows, previous result has {cols} columns")]
    IncompatibleChain {
        index: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Dimensions of `A (m x n)` times `B (n x k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatmulShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl MatmulShape {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self, CostError> {
        if m == 0 || n == 0 || k == 0 {
            return Err(CostError::InvalidShape((m, n, k)));
        }
        Ok(Self { m, n, k })
    }

    pub fn square(d: usize) -> Result<Self, CostError> {
        Self::new(d, d, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Analytic,
    Counted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessReport {
    pub shape: MatmulShape,
    pub centralized_reads: u64,
    pub federated_reads: u64,
    pub reduction: f64,
    pub source: Source,
}

impl AccessReport {
    fn from_counts(shape: MatmulShape, c: u64, f: u64, source: Source) -> Self {
        let reduction = if c > 0 {
            1.0 - f as f64 / c as f64
        } else {
            0.0
        };
        Self {
            shape,
            centralized_reads: c,
            federated_reads: f,
            reduction,
            source,
        }
    }

    /// Same counts regardless of how they were obtained.
    pub fn counts_match(&self, other: &AccessReport) -> bool {
        self.shape == other.shape
            && self.centralized_reads == other.centralized_reads
            && self.federated_reads == other.federated_reads
    }
}

pub fn centralized_reads(s: MatmulShape) -> u64 {
    2 * s.n as u64 * s.m as u64 * s.k as u64
}

pub fn federated_reads(s: MatmulShape) -> u64 {
    (s.m * s.n + s.n * s.k) as u64
}

/// `1 - T_f / T_c`.
pub fn reduction(s: MatmulShape) -> f64 {
    1.0 - federated_reads(s) as f64 / centralized_reads(s) as f64
}

/// `1 - 1/(2k) - 1/(2m)`; agrees with [`reduction`] for every shape.
pub fn reduction_closed_form(s: MatmulShape) -> f64 {
    1.0 - 1.0 / (2.0 * s.k as f64) - 1.0 / (2.0 * s.m as f64)
}

pub fn analytic_report(s: MatmulShape) -> AccessReport {
    AccessReport::from_counts(
        s,
        centralized_reads(s),
        federated_reads(s),
        Source::Analytic,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadPolicy {
    /// Every access goes to global memory.
    Centralized,
    /// First access loads into block memory; repeats are free.
    Hierarchical,
}

/// A matrix in global memory with a read counter. The counter is local to
/// this value; nothing is shared between calls.
struct GlobalMemory<'a> {
    m: &'a Matrix,
    policy: ReadPolicy,
    resident: Vec<bool>,
    reads: u64,
}

impl<'a> GlobalMemory<'a> {
    fn new(m: &'a Matrix, policy: ReadPolicy) -> Self {
        let resident = match policy {
            ReadPolicy::Centralized => Vec::new(),
            ReadPolicy::Hierarchical => vec![false; m.len()],
        };
        Self {
            m,
            policy,
            resident,
            reads: 0,
        }
    }

    #[inline]
    fn read(&mut self, i: usize, j: usize) -> f64 {
        match self.policy {
            ReadPolicy::Centralized => self.reads += 1,
            ReadPolicy::Hierarchical => {
                let idx = i * self.m.cols() + j;
                if !self.resident[idx] {
                    self.resident[idx] = true;
                    self.reads += 1;
                }
            }
        }
        self.m.get(i, j)
    }
}

/// Computes `a * b` while counting global-memory reads under `policy`.
/// The product is bit-identical to [`crate::tensor::matmul`].
pub fn counted_matmul(
    a: &Matrix,
    b: &Matrix,
    policy: ReadPolicy,
) -> Result<(Matrix, u64), CostError> {
    if a.cols() != b.rows() {
        return Err(TensorError::DimensionMismatch {
            op: "counted_matmul",
            left: a.shape(),
            right: b.shape(),
        }
        .into());
    }
    let mut ga = GlobalMemory::new(a, policy);
    let mut gb = GlobalMemory::new(b, policy);
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for p in 0..a.cols() {
                acc += ga.read(i, p) * gb.read(p, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok((out, ga.reads + gb.reads))
}

/// Elementwise sum with read counting. Both policies read every element of
/// both operands exactly once.
pub fn counted_add(a: &Matrix, b: &Matrix, policy: ReadPolicy) -> Result<(Matrix, u64), CostError> {
    if a.shape() != b.shape() {
        return Err(TensorError::DimensionMismatch {
            op: "counted_add",
            left: a.shape(),
            right: b.shape(),
        }
        .into());
    }
    let mut ga = GlobalMemory::new(a, policy);
    let mut gb = GlobalMemory::new(b, policy);
    let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| ga.read(i, j) + gb.read(i, j));
    Ok((out, ga.reads + gb.reads))
}

/// Runs both policies on random operands of `shape` and reports the counts.
pub fn counted_report(shape: MatmulShape, seed: u64) -> AccessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::random_normal(shape.m, shape.n, 1.0, &mut rng);
    let b = Matrix::random_normal(shape.n, shape.k, 1.0, &mut rng);
    let (_, c) = counted_matmul(&a, &b, ReadPolicy::Centralized).expect("shape is consistent");
    let (_, f) = counted_matmul(&a, &b, ReadPolicy::Hierarchical).expect("shape is consistent");
    AccessReport::from_counts(shape, c, f, Source::Counted)
}

/// Analytic and counted reports for every shape, in input order.
pub fn read_count_sweep(
    shapes: &[MatmulShape],
    seed: u64,
    exec: Exec,
) -> Vec<(AccessReport, AccessReport)> {
    exec.map_range(shapes.len(), |i| {
        let s = shapes[i];
        (
            analytic_report(s),
            counted_report(s, seed.wrapping_add(i as u64)),
        )
    })
}

/// Square dimensions of the reference read-count table.
pub const DEFAULT_DIMS: [usize; 4] = [5, 10, 100, 10_000];

pub fn read_table() -> Vec<AccessReport> {
    read_table_for(&DEFAULT_DIMS).expect("reference dims are positive")
}

pub fn read_table_for(dims: &[usize]) -> Result<Vec<AccessReport>, CostError> {
    dims.iter()
        .map(|&d| MatmulShape::square(d).map(analytic_report))
        .collect()
}

/// Read counts for `W X` with `W: m x n`, `X: n x t`, optionally replacing
/// `W` by a rank-`k_hat` triple and/or using the hierarchical model.
pub fn compressed_access(
    m: usize,
    n: usize,
    t: usize,
    k_hat: usize,
    hierarchy: bool,
    compressed: bool,
) -> u64 {
    let (m, n, t, k) = (m as u64, n as u64, t as u64, k_hat as u64);
    match (hierarchy, compressed) {
        (false, false) => 2 * m * n * t,
        (false, true) => 2 * (m + n) * k * t,
        (true, false) => m * n + n * t,
        (true, true) => m * k + k + n * k + n * t,
    }
}

/// Elements stored for `W`: `m n` dense or `(m + n + 1) k_hat` as a triple.
pub fn weight_storage(m: usize, n: usize, k_hat: usize, compressed: bool) -> u64 {
    if compressed {
        ((m + n + 1) * k_hat) as u64
    } else {
        (m * n) as u64
    }
}

/// All read and storage counts for one compression ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadCounts {
    pub ratio: f64,
    pub k_hat: usize,
    pub original_plain: u64,
    pub compressed_plain: u64,
    pub original_hierarchy: u64,
    pub compressed_hierarchy: u64,
    pub original_storage: u64,
    pub compressed_storage: u64,
}

pub fn read_counts(m: usize, n: usize, t: usize, ratio: f64) -> Result<ReadCounts, CostError> {
    check_ratio(ratio)?;
    let k = rank_for_compression(m, n, ratio);
    Ok(ReadCounts {
        ratio,
        k_hat: k,
        original_plain: compressed_access(m, n, t, k, false, false),
        compressed_plain: compressed_access(m, n, t, k, false, true),
        original_hierarchy: compressed_access(m, n, t, k, true, false),
        compressed_hierarchy: compressed_access(m, n, t, k, true, true),
        original_storage: weight_storage(m, n, k, false),
        compressed_storage: weight_storage(m, n, k, true),
    })
}

fn check_ratio(ratio: f64) -> Result<(), CostError> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(CostError::InvalidRatio(ratio))
    }
}

/// What counts as a "read" in weight + input + output totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccountingPolicy {
    /// Weights counted once as serialized elements (`m n` or
    /// `(m + n + 1) k_hat`); input `n t` and output `m t` per batch element.
    TransferBytes,
    /// Each batch element is one hierarchical multiplication: weight and
    /// input reads from the with-hierarchy formulas, plus the `m t` output
    /// write.
    MultiplicationReads,
}

impl AccountingPolicy {
    pub const ALL: [AccountingPolicy; 2] = [
        AccountingPolicy::TransferBytes,
        AccountingPolicy::MultiplicationReads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AccountingPolicy::TransferBytes => "transfer-bytes",
            AccountingPolicy::MultiplicationReads => "multiplication-reads",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthReport {
    pub compression_ratio: f64,
    pub k_hat: usize,
    pub original_access: u64,
    pub optimized_access: u64,
    pub reduce_rate: f64,
    pub accounting_policy: AccountingPolicy,
}

impl BandwidthReport {
    pub fn original_bytes(&self) -> u64 {
        self.original_access * ELEMENT_BYTES
    }

    pub fn optimized_bytes(&self) -> u64 {
        self.optimized_access * ELEMENT_BYTES
    }
}

/// `1 - optimized / original` total access for `W X` over a batch, where
/// total access is weight read + input read + output write. A ratio of 1
/// means the dense matrix is used unchanged.
pub fn bandwidth_reduce_rate(
    m: usize,
    n: usize,
    t: usize,
    batch: usize,
    ratio: f64,
    policy: AccountingPolicy,
) -> Result<BandwidthReport, CostError> {
    check_ratio(ratio)?;
    if batch == 0 {
        return Err(CostError::InvalidBatch);
    }
    if m == 0 || n == 0 || t == 0 {
        return Err(CostError::InvalidShape((m, n, t)));
    }
    let dense = ratio >= 1.0;
    let k = if dense {
        m.min(n)
    } else {
        rank_for_compression(m, n, ratio)
    };
    let b = batch as u64;
    let io = (n * t + m * t) as u64;
    let (original, optimized) = match policy {
        AccountingPolicy::TransferBytes => {
            let orig = weight_storage(m, n, k, false) + b * io;
            let opt = if dense {
                orig
            } else {
                weight_storage(m, n, k, true) + b * io
            };
            (orig, opt)
        }
        AccountingPolicy::MultiplicationReads => {
            let out_write = (m * t) as u64;
            let orig = b * (compressed_access(m, n, t, k, true, false) + out_write);
            let opt = if dense {
                orig
            } else {
                b * (compressed_access(m, n, t, k, true, true) + out_write)
            };
            (orig, opt)
        }
    };
    Ok(BandwidthReport {
        compression_ratio: ratio,
        k_hat: k,
        original_access: original,
        optimized_access: optimized,
        reduce_rate: 1.0 - optimized as f64 / original as f64,
        accounting_policy: policy,
    })
}

/// One factor of a matrix chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Dense {
        rows: usize,
        cols: usize,
    },
    /// `n x n` diagonal, stored as `n` elements.
    Diagonal(usize),
}

impl Operand {
    fn dims(self) -> (usize, usize) {
        match self {
            Operand::Dense { rows, cols } => (rows, cols),
            Operand::Diagonal(n) => (n, n),
        }
    }

    fn stored(self) -> u64 {
        match self {
            Operand::Dense { rows, cols } => (rows * cols) as u64,
            Operand::Diagonal(n) => n as u64,
        }
    }
}

/// Global reads for a left-to-right chain product. Centralized sums the
/// pairwise product costs (a diagonal factor costs two reads per output
/// element); hierarchical reads each global operand once and keeps
/// intermediates in block memory.
pub fn matrix_chain_reads(chain: &[Operand], hierarchy: bool) -> Result<u64, CostError> {
    let first = *chain.first().ok_or(CostError::EmptyChain)?;
    let mut acc = first;
    let mut centralized = 0u64;
    for (index, &op) in chain.iter().enumerate().skip(1) {
        let (ar, ac) = acc.dims();
        let (br, bc) = op.dims();
        if ac != br {
            return Err(CostError::IncompatibleChain {
                index,
                rows: br,
                cols: ac,
            });
        }
        let diag = matches!(acc, Operand::Diagonal(_)) || matches!(op, Operand::Diagonal(_));
        centralized += if diag {
            2 * (ar * bc) as u64
        } else {
            centralized_reads(MatmulShape {
                m: ar,
                n: ac,
                k: bc,
            })
        };
        acc = match (acc, op) {
            (Operand::Diagonal(n), Operand::Diagonal(_)) => Operand::Diagonal(n),
            _ => Operand::Dense { rows: ar, cols: bc },
        };
    }
    if hierarchy {
        Ok(chain.iter().map(|o| o.stored()).sum())
    } else {
        Ok(centralized)
    }
}
