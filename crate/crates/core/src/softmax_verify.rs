//! Softmax re-computation through base-`b` lookup tables.
//!
//! A row `z` is shifted by its maximum so every entry is `<= 0`, quantized to
//! `q = round(-z' * 2^f)`, and `q` is written with `K` base-`b` digits
//! `Z(k)`. Then `exp(-q / 2^f) = prod_k exp(-b^k Z(k) / 2^f)`, one table
//! lookup per digit. The sum of the `Y` values is split into fixed-size
//! blocks so the reduction order does not depend on how many workers share
//! the row.

use thiserror::Error;

use crate::costmodel::{counted_matmul, ReadPolicy};
use crate::exec::Exec;
use crate::tensor::{softmax_rows, Matrix, TensorError};

/// Elements per partial sum.
pub const BLOCK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid table config: {0}")]
    InvalidConfig(String),
    #[error("row contains non-finite values")]
    NonFinite,
    #[error("row is empty")]
    EmptyRow,
    #[error("shifted value {value} outside representable range [-{limit}, 0]")]
    CoverageExceeded { value: f64, limit: f64 },
    #[error("quantized value {q} exceeds {max}")]
    DigitOutOfRange { q: u64, max: u64 },
    #[error("{0}")]
    Shape(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BaseBConfig {
    pub b: u32,
    pub k: u32,
    pub f: u32,
}

impl Default for BaseBConfig {
    fn default() -> Self {
        Self { b: 16, k: 4, f: 8 }
    }
}

impl BaseBConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.b < 2 {
            return Err(VerifyError::InvalidConfig(format!("base {} < 2", self.b)));
        }
        if self.k < 1 {
            return Err(VerifyError::InvalidConfig(
                "digit count must be >= 1".into(),
            ));
        }
        if self.f > 52 {
            return Err(VerifyError::InvalidConfig(format!(
                "scale bits {} > 52",
                self.f
            )));
        }
        match (self.b as u64).checked_pow(self.k) {
            Some(v) if v <= 1 << 53 => Ok(()),
            _ => Err(VerifyError::InvalidConfig(format!(
                "{}^{} exceeds 2^53",
                self.b, self.k
            ))),
        }
    }

    /// Largest representable quantized magnitude, `b^K - 1`.
    pub fn max_q(&self) -> u64 {
        (self.b as u64).pow(self.k) - 1
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.f) as f64
    }

    /// Largest shift magnitude in logit units.
    pub fn coverage(&self) -> f64 {
        self.max_q() as f64 / self.scale()
    }

    /// Guaranteed bound on the probability error, `2 * 2^-f`.
    pub fn bound(&self) -> f64 {
        2.0 / self.scale()
    }
}

/// `tables[k][d] = exp(-d b^k / 2^f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTables {
    cfg: BaseBConfig,
    tables: Vec<Vec<f64>>,
}

impl ExpTables {
    pub fn new(cfg: BaseBConfig) -> Result<Self, VerifyError> {
        cfg.validate()?;
        let tables = (0..cfg.k)
            .map(|k| {
                let place = (cfg.b as u64).pow(k);
                (0..cfg.b as u64)
                    .map(|d| (-((d * place) as f64) / cfg.scale()).exp())
                    .collect()
            })
            .collect();
        Ok(Self { cfg, tables })
    }

    pub fn config(&self) -> BaseBConfig {
        self.cfg
    }

    pub fn table(&self, k: usize) -> &[f64] {
        &self.tables[k]
    }
}

/// `z' = z - max(z)` and the max itself.
pub fn shift_normalize(z: &[f64]) -> Result<(Vec<f64>, f64), VerifyError> {
    if z.is_empty() {
        return Err(VerifyError::EmptyRow);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(VerifyError::NonFinite);
    }
    let hat = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((z.iter().map(|v| v - hat).collect(), hat))
}

pub fn quantize_one(z: f64, cfg: &BaseBConfig) -> Result<u64, VerifyError> {
    let q = (-z * cfg.scale()).round();
    if z.is_nan() || z > 0.0 || q > cfg.max_q() as f64 {
        return Err(VerifyError::CoverageExceeded {
            value: z,
            limit: cfg.coverage(),
        });
    }
    Ok(q as u64)
}

pub fn quantize(z_prime: &[f64], cfg: &BaseBConfig) -> Result<Vec<u64>, VerifyError> {
    z_prime.iter().map(|&z| quantize_one(z, cfg)).collect()
}

/// Little-endian base-`b` digits of `q`.
pub fn digits(q: u64, cfg: &BaseBConfig) -> Result<Vec<u32>, VerifyError> {
    if q > cfg.max_q() {
        return Err(VerifyError::DigitOutOfRange {
            q,
            max: cfg.max_q(),
        });
    }
    let b = cfg.b as u64;
    let mut rest = q;
    Ok((0..cfg.k)
        .map(|_| {
            let d = (rest % b) as u32;
            rest /= b;
            d
        })
        .collect())
}

pub fn exp_via_tables(q: u64, tables: &ExpTables) -> Result<f64, VerifyError> {
    let ds = digits(q, &tables.cfg)?;
    Ok(ds
        .iter()
        .enumerate()
        .fold(1.0, |acc, (k, &d)| acc * tables.tables[k][d as usize]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyVerdict {
    pub max_abs_error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl VerifyVerdict {
    pub fn new(max_abs_error: f64, bound: f64) -> Self {
        Self {
            max_abs_error,
            bound,
            pass: max_abs_error <= bound,
        }
    }

    /// Worst of several verdicts against a common bound.
    pub fn combine(items: &[VerifyVerdict], bound: f64) -> Self {
        let worst = items.iter().map(|v| v.max_abs_error).fold(0.0, f64::max);
        Self::new(worst, bound)
    }
}

/// Table-based softmax of one row with the blocks of the `Y` sum spread
/// round-robin over `n_workers`. Results do not depend on `n_workers` or
/// `exec`. The verdict compares against the direct softmax.
pub fn verified_softmax_row(
    z: &[f64],
    tables: &ExpTables,
    n_workers: usize,
    exec: Exec,
) -> Result<(Vec<f64>, VerifyVerdict), VerifyError> {
    let cfg = tables.cfg;
    let (shifted, _) = shift_normalize(z)?;
    let q = quantize(&shifted, &cfg)?;
    let n_blocks = q.len().div_ceil(BLOCK);
    let workers = n_workers.clamp(1, n_blocks);

    let per_worker: Vec<Vec<(usize, Vec<f64>, f64)>> = exec.map_range(workers, |w| {
        (w..n_blocks)
            .step_by(workers)
            .map(|blk| {
                let span = blk * BLOCK..((blk + 1) * BLOCK).min(q.len());
                let ys: Vec<f64> = q[span]
                    .iter()
                    .map(|&v| exp_via_tables(v, tables).expect("quantized within range"))
                    .collect();
                let partial = ys.iter().sum();
                (blk, ys, partial)
            })
            .collect()
    });
    let mut blocks: Vec<(usize, Vec<f64>, f64)> = per_worker.into_iter().flatten().collect();
    blocks.sort_by_key(|b| b.0);
    let total: f64 = blocks.iter().map(|b| b.2).sum();
    let probs: Vec<f64> = blocks
        .into_iter()
        .flat_map(|b| b.1)
        .map(|y| y / total)
        .collect();

    let direct = softmax_rows(&Matrix::new(1, z.len(), z.to_vec())?)?;
    let err = probs
        .iter()
        .zip(direct.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((probs, VerifyVerdict::new(err, cfg.bound())))
}

/// Result of checking a claimed attention-probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVerdict {
    /// Verified probabilities `softmax(Q K^T / sqrt(d))`.
    pub probabilities: Matrix,
    /// Per row: worst deviation of the claim from the verified row.
    pub rows: Vec<VerifyVerdict>,
    pub overall: VerifyVerdict,
    /// Global reads spent recomputing `Q K^T` under the hierarchical model.
    pub score_reads: u64,
}

impl AttentionVerdict {
    pub fn failed_rows(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.pass)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Recomputes the scores `Q K^T / sqrt(d)`, runs the table softmax on each
/// row and compares it with `claimed`.
pub fn verify_attention_scores(
    q: &Matrix,
    k: &Matrix,
    claimed: &Matrix,
    tables: &ExpTables,
    n_workers: usize,
    exec: Exec,
) -> Result<AttentionVerdict, VerifyError> {
    let dim_err = |right: &Matrix| TensorError::DimensionMismatch {
        op: "verify_attention_scores",
        left: q.shape(),
        right: right.shape(),
    };
    if q.cols() != k.cols() {
        return Err(dim_err(k).into());
    }
    if claimed.rows() != q.rows() || claimed.cols() != k.rows() {
        return Err(dim_err(claimed).into());
    }
    let (scores, reads) =
        counted_matmul(q, &k.transpose(), ReadPolicy::Hierarchical).map_err(|_| dim_err(k))?;
    let scores = scores.scale(1.0 / (q.cols() as f64).sqrt());
    let bound = tables.cfg.bound();
    let mut probabilities = Matrix::zeros(scores.rows(), scores.cols());
    let mut rows = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        let (p, _) = verified_softmax_row(scores.row(i), tables, n_workers, exec)?;
        let err = p
            .iter()
            .zip(claimed.row(i))
            .map(|(a, b)| (a - b).abs())
            .fold(
                0.0,
                |m: f64, e| if e.is_nan() { f64::INFINITY } else { m.max(e) },
            );
        rows.push(VerifyVerdict::new(err, bound));
        probabilities.row_mut(i).copy_from_slice(&p);
    }
    let overall = VerifyVerdict::combine(&rows, bound);
    Ok(AttentionVerdict {
        probabilities,
        rows,
        overall,
        score_reads: reads,
    })
}
