//! Randomized range-finder SVD: sketch `W` with a Gaussian test matrix,
//! sharpen with a few power iterations, then decompose the small projected
//! matrix exactly. Cost is `O(m n l)` for sketch width `l`, against the
//! `O(m n^2)` per sweep of the exact backend.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::jacobi::jacobi_svd;
use super::{LowRankFactors, SvdError};
use crate::exec::Exec;
use crate::tensor::{matmul_with, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedOptions {
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for RandomizedOptions {
    fn default() -> Self {
        Self {
            oversample: 10,
            power_iters: 4,
            seed: 0,
        }
    }
}

fn mm_flops(a: &Matrix, b: &Matrix) -> u64 {
    2 * (a.rows() * a.cols() * b.cols()) as u64
}

/// Modified Gram-Schmidt on the columns of `y`, returning `Q` with the same
/// shape and the flop count. Degenerate columns are zeroed.
fn orthonormalize(y: &Matrix) -> (Matrix, u64) {
    let (m, l) = (y.rows(), y.cols());
    let mut cols: Vec<Vec<f64>> = (0..l).map(|j| y.column(j)).collect();
    let mut flops = 0u64;
    for j in 0..l {
        for k in 0..j {
            let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(j);
            for (x, q) in tail[0].iter_mut().zip(&head[k]) {
                *x -= proj * q;
            }
            flops += 4 * m as u64;
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        flops += 3 * m as u64;
        if norm > 1e-300 {
            cols[j].iter_mut().for_each(|x| *x /= norm);
        } else {
            cols[j].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    (Matrix::from_fn(m, l, |i, j| cols[j][i]), flops)
}

/// Rank-`k` randomized SVD. Returns the factors and an operation count.
pub fn randomized_svd(
    w: &Matrix,
    k: usize,
    opts: RandomizedOptions,
    exec: Exec,
) -> Result<(LowRankFactors, u64), SvdError> {
    super::check_input(w)?;
    let r = w.rows().min(w.cols());
    if k == 0 || k > r {
        return Err(SvdError::RankOutOfRange { k, max: r });
    }
    let l = (k + opts.oversample).min(r);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = Matrix::random_normal(w.cols(), l, 1.0, &mut rng);
    let w_t = w.transpose();

    let mut flops = mm_flops(w, &omega);
    let y = matmul_with(w, &omega, exec).expect("shapes checked");
    let (mut q, f) = orthonormalize(&y);
    flops += f;
    for _ in 0..opts.power_iters {
        let z = matmul_with(&w_t, &q, exec).expect("shapes checked");
        flops += mm_flops(&w_t, &q);
        let (qz, f) = orthonormalize(&z);
        flops += f;
        let y = matmul_with(w, &qz, exec).expect("shapes checked");
        flops += mm_flops(w, &qz);
        let (qy, f) = orthonormalize(&y);
        flops += f;
        q = qy;
    }

    let q_t = q.transpose();
    let b = matmul_with(&q_t, w, exec).expect("shapes checked");
    flops += mm_flops(&q_t, w);
    let small = jacobi_svd(&b, exec);
    flops += small.flops;
    let u_full = matmul_with(&q, &small.u, exec).expect("shapes checked");
    flops += mm_flops(&q, &small.u);

    let factors = LowRankFactors::new(
        u_full.columns(0, k),
        small.sigma[..k].to_vec(),
        small.v_t.row_range(0, k),
    )?;
    Ok((factors, flops))
}
