//! Singular value decomposition, rank selection and the compression
//! arithmetic used for low-rank weight transfer.
//!
//! A weight matrix `W` (m x n) is decomposed as `U S V^T`. Keeping the top
//! `k` singular triplets gives the Eckart-Young optimal rank-`k`
//! approximation `W_k`, whose squared Frobenius error is exactly the
//! discarded energy `sum_{i>k} s_i^2`. Shipping `(U_k, s_k, V_k^T)` costs
//! `(m + n + 1) k` numbers instead of `m n`.

mod jacobi;
mod randomized;

use thiserror::Error;

pub use randomized::{randomized_svd, RandomizedOptions};

use crate::exec::Exec;
use crate::tensor::{matmul_with, Matrix, TensorError};

/// Singular values at or below this fraction of the largest one do not count
/// toward the numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvdError {
    #[error("cannot decompose an empty matrix")]
    Empty,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("rank {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("target {value} outside {range}")]
    InvalidTarget { value: f64, range: &'static str },
    #[error("inconsistent factor shapes: {0}")]
    BadFactors(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn check_input(w: &Matrix) -> Result<(), SvdError> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(SvdError::Empty);
    }
    if !w.is_finite() {
        return Err(SvdError::NonFinite);
    }
    Ok(())
}

/// A rank-`k` factorization `U diag(s) V^T` with `U: m x k`, `V^T: k x n`.
/// This is what travels over the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    u: Matrix,
    sigma: Vec<f64>,
    v_t: Matrix,
}

impl LowRankFactors {
    pub fn new(u: Matrix, sigma: Vec<f64>, v_t: Matrix) -> Result<Self, SvdError> {
        let k = sigma.len();
        if u.cols() != k || v_t.rows() != k {
            return Err(SvdError::BadFactors(format!(
                "U {}, {} singular values, V^T {}",
                u.shape(),
                k,
                v_t.shape()
            )));
        }
        Ok(Self { u, sigma, v_t })
    }

    pub fn m(&self) -> usize {
        self.u.rows()
    }

    pub fn n(&self) -> usize {
        self.v_t.cols()
    }

    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn v_t(&self) -> &Matrix {
        &self.v_t
    }

    /// Number of scalars stored: `m k + k + k n`.
    pub fn element_count(&self) -> usize {
        self.m() * self.k() + self.k() + self.k() * self.n()
    }

    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        matmul_with(&us, &self.v_t, Exec::default()).expect("factor shapes validated")
    }
}

/// Truncated SVD: the retained triple plus every singular value of the
/// original matrix, kept for energy bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    factors: LowRankFactors,
    full_sigma: Vec<f64>,
}

impl TruncatedSvd {
    pub fn m(&self) -> usize {
        self.factors.m()
    }

    pub fn n(&self) -> usize {
        self.factors.n()
    }

    /// Retained rank.
    pub fn k(&self) -> usize {
        self.factors.k()
    }

    /// `min(m, n)`.
    pub fn full_rank(&self) -> usize {
        self.full_sigma.len()
    }

    pub fn u_k(&self) -> &Matrix {
        self.factors.u()
    }

    pub fn sigma_k(&self) -> &[f64] {
        self.factors.sigma()
    }

    pub fn v_t_k(&self) -> &Matrix {
        self.factors.v_t()
    }

    pub fn full_sigma(&self) -> &[f64] {
        &self.full_sigma
    }

    pub fn factors(&self) -> &LowRankFactors {
        &self.factors
    }

    pub fn into_factors(self) -> LowRankFactors {
        self.factors
    }

    pub fn spectrum(&self) -> Spectrum<'_> {
        Spectrum(&self.full_sigma)
    }
}

/// Full (untruncated) SVD with the default execution mode.
pub fn svd(w: &Matrix) -> Result<TruncatedSvd, SvdError> {
    svd_with(w, Exec::default()).map(|(s, _)| s)
}

/// Full SVD plus the number of floating-point operations spent.
pub fn svd_with(w: &Matrix, exec: Exec) -> Result<(TruncatedSvd, u64), SvdError> {
    check_input(w)?;
    let out = jacobi::jacobi_svd(w, exec);
    let full_sigma = out.sigma.clone();
    let factors = LowRankFactors::new(out.u, out.sigma, out.v_t)?;
    Ok((
        TruncatedSvd {
            factors,
            full_sigma,
        },
        out.flops,
    ))
}

/// Keeps the leading `k` singular triplets.
pub fn truncate(s: &TruncatedSvd, k: usize) -> Result<TruncatedSvd, SvdError> {
    if k == 0 || k > s.k() {
        return Err(SvdError::RankOutOfRange { k, max: s.k() });
    }
    let f = &s.factors;
    Ok(TruncatedSvd {
        factors: LowRankFactors {
            u: f.u.columns(0, k),
            sigma: f.sigma[..k].to_vec(),
            v_t: f.v_t.row_range(0, k),
        },
        full_sigma: s.full_sigma.clone(),
    })
}

pub fn reconstruct(s: &TruncatedSvd) -> Matrix {
    s.factors.reconstruct()
}

/// Borrowed view of a descending singular-value list.
#[derive(Debug, Clone, Copy)]
pub struct Spectrum<'a>(pub &'a [f64]);

impl Spectrum<'_> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.0
            .iter()
            .map(|s| {
                acc += s * s;
                acc
            })
            .collect()
    }

    /// `tail[k] = sum_{i > k} s_i^2` for `k` in `0..=r`, summed from the
    /// small end.
    fn tails(&self) -> Vec<f64> {
        let r = self.0.len();
        let mut tail = vec![0.0; r + 1];
        for k in (0..r).rev() {
            tail[k] = tail[k + 1] + self.0[k] * self.0[k];
        }
        tail
    }

    pub fn total_energy(&self) -> f64 {
        self.cumulative().last().copied().unwrap_or(0.0)
    }

    /// Count of singular values above `RANK_THRESHOLD * s_1`.
    pub fn numerical_rank(&self) -> usize {
        let Some(&top) = self.0.first() else {
            return 0;
        };
        if top <= 0.0 {
            return 0;
        }
        self.0.iter().filter(|&&s| s > RANK_THRESHOLD * top).count()
    }

    pub fn discarded_energy(&self, k: usize) -> f64 {
        self.tails()[k.min(self.0.len())]
    }

    /// Fraction of total energy held by the top `k` values.
    pub fn energy_ratio(&self, k: usize) -> Result<f64, SvdError> {
        let r = self.0.len();
        if k == 0 || k > r {
            return Err(SvdError::RankOutOfRange { k, max: r });
        }
        let cum = self.cumulative();
        let total = cum[r - 1];
        if total == 0.0 {
            return Ok(1.0);
        }
        Ok(cum[k - 1] / total)
    }

    /// Smallest `k` whose retained energy reaches `e` times the energy
    /// within the numerical rank.
    pub fn rank_for_energy(&self, e: f64) -> Result<usize, SvdError> {
        if !(e > 0.0 && e <= 1.0) {
            return Err(SvdError::InvalidTarget {
                value: e,
                range: "(0, 1]",
            });
        }
        let rank = self.numerical_rank();
        if rank == 0 {
            return Ok(1);
        }
        let cum = self.cumulative();
        let target = e * cum[rank - 1];
        Ok(cum[..rank]
            .iter()
            .position(|&c| c >= target)
            .map_or(rank, |i| i + 1))
    }

    /// Smallest `k` with `||W - W_k||_F <= eps * ||W||_F`.
    pub fn rank_for_tolerance(&self, eps: f64) -> Result<usize, SvdError> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(SvdError::InvalidTarget {
                value: eps,
                range: "(0, inf)",
            });
        }
        let r = self.0.len();
        if r == 0 {
            return Ok(1);
        }
        let tails = self.tails();
        let bound = eps * tails[0].sqrt();
        Ok((1..=r).find(|&k| tails[k].sqrt() <= bound).unwrap_or(r))
    }
}

pub fn energy_ratio(s: &TruncatedSvd, k: usize) -> Result<f64, SvdError> {
    s.spectrum().energy_ratio(k)
}

pub fn rank_for_energy(s: &TruncatedSvd, e: f64) -> Result<usize, SvdError> {
    s.spectrum().rank_for_energy(e)
}

pub fn rank_for_tolerance(s: &TruncatedSvd, eps: f64) -> Result<usize, SvdError> {
    s.spectrum().rank_for_tolerance(eps)
}

/// Stored size of a rank-`k` triple relative to the dense `m x n` matrix.
pub fn compression_ratio(m: usize, n: usize, k: usize) -> f64 {
    ((m + n + 1) * k) as f64 / (m * n) as f64
}

/// Largest rank whose triple fits in `ratio` of the dense size, never below 1.
pub fn rank_for_compression(m: usize, n: usize, ratio: f64) -> usize {
    let k = ((m * n) as f64 * ratio / (m + n + 1) as f64).floor();
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

/// Product over layers of the mean per-head retained accuracy, for an
/// `L x H` accuracy matrix.
pub fn total_accuracy(e: &Matrix) -> Result<f64, SvdError> {
    if let Some(&bad) = e.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SvdError::InvalidTarget {
            value: bad,
            range: "[0, 1]",
        });
    }
    let h = e.cols() as f64;
    Ok((0..e.rows())
        .map(|i| e.row(i).iter().sum::<f64>() / h)
        .product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::frobenius_norm;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag321() -> TruncatedSvd {
        svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap()
    }

    fn orthonormality_defect(m: &Matrix) -> f64 {
        let g = matmul_with(&m.transpose(), m, Exec::Sequential).unwrap();
        g.max_abs_diff(&Matrix::identity(m.cols())).unwrap()
    }

    /// W = U diag(sigma) V^T with random orthogonal factors.
    pub(crate) fn with_spectrum(m: usize, n: usize, sigma: &[f64], seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = svd(&Matrix::random_normal(m, m, 1.0, &mut rng))
            .unwrap()
            .u_k()
            .clone();
        let v = svd(&Matrix::random_normal(n, n, 1.0, &mut rng))
            .unwrap()
            .u_k()
            .clone();
        let r = sigma.len();
        let s = Matrix::from_fn(m, n, |i, j| if i == j && i < r { sigma[i] } else { 0.0 });
        let us = matmul_with(&u, &s, Exec::Sequential).unwrap();
        matmul_with(&us, &v.transpose(), Exec::Sequential).unwrap()
    }

    #[test]
    fn diagonal_singular_values() {
        let s = diag321();
        for (a, b) in s.sigma_k().iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let w = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let s = svd(&w).unwrap();
        assert!(s.sigma_k()[1..].iter().all(|&x| x < 1e-10));
        assert!(orthonormality_defect(s.u_k()) < 1e-8);
        assert!(orthonormality_defect(&s.v_t_k().transpose()) < 1e-8);
        assert_eq!(s.spectrum().numerical_rank(), 1);
    }

    #[test]
    fn zero_matrix_decomposes() {
        let s = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(s.sigma_k(), &[0.0, 0.0]);
        assert!(orthonormality_defect(s.u_k()) < 1e-12);
        assert_eq!(energy_ratio(&s, 1).unwrap(), 1.0);
        assert_eq!(rank_for_energy(&s, 0.9).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(svd(&Matrix::zeros(0, 3)).unwrap_err(), SvdError::Empty);
        let w = Matrix::from_rows(&[[1.0, f64::INFINITY]]);
        assert_eq!(svd(&w).unwrap_err(), SvdError::NonFinite);
    }

    #[test]
    fn random_reconstruction_and_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Matrix::random_normal(8, 5, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        assert!(reconstruct(&s).max_abs_diff(&w).unwrap() < 1e-9);

        // independent route: eigenvalues of W^T W
        let nw = nalgebra::DMatrix::from_row_slice(8, 5, w.as_slice());
        let gram = nw.transpose() * &nw;
        let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (sv, ev) in s.sigma_k().iter().zip(&eig) {
            assert!((sv * sv - ev).abs() < 1e-8, "{sv} vs {ev}");
        }
    }

    #[test]
    fn wide_matrix_goes_through_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Matrix::random_normal(3, 7, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        assert_eq!((s.u_k().shape().0, s.u_k().shape().1), (3, 3));
        assert_eq!((s.v_t_k().rows(), s.v_t_k().cols()), (3, 7));
        assert!(reconstruct(&s).max_abs_diff(&w).unwrap() < 1e-10);
    }

    #[test]
    fn sequential_and_parallel_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = Matrix::random_normal(20, 14, 1.0, &mut rng);
        let (a, fa) = svd_with(&w, Exec::Sequential).unwrap();
        let (b, fb) = svd_with(&w, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
    }

    #[test]
    fn truncate_cases() {
        let s = diag321();
        assert_eq!(truncate(&s, 3).unwrap(), s);
        let one = truncate(&s, 1).unwrap();
        assert_eq!(one.k(), 1);
        assert!((one.sigma_k()[0] - 3.0).abs() < 1e-14);
        assert_eq!(one.full_sigma(), s.full_sigma());
        assert!(truncate(&s, 0).is_err());
        assert!(truncate(&s, 4).is_err());
    }

    #[test]
    fn diag_truncated_to_two() {
        let r = reconstruct(&truncate(&diag321(), 2).unwrap());
        let expect = Matrix::diag(&[3.0, 2.0, 0.0]);
        assert!(r.max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn energy_ratio_values() {
        let s = diag321();
        assert_eq!(energy_ratio(&s, 3).unwrap(), 1.0);
        assert!((energy_ratio(&s, 1).unwrap() - 9.0 / 14.0).abs() < 1e-12);
        let flat = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(Spectrum(&flat).energy_ratio(2).unwrap(), 0.5);
        assert!(energy_ratio(&s, 0).is_err());
    }

    #[test]
    fn rank_for_energy_values() {
        let s = diag321();
        assert_eq!(rank_for_energy(&s, 1.0).unwrap(), 3);
        assert_eq!(rank_for_energy(&s, 0.9).unwrap(), 2);
        assert_eq!(rank_for_energy(&s, 1e-12).unwrap(), 1);
        assert!(rank_for_energy(&s, 0.0).is_err());
        assert!(rank_for_energy(&s, 1.5).is_err());

        // exhaustive scan oracle on the same spectrum
        let sig = [3.0f64, 2.0, 1.0];
        let total: f64 = sig.iter().map(|x| x * x).sum();
        for e in [0.1, 0.5, 0.64, 0.65, 0.9, 0.93, 0.99] {
            let scan = (1..=3)
                .find(|&k| sig[..k].iter().map(|x| x * x).sum::<f64>() >= e * total)
                .unwrap();
            assert_eq!(rank_for_energy(&s, e).unwrap(), scan, "e={e}");
        }
    }

    #[test]
    fn rank_for_energy_full_is_numerical_rank() {
        let w = with_spectrum(6, 5, &[4.0, 2.0, 1.0], 4);
        let s = svd(&w).unwrap();
        assert_eq!(rank_for_energy(&s, 1.0).unwrap(), 3);
    }

    #[test]
    fn rank_for_tolerance_values() {
        let s = diag321();
        assert_eq!(rank_for_tolerance(&s, 0.7).unwrap(), 1);
        assert_eq!(rank_for_tolerance(&s, 1e-16).unwrap(), 3);
        let w = Matrix::from_fn(4, 4, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        let r1 = svd(&w).unwrap();
        for eps in [1e-3, 0.1, 0.5] {
            assert_eq!(rank_for_tolerance(&r1, eps).unwrap(), 1);
        }
        assert!(rank_for_tolerance(&s, 0.0).is_err());
    }

    #[test]
    fn tolerance_bound_holds_after_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Matrix::random_normal(10, 7, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        for eps in [0.05, 0.2, 0.5, 0.9] {
            let k = rank_for_tolerance(&s, eps).unwrap();
            let wk = reconstruct(&truncate(&s, k).unwrap());
            let err = frobenius_norm(&w.sub(&wk).unwrap());
            assert!(err <= eps * frobenius_norm(&w) + 1e-12);
        }
    }

    #[test]
    fn compression_ratio_values() {
        let gpt2 = compression_ratio(768, 2304, 307);
        assert!((gpt2 - 0.5332).abs() <= 5e-4, "{gpt2}");
        assert_eq!(compression_ratio(10, 20, 0), 0.0);
        let n = 7;
        assert!((compression_ratio(n, n, n) - (2.0 + 1.0 / n as f64)).abs() < 1e-12);
    }

    #[test]
    fn rank_for_compression_values() {
        assert_eq!(rank_for_compression(3072, 768, 0.7), 429);
        assert_eq!(rank_for_compression(64, 48, 0.5), 13);
        assert_eq!(rank_for_compression(100, 100, 1e-6), 1);
    }

    #[test]
    fn total_accuracy_values() {
        assert_eq!(
            total_accuracy(&Matrix::from_fn(3, 4, |_, _| 1.0)).unwrap(),
            1.0
        );
        let e = Matrix::from_rows(&[[0.9, 0.9], [0.8, 1.0]]);
        assert!((total_accuracy(&e).unwrap() - 0.81).abs() < 1e-15);
        let e = Matrix::from_rows(&[[0.7], [0.0]]);
        assert_eq!(total_accuracy(&e).unwrap(), 0.0);
        assert!(total_accuracy(&Matrix::from_rows(&[[1.2]])).is_err());
    }

    #[test]
    fn randomized_matches_exact_top_values() {
        let sigma: Vec<f64> = (1..=30).map(|i| 0.8f64.powi(i)).collect();
        let w = with_spectrum(40, 30, &sigma, 21);
        let exact = svd(&w).unwrap();
        let (approx, _) =
            randomized_svd(&w, 8, RandomizedOptions::default(), Exec::default()).unwrap();
        for (a, e) in approx.sigma().iter().zip(exact.sigma_k()) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn randomized_uses_fewer_operations() {
        let sigma: Vec<f64> = (1..=96).map(|i| 0.8f64.powi(i)).collect();
        let w = with_spectrum(128, 96, &sigma, 22);
        let (_, exact_ops) = svd_with(&w, Exec::default()).unwrap();
        let (_, fast_ops) =
            randomized_svd(&w, 8, RandomizedOptions::default(), Exec::default()).unwrap();
        assert!(fast_ops * 5 < exact_ops, "{fast_ops} vs {exact_ops}");
    }

    #[test]
    fn log_rank_growth_on_geometric_spectrum() {
        // s_i = q^i: the rank needed for relative tolerance eps grows
        // affinely in |log eps|.
        let q: f64 = 0.7;
        let sigma: Vec<f64> = (1..=200).map(|i| q.powi(i)).collect();
        let spec = Spectrum(&sigma);
        let pts: Vec<(f64, f64)> = (1..=12)
            .map(|j| {
                let eps = 10f64.powi(-j);
                (eps.ln().abs(), spec.rank_for_tolerance(eps).unwrap() as f64)
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        // predicted slope is 1 / |ln q|
        assert!(slope > 0.0);
        assert!((slope - 1.0 / q.ln().abs()).abs() < 0.1, "slope {slope}");
        for (x, y) in pts {
            assert!((y - (slope * x + icpt)).abs() <= 1.0, "residual at {x}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn eckart_young(seed in any::<u64>(), m in 1usize..10, n in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Matrix::random_normal(m, n, 1.0, &mut rng);
            let s = svd(&w).unwrap();
            let total = s.spectrum().total_energy();
            for k in 1..=s.k() {
                let wk = reconstruct(&truncate(&s, k).unwrap());
                let err2 = frobenius_norm(&w.sub(&wk).unwrap()).powi(2);
                let disc = s.spectrum().discarded_energy(k);
                prop_assert!((err2 - disc).abs() <= 1e-8 * total.max(1.0));
            }
        }

        #[test]
        fn energy_monotone(seed in any::<u64>(), m in 1usize..9, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = svd(&Matrix::random_normal(m, n, 1.0, &mut rng)).unwrap();
            let r = s.full_rank();
            let mut prev = 0.0;
            for k in 1..=r {
                let p = energy_ratio(&s, k).unwrap();
                prop_assert!(p >= prev);
                prev = p;
            }
            prop_assert_eq!(prev, 1.0);
        }

        #[test]
        fn compression_round_trip(m in 2usize..3000, n in 2usize..3000, rho in 0.01f64..=1.0) {
            let k = rank_for_compression(m, n, rho);
            let unclamped = (m * n) as f64 * rho / (m + n + 1) as f64 >= 1.0;
            prop_assume!(unclamped);
            prop_assert!(compression_ratio(m, n, k) <= rho);
        }

        #[test]
        fn keep_forty_percent_on_decaying_families(r in 16usize..64, geometric in any::<bool>()) {
            let sigma: Vec<f64> = (1..=r)
                .map(|i| if geometric { 0.8f64.powi(i as i32) } else { (i as f64).powf(-1.5) })
                .collect();
            let k = (0.4 * r as f64).ceil() as usize;
            prop_assert!(Spectrum(&sigma).energy_ratio(k).unwrap() >= 0.90);
        }
    }
}
