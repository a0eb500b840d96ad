//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs are visited in round-robin tournament order: every round
//! pairs each column with exactly one other, so the rotations of one round
//! touch disjoint columns and can be applied concurrently without changing
//! the result.

use crate::exec::Exec;
use crate::tensor::Matrix;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

pub(crate) struct JacobiOutput {
    /// `m x r`, orthonormal columns, ordered by descending singular value.
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// `r x n`
    pub v_t: Matrix,
    pub flops: u64,
    pub sweeps: usize,
}

/// SVD of a finite, non-empty matrix.
pub(crate) fn jacobi_svd(w: &Matrix, exec: Exec) -> JacobiOutput {
    if w.rows() >= w.cols() {
        tall_svd(w, exec)
    } else {
        // W^T = U' S V'^T  =>  W = V' S U'^T
        let t = tall_svd(&w.transpose(), exec);
        JacobiOutput {
            u: t.v_t.transpose(),
            sigma: t.sigma,
            v_t: t.u.transpose(),
            flops: t.flops,
            sweeps: t.sweeps,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct PairState {
    a_p: Vec<f64>,
    a_q: Vec<f64>,
    v_p: Vec<f64>,
    v_q: Vec<f64>,
}

/// Returns (rotated, flops).
fn rotate_pair(s: &mut PairState) -> (bool, u64) {
    let m = s.a_p.len() as u64;
    let n = s.v_p.len() as u64;
    let alpha = dot(&s.a_p, &s.a_p);
    let beta = dot(&s.a_q, &s.a_q);
    let gamma = dot(&s.a_p, &s.a_q);
    let mut flops = 6 * m;
    if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
        return (false, flops);
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let sn = c * t;
    for (x, y) in s.a_p.iter_mut().zip(s.a_q.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - sn * yq;
        *y = sn * xp + c * yq;
    }
    for (x, y) in s.v_p.iter_mut().zip(s.v_q.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - sn * yq;
        *y = sn * xp + c * yq;
    }
    flops += 6 * (m + n);
    (true, flops)
}

/// Round-robin schedule for `n` players: `n - 1` (or `n` if odd) rounds of
/// disjoint pairs.
fn tournament(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n < 2 {
        return Vec::new();
    }
    let players = if n.is_multiple_of(2) { n } else { n + 1 };
    let mut ring: Vec<usize> = (0..players).collect();
    let mut rounds = Vec::with_capacity(players - 1);
    for _ in 0..players - 1 {
        let mut round = Vec::with_capacity(players / 2);
        for i in 0..players / 2 {
            let (a, b) = (ring[i], ring[players - 1 - i]);
            if a < n && b < n {
                round.push((a.min(b), a.max(b)));
            }
        }
        rounds.push(round);
        // keep ring[0] fixed, rotate the rest
        let last = ring.pop().unwrap();
        ring.insert(1, last);
    }
    rounds
}

fn tall_svd(w: &Matrix, exec: Exec) -> JacobiOutput {
    let (m, n) = (w.rows(), w.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| w.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let schedule = tournament(n);
    let mut flops = 0u64;
    let mut sweeps = 0;
    for _ in 0..MAX_SWEEPS {
        sweeps += 1;
        let mut any = false;
        for round in &schedule {
            let states: Vec<PairState> = round
                .iter()
                .map(|&(p, q)| PairState {
                    a_p: std::mem::take(&mut cols[p]),
                    a_q: std::mem::take(&mut cols[q]),
                    v_p: std::mem::take(&mut vcols[p]),
                    v_q: std::mem::take(&mut vcols[q]),
                })
                .collect();
            let results = run_round(states, exec);
            for (&(p, q), (st, rotated, f)) in round.iter().zip(results) {
                cols[p] = st.a_p;
                cols[q] = st.a_q;
                vcols[p] = st.v_p;
                vcols[q] = st.v_q;
                any |= rotated;
                flops += f;
            }
        }
        if !any {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let null_tol = (m.max(n) as f64) * f64::EPSILON * sigma_max;

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut null_slots = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > null_tol && norms[j] > 0.0 {
            ucols.push(cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            ucols.push(Vec::new());
            null_slots.push(slot);
        }
    }
    complete_orthonormal(&mut ucols, &null_slots, m);

    let u = Matrix::from_fn(m, n, |i, j| ucols[j][i]);
    let v_t = Matrix::from_fn(n, n, |i, j| vcols[order[i]][j]);
    JacobiOutput {
        u,
        sigma,
        v_t,
        flops,
        sweeps,
    }
}

fn run_round(states: Vec<PairState>, exec: Exec) -> Vec<(PairState, bool, u64)> {
    #[cfg(feature = "parallel")]
    if exec.is_threaded() && states.len() > 1 {
        use rayon::prelude::*;
        return states
            .into_par_iter()
            .map(|mut s| {
                let (r, f) = rotate_pair(&mut s);
                (s, r, f)
            })
            .collect();
    }
    let _ = exec;
    states
        .into_iter()
        .map(|mut s| {
            let (r, f) = rotate_pair(&mut s);
            (s, r, f)
        })
        .collect()
}

/// Fills the listed empty slots with unit vectors orthogonal to every other
/// column, drawn from the standard basis by twice-iterated Gram-Schmidt.
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize], m: usize) {
    let mut basis = 0;
    for &slot in slots {
        loop {
            assert!(basis < m, "cannot complete orthonormal basis");
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || c.is_empty() {
                        continue;
                    }
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                cand.iter_mut().for_each(|x| *x /= norm);
                cols[slot] = cand;
                break;
            }
        }
    }
}
