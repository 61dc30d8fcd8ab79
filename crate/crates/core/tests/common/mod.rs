//! Independent reference implementations shared by the integration tests.
//! Written for clarity over speed and deliberately unrelated to the library
//! code paths they check.

#![allow(dead_code)]

use oats::linalg::Matrix;

/// Cyclic Jacobi eigen-decomposition of a symmetric `n × n` matrix given
/// row-major. Returns eigenvalues in descending order and the matching
/// eigenvectors as columns of a row-major `n × n` matrix.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let total: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = v[k * n + old];
        }
    }
    (vals, vecs)
}

fn gram(a: &Matrix<f64>) -> (Vec<f64>, usize) {
    let (m, n) = a.shape();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = (0..m).map(|k| a[(k, i)] * a[(k, j)]).sum();
        }
    }
    (g, n)
}

/// Singular values, descending, from the eigenvalues of the smaller Gram
/// matrix.
pub fn singular_values(a: &Matrix<f64>) -> Vec<f64> {
    let b = if a.rows() < a.cols() { a.transpose() } else { a.clone() };
    let (g, n) = gram(&b);
    symmetric_eigen(g, n).0.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Best rank-`r` approximation `A · V_r · V_rᵀ` (or its transpose form).
pub fn best_rank_r(a: &Matrix<f64>, r: usize) -> Matrix<f64> {
    if a.rows() < a.cols() {
        return best_rank_r(&a.transpose(), r).transpose();
    }
    let (g, n) = gram(a);
    let (_, v) = symmetric_eigen(g, n);
    let m = a.rows();
    let mut proj = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            proj[i * n + j] = (0..r.min(n)).map(|k| v[i * n + k] * v[j * n + k]).sum();
        }
    }
    Matrix::from_fn(m, n, |i, j| (0..n).map(|k| a[(i, k)] * proj[k * n + j]).sum())
}

/// Which sparse pattern a reference threshold enforces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefPattern {
    Global(usize),
    PerRow(usize),
    Groups { n: usize, m: usize },
}

/// Full sort by descending magnitude, lower index first on ties.
fn top_indices(vals: &[f64], idx: impl Iterator<Item = usize>, keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = idx.collect();
    idx.sort_by(|&i, &j| {
        vals[j]
            .abs()
            .partial_cmp(&vals[i].abs())
            .unwrap()
            .then(i.cmp(&j))
    });
    idx.truncate(keep);
    idx
}

/// Support chosen by a sort-based threshold.
pub fn reference_mask(vals: &[f64], rows: usize, cols: usize, p: RefPattern) -> Vec<bool> {
    let mut mask = vec![false; vals.len()];
    let mut mark = |v: Vec<usize>| v.into_iter().for_each(|i| mask[i] = true);
    match p {
        RefPattern::Global(k) => mark(top_indices(vals, 0..vals.len(), k)),
        RefPattern::PerRow(k) => {
            for i in 0..rows {
                mark(top_indices(vals, i * cols..(i + 1) * cols, k / rows.max(1)));
            }
        }
        RefPattern::Groups { n, m } => {
            for g in 0..vals.len() / m {
                mark(top_indices(vals, g * m..(g + 1) * m, n));
            }
        }
    }
    mask
}

pub fn reference_threshold(a: &Matrix<f64>, p: RefPattern) -> Matrix<f64> {
    let mask = reference_mask(a.as_slice(), a.rows(), a.cols(), p);
    let mut out = a.clone();
    for (v, keep) in out.as_mut_slice().iter_mut().zip(mask) {
        if !keep {
            *v = 0.0;
        }
    }
    out
}

pub fn sq_dist(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scalar alternating loop: `L = best_rank_r(W − S)`, `S = threshold(W − L)`,
/// or the threshold step first when `svd_first` is false. Both terms start at
/// zero. Returns the objective after each iteration.
pub fn reference_loop(
    w: &Matrix<f64>,
    r: usize,
    p: RefPattern,
    iterations: usize,
    svd_first: bool,
) -> Vec<f64> {
    let mut s = Matrix::zeros(w.rows(), w.cols());
    let mut l = Matrix::zeros(w.rows(), w.cols());
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        if svd_first {
            l = best_rank_r(&w.sub(&s).unwrap(), r);
            s = reference_threshold(&w.sub(&l).unwrap(), p);
        } else {
            s = reference_threshold(&w.sub(&l).unwrap(), p);
            l = best_rank_r(&w.sub(&s).unwrap(), r);
        }
        trace.push(sq_dist(w, &s.add(&l).unwrap()));
    }
    trace
}

/// Smallest `‖a − P(a)‖²` over every support (bitmask over the entries,
/// at most 20 of them) accepted by `allowed`, by enumeration.
pub fn brute_force_best(vals: &[f64], allowed: impl Fn(u32) -> bool) -> f64 {
    let n = vals.len();
    assert!(n <= 20);
    let total: f64 = vals.iter().map(|v| v * v).sum();
    let mut best = f64::INFINITY;
    for bits in 0u32..(1u32 << n) {
        if !allowed(bits) {
            continue;
        }
        let kept: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| vals[i] * vals[i]).sum();
        best = best.min(total - kept);
    }
    best
}

/// True when every aligned group of `width` bits of `bits` (over `len` bits)
/// has exactly `ones` set.
pub fn groups_have(bits: u32, len: usize, width: usize, ones: u32) -> bool {
    (0..len / width).all(|g| (bits >> (g * width) & ((1u32 << width) - 1)).count_ones() == ones)
}

/// Integer form of the budget with rates given in hundredths:
/// `rho = rho_pct / 100`, `kappa = kappa_pct / 100`.
pub fn integer_budget(d_out: usize, d_in: usize, rho_pct: u64, kappa_pct: u64) -> (usize, usize) {
    let mn = (d_out * d_in) as u64;
    let keep = 100 - rho_pct;
    let r = kappa_pct * keep * mn / (10_000 * (d_out + d_in) as u64);
    let k = (100 - kappa_pct) * keep * mn / 10_000;
    (r as usize, k as usize)
}
