//! Upper tail of the maximum of correlated standard normals by randomized
//! quasi-Monte Carlo (Genz's separation-of-variables transform on a
//! Richtmyer lattice).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::rng::stream;

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Eigenvalues below `-EIGEN_FLOOR` mark a matrix as not positive
/// semidefinite; such matrices are clipped to `EIGEN_FLOOR` and rescaled.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnOptions {
    pub points_per_shift: usize,
    pub shifts: usize,
    pub seed: u64,
}

impl Default for MvnOptions {
    fn default() -> Self {
        Self {
            points_per_shift: 10_000,
            shifts: 10,
            seed: 0x6d76_6e5f_7161_6d63,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxTail {
    /// `P(max_m X_m >= t)`.
    pub p: f64,
    /// Standard error across the random shifts.
    pub error: f64,
    /// The correlation matrix was not positive semidefinite and was clipped.
    pub repaired: bool,
}

/// Clips eigenvalues below [`EIGEN_FLOOR`] and rescales to unit diagonal
/// when `r` has an eigenvalue below `-EIGEN_FLOOR`; otherwise returns `r`.
pub fn repair_correlation(r: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let mut s = r.clone();
    crate::linalg::symmetrize(&mut s);
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= -EIGEN_FLOOR) {
        return (s, false);
    }
    let vals = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let mut fixed =
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..fixed.nrows()).map(|i| fixed[(i, i)].sqrt()).collect();
    for i in 0..fixed.nrows() {
        for j in 0..fixed.ncols() {
            fixed[(i, j)] /= d[i] * d[j];
        }
    }
    crate::linalg::symmetrize(&mut fixed);
    (fixed, true)
}

/// Pivoted Cholesky `R[piv, piv] = L L'` with `L` of size `m x rank`.
fn pivoted_cholesky(r: &DMatrix<f64>, tol: f64) -> (Vec<usize>, DMatrix<f64>) {
    let m = r.nrows();
    let mut a = r.clone();
    let mut piv: Vec<usize> = (0..m).collect();
    let mut l = DMatrix::zeros(m, m);
    let mut rank = 0;
    for c in 0..m {
        let (best, &val) = (c..m)
            .map(|i| (i, &a[(i, i)]))
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty");
        if val <= tol {
            break;
        }
        a.swap_rows(c, best);
        a.swap_columns(c, best);
        l.swap_rows(c, best);
        piv.swap(c, best);
        let d = val.sqrt();
        l[(c, c)] = d;
        for i in c + 1..m {
            l[(i, c)] = a[(i, c)] / d;
        }
        for i in c + 1..m {
            for j in c + 1..=i {
                let v = a[(i, j)] - l[(i, c)] * l[(j, c)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        rank += 1;
    }
    (piv, l.columns(0, rank).into_owned())
}

/// A bound `coef * y_c <= t - sum_{c' < c} row[c'] y_c'` on latent `y_c`.
struct Constraint {
    row: Vec<f64>,
    coef: f64,
}

const PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// `P(max X >= t)` for `X ~ N(0, R)`, `R` a (possibly singular) correlation
/// matrix. `X = L y` with `y` standard normal of dimension `rank(R)`; each
/// component of `X` bounds the last latent variable it loads on, and the
/// latent variables are integrated sequentially.
pub fn max_normal_tail(r: &DMatrix<f64>, t: f64, opts: &MvnOptions) -> MaxTail {
    let m = r.nrows();
    assert!(
        m >= 1 && m == r.ncols(),
        "correlation matrix must be square"
    );
    if t.is_nan() {
        return MaxTail {
            p: f64::NAN,
            error: 0.0,
            repaired: false,
        };
    }
    if m == 1 || t.is_infinite() {
        return MaxTail {
            p: norm_sf(t),
            error: 0.0,
            repaired: false,
        };
    }
    let (r, repaired) = repair_correlation(r);
    let (_, l) = pivoted_cholesky(&r, 1e-10);
    let rank = l.ncols();
    assert!(
        rank <= PRIMES.len() + 1,
        "correlation rank above {}",
        PRIMES.len() + 1
    );

    let mut groups: Vec<Vec<Constraint>> = (0..rank).map(|_| Vec::new()).collect();
    for i in 0..m {
        let scale = (0..rank).map(|c| l[(i, c)].abs()).fold(0.0, f64::max);
        let last = (0..rank)
            .rev()
            .find(|&c| l[(i, c)].abs() > 1e-12 * scale.max(1e-300))
            .expect("rows of a correlation factor are nonzero");
        groups[last].push(Constraint {
            row: (0..last).map(|c| l[(i, c)]).collect(),
            coef: l[(i, last)],
        });
    }
    // Interval for y_c given earlier latent values.
    let bounds = |c: usize, y: &[f64]| -> (f64, f64) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in &groups[c] {
            let s: f64 = k.row.iter().zip(y).map(|(a, b)| a * b).sum();
            let b = (t - s) / k.coef;
            if k.coef > 0.0 {
                hi = hi.min(b);
            } else {
                lo = lo.max(b);
            }
        }
        (lo, hi)
    };

    let dim = rank - 1;
    let alpha: Vec<f64> = PRIMES[..dim]
        .iter()
        .map(|&p| (p as f64).sqrt().fract())
        .collect();
    let (lo0, hi0) = bounds(0, &[]);
    let (a0, e0) = (norm_cdf(lo0), (norm_cdf(hi0) - norm_cdf(lo0)).max(0.0));
    let mut rng = stream(opts.seed, rank as u64);
    let mut y = vec![0.0; rank];
    let mut means = Vec::with_capacity(opts.shifts);
    for _ in 0..opts.shifts {
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for j in 1..=opts.points_per_shift {
            let (mut a, mut e) = (a0, e0);
            let mut f = e0;
            for c in 1..rank {
                if f == 0.0 {
                    break;
                }
                let u = (j as f64 * alpha[c - 1] + shift[c - 1]).fract();
                // Baker's tent transform for periodization.
                let w = 1.0 - (2.0 * u - 1.0).abs();
                let q = (a + w * e).clamp(1e-300, 1.0 - 1e-16);
                y[c - 1] = norm_quantile(q);
                let (lo, hi) = bounds(c, &y[..c]);
                a = norm_cdf(lo);
                e = (norm_cdf(hi) - a).max(0.0);
                f *= e;
            }
            acc += f;
        }
        means.push(acc / opts.points_per_shift as f64);
    }
    let ns = means.len() as f64;
    let mean = means.iter().sum::<f64>() / ns;
    let var = if ns > 1.0 {
        means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ns - 1.0)
    } else {
        0.0
    };
    MaxTail {
        p: (1.0 - mean).clamp(0.0, 1.0),
        error: (var / ns).sqrt(),
        repaired,
    }
}
