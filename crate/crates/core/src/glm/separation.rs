//! Exact detection of complete and quasicomplete separation.
//!
//! With `a_i = (2y_i - 1) x_i`, the two theorems of the alternative give
//! linear feasibility problems over the multipliers `λ`:
//!
//! * Gordan: `∃b: a_i'b > 0 ∀i`  ⇔  no `λ ≥ 0, Σλ = 1` with `Σ λ_i a_i = 0`.
//! * Stiemke: `∃b: a_i'b ≥ 0 ∀i`, not all zero  ⇔  no `λ > 0` with `Σ λ_i a_i = 0`.
//!
//! Both are solved with a dense two-phase simplex using Bland's rule, which
//! never cycles on these highly degenerate programs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separation {
    None,
    Quasicomplete,
    Complete,
}

impl Separation {
    pub fn is_separated(self) -> bool {
        self != Separation::None
    }
}

/// Tie tolerance separating a zero LP optimum from a positive one.
pub const SEPARATION_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

pub fn detect_separation(x: &DMatrix<f64>, y: &[f64]) -> Separation {
    let (n, p) = x.shape();
    assert_eq!(n, y.len(), "outcome length must match design rows");
    if n == 0 || p == 0 {
        return Separation::None;
    }
    // Signed rows scaled to unit max-norm; positive row scaling does not move
    // any constraint's sign.
    let mut a = vec![0.0; n * p];
    for i in 0..n {
        let s = if y[i] > 0.5 { 1.0 } else { -1.0 };
        let scale = (0..p).fold(0.0f64, |m, j| m.max(x[(i, j)].abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for j in 0..p {
            a[i * p + j] = s * x[(i, j)] / scale;
        }
    }

    if !gordan_feasible(&a, n, p) {
        return Separation::Complete;
    }
    if stiemke_margin(&a, n, p) > SEPARATION_TOL {
        Separation::None
    } else {
        Separation::Quasicomplete
    }
}

// λ ≥ 0, Σλ = 1, Σ λ_i a_i = 0.
fn gordan_feasible(a: &[f64], n: usize, p: usize) -> bool {
    let m = p + 1;
    let mut lp = Tableau::new(m, n);
    for i in 0..n {
        for j in 0..p {
            lp.set(j, i, a[i * p + j]);
        }
        lp.set(p, i, 1.0);
    }
    lp.set_rhs(p, 1.0);
    lp.phase_one() <= SEPARATION_TOL
}

// Largest s with λ = s·1 + ν, ν ≥ 0, Σλ = 1, Σ λ_i a_i = 0.
fn stiemke_margin(a: &[f64], n: usize, p: usize) -> f64 {
    let m = p + 1;
    let nv = n + 1;
    let mut lp = Tableau::new(m, nv);
    for j in 0..p {
        let col_sum: f64 = (0..n).map(|i| a[i * p + j]).sum();
        lp.set(j, 0, col_sum);
        for i in 0..n {
            lp.set(j, i + 1, a[i * p + j]);
        }
    }
    lp.set(p, 0, n as f64);
    for i in 0..n {
        lp.set(p, i + 1, 1.0);
    }
    lp.set_rhs(p, 1.0);
    if lp.phase_one() > SEPARATION_TOL {
        return 0.0;
    }
    let mut c = vec![0.0; nv];
    c[0] = 1.0;
    lp.phase_two(&c)
}

/// Standard-form `Az = b, z ≥ 0, b ≥ 0` with artificial slack columns.
struct Tableau {
    m: usize,
    n: usize,
    /// Row-major, `m` rows of `n + m + 1` columns (structural, artificial, rhs).
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(m: usize, n: usize) -> Self {
        let w = n + m + 1;
        let mut t = vec![0.0; m * w];
        for r in 0..m {
            t[r * w + n + r] = 1.0;
        }
        Self {
            m,
            n,
            t,
            basis: (n..n + m).collect(),
        }
    }

    fn width(&self) -> usize {
        self.n + self.m + 1
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let w = self.width();
        self.t[r * w + c] = v;
    }

    fn set_rhs(&mut self, r: usize, v: f64) {
        let w = self.width();
        self.t[r * w + w - 1] = v;
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width();
        let pv = self.t[row * w + col];
        for c in 0..w {
            self.t[row * w + c] /= pv;
        }
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.t[r * w + col];
            if f != 0.0 {
                for c in 0..w {
                    self.t[r * w + c] -= f * self.t[row * w + c];
                }
            }
        }
        self.basis[row] = col;
    }

    // Maximises cost'z over columns < `ncols`; returns the objective or
    // +inf when unbounded.
    fn optimize(&mut self, cost: &[f64], ncols: usize) -> f64 {
        let w = self.width();
        loop {
            // Reduced costs d_j = c_j - c_B' B⁻¹ A_j, entering by Bland's rule.
            let mut entering = None;
            for j in 0..ncols {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for r in 0..self.m {
                    d -= cost[self.basis[r]] * self.t[r * w + j];
                }
                if d > PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else { break };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r * w + col];
                if a > PIVOT_TOL {
                    let ratio = self.t[r * w + w - 1] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-14
                                || (ratio <= lratio + 1e-14 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return f64::INFINITY;
            };
            self.pivot(row, col);
        }
        (0..self.m)
            .map(|r| cost[self.basis[r]] * self.t[r * w + w - 1])
            .sum()
    }

    /// Minimises the sum of artificials; returns that minimum (0 when feasible).
    fn phase_one(&mut self) -> f64 {
        let total = self.n + self.m;
        let mut cost = vec![0.0; total];
        for c in cost.iter_mut().skip(self.n) {
            *c = -1.0;
        }
        let v = -self.optimize(&cost, total);
        // Drive zero-level artificials out of the basis where possible.
        let w = self.width();
        for r in 0..self.m {
            if self.basis[r] >= self.n {
                if let Some(col) = (0..self.n).find(|&j| self.t[r * w + j].abs() > 1e-9) {
                    self.pivot(r, col);
                }
            }
        }
        v
    }

    fn phase_two(&mut self, c: &[f64]) -> f64 {
        let mut cost = c.to_vec();
        cost.resize(self.n + self.m, 0.0);
        self.optimize(&cost, self.n)
    }
}
