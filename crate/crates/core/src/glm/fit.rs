use nalgebra::{DMatrix, DVector};

use super::{detect_separation, DesignMatrix, Estimator, Family, GlmFit, Separation};
use crate::dose_response::inv_logit;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// IRLS iteration cap for maximum likelihood.
    pub max_iter: usize,
    /// Euclidean score norm declaring convergence.
    pub score_tol: f64,
    pub firth_max_iter: usize,
    pub firth_score_tol: f64,
    /// Largest absolute coefficient change per Firth step.
    pub max_step: f64,
    pub max_halvings: usize,
    /// Run the exact separation LP after a maximum likelihood fit.
    pub check_separation: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 25,
            score_tol: 1e-8,
            firth_max_iter: 200,
            firth_score_tol: 1e-10,
            max_step: 5.0,
            max_halvings: 30,
            check_separation: true,
        }
    }
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("binary outcomes must be 0 or 1"));
    }
    Ok(())
}

fn check_dims(design: &DesignMatrix, y: &[f64]) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} design rows but {} outcomes",
            design.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Per-iterate quantities of the logistic model.
struct LogitState {
    pi: Vec<f64>,
    w: Vec<f64>,
    info: DMatrix<f64>,
    loglik: f64,
}

fn logit_state(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> LogitState {
    let (n, p) = x.shape();
    let xs = x.as_slice();
    let mut pi = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut loglik = 0.0;
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..p {
            eta += xs[j * n + i] * beta[j];
        }
        // One exponential serves both the mean and log(1 + e^eta).
        let e = (-eta.abs()).exp();
        let pr = if eta >= 0.0 {
            1.0 / (1.0 + e)
        } else {
            e / (1.0 + e)
        };
        pi[i] = pr;
        w[i] = pr * (1.0 - pr);
        let softplus = eta.max(0.0) + e.ln_1p();
        loglik += y[i] * eta - softplus;
    }
    let info = weighted_cross(x, &w);
    LogitState {
        pi,
        w,
        info,
        loglik,
    }
}

/// `X' diag(w) X`.
fn weighted_cross(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let xs = x.as_slice();
    let mut m = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = &xs[a * n..(a + 1) * n];
        for b in 0..=a {
            let cb = &xs[b * n..(b + 1) * n];
            let mut s = 0.0;
            for i in 0..n {
                s += w[i] * ca[i] * cb[i];
            }
            m[(a, b)] = s;
            m[(b, a)] = s;
        }
    }
    m
}

fn xt_times(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let xs = x.as_slice();
    (0..p)
        .map(|j| {
            xs[j * n..(j + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Inverse of an information matrix; near-singular directions get a huge
/// but finite variance instead of failing.
fn robust_inverse(info: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = info.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        if inv.iter().all(|v| v.is_finite()) {
            return inv;
        }
    }
    let mut s = info.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let top = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let floor = top * 1e-15;
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let mut inv =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    symmetrize(&mut inv);
    inv
}

fn solve_spd(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let ch = m.clone().cholesky()?;
    let sol = ch.solve(&DVector::from_column_slice(rhs));
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol.iter().cloned().collect())
    } else {
        None
    }
}

/// Maximum likelihood by IRLS (binary logit) or least squares (Gaussian).
///
/// For binary data the last iterate is returned even when the maximum does
/// not exist; such fits carry `converged = false` and a separation flag.
pub fn fit_mle(
    design: &DesignMatrix,
    y: &[f64],
    family: Family,
    opts: &FitOptions,
) -> Result<GlmFit> {
    check_dims(design, y)?;
    if family == Family::GaussianIdentity {
        return fit_gaussian(design, y);
    }
    check_binary(y)?;
    design.check_rank()?;
    let x = design.matrix();
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut iterations = 0;
    let mut state = logit_state(x, y, &beta);
    for it in 0..=opts.max_iter {
        let resid: Vec<f64> = y.iter().zip(&state.pi).map(|(a, b)| a - b).collect();
        let score = xt_times(x, &resid);
        if norm(&score) < opts.score_tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == opts.max_iter {
            iterations = it;
            break;
        }
        let Some(step) = solve_spd(&state.info, &score) else {
            iterations = it;
            break;
        };
        let mut t = 1.0;
        let mut next = state_after(x, y, &beta, &step, t);
        // Halve only when the update leaves the representable range.
        while !next.1.loglik.is_finite() && t > 1e-8 {
            t *= 0.5;
            next = state_after(x, y, &beta, &step, t);
        }
        beta = next.0;
        state = next.1;
        iterations = it + 1;
    }
    let separation = if opts.check_separation {
        detect_separation(x, y)
    } else {
        Separation::None
    };
    Ok(GlmFit {
        coefficients: beta,
        covariance: robust_inverse(&state.info),
        estimator: Estimator::Mle,
        converged: converged && separation == Separation::None,
        separation,
        iterations,
        loglik: state.loglik,
        penalized_loglik: None,
        firth_fallback: false,
        labels: design.labels().to_vec(),
    })
}

fn state_after(
    x: &DMatrix<f64>,
    y: &[f64],
    beta: &[f64],
    step: &[f64],
    t: f64,
) -> (Vec<f64>, LogitState) {
    let b: Vec<f64> = beta.iter().zip(step).map(|(a, d)| a + t * d).collect();
    let s = logit_state(x, y, &b);
    (b, s)
}

/// Smoothed per-arm logits `logit((s + ½)/(m + 1))` for dose indicators (or
/// the intercept), zero for covariates. These are the Firth solutions of the
/// covariate-free model, so Newton starts close to the optimum.
fn starting_values(design: &DesignMatrix, y: &[f64]) -> Vec<f64> {
    let x = design.matrix();
    let (n, p) = x.shape();
    let xs = x.as_slice();
    let smoothed = |col: usize| {
        let c = &xs[col * n..(col + 1) * n];
        let (mut s, mut m) = (0.0, 0.0);
        for i in 0..n {
            s += c[i] * y[i];
            m += c[i];
        }
        ((s + 0.5) / (m + 1.0)).ln() - ((m - s + 0.5) / (m + 1.0)).ln()
    };
    let mut beta = vec![0.0; p];
    if design.n_dose() > 0 {
        for (j, b) in beta.iter_mut().enumerate().take(design.n_dose()) {
            *b = smoothed(j);
        }
    } else if p > 0 && xs[..n].iter().all(|&v| v == 1.0) {
        beta[0] = smoothed(0);
    }
    beta
}

struct FirthEval {
    state: LogitState,
    penalized: f64,
}

fn firth_eval(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Option<FirthEval> {
    let state = logit_state(x, y, beta);
    let log_det = crate::linalg::spd_log_det(&state.info)?;
    Some(FirthEval {
        penalized: state.loglik + 0.5 * log_det,
        state,
    })
}

/// Firth-penalised logistic regression: maximises `ℓ(β) + ½ log|I(β)|`.
///
/// Newton steps on the modified score `X'(y − π + h(½ − π))`, `h` the hat
/// diagonals, with step capping and halving on the penalised likelihood.
/// Estimates are finite under any separation pattern.
pub fn fit_firth(
    design: &DesignMatrix,
    y: &[f64],
    family: Family,
    opts: &FitOptions,
) -> Result<GlmFit> {
    check_dims(design, y)?;
    if family == Family::GaussianIdentity {
        let mut fit = fit_gaussian(design, y)?;
        fit.firth_fallback = true;
        return Ok(fit);
    }
    check_binary(y)?;
    design.check_rank()?;
    let x = design.matrix();
    let (n, p) = x.shape();
    let xs = x.as_slice();
    let mut beta = starting_values(design, y);
    let mut cur = firth_eval(x, y, &beta)
        .ok_or_else(|| Error::Numeric("information matrix singular at start".into()))?;
    let mut converged = false;
    let mut iterations = 0;
    let mut inv = robust_inverse(&cur.state.info);
    for it in 0..=opts.firth_max_iter {
        iterations = it;
        let score = modified_score(xs, n, p, y, &cur.state, &inv);
        if norm(&score) < opts.firth_score_tol {
            converged = true;
            break;
        }
        if it == opts.firth_max_iter {
            break;
        }
        let mut step: Vec<f64> = (0..p)
            .map(|a| (0..p).map(|b| inv[(a, b)] * score[b]).sum())
            .collect();
        let big = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big > opts.max_step {
            let f = opts.max_step / big;
            step.iter_mut().for_each(|v| *v *= f);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b + t * d).collect();
            if let Some(ev) = firth_eval(x, y, &cand) {
                let slack = 1e-12 * cur.penalized.abs().max(1.0);
                if ev.penalized >= cur.penalized - slack {
                    accepted = Some((cand, ev));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((b, ev)) = accepted else {
            // No ascent possible within rounding: accept the current point.
            converged = norm(&score) < opts.firth_score_tol.max(1e-8);
            break;
        };
        beta = b;
        cur = ev;
        inv = robust_inverse(&cur.state.info);
    }
    Ok(GlmFit {
        coefficients: beta,
        covariance: inv,
        estimator: Estimator::Firth,
        converged,
        separation: Separation::None,
        iterations,
        loglik: cur.state.loglik,
        penalized_loglik: Some(cur.penalized),
        firth_fallback: false,
        labels: design.labels().to_vec(),
    })
}

fn modified_score(
    xs: &[f64],
    n: usize,
    p: usize,
    y: &[f64],
    st: &LogitState,
    inv: &DMatrix<f64>,
) -> Vec<f64> {
    let mut adj = vec![0.0; n];
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            row[j] = xs[j * n + i];
        }
        let mut q = 0.0;
        for a in 0..p {
            let mut s = 0.0;
            for b in 0..p {
                s += inv[(a, b)] * row[b];
            }
            q += row[a] * s;
        }
        let h = st.w[i] * q;
        adj[i] = y[i] - st.pi[i] + h * (0.5 - st.pi[i]);
    }
    (0..p)
        .map(|j| {
            xs[j * n..(j + 1) * n]
                .iter()
                .zip(&adj)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Modified (Firth) score at `beta`; exposed for stationarity checks.
pub fn firth_score(design: &DesignMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let x = design.matrix();
    let (n, p) = x.shape();
    let st = logit_state(x, y, beta);
    let inv = robust_inverse(&st.info);
    modified_score(x.as_slice(), n, p, y, &st, &inv)
}

/// Ordinary least squares with the classical covariance `σ²(X'X)⁻¹`.
pub fn fit_gaussian(design: &DesignMatrix, y: &[f64]) -> Result<GlmFit> {
    check_dims(design, y)?;
    design.check_rank()?;
    let x = design.matrix();
    let (n, p) = x.shape();
    let xtx = weighted_cross(x, &vec![1.0; n]);
    let xty = xt_times(x, y);
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("X'X is not positive definite".into()))?;
    let beta: Vec<f64> = chol
        .solve(&DVector::from_column_slice(&xty))
        .iter()
        .cloned()
        .collect();
    let xs = x.as_slice();
    let mut rss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|j| xs[j * n + i] * beta[j]).sum();
        rss += (y[i] - fitted).powi(2);
    }
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let mut cov = chol.inverse() * sigma2;
    symmetrize(&mut cov);
    let nf = n as f64;
    let loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI * rss / nf).ln() + 1.0);
    Ok(GlmFit {
        coefficients: beta,
        covariance: cov,
        estimator: Estimator::GaussianLs,
        converged: true,
        separation: Separation::None,
        iterations: 1,
        loglik,
        penalized_loglik: None,
        firth_fallback: false,
        labels: design.labels().to_vec(),
    })
}

/// Response-scale residuals `y − g(Xβ̂)`.
pub fn residuals(fit: &GlmFit, design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_dims(design, y)?;
    let x = design.matrix();
    let (n, p) = x.shape();
    if fit.coefficients.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients, design has {p} columns",
            fit.coefficients.len()
        )));
    }
    let xs = x.as_slice();
    let logit = fit.estimator != Estimator::GaussianLs;
    Ok((0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| xs[j * n + i] * fit.coefficients[j]).sum();
            let mean = if logit { inv_logit(eta) } else { eta };
            y[i] - mean
        })
        .collect())
}
