//! Logistic (maximum likelihood and Firth-penalised) and Gaussian
//! least-squares fits over dose-indicator designs.

mod fit;
mod separation;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dose_response::DoseGrid;
use crate::error::{Error, Result};

pub use fit::{firth_score, fit_firth, fit_gaussian, fit_mle, residuals, FitOptions};
pub use separation::{detect_separation, Separation, SEPARATION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BinaryLogit,
    GaussianIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "firth")]
    Firth,
    #[serde(rename = "gaussian_ls")]
    GaussianLs,
}

/// Model matrix: `n_dose` indicator columns first, then covariates.
///
/// An intercept-plus-covariates model has `n_dose == 0` and a leading
/// column of ones.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    labels: Vec<String>,
    n_dose: usize,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, labels: Vec<String>, n_dose: usize) -> Result<Self> {
        if labels.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                x.ncols()
            )));
        }
        if n_dose > x.ncols() {
            return Err(Error::DimensionMismatch(
                "more dose columns than columns".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design matrix has non-finite entries"));
        }
        if n_dose > 0 {
            for i in 0..x.nrows() {
                let ones = (0..n_dose).filter(|&j| x[(i, j)] == 1.0).count();
                let zeros = (0..n_dose).filter(|&j| x[(i, j)] == 0.0).count();
                if ones != 1 || zeros != n_dose - 1 {
                    return Err(Error::invalid(format!(
                        "row {i} must have exactly one dose indicator set"
                    )));
                }
            }
        }
        Ok(Self { x, labels, n_dose })
    }

    /// Dose indicators for `arms` (values `< k`) followed by covariate
    /// columns (`n x p`, possibly `p = 0`).
    pub fn dose_model(arms: &[usize], k: usize, covariates: &DMatrix<f64>) -> Result<Self> {
        let n = arms.len();
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} assignments but {} covariate rows",
                covariates.nrows()
            )));
        }
        if let Some(&bad) = arms.iter().find(|&&a| a >= k) {
            return Err(Error::invalid(format!("arm index {bad} outside 0..{k}")));
        }
        let p = covariates.ncols();
        let mut x = DMatrix::zeros(n, k + p);
        for (i, &a) in arms.iter().enumerate() {
            x[(i, a)] = 1.0;
            for j in 0..p {
                x[(i, k + j)] = covariates[(i, j)];
            }
        }
        let mut labels: Vec<String> = (0..k).map(|j| format!("dose_{j}")).collect();
        labels.extend((0..p).map(|j| format!("covariate_{}", j + 1)));
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        Ok(Self {
            x,
            labels,
            n_dose: k,
        })
    }

    /// Intercept followed by covariate columns.
    pub fn intercept_model(covariates: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = covariates.shape();
        let mut x = DMatrix::from_element(n, p + 1, 1.0);
        x.view_mut((0, 1), (n, p)).copy_from(covariates);
        let mut labels = vec!["intercept".to_string()];
        labels.extend((0..p).map(|j| format!("covariate_{}", j + 1)));
        Self::new(x, labels, 0)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_dose(&self) -> usize {
        self.n_dose
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Column means of the covariate block.
    pub fn covariate_means(&self) -> Vec<f64> {
        let start = if self.n_dose > 0 { self.n_dose } else { 1 };
        let n = self.x.nrows() as f64;
        (start..self.x.ncols())
            .map(|j| self.x.column(j).sum() / n)
            .collect()
    }

    /// Gram–Schmidt sweep; errors with the names of columns that are linear
    /// combinations of earlier ones.
    pub fn check_rank(&self) -> Result<()> {
        let (n, p) = self.x.shape();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut collinear = Vec::new();
        for j in 0..p {
            let mut v: Vec<f64> = self.x.column(j).iter().cloned().collect();
            let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0.max(1.0) {
                collinear.push(self.labels[j].clone());
            } else {
                v.iter_mut().for_each(|a| *a /= norm);
                basis.push(v);
            }
        }
        let _ = n;
        if collinear.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient { columns: collinear })
        }
    }
}

/// Result of a GLM fit.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    /// Inverse (penalised) information, or `σ²(X'X)⁻¹` for least squares.
    pub covariance: DMatrix<f64>,
    pub estimator: Estimator,
    pub converged: bool,
    pub separation: Separation,
    pub iterations: usize,
    pub loglik: f64,
    /// `loglik + ½ log|I|` for Firth fits.
    pub penalized_loglik: Option<f64>,
    /// Firth was requested for a Gaussian model and least squares was used.
    pub firth_fallback: bool,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub estimator: Estimator,
    pub converged: bool,
    pub separation: Separation,
    pub iterations: usize,
    pub loglik: f64,
    pub penalized_loglik: Option<f64>,
    pub firth_fallback: bool,
    pub covariance_source: String,
}

impl GlmFit {
    pub fn summary(&self) -> FitSummary {
        let p = self.coefficients.len();
        FitSummary {
            labels: self.labels.clone(),
            coefficients: self.coefficients.clone(),
            std_errors: (0..p).map(|j| self.covariance[(j, j)].sqrt()).collect(),
            covariance: (0..p)
                .map(|i| (0..p).map(|j| self.covariance[(i, j)]).collect())
                .collect(),
            estimator: self.estimator,
            converged: self.converged,
            separation: self.separation,
            iterations: self.iterations,
            loglik: self.loglik,
            penalized_loglik: self.penalized_loglik,
            firth_fallback: self.firth_fallback,
            covariance_source: match self.estimator {
                Estimator::Mle => "inverse observed information",
                Estimator::Firth => "inverse penalized information",
                Estimator::GaussianLs => "residual variance times inverse cross-product",
            }
            .to_string(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.coefficients.iter().all(|v| v.is_finite())
    }
}

/// Dose-specific means on the linear-predictor scale, averaging the
/// covariate effect over the sample.
#[derive(Debug, Clone)]
pub struct PopulationAverage {
    pub mu_hat: Vec<f64>,
    pub s: DMatrix<f64>,
}

/// `mu_j = δ_j + x̄'β`, `S = L V L'` with row `j` of `L` equal to `(e_j, x̄)`.
pub fn population_average_means(
    fit: &GlmFit,
    grid: &DoseGrid,
    design: &DesignMatrix,
) -> Result<PopulationAverage> {
    let k = grid.k();
    if design.n_dose() != k {
        return Err(Error::invalid(
            "population averages need a fit with one indicator per dose",
        ));
    }
    let p = fit.coefficients.len();
    if p != design.ncols() || fit.covariance.nrows() != p {
        return Err(Error::DimensionMismatch("fit does not match design".into()));
    }
    let xbar = design.covariate_means();
    let beta = &fit.coefficients[k..];
    let shift: f64 = xbar.iter().zip(beta).map(|(a, b)| a * b).sum();
    let mu_hat = (0..k).map(|j| fit.coefficients[j] + shift).collect();

    let mut l = DMatrix::zeros(k, p);
    for j in 0..k {
        l[(j, j)] = 1.0;
        for (c, &xb) in xbar.iter().enumerate() {
            l[(j, k + c)] = xb;
        }
    }
    let mut s = &l * &fit.covariance * l.transpose();
    crate::linalg::symmetrize(&mut s);
    Ok(PopulationAverage { mu_hat, s })
}
