//! Optimal contrasts for the candidate shapes.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dose_response::{CandidateSet, DoseGrid};
use crate::error::{Error, Result};
use crate::linalg::{dot, quad_form};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    ArmSampleSizes,
    FittedCovariance,
}

/// Where the covariance used for contrast optimisation comes from.
#[derive(Debug, Clone, Copy)]
pub enum ContrastWeights<'a> {
    /// `S = diag(1/n_0, ..., 1/n_{k-1})`.
    ArmSizes(&'a [f64]),
    Covariance(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub weight_source: WeightSource,
    /// Flat candidates that were dropped.
    #[serde(default)]
    pub skipped: Vec<String>,
}

impl ContrastMatrix {
    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    pub fn k(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// CSV with one row per candidate and one column per dose.
    pub fn to_csv(&self, grid: &DoseGrid) -> String {
        let mut out = String::from("candidate");
        for d in grid.doses() {
            let _ = write!(out, ",dose_{d}");
        }
        out.push('\n');
        for (label, c) in self.labels.iter().zip(&self.vectors) {
            out.push_str(label);
            for v in c {
                let _ = write!(out, ",{v:.12}");
            }
            out.push('\n');
        }
        out
    }
}

fn is_constant(mu: &[f64]) -> bool {
    let (lo, hi) = mu
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let scale = mu.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    hi - lo <= 1e-12 * scale
}

/// Zero-sum, unit-norm contrast maximising `c'mu / sqrt(c' S c)`:
/// `c ∝ S⁻¹(mu − (1'S⁻¹mu / 1'S⁻¹1)·1)`.
pub fn optimal_contrast(mu0: &[f64], s: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = mu0.len();
    if s.nrows() != k || s.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "shape has {k} entries but covariance is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if is_constant(mu0) {
        return Err(Error::DegenerateShape("mean vector".into()));
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("contrast covariance is not positive definite".into()))?;
    Ok(contrast_from_cholesky(mu0, &chol))
}

fn contrast_from_cholesky(mu0: &[f64], chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> Vec<f64> {
    let k = mu0.len();
    let a = chol.solve(&DVector::from_column_slice(mu0));
    let b = chol.solve(&DVector::from_element(k, 1.0));
    let ratio = a.sum() / b.sum();
    let mut c: Vec<f64> = (0..k).map(|j| a[j] - ratio * b[j]).collect();
    finish(&mut c, mu0);
    c
}

// Re-centres against rounding, normalises, and orients so that c'mu > 0.
fn finish(c: &mut [f64], mu0: &[f64]) {
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    c.iter_mut().for_each(|v| *v -= mean);
    let norm = dot(c, c).sqrt();
    let sign = if dot(c, mu0) < 0.0 { -1.0 } else { 1.0 };
    c.iter_mut().for_each(|v| *v *= sign / norm);
}

/// Candidate shape vectors evaluated once on a grid; flat ones are set aside.
#[derive(Debug, Clone)]
pub struct ShapeVectors {
    pub labels: Vec<String>,
    pub shapes: Vec<Vec<f64>>,
    pub skipped: Vec<String>,
}

impl ShapeVectors {
    pub fn new(candidates: &CandidateSet, grid: &DoseGrid) -> Result<Self> {
        let mut labels = Vec::new();
        let mut shapes = Vec::new();
        let mut skipped = Vec::new();
        for m in candidates.models() {
            let mu = m.standardized_shape(grid)?;
            if m.is_flat() || is_constant(&mu) {
                skipped.push(m.label());
            } else {
                labels.push(m.label());
                shapes.push(mu);
            }
        }
        if shapes.is_empty() {
            return Err(Error::EmptyContrasts);
        }
        Ok(Self {
            labels,
            shapes,
            skipped,
        })
    }

    pub fn contrasts(&self, weights: ContrastWeights<'_>) -> Result<ContrastMatrix> {
        let k = self.shapes[0].len();
        let (s, source) = match weights {
            ContrastWeights::ArmSizes(n) => {
                if n.len() != k {
                    return Err(Error::DimensionMismatch(format!(
                        "{} arm sizes for {k} doses",
                        n.len()
                    )));
                }
                if n.iter().any(|&v| v.is_nan() || v < 1.0) {
                    return Err(Error::invalid("every arm needs at least one patient"));
                }
                let diag = DVector::from_iterator(k, n.iter().map(|v| 1.0 / v));
                (DMatrix::from_diagonal(&diag), WeightSource::ArmSampleSizes)
            }
            ContrastWeights::Covariance(s) => (s.clone(), WeightSource::FittedCovariance),
        };
        if s.nrows() != k || s.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{} for {k} doses",
                s.nrows(),
                s.ncols()
            )));
        }
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numeric("contrast covariance is not positive definite".into()))?;
        let vectors = self
            .shapes
            .iter()
            .map(|mu| contrast_from_cholesky(mu, &chol))
            .collect();
        Ok(ContrastMatrix {
            vectors,
            labels: self.labels.clone(),
            weight_source: source,
            skipped: self.skipped.clone(),
        })
    }
}

/// One contrast per non-flat candidate.
pub fn contrast_matrix(
    candidates: &CandidateSet,
    grid: &DoseGrid,
    weights: ContrastWeights<'_>,
) -> Result<ContrastMatrix> {
    ShapeVectors::new(candidates, grid)?.contrasts(weights)
}

/// `c'mu / sqrt(c' S c)`, the standardised signal of a contrast.
pub fn standardized_signal(c: &[f64], mu: &[f64], s: &DMatrix<f64>) -> f64 {
    dot(c, mu) / quad_form(s, c).sqrt()
}
