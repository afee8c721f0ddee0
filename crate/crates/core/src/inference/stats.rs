//! The statistics S1 (dose-indicator GLM, population-average means) and
//! S2 (group means of covariate-model residuals).

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contrasts::{ContrastMatrix, ContrastWeights, ShapeVectors};
use crate::data::TrialDataset;
use crate::dose_response::CandidateSet;
use crate::error::{Error, Result};
use crate::glm::{
    fit_firth, fit_mle, population_average_means, residuals, DesignMatrix, Estimator, Family,
    FitOptions, GlmFit, Separation,
};
use crate::linalg::{bilinear, dot, quad_form};

/// Where S1 takes its contrasts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S1Contrasts {
    /// Re-derive the contrasts from each fit's covariance `S_Z`.
    #[default]
    Recompute,
    /// Use design-weight contrasts from the arm sizes of each sequence.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub family: Family,
    pub include_covariates: bool,
    pub s1_contrasts: S1Contrasts,
    pub fit: FitOptions,
    pub mvn: super::mvn::MvnOptions,
    /// Smallest arm size accepted for a complete-randomization redraw.
    pub min_arm_size: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            family: Family::BinaryLogit,
            include_covariates: true,
            s1_contrasts: S1Contrasts::Recompute,
            fit: FitOptions::default(),
            mvn: Default::default(),
            min_arm_size: 2,
        }
    }
}

/// A statistic value with its per-contrast components.
#[derive(Debug, Clone)]
pub struct StatValue {
    pub value: f64,
    pub per_contrast: Vec<f64>,
    /// S2 had a zero denominator (all contrasted arms without spread).
    pub degenerate: bool,
}

impl StatValue {
    fn from_components(per_contrast: Vec<f64>, degenerate: bool) -> Self {
        let value = per_contrast
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            value,
            per_contrast,
            degenerate,
        }
    }
}

/// S1 evaluated on one sequence, with the fit it came from.
#[derive(Debug, Clone)]
pub struct S1Value {
    pub stat: StatValue,
    pub contrasts: ContrastMatrix,
    pub mu_hat: Vec<f64>,
    pub s: DMatrix<f64>,
    pub separation: Separation,
    pub converged: bool,
    pub contrast_fallback: bool,
}

/// Fixed outcomes, covariates and candidate shapes; statistics are then
/// functions of the treatment sequence alone.
#[derive(Debug, Clone)]
pub struct Analysis {
    data: TrialDataset,
    shapes: ShapeVectors,
    covariates: DMatrix<f64>,
    pub options: AnalysisOptions,
}

impl Analysis {
    pub fn new(
        data: &TrialDataset,
        candidates: &CandidateSet,
        options: AnalysisOptions,
    ) -> Result<Self> {
        if options.family == Family::BinaryLogit && !data.is_binary() {
            return Err(Error::invalid("binary analysis needs 0/1 outcomes"));
        }
        let covariates = if options.include_covariates {
            data.covariates.clone()
        } else {
            DMatrix::zeros(data.n(), 0)
        };
        Ok(Self {
            shapes: ShapeVectors::new(candidates, &data.grid)?,
            data: data.clone(),
            covariates,
            options,
        })
    }

    pub fn data(&self) -> &TrialDataset {
        &self.data
    }

    pub fn k(&self) -> usize {
        self.data.grid.k()
    }

    pub fn contrast_labels(&self) -> &[String] {
        &self.shapes.labels
    }

    pub fn skipped_candidates(&self) -> &[String] {
        &self.shapes.skipped
    }

    fn fit(&self, design: &DesignMatrix, est: Estimator) -> Result<GlmFit> {
        let fam = self.options.family;
        match est {
            Estimator::Firth => fit_firth(design, &self.data.outcome, fam, &self.options.fit),
            Estimator::Mle | Estimator::GaussianLs => {
                fit_mle(design, &self.data.outcome, fam, &self.options.fit)
            }
        }
    }

    pub fn design_contrasts(&self, counts: &[usize]) -> Result<ContrastMatrix> {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        self.shapes.contrasts(ContrastWeights::ArmSizes(&w))
    }

    /// `S1(Z) = max_m c_m'mu / sqrt(c_m' S_Z c_m)`.
    pub fn s1(&self, arms: &[usize], est: Estimator) -> Result<S1Value> {
        let design = DesignMatrix::dose_model(arms, self.k(), &self.covariates)?;
        let fit = self.fit(&design, est)?;
        let pa = population_average_means(&fit, &self.data.grid, &design)?;
        let counts = arm_counts(arms, self.k());
        let (contrasts, contrast_fallback) = match self.options.s1_contrasts {
            S1Contrasts::Frozen => (self.design_contrasts(&counts)?, false),
            S1Contrasts::Recompute => {
                match self.shapes.contrasts(ContrastWeights::Covariance(&pa.s)) {
                    Ok(c) => (c, false),
                    Err(_) => (self.design_contrasts(&counts)?, true),
                }
            }
        };
        let per_contrast = contrasts
            .vectors
            .iter()
            .map(|c| {
                let den = quad_form(&pa.s, c);
                if den > 0.0 && den.is_finite() {
                    dot(c, &pa.mu_hat) / den.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(S1Value {
            stat: StatValue::from_components(per_contrast, false),
            contrasts,
            mu_hat: pa.mu_hat,
            s: pa.s,
            separation: fit.separation,
            converged: fit.converged,
            contrast_fallback,
        })
    }

    /// Response-scale residuals of the intercept-plus-covariates model.
    pub fn residuals(&self, est: Estimator) -> Result<(Vec<f64>, GlmFit)> {
        let design = DesignMatrix::intercept_model(&self.covariates)?;
        let fit = self.fit(&design, est)?;
        let r = residuals(&fit, &design, &self.data.outcome)?;
        Ok((r, fit))
    }

    /// `S2(Z) = max_m c_m'r̄ / sqrt(sum_j c_mj^2 s_j^2 / n_j)`.
    pub fn s2(&self, r: &[f64], arms: &[usize], contrasts: &ContrastMatrix) -> Result<StatValue> {
        s2_statistic(r, arms, self.k(), contrasts)
    }

    /// Correlation of the S1 contrast statistics under `S_Z`.
    pub fn contrast_correlation(contrasts: &ContrastMatrix, s: &DMatrix<f64>) -> DMatrix<f64> {
        let m = contrasts.m();
        let v = &contrasts.vectors;
        let sd: Vec<f64> = v.iter().map(|c| quad_form(s, c).sqrt()).collect();
        DMatrix::from_fn(m, m, |a, b| {
            if a == b {
                1.0
            } else {
                bilinear(s, &v[a], &v[b]) / (sd[a] * sd[b])
            }
        })
    }
}

pub fn arm_counts(arms: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &a in arms {
        c[a] += 1;
    }
    c
}

/// S2 from residuals `r` grouped by `arms`.
pub fn s2_statistic(
    r: &[f64],
    arms: &[usize],
    k: usize,
    contrasts: &ContrastMatrix,
) -> Result<StatValue> {
    if r.len() != arms.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} assignments",
            r.len(),
            arms.len()
        )));
    }
    let mut n = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (&a, &v) in arms.iter().zip(r) {
        n[a] += 1;
        sum[a] += v;
    }
    if let Some(j) = (0..k).find(|&j| n[j] < 2) {
        return Err(Error::DegenerateVariance { arm: j, size: n[j] });
    }
    let mean: Vec<f64> = (0..k).map(|j| sum[j] / n[j] as f64).collect();
    let mut ss = vec![0.0; k];
    for (&a, &v) in arms.iter().zip(r) {
        ss[a] += (v - mean[a]).powi(2);
    }
    // Variance of each group mean, s_j^2 / n_j.
    let var_mean: Vec<f64> = (0..k)
        .map(|j| ss[j] / (n[j] - 1) as f64 / n[j] as f64)
        .collect();
    let scale = r
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut degenerate = false;
    let per = contrasts
        .vectors
        .iter()
        .map(|c| {
            let num = dot(c, &mean);
            let den: f64 = c.iter().zip(&var_mean).map(|(a, v)| a * a * v).sum();
            if den > (1e-14 * scale).powi(2) {
                num / den.sqrt()
            } else {
                degenerate = true;
                if num.abs() <= 1e-12 * scale {
                    0.0
                } else {
                    num.signum() * f64::INFINITY
                }
            }
        })
        .collect();
    Ok(StatValue::from_components(per, degenerate))
}

/// Memoises S2 contrasts by realized arm sizes (needed per sequence under CR).
#[derive(Debug, Default)]
pub struct ContrastCache {
    map: HashMap<Vec<usize>, ContrastMatrix>,
}

impl ContrastCache {
    pub fn get(&mut self, analysis: &Analysis, counts: &[usize]) -> Result<&ContrastMatrix> {
        if !self.map.contains_key(counts) {
            let c = analysis.design_contrasts(counts)?;
            self.map.insert(counts.to_vec(), c);
        }
        Ok(&self.map[counts])
    }
}
