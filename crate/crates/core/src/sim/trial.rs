use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::dose_response::{inv_logit, CandidateModel, DoseGrid};
use crate::error::Result;
use crate::randomization::RandomizationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTrend {
    #[default]
    None,
    /// `t_i = 0.4 i/n - 0.2` added on the probability scale, then clamped.
    LinearPaper,
    /// Potential-outcome rows sorted by baseline before enrollment.
    SortedBaseline,
}

/// `t_i = 0.4 i/n - 0.2` for 1-based enrollment index `i`.
pub fn linear_trend(i: usize, n: usize) -> f64 {
    0.4 * i as f64 / n as f64 - 0.2
}

pub fn apply_trend(gamma: f64, t: f64) -> f64 {
    (gamma + t).clamp(0.0, 1.0)
}

/// Everything needed to draw one binary trial.
#[derive(Debug, Clone)]
pub struct BinaryGenerator<'a> {
    pub grid: &'a DoseGrid,
    pub spec: &'a RandomizationSpec,
    pub truth: &'a CandidateModel,
    pub covariate_coef: f64,
    pub time_trend: TimeTrend,
    pub min_arm_size: usize,
}

impl BinaryGenerator<'_> {
    /// Draws the allocation, the covariate and the outcomes. Returns the
    /// dataset and the number of rejected allocation draws.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(TrialDataset, usize)> {
        let (seq, rejected) = self.spec.sample_with_min(self.min_arm_size, rng);
        let n = seq.len();
        let eta: Vec<f64> = self
            .grid
            .doses()
            .iter()
            .map(|&d| self.truth.eval(d))
            .collect::<Result<_>>()?;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let y = (0..n)
            .map(|i| {
                let mut g = inv_logit(eta[seq.0[i]] + self.covariate_coef * x[i]);
                if self.time_trend == TimeTrend::LinearPaper {
                    g = apply_trend(g, linear_trend(i + 1, n));
                }
                if rng.random::<f64>() < g {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let data = TrialDataset::new(self.grid.clone(), seq, y, DMatrix::from_vec(n, 1, x))?;
        Ok((data, rejected))
    }
}

/// Empirical AUC of `score` for discriminating `label == 1` (Mann-Whitney).
pub fn auc(score: &[f64], label: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    // Midranks for ties.
    let mut ranks = vec![0.0; score.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && score[idx[j + 1]] == score[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n1 = label.iter().filter(|&&l| l == 1.0).count() as f64;
    let n0 = label.len() as f64 - n1;
    let rsum: f64 = ranks
        .iter()
        .zip(label)
        .filter(|(_, &l)| l == 1.0)
        .map(|(r, _)| r)
        .sum();
    (rsum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}
