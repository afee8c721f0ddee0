//! Simulation from a fixed table of potential outcomes: every simulated
//! trial differs only in its treatment sequence.

use std::io::Read;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    analyze_trial, build_pool, Hypothesis, HypothesisBlock, SimulationReport, TimeTrend,
    TrialResult,
};
use crate::data::TrialDataset;
use crate::dose_response::{CandidateModel, CandidateSet, DoseGrid};
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::inference::{Analysis, AnalysisOptions, MethodId, PValueRule, TestMethod};
use crate::randomization::RandomizationSpec;
use crate::rng::{stream, stream_id};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Binary,
    Continuous,
}

/// `y[i][j]`: outcome of patient `i` (enrollment order) under dose `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    pub outcomes: DMatrix<f64>,
    pub endpoint: Endpoint,
    pub baseline: Vec<f64>,
}

impl PotentialOutcomeTable {
    pub fn new(outcomes: DMatrix<f64>, endpoint: Endpoint, baseline: Vec<f64>) -> Result<Self> {
        if baseline.len() != outcomes.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} baseline values for {} patients",
                baseline.len(),
                outcomes.nrows()
            )));
        }
        if outcomes.iter().chain(&baseline).any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "potential outcomes and baselines must be finite",
            ));
        }
        if endpoint == Endpoint::Binary && outcomes.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary potential outcomes must be 0 or 1"));
        }
        Ok(Self {
            outcomes,
            endpoint,
            baseline,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn k(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Reads a CSV with a `baseline` column and one outcome column per
    /// dose, in dose order. A leading `patient` or `enrollment_index`
    /// column is ignored. Binary if every outcome is 0 or 1.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let base = headers
            .iter()
            .position(|h| h.trim() == "baseline")
            .ok_or_else(|| Error::invalid("missing column `baseline`"))?;
        let out_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != base && !matches!(h.trim(), "patient" | "enrollment_index"))
            .map(|(i, _)| i)
            .collect();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut baseline = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let get = |c: usize| {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("row {}: bad numeric field", line + 1)))
            };
            baseline.push(get(base)?);
            rows.push(out_cols.iter().map(|&c| get(c)).collect::<Result<_>>()?);
        }
        let n = rows.len();
        let outcomes = DMatrix::from_fn(n, out_cols.len(), |i, j| rows[i][j]);
        let endpoint = if outcomes.iter().all(|&v| v == 0.0 || v == 1.0) {
            Endpoint::Binary
        } else {
            Endpoint::Continuous
        };
        Self::new(outcomes, endpoint, baseline)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient,baseline");
        for j in 0..self.k() {
            out.push_str(&format!(",dose_{j}"));
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&format!("{},{}", i + 1, self.baseline[i]));
            for j in 0..self.k() {
                out.push_str(&format!(",{}", self.outcomes[(i, j)]));
            }
            out.push('\n');
        }
        out
    }

    /// Continuous table `y_ij = f(d_j) + coef * b_i + e_i` with
    /// `b_i ~ N(0,1)` and `e_i ~ N(0, noise_sd^2)` shared across doses, so a
    /// flat `truth` satisfies the strong null exactly.
    pub fn synthetic<R: Rng + ?Sized>(
        n: usize,
        grid: &DoseGrid,
        truth: &CandidateModel,
        baseline_coef: f64,
        noise_sd: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let f: Vec<f64> = grid
            .doses()
            .iter()
            .map(|&d| truth.eval(d))
            .collect::<Result<_>>()?;
        let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let baseline: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let eps: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();
        let outcomes = DMatrix::from_fn(n, grid.k(), |i, j| {
            f[j] + baseline_coef * baseline[i] + eps[i]
        });
        Self::new(outcomes, Endpoint::Continuous, baseline)
    }

    /// Rows reordered by increasing baseline.
    pub fn sorted_by_baseline(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| self.baseline[a].total_cmp(&self.baseline[b]));
        Self {
            outcomes: self.outcomes.select_rows(idx.iter()),
            endpoint: self.endpoint,
            baseline: idx.iter().map(|&i| self.baseline[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialOutcomeConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: DoseGrid,
    pub randomization: RandomizationSpec,
    #[serde(default = "continuous_candidates")]
    pub candidates: CandidateSet,
    #[serde(default = "po_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default = "po_alpha")]
    pub alpha: f64,
    pub n_sim: usize,
    #[serde(default = "po_n_rand")]
    pub n_rand: usize,
    #[serde(default)]
    pub pvalue_rule: PValueRule,
    #[serde(default = "yes")]
    pub include_baseline: bool,
    #[serde(default)]
    pub time_trend: TimeTrend,
    /// Which column of the report the rejection rates belong in.
    #[serde(default = "alternative")]
    pub hypothesis: Hypothesis,
    pub seed: u64,
}

fn continuous_candidates() -> CandidateSet {
    CandidateSet::default_continuous()
}
fn po_methods() -> Vec<MethodId> {
    vec![
        MethodId::PopulationBased,
        MethodId::RandMleS1,
        MethodId::RandMleS2,
    ]
}
fn po_alpha() -> f64 {
    0.05
}
fn po_n_rand() -> usize {
    1000
}
fn yes() -> bool {
    true
}
fn alternative() -> Hypothesis {
    Hypothesis::Alternative
}

impl PotentialOutcomeConfig {
    /// Fifty patients, five doses up to 1000, equal allocation of ten per
    /// arm by RA or by PBD with blocks of ten.
    pub fn preset(pbd: bool) -> Self {
        Self {
            name: None,
            grid: DoseGrid::new(vec![0.0, 100.0, 200.0, 400.0, 1000.0]).expect("valid grid"),
            randomization: if pbd {
                RandomizationSpec::pbd(vec![2; 5], 5).expect("valid spec")
            } else {
                RandomizationSpec::ra(vec![10; 5]).expect("valid spec")
            },
            candidates: continuous_candidates(),
            methods: po_methods(),
            alpha: po_alpha(),
            n_sim: 1000,
            n_rand: po_n_rand(),
            pvalue_rule: PValueRule::PaperPlain,
            include_baseline: true,
            time_trend: TimeTrend::None,
            hypothesis: Hypothesis::Alternative,
            seed: 4_242,
        }
    }

    pub fn validate(&self, table: &PotentialOutcomeTable) -> Result<()> {
        if table.n() != self.randomization.n() || table.k() != self.grid.k() {
            return Err(Error::DimensionMismatch(format!(
                "table is {}x{}, design needs {}x{}",
                table.n(),
                table.k(),
                self.randomization.n(),
                self.grid.k()
            )));
        }
        if self.randomization.k() != self.grid.k() {
            return Err(Error::invalid("randomization arms do not match the grid"));
        }
        if self.n_sim < 1 || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("need n_sim >= 1 and alpha in (0, 1)"));
        }
        if self.time_trend == TimeTrend::LinearPaper {
            return Err(Error::invalid(
                "potential-outcome mode supports time_trend `none` or `sorted_baseline`",
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        Ok(())
    }
}

/// Draws `n_sim` allocations, reveals `y_{i, Z_i}` and applies every method.
pub fn simulate_from_potential_outcomes(
    table: &PotentialOutcomeTable,
    config: &PotentialOutcomeConfig,
    workers: Option<usize>,
) -> Result<SimulationReport> {
    config.validate(table)?;
    let table = if config.time_trend == TimeTrend::SortedBaseline {
        table.sorted_by_baseline()
    } else {
        table.clone()
    };
    let opts = AnalysisOptions {
        family: match table.endpoint {
            Endpoint::Binary => Family::BinaryLogit,
            Endpoint::Continuous => Family::GaussianIdentity,
        },
        include_covariates: config.include_baseline,
        ..Default::default()
    };
    let methods: Vec<TestMethod> = config
        .methods
        .iter()
        .map(|&id| TestMethod {
            id,
            n_rand: config.n_rand,
            pvalue_rule: config.pvalue_rule,
        })
        .collect();
    let n = table.n();
    let covariates = DMatrix::from_column_slice(n, 1, &table.baseline);
    let start = Instant::now();
    let one = |t: usize| -> TrialResult {
        let mut rng = stream(config.seed, stream_id(&[2, t as u64, 0]));
        let (seq, rejected) = config
            .randomization
            .sample_with_min(opts.min_arm_size, &mut rng);
        let y: Vec<f64> = (0..n).map(|i| table.outcomes[(i, seq.0[i])]).collect();
        let fail = |msg: String| TrialResult {
            p_values: vec![None; methods.len()],
            separation: None,
            redraws: rejected as u64,
            failures: vec![msg],
        };
        let data = match TrialDataset::new(config.grid.clone(), seq, y, covariates.clone()) {
            Ok(d) => d,
            Err(e) => return fail(e.to_string()),
        };
        let analysis = match Analysis::new(&data, &config.candidates, opts.clone()) {
            Ok(a) => a,
            Err(e) => return fail(e.to_string()),
        };
        let (p_values, redraws, failures) = analyze_trial(
            &analysis,
            &config.randomization,
            &methods,
            config.seed,
            stream_id(&[2, t as u64, 1]),
        );
        TrialResult {
            p_values,
            separation: None,
            redraws: redraws + rejected as u64,
            failures,
        }
    };
    let pool = build_pool(workers)?;
    let results: Vec<TrialResult> =
        pool.install(|| (0..config.n_sim).into_par_iter().map(one).collect());
    let block = HypothesisBlock::tally(config.hypothesis, &config.methods, config.alpha, &results);
    Ok(SimulationReport {
        label: config
            .name
            .clone()
            .unwrap_or_else(|| "potential_outcomes".into()),
        sample_size: n,
        procedure: config.randomization.procedure(),
        time_trend: config.time_trend,
        covariate_in_analysis: config.include_baseline,
        alpha: config.alpha,
        n_sim: config.n_sim,
        n_rand: config.n_rand,
        pvalue_rule: config.pvalue_rule,
        seed: config.seed,
        config_hash: None,
        blocks: vec![block],
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
