//! Power, type-I error and separation-frequency studies.

mod potential;
mod report;
mod trial;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dose_response::{calibrate_emax, logit, CandidateModel, CandidateSet, DoseGrid, Shape};
use crate::error::{Error, Result};
use crate::glm::{detect_separation, DesignMatrix, Family, Separation};
use crate::inference::{
    run_tests, Analysis, AnalysisOptions, MethodId, PValueRule, S1Contrasts, TestMethod,
};
use crate::randomization::{Procedure, RandomizationSpec};
use crate::rng::{stream, stream_id};

pub use potential::{
    simulate_from_potential_outcomes, Endpoint, PotentialOutcomeConfig, PotentialOutcomeTable,
};
pub use report::{HypothesisBlock, MethodRate, SeparationCounts, SimulationReport};
pub use trial::{apply_trend, auc, linear_trend, BinaryGenerator, TimeTrend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// One simulation scenario for the binary endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Total sample size; checked against the randomization procedure.
    #[serde(default)]
    pub n: Option<usize>,
    pub grid: DoseGrid,
    pub randomization: RandomizationSpec,
    /// Dose-response truth on the logit scale under the alternative.
    pub truth: CandidateModel,
    /// Control success probability; the null truth is flat at `logit(p0)`.
    pub p0: f64,
    /// Success probability at the top dose. When set, the Emax truth's
    /// `e0` and `emax` are calibrated from `p0` and `pk`.
    #[serde(default)]
    pub pk: Option<f64>,
    #[serde(default = "default_coef")]
    pub covariate_coef: f64,
    #[serde(default)]
    pub time_trend: TimeTrend,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub n_sim: usize,
    #[serde(default = "default_n_rand")]
    pub n_rand: usize,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default)]
    pub pvalue_rule: PValueRule,
    pub seed: u64,
    #[serde(default = "default_candidates")]
    pub candidates: CandidateSet,
    /// Adjust the analysis models for the covariate.
    #[serde(default = "yes")]
    pub include_covariate: bool,
    #[serde(default)]
    pub s1_contrasts: S1Contrasts,
    #[serde(default = "both_hypotheses")]
    pub hypotheses: Vec<Hypothesis>,
}

fn default_coef() -> f64 {
    0.6
}
fn default_alpha() -> f64 {
    0.10
}
fn default_n_rand() -> usize {
    1000
}
fn all_methods() -> Vec<MethodId> {
    MethodId::ALL.to_vec()
}
fn default_candidates() -> CandidateSet {
    CandidateSet::default_binary()
}
fn yes() -> bool {
    true
}
fn both_hypotheses() -> Vec<Hypothesis> {
    vec![Hypothesis::Null, Hypothesis::Alternative]
}

/// Top-dose success probability per sample size, holding asymptotic
/// population-test power fixed.
pub fn preset_pk(n: usize) -> Option<f64> {
    match n {
        49 => Some(0.8),
        98 => Some(0.61),
        490 => Some(0.364),
        _ => None,
    }
}

impl ScenarioConfig {
    /// The trial-example design scaled to `n` (a multiple of 7): doses
    /// 0/10/25/100 at 1:2:2:2, Emax truth with ED50 10, `p0 = 0.2`.
    pub fn preset(n: usize, procedure: Procedure, trend: bool) -> Result<Self> {
        let pk = preset_pk(n)
            .ok_or_else(|| Error::invalid(format!("no preset for n = {n}; use 49, 98 or 490")))?;
        let ratio = [1usize, 2, 2, 2];
        let randomization = match procedure {
            Procedure::Pbd => RandomizationSpec::pbd_for_n(ratio.to_vec(), n)?,
            Procedure::Ra => RandomizationSpec::ra(ratio.iter().map(|r| r * n / 7).collect())?,
            Procedure::Cr => RandomizationSpec::cr(ratio.iter().map(|&r| r as f64).collect(), n)?,
        };
        let name = format!(
            "scenario_{n}_{}_{}",
            procedure.to_string().to_lowercase(),
            if trend { "trend" } else { "notrend" }
        );
        Ok(Self {
            name: Some(name),
            n: Some(n),
            grid: DoseGrid::new(vec![0.0, 10.0, 25.0, 100.0])?,
            randomization,
            truth: CandidateModel::named(
                "truth",
                Shape::Emax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 10.0,
                },
            )?,
            p0: 0.2,
            pk: Some(pk),
            covariate_coef: default_coef(),
            time_trend: if trend {
                TimeTrend::LinearPaper
            } else {
                TimeTrend::None
            },
            alpha: default_alpha(),
            n_sim: 10_000,
            n_rand: default_n_rand(),
            methods: all_methods(),
            pvalue_rule: PValueRule::PaperPlain,
            seed: 20_240_901,
            candidates: default_candidates(),
            include_covariate: true,
            s1_contrasts: S1Contrasts::Recompute,
            hypotheses: both_hypotheses(),
        })
    }

    /// The fourteen scenarios of the binary simulation study.
    pub fn presets() -> Vec<Self> {
        let mut out = Vec::new();
        for (n, procs) in [
            (49, vec![Procedure::Ra, Procedure::Pbd]),
            (98, vec![Procedure::Ra, Procedure::Pbd]),
            (490, vec![Procedure::Ra, Procedure::Pbd, Procedure::Cr]),
        ] {
            for p in procs {
                for trend in [false, true] {
                    out.push(Self::preset(n, p, trend).expect("valid preset"));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "scenario_{}_{}",
                self.randomization.n(),
                self.randomization.procedure().to_string().to_lowercase()
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim < 1 {
            return Err(Error::invalid("n_sim must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::invalid("p0 must lie in (0, 1)"));
        }
        if let Some(pk) = self.pk {
            if !(pk > 0.0 && pk < 1.0) {
                return Err(Error::invalid("pk must lie in (0, 1)"));
            }
            if !matches!(self.truth.shape, Shape::Emax { .. }) {
                return Err(Error::invalid("pk calibration needs an Emax truth"));
            }
        }
        self.randomization.validate()?;
        if self.randomization.k() != self.grid.k() {
            return Err(Error::invalid(format!(
                "randomization has {} arms but the grid has {} doses",
                self.randomization.k(),
                self.grid.k()
            )));
        }
        if let Some(n) = self.n {
            if n != self.randomization.n() {
                return Err(Error::invalid(format!(
                    "n = {n} but the randomization allocates {} patients",
                    self.randomization.n()
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        if self.methods.iter().any(|m| m.is_randomization()) && self.n_rand < 1 {
            return Err(Error::invalid("n_rand must be at least 1"));
        }
        if self.hypotheses.is_empty() {
            return Err(Error::invalid("no hypotheses configured"));
        }
        let truth = self.alternative_truth()?;
        for &d in self.grid.doses() {
            truth.eval(d)?;
        }
        Ok(())
    }

    /// Truth under the alternative, with calibration applied.
    pub fn alternative_truth(&self) -> Result<CandidateModel> {
        let Some(pk) = self.pk else {
            self.truth.validate()?;
            return Ok(self.truth.clone());
        };
        match self.truth.shape {
            Shape::Emax { ed50, .. } => {
                let (e0, emax) = calibrate_emax(self.p0, pk, self.grid.max_dose(), ed50)?;
                CandidateModel::new(Shape::Emax { e0, emax, ed50 })
            }
            _ => Err(Error::invalid("pk calibration needs an Emax truth")),
        }
    }

    pub fn truth_for(&self, h: Hypothesis) -> Result<CandidateModel> {
        match h {
            Hypothesis::Null => Ok(CandidateModel::flat(logit(self.p0))),
            Hypothesis::Alternative => self.alternative_truth(),
        }
    }

    pub fn test_methods(&self) -> Vec<TestMethod> {
        self.methods
            .iter()
            .map(|&id| TestMethod {
                id,
                n_rand: self.n_rand,
                pvalue_rule: self.pvalue_rule,
            })
            .collect()
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            family: Family::BinaryLogit,
            include_covariates: self.include_covariate,
            s1_contrasts: self.s1_contrasts,
            ..Default::default()
        }
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    /// Per configured method; `None` when the method failed on this trial.
    pub p_values: Vec<Option<f64>>,
    pub separation: Option<Separation>,
    pub redraws: u64,
    pub failures: Vec<String>,
}

/// Applies every method to one dataset, isolating per-method failures.
pub fn analyze_trial(
    analysis: &Analysis,
    spec: &RandomizationSpec,
    methods: &[TestMethod],
    root_seed: u64,
    rerand_stream: u64,
) -> (Vec<Option<f64>>, u64, Vec<String>) {
    let mut rng = stream(root_seed, rerand_stream);
    if let Ok(out) = run_tests(analysis, spec, methods, &mut rng) {
        let redraws = out.iter().map(|o| o.diagnostics.redraws).max().unwrap_or(0);
        return (
            out.into_iter().map(|o| Some(o.p_value)).collect(),
            redraws,
            Vec::new(),
        );
    }
    let mut pv = Vec::with_capacity(methods.len());
    let mut failures = Vec::new();
    let mut redraws = 0;
    for m in methods {
        let mut rng = stream(root_seed, rerand_stream);
        match run_tests(analysis, spec, std::slice::from_ref(m), &mut rng) {
            Ok(mut o) => {
                let o = o.remove(0);
                redraws = redraws.max(o.diagnostics.redraws);
                pv.push(Some(o.p_value));
            }
            Err(e) => {
                failures.push(format!("{}: {e}", m.id.key()));
                pv.push(None);
            }
        }
    }
    (pv, redraws, failures)
}

fn simulate_one(
    config: &ScenarioConfig,
    truth: &CandidateModel,
    h: Hypothesis,
    t: usize,
) -> TrialResult {
    let hid = h as u64;
    let opts = config.analysis_options();
    let gen = BinaryGenerator {
        grid: &config.grid,
        spec: &config.randomization,
        truth,
        covariate_coef: config.covariate_coef,
        time_trend: config.time_trend,
        min_arm_size: opts.min_arm_size,
    };
    let methods = config.test_methods();
    let mut rng = stream(config.seed, stream_id(&[hid, t as u64, 0]));
    let (data, rejected) = match gen.generate(&mut rng) {
        Ok(v) => v,
        Err(e) => {
            return TrialResult {
                p_values: vec![None; methods.len()],
                separation: None,
                redraws: 0,
                failures: vec![format!("generation: {e}")],
            }
        }
    };
    let analysis_cov = if config.include_covariate {
        data.covariates.clone()
    } else {
        nalgebra::DMatrix::zeros(data.n(), 0)
    };
    let separation = DesignMatrix::dose_model(data.sequence.arms(), data.grid.k(), &analysis_cov)
        .ok()
        .map(|d| detect_separation(d.matrix(), &data.outcome));
    let analysis = match Analysis::new(&data, &config.candidates, opts) {
        Ok(a) => a,
        Err(e) => {
            return TrialResult {
                p_values: vec![None; methods.len()],
                separation,
                redraws: rejected as u64,
                failures: vec![format!("analysis: {e}")],
            }
        }
    };
    let (p_values, redraws, failures) = analyze_trial(
        &analysis,
        &config.randomization,
        &methods,
        config.seed,
        stream_id(&[hid, t as u64, 1]),
    );
    TrialResult {
        p_values,
        separation,
        redraws: redraws + rejected as u64,
        failures,
    }
}

/// Runs `n_sim` trials per configured hypothesis on a pool of `workers`
/// threads. Results do not depend on the worker count.
pub fn run_power_study(
    config: &ScenarioConfig,
    workers: Option<usize>,
) -> Result<SimulationReport> {
    config.validate()?;
    let pool = build_pool(workers)?;
    let start = Instant::now();
    let mut blocks = Vec::new();
    for &h in &config.hypotheses {
        let truth = config.truth_for(h)?;
        let results: Vec<TrialResult> = pool.install(|| {
            (0..config.n_sim)
                .into_par_iter()
                .map(|t| simulate_one(config, &truth, h, t))
                .collect()
        });
        blocks.push(HypothesisBlock::tally(
            h,
            &config.methods,
            config.alpha,
            &results,
        ));
    }
    let mut report = SimulationReport {
        label: config.label(),
        sample_size: config.randomization.n(),
        procedure: config.randomization.procedure(),
        time_trend: config.time_trend,
        covariate_in_analysis: config.include_covariate,
        alpha: config.alpha,
        n_sim: config.n_sim,
        n_rand: config.n_rand,
        pvalue_rule: config.pvalue_rule,
        seed: config.seed,
        config_hash: None,
        blocks,
        elapsed_seconds: 0.0,
    };
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub(crate) fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))
}
