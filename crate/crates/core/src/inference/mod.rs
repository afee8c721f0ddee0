//! Population-based and randomization-based multiple contrast tests.

pub mod mvn;
mod stats;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrasts::ContrastMatrix;
use crate::error::{Error, Result};
use crate::glm::{Estimator, Separation};
use crate::randomization::{RandomizationSpec, TreatmentSequence};

pub use mvn::{max_normal_tail, MaxTail, MvnOptions};
pub use stats::{
    arm_counts, s2_statistic, Analysis, AnalysisOptions, ContrastCache, S1Contrasts, S1Value,
    StatValue,
};

/// The five tests, numbered as in the simulation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    PopulationBased,
    RandMleS1,
    RandMleS2,
    RandFirthS1,
    RandFirthS2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    S1,
    S2,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::PopulationBased,
        MethodId::RandMleS1,
        MethodId::RandMleS2,
        MethodId::RandFirthS1,
        MethodId::RandFirthS2,
    ];

    pub fn number(self) -> u8 {
        match self {
            MethodId::PopulationBased => 1,
            MethodId::RandMleS1 => 2,
            MethodId::RandMleS2 => 3,
            MethodId::RandFirthS1 => 4,
            MethodId::RandFirthS2 => 5,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.number() == n)
    }

    pub fn estimator(self) -> Estimator {
        match self {
            MethodId::RandFirthS1 | MethodId::RandFirthS2 => Estimator::Firth,
            _ => Estimator::Mle,
        }
    }

    pub fn statistic(self) -> Statistic {
        match self {
            MethodId::RandMleS2 | MethodId::RandFirthS2 => Statistic::S2,
            _ => Statistic::S1,
        }
    }

    pub fn is_randomization(self) -> bool {
        self != MethodId::PopulationBased
    }

    /// Configuration key, as used in serialized form.
    pub fn key(self) -> &'static str {
        match self {
            MethodId::PopulationBased => "population_based",
            MethodId::RandMleS1 => "rand_mle_s1",
            MethodId::RandMleS2 => "rand_mle_s2",
            MethodId::RandFirthS1 => "rand_firth_s1",
            MethodId::RandFirthS2 => "rand_firth_s2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MethodId::PopulationBased => "population-based",
            MethodId::RandMleS1 => "randomization, MLE",
            MethodId::RandMleS2 => "randomization, MLE, residual",
            MethodId::RandFirthS1 => "randomization, Firth",
            MethodId::RandFirthS2 => "randomization, Firth, residual",
        }
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(n) = s.parse::<u8>() {
            return Self::from_number(n).ok_or_else(|| Error::invalid(format!("no method {n}")));
        }
        Self::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueRule {
    /// `#(S_l >= S_obs) / n_rand`; can be zero.
    #[default]
    PaperPlain,
    /// `(1 + #(S_l >= S_obs)) / (1 + n_rand)`.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestMethod {
    pub id: MethodId,
    #[serde(default = "default_n_rand")]
    pub n_rand: usize,
    #[serde(default)]
    pub pvalue_rule: PValueRule,
}

fn default_n_rand() -> usize {
    1000
}

impl TestMethod {
    pub fn new(id: MethodId, n_rand: usize) -> Self {
        Self {
            id,
            n_rand,
            pvalue_rule: PValueRule::PaperPlain,
        }
    }

    pub fn all(n_rand: usize) -> Vec<Self> {
        MethodId::ALL
            .iter()
            .map(|&id| Self::new(id, n_rand))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_randomization() && self.n_rand < 1 {
            return Err(Error::invalid("randomization tests need n_rand >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Separation status of the fit on the observed allocation (MLE only).
    pub observed_separation: Option<Separation>,
    pub observed_converged: Option<bool>,
    /// Re-randomized MLE fits with any (complete or quasicomplete) separation.
    pub separated_refits: u64,
    pub complete_separated_refits: u64,
    pub nonconverged_refits: u64,
    /// S2 evaluations with a zero denominator.
    pub degenerate_statistics: u64,
    /// Complete-randomization draws rejected for leaving an arm too small.
    pub redraws: u64,
    /// S1 fits whose covariance was unusable for contrasts; design weights used.
    pub contrast_fallbacks: u64,
    pub correlation_repaired: bool,
    pub integration_error: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: TestMethod,
    pub statistic_observed: f64,
    pub per_contrast: Vec<f64>,
    pub contrast_labels: Vec<String>,
    pub p_value: f64,
    /// Monte Carlo standard error of the p-value (randomization tests).
    pub mcse: Option<f64>,
    pub exceedances: Option<u64>,
    pub exact: bool,
    pub diagnostics: Diagnostics,
}

/// `S_l >= S_obs` with a relative tolerance so rounding does not break ties.
pub fn at_least(s: f64, obs: f64) -> bool {
    if s.is_nan() {
        return false;
    }
    if obs.is_infinite() || s.is_infinite() {
        return s >= obs;
    }
    s >= obs - 1e-10 * obs.abs().max(1.0)
}

fn mle_separation_warning(d: &Diagnostics, id: MethodId) -> Option<String> {
    match d.observed_separation {
        Some(s) if s.is_separated() && id.estimator() == Estimator::Mle => Some(format!(
            "maximum likelihood estimates do not exist ({s:?} separation); the p-value is not meaningful"
        )),
        _ => None,
    }
}

/// The generalized MCP-Mod population test: fits the dose-indicator model by
/// maximum likelihood (or least squares) and adjusts for multiplicity with
/// `P(max of N(0, R) >= S1)`.
pub fn population_test(analysis: &Analysis, seq: &TreatmentSequence) -> Result<TestOutcome> {
    population_test_with(analysis, seq, Estimator::Mle)
}

pub fn population_test_with(
    analysis: &Analysis,
    seq: &TreatmentSequence,
    est: Estimator,
) -> Result<TestOutcome> {
    let v = analysis.s1(seq.arms(), est)?;
    let r = Analysis::contrast_correlation(&v.contrasts, &v.s);
    let tail = max_normal_tail(&r, v.stat.value, &analysis.options.mvn);
    let mut diagnostics = Diagnostics {
        observed_converged: Some(v.converged),
        correlation_repaired: tail.repaired,
        integration_error: Some(tail.error),
        contrast_fallbacks: v.contrast_fallback as u64,
        ..Default::default()
    };
    if est == Estimator::Mle && analysis.options.family == crate::glm::Family::BinaryLogit {
        diagnostics.observed_separation = Some(v.separation);
    }
    if let Some(w) = mle_separation_warning(&diagnostics, MethodId::PopulationBased) {
        diagnostics.warnings.push(w);
    }
    Ok(TestOutcome {
        method: TestMethod::new(MethodId::PopulationBased, 0),
        statistic_observed: v.stat.value,
        per_contrast: v.stat.per_contrast,
        contrast_labels: v.contrasts.labels,
        p_value: tail.p,
        mcse: None,
        exceedances: None,
        exact: false,
        diagnostics,
    })
}

/// Precomputed state of one randomization method: the observed statistic
/// and, for S2, the residuals.
struct Prepared {
    method: TestMethod,
    observed: StatValue,
    residuals: Option<Vec<f64>>,
    diagnostics: Diagnostics,
    exceed: u64,
    done: usize,
}

fn s2_contrasts<'c>(
    analysis: &Analysis,
    spec: Option<&RandomizationSpec>,
    cache: &'c mut ContrastCache,
    arms: &[usize],
) -> Result<&'c ContrastMatrix> {
    let counts = match spec.and_then(|s| s.fixed_group_sizes()) {
        Some(fixed) => fixed,
        None => arm_counts(arms, analysis.k()),
    };
    cache.get(analysis, &counts)
}

fn prepare(
    analysis: &Analysis,
    spec: Option<&RandomizationSpec>,
    method: TestMethod,
    cache: &mut ContrastCache,
) -> Result<Prepared> {
    method.validate()?;
    let seq = &analysis.data().sequence;
    let mut diagnostics = Diagnostics::default();
    let binary_mle = method.id.estimator() == Estimator::Mle
        && analysis.options.family == crate::glm::Family::BinaryLogit;
    let (observed, residuals) = match method.id.statistic() {
        Statistic::S1 => {
            let v = analysis.s1(seq.arms(), method.id.estimator())?;
            if binary_mle {
                diagnostics.observed_separation = Some(v.separation);
            }
            diagnostics.observed_converged = Some(v.converged);
            diagnostics.contrast_fallbacks += v.contrast_fallback as u64;
            (v.stat, None)
        }
        Statistic::S2 => {
            let (r, fit) = analysis.residuals(method.id.estimator())?;
            if binary_mle {
                diagnostics.observed_separation = Some(fit.separation);
            }
            diagnostics.observed_converged = Some(fit.converged);
            // A non-converged MLE contributes its last iterate, as for S1.
            if !fit.all_finite() {
                return Err(Error::Numeric(
                    "covariate-only fit has non-finite coefficients".into(),
                ));
            }
            let c = s2_contrasts(analysis, spec, cache, seq.arms())?;
            let v = analysis.s2(&r, seq.arms(), c)?;
            diagnostics.degenerate_statistics += v.degenerate as u64;
            (v, Some(r))
        }
    };
    if let Some(w) = mle_separation_warning(&diagnostics, method.id) {
        diagnostics.warnings.push(w);
    }
    Ok(Prepared {
        method,
        observed,
        residuals,
        diagnostics,
        exceed: 0,
        done: 0,
    })
}

/// Statistic of a prepared method on sequence `arms`.
fn evaluate(
    analysis: &Analysis,
    spec: Option<&RandomizationSpec>,
    p: &mut Prepared,
    cache: &mut ContrastCache,
    arms: &[usize],
) -> Result<f64> {
    match &p.residuals {
        Some(r) => {
            let c = s2_contrasts(analysis, spec, cache, arms)?;
            let v = analysis.s2(r, arms, c)?;
            p.diagnostics.degenerate_statistics += v.degenerate as u64;
            Ok(v.value)
        }
        None => {
            let v = analysis.s1(arms, p.method.id.estimator())?;
            if p.method.id.estimator() == Estimator::Mle
                && analysis.options.family == crate::glm::Family::BinaryLogit
            {
                if v.separation.is_separated() {
                    p.diagnostics.separated_refits += 1;
                }
                if v.separation == Separation::Complete {
                    p.diagnostics.complete_separated_refits += 1;
                }
            }
            p.diagnostics.nonconverged_refits += (!v.converged) as u64;
            p.diagnostics.contrast_fallbacks += v.contrast_fallback as u64;
            Ok(v.stat.value)
        }
    }
}

fn finish(analysis: &Analysis, p: Prepared) -> TestOutcome {
    let n = p.done as f64;
    let (p_value, mcse) = match p.method.pvalue_rule {
        PValueRule::PaperPlain => {
            let v = p.exceed as f64 / n;
            (v, (v * (1.0 - v) / n).sqrt())
        }
        PValueRule::AddOne => {
            let v = (1.0 + p.exceed as f64) / (1.0 + n);
            let raw = p.exceed as f64 / n;
            (v, (raw * (1.0 - raw) / n).sqrt())
        }
    };
    TestOutcome {
        method: p.method,
        statistic_observed: p.observed.value,
        per_contrast: p.observed.per_contrast,
        contrast_labels: analysis.contrast_labels().to_vec(),
        p_value,
        mcse: Some(mcse),
        exceedances: Some(p.exceed),
        exact: false,
        diagnostics: p.diagnostics,
    }
}

/// Runs every method on the observed trial. Randomization methods share
/// the same re-randomized sequences (method `m` uses the first
/// `n_rand_m` of them); outcomes and covariates are held fixed.
pub fn run_tests<R: Rng + ?Sized>(
    analysis: &Analysis,
    spec: &RandomizationSpec,
    methods: &[TestMethod],
    rng: &mut R,
) -> Result<Vec<TestOutcome>> {
    let observed = &analysis.data().sequence;
    let member = spec.contains(observed);
    let mut cache = ContrastCache::default();
    let mut slots: Vec<Option<Prepared>> = Vec::with_capacity(methods.len());
    let mut outcomes: Vec<Option<TestOutcome>> = vec![None; methods.len()];
    for (i, m) in methods.iter().enumerate() {
        if m.id.is_randomization() {
            slots.push(Some(prepare(analysis, Some(spec), *m, &mut cache)?));
        } else {
            outcomes[i] = Some(population_test(analysis, observed)?);
            slots.push(None);
        }
    }
    let n_max = slots
        .iter()
        .flatten()
        .map(|p| p.method.n_rand)
        .max()
        .unwrap_or(0);
    let mut redraws = 0u64;
    for _ in 0..n_max {
        let (seq, rejected) = spec.sample_with_min(analysis.options.min_arm_size, rng);
        redraws += rejected as u64;
        for p in slots.iter_mut().flatten() {
            if p.done >= p.method.n_rand {
                continue;
            }
            let s = evaluate(analysis, Some(spec), p, &mut cache, seq.arms())?;
            if at_least(s, p.observed.value) {
                p.exceed += 1;
            }
            p.done += 1;
        }
    }
    for (i, slot) in slots.into_iter().enumerate() {
        if let Some(mut p) = slot {
            p.diagnostics.redraws = redraws;
            let mut out = finish(analysis, p);
            if !member {
                out.diagnostics
                    .warnings
                    .push("observed allocation is not in the procedure's reference set".into());
            }
            outcomes[i] = Some(out);
        }
    }
    Ok(outcomes
        .into_iter()
        .map(|o| o.expect("every method ran"))
        .collect())
}

/// Monte Carlo randomization test for one method.
pub fn randomization_test<R: Rng + ?Sized>(
    analysis: &Analysis,
    spec: &RandomizationSpec,
    method: TestMethod,
    rng: &mut R,
) -> Result<TestOutcome> {
    if !method.id.is_randomization() {
        return Err(Error::invalid(
            "the population-based test has no randomization distribution",
        ));
    }
    Ok(run_tests(analysis, spec, &[method], rng)?.remove(0))
}

/// Exact randomization p-value `sum_s pi_s 1(S(Z_s) >= S(Z_obs))` over the
/// whole reference set. Sequences leaving an arm below the analysis's
/// minimum size are excluded and the remaining probabilities renormalized.
pub fn exact_randomization_pvalue(
    analysis: &Analysis,
    spec: &RandomizationSpec,
    method: TestMethod,
    cap: u64,
) -> Result<TestOutcome> {
    if !method.id.is_randomization() {
        return Err(Error::invalid(
            "the population-based test has no randomization distribution",
        ));
    }
    let iter = spec.enumerate(cap)?;
    let mut cache = ContrastCache::default();
    let mut p = prepare(analysis, Some(spec), method, &mut cache)?;
    let min = analysis.options.min_arm_size;
    let (mut hit, mut total, mut count) = (0.0, 0.0, 0u64);
    let mut evaluated = 0u64;
    for (seq, prob) in iter {
        if seq.arm_counts(analysis.k()).iter().any(|&c| c < min) {
            p.diagnostics.redraws += 1;
            continue;
        }
        let s = evaluate(analysis, Some(spec), &mut p, &mut cache, seq.arms())?;
        total += prob;
        evaluated += 1;
        if at_least(s, p.observed.value) {
            hit += prob;
            count += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::invalid(
            "no sequence in the reference set meets the minimum arm size",
        ));
    }
    if !spec.contains(&analysis.data().sequence) {
        p.diagnostics
            .warnings
            .push("observed allocation is not in the procedure's reference set".into());
    }
    Ok(TestOutcome {
        method: p.method,
        statistic_observed: p.observed.value,
        per_contrast: p.observed.per_contrast,
        contrast_labels: analysis.contrast_labels().to_vec(),
        p_value: (hit / total).clamp(0.0, 1.0),
        mcse: None,
        exceedances: Some(count),
        exact: true,
        diagnostics: p.diagnostics,
    })
}
