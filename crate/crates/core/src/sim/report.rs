use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Hypothesis, TimeTrend, TrialResult};
use crate::glm::Separation;
use crate::inference::{MethodId, PValueRule};
use crate::randomization::Procedure;

/// Rejection tally of one method under one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRate {
    pub method: MethodId,
    pub rejections: u64,
    /// Trials on which the method failed; they count as non-rejections.
    pub failures: u64,
    pub trials: u64,
    pub rate: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCounts {
    pub trials: u64,
    /// Complete or quasicomplete: the maximum likelihood estimate does not exist.
    pub any: u64,
    pub complete: u64,
    pub rate_any: f64,
    pub rate_complete: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBlock {
    pub hypothesis: Hypothesis,
    pub methods: Vec<MethodRate>,
    pub separation: Option<SeparationCounts>,
    pub redraws: u64,
    /// First few distinct failure messages, if any.
    pub failure_examples: Vec<String>,
}

pub fn rate_with_mcse(hits: u64, n: u64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

impl HypothesisBlock {
    pub fn tally(h: Hypothesis, methods: &[MethodId], alpha: f64, results: &[TrialResult]) -> Self {
        let n = results.len() as u64;
        let methods = methods
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut rejections = 0;
                let mut failures = 0;
                for r in results {
                    match r.p_values[i] {
                        Some(p) if p < alpha => rejections += 1,
                        Some(_) => {}
                        None => failures += 1,
                    }
                }
                let (rate, mcse) = rate_with_mcse(rejections, n);
                MethodRate {
                    method: m,
                    rejections,
                    failures,
                    trials: n,
                    rate,
                    mcse,
                }
            })
            .collect();
        let seps: Vec<Separation> = results.iter().filter_map(|r| r.separation).collect();
        let separation = (!seps.is_empty()).then(|| {
            let t = seps.len() as u64;
            let any = seps.iter().filter(|s| s.is_separated()).count() as u64;
            let complete = seps.iter().filter(|&&s| s == Separation::Complete).count() as u64;
            SeparationCounts {
                trials: t,
                any,
                complete,
                rate_any: any as f64 / t as f64,
                rate_complete: complete as f64 / t as f64,
            }
        });
        let mut failure_examples: Vec<String> = Vec::new();
        for f in results.iter().flat_map(|r| r.failures.iter()) {
            if failure_examples.len() >= 5 {
                break;
            }
            if !failure_examples.contains(f) {
                failure_examples.push(f.clone());
            }
        }
        Self {
            hypothesis: h,
            methods,
            separation,
            redraws: results.iter().map(|r| r.redraws).sum(),
            failure_examples,
        }
    }

    pub fn rate(&self, m: MethodId) -> Option<&MethodRate> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub label: String,
    pub sample_size: usize,
    pub procedure: Procedure,
    pub time_trend: TimeTrend,
    pub covariate_in_analysis: bool,
    pub alpha: f64,
    pub n_sim: usize,
    pub n_rand: usize,
    pub pvalue_rule: PValueRule,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub blocks: Vec<HypothesisBlock>,
    /// Wall-clock time; excluded from serialized output so reports are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

impl SimulationReport {
    pub fn block(&self, h: Hypothesis) -> Option<&HypothesisBlock> {
        self.blocks.iter().find(|b| b.hypothesis == h)
    }

    pub fn rate(&self, h: Hypothesis, m: MethodId) -> Option<&MethodRate> {
        self.block(h).and_then(|b| b.rate(m))
    }

    /// Table with one row per method; rates and standard errors in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# scenario: {}", self.label);
        if let Some(h) = &self.config_hash {
            let _ = writeln!(out, "# config_sha256: {h}");
        }
        let _ = writeln!(out, "# seed: {}", self.seed);
        let _ = writeln!(
            out,
            "# n_sim: {}, n_rand: {}, alpha: {}, pvalue_rule: {:?}, covariate_in_analysis: {}",
            self.n_sim, self.n_rand, self.alpha, self.pvalue_rule, self.covariate_in_analysis
        );
        let _ = writeln!(out, "# version: mcpmod {}", env!("CARGO_PKG_VERSION"));
        out.push_str(
            "sample_size,randomization,time_trend,test,type_i_error,power,\
             type_i_mcse,power_mcse,failures,separation_null,separation_alternative\n",
        );
        let null = self.block(Hypothesis::Null);
        let alt = self.block(Hypothesis::Alternative);
        let methods: Vec<MethodId> = self
            .blocks
            .first()
            .map(|b| b.methods.iter().map(|m| m.method).collect())
            .unwrap_or_default();
        let sep = |b: Option<&HypothesisBlock>| {
            pct(b.and_then(|b| b.separation.as_ref()).map(|s| s.rate_any))
        };
        let trend = match self.time_trend {
            TimeTrend::None => "No",
            _ => "Yes",
        };
        for m in methods {
            let n = null.and_then(|b| b.rate(m));
            let a = alt.and_then(|b| b.rate(m));
            let failures = n.map_or(0, |r| r.failures) + a.map_or(0, |r| r.failures);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.sample_size,
                self.procedure,
                trend,
                m.number(),
                pct(n.map(|r| r.rate)),
                pct(a.map(|r| r.rate)),
                pct(n.map(|r| r.mcse)),
                pct(a.map(|r| r.mcse)),
                failures,
                sep(null),
                sep(alt),
            );
        }
        out
    }
}
