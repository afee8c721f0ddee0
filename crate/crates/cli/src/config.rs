use std::path::Path;

use mcpmod::dose_response::{CandidateSet, DoseGrid};
use mcpmod::inference::{MethodId, PValueRule, S1Contrasts};
use mcpmod::randomization::RandomizationSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Scenario presets shipped with the binary, by file stem.
pub const PRESETS: [(&str, &str); 14] = [
    (
        "scenario_49_ra_notrend",
        include_str!("../scenarios/scenario_49_ra_notrend.toml"),
    ),
    (
        "scenario_49_ra_trend",
        include_str!("../scenarios/scenario_49_ra_trend.toml"),
    ),
    (
        "scenario_49_pbd_notrend",
        include_str!("../scenarios/scenario_49_pbd_notrend.toml"),
    ),
    (
        "scenario_49_pbd_trend",
        include_str!("../scenarios/scenario_49_pbd_trend.toml"),
    ),
    (
        "scenario_98_ra_notrend",
        include_str!("../scenarios/scenario_98_ra_notrend.toml"),
    ),
    (
        "scenario_98_ra_trend",
        include_str!("../scenarios/scenario_98_ra_trend.toml"),
    ),
    (
        "scenario_98_pbd_notrend",
        include_str!("../scenarios/scenario_98_pbd_notrend.toml"),
    ),
    (
        "scenario_98_pbd_trend",
        include_str!("../scenarios/scenario_98_pbd_trend.toml"),
    ),
    (
        "scenario_490_ra_notrend",
        include_str!("../scenarios/scenario_490_ra_notrend.toml"),
    ),
    (
        "scenario_490_ra_trend",
        include_str!("../scenarios/scenario_490_ra_trend.toml"),
    ),
    (
        "scenario_490_pbd_notrend",
        include_str!("../scenarios/scenario_490_pbd_notrend.toml"),
    ),
    (
        "scenario_490_pbd_trend",
        include_str!("../scenarios/scenario_490_pbd_trend.toml"),
    ),
    (
        "scenario_490_cr_notrend",
        include_str!("../scenarios/scenario_490_cr_notrend.toml"),
    ),
    (
        "scenario_490_cr_trend",
        include_str!("../scenarios/scenario_490_cr_trend.toml"),
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    #[default]
    Binary,
    Continuous,
}

/// Design and analysis settings for `analyze`, `contrasts`, `counts` and
/// `enumerate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub grid: DoseGrid,
    pub randomization: RandomizationSpec,
    #[serde(default)]
    pub candidates: Option<CandidateSet>,
    #[serde(default)]
    pub endpoint: Endpoint,
    #[serde(default = "yes")]
    pub include_covariates: bool,
    #[serde(default)]
    pub s1_contrasts: S1Contrasts,
    #[serde(default)]
    pub methods: Option<Vec<MethodId>>,
    #[serde(default)]
    pub n_rand: Option<usize>,
    #[serde(default)]
    pub pvalue_rule: PValueRule,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn yes() -> bool {
    true
}

impl DesignConfig {
    pub fn candidates(&self) -> CandidateSet {
        self.candidates
            .clone()
            .unwrap_or_else(|| match self.endpoint {
                Endpoint::Binary => CandidateSet::default_binary(),
                Endpoint::Continuous => CandidateSet::default_continuous(),
            })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.randomization.validate()?;
        if self.randomization.k() != self.grid.k() {
            return Err(CliError::Validation(format!(
                "randomization: {} arms but grid has {} doses",
                self.randomization.k(),
                self.grid.k()
            )));
        }
        for m in self.candidates().models() {
            for &d in self.grid.doses() {
                m.eval(d)?;
            }
        }
        Ok(())
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

/// Resolves a config argument: an existing file, or a preset name.
pub fn resolve(arg: &str) -> Result<(String, String), CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok((read_text(path)?, arg.to_string()));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
    PRESETS
        .iter()
        .find(|(name, _)| *name == stem)
        .map(|(name, text)| (text.to_string(), format!("preset:{name}")))
        .ok_or_else(|| {
            CliError::Validation(format!(
                "config `{arg}` is neither a file nor a preset (presets: {})",
                PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
            ))
        })
}

pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))
}

/// SHA-256 of the canonical JSON form of the effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let canonical = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(Sha256::digest(canonical))
}
