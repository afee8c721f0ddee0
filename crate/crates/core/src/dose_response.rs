//! Candidate dose-response shapes on the linear-predictor scale.
//!
//! Every shape is evaluated as `e0 + emax * g(dose)` for a shape-specific
//! kernel `g`. Only the kernel matters to contrast construction; `e0` and
//! `emax` exist so the same type can describe a data-generating truth.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::error::{Error, Result};

/// Ordered dose levels, placebo first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DoseGrid {
    doses: Vec<f64>,
}

impl DoseGrid {
    pub fn new(doses: Vec<f64>) -> Result<Self> {
        if doses.len() < 2 {
            return Err(Error::invalid("a dose grid needs at least two arms"));
        }
        if doses[0] != 0.0 {
            return Err(Error::invalid("the first dose must be placebo (0)"));
        }
        if doses.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("doses must be finite"));
        }
        if doses.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("doses must be strictly increasing"));
        }
        Ok(Self { doses })
    }

    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    /// Number of arms.
    pub fn k(&self) -> usize {
        self.doses.len()
    }

    pub fn max_dose(&self) -> f64 {
        *self.doses.last().expect("grid is nonempty")
    }

    /// Arm index of a dose level, matched exactly or within 1e-9 relative.
    pub fn arm_of(&self, dose: f64) -> Option<usize> {
        self.doses
            .iter()
            .position(|&d| (d - dose).abs() <= 1e-9 * d.abs().max(1.0))
    }
}

impl TryFrom<Vec<f64>> for DoseGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DoseGrid::new(v)
    }
}

impl From<DoseGrid> for Vec<f64> {
    fn from(g: DoseGrid) -> Self {
        g.doses
    }
}

fn default_e0() -> f64 {
    0.0
}

fn default_emax() -> f64 {
    1.0
}

fn default_beta_scale() -> f64 {
    120.0
}

fn default_log_offset() -> f64 {
    1.0
}

/// Parametric shape of a dose-response curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// `e0 + emax * d / (ed50 + d)`
    Emax {
        #[serde(default = "default_e0")]
        e0: f64,
        #[serde(default = "default_emax")]
        emax: f64,
        ed50: f64,
    },
    /// `e0 + emax * d^h / (ed50^h + d^h)`
    SigEmax {
        #[serde(default = "default_e0")]
        e0: f64,
        #[serde(default = "default_emax")]
        emax: f64,
        ed50: f64,
        hill: f64,
    },
    /// `e0 + emax * B(delta1, delta2) * (d/scale)^delta1 * (1 - d/scale)^delta2`,
    /// with `B` the Beta function.
    Beta {
        #[serde(default = "default_e0")]
        e0: f64,
        #[serde(default = "default_emax")]
        emax: f64,
        delta1: f64,
        delta2: f64,
        #[serde(default = "default_beta_scale")]
        scale: f64,
    },
    Linear {
        #[serde(default = "default_e0")]
        e0: f64,
        #[serde(default = "default_emax")]
        slope: f64,
    },
    /// `e0 + slope * ln(d + offset)`
    LogLinear {
        #[serde(default = "default_e0")]
        e0: f64,
        #[serde(default = "default_emax")]
        slope: f64,
        #[serde(default = "default_log_offset")]
        offset: f64,
    },
    Flat {
        #[serde(default = "default_e0")]
        e0: f64,
    },
}

/// A named candidate or truth model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub shape: Shape,
}

impl CandidateModel {
    pub fn new(shape: Shape) -> Result<Self> {
        let m = Self { name: None, shape };
        m.validate()?;
        Ok(m)
    }

    pub fn named(name: impl Into<String>, shape: Shape) -> Result<Self> {
        let m = Self {
            name: Some(name.into()),
            shape,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn emax(e0: f64, emax: f64, ed50: f64) -> Result<Self> {
        Self::new(Shape::Emax { e0, emax, ed50 })
    }

    pub fn sig_emax(e0: f64, emax: f64, ed50: f64, hill: f64) -> Result<Self> {
        Self::new(Shape::SigEmax {
            e0,
            emax,
            ed50,
            hill,
        })
    }

    pub fn beta(e0: f64, emax: f64, delta1: f64, delta2: f64, scale: f64) -> Result<Self> {
        Self::new(Shape::Beta {
            e0,
            emax,
            delta1,
            delta2,
            scale,
        })
    }

    pub fn linear(e0: f64, slope: f64) -> Result<Self> {
        Self::new(Shape::Linear { e0, slope })
    }

    pub fn log_linear(e0: f64, slope: f64, offset: f64) -> Result<Self> {
        Self::new(Shape::LogLinear { e0, slope, offset })
    }

    pub fn flat(e0: f64) -> Self {
        Self {
            name: None,
            shape: Shape::Flat { e0 },
        }
    }

    /// Display label; falls back to a description of the shape.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.shape {
            Shape::Emax { ed50, .. } => format!("emax(ed50={ed50})"),
            Shape::SigEmax { ed50, hill, .. } => format!("sigemax(ed50={ed50},h={hill})"),
            Shape::Beta { delta1, delta2, .. } => format!("beta({delta1},{delta2})"),
            Shape::Linear { .. } => "linear".into(),
            Shape::LogLinear { offset, .. } => format!("loglinear(off={offset})"),
            Shape::Flat { .. } => "flat".into(),
        }
    }

    pub fn is_flat(&self) -> bool {
        match self.shape {
            Shape::Flat { .. } => true,
            Shape::Emax { emax, .. } | Shape::SigEmax { emax, .. } | Shape::Beta { emax, .. } => {
                emax == 0.0
            }
            Shape::Linear { slope, .. } | Shape::LogLinear { slope, .. } => slope == 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("{}: {msg}", self.label())));
        match self.shape {
            Shape::Emax { e0, emax, ed50 } => {
                if !(e0.is_finite() && emax.is_finite()) {
                    return bad("non-finite parameter");
                }
                if !(ed50 > 0.0 && ed50.is_finite()) {
                    return bad("ed50 must be positive");
                }
            }
            Shape::SigEmax {
                e0,
                emax,
                ed50,
                hill,
            } => {
                if !(e0.is_finite() && emax.is_finite()) {
                    return bad("non-finite parameter");
                }
                if !(ed50 > 0.0 && ed50.is_finite()) {
                    return bad("ed50 must be positive");
                }
                if !(hill > 0.0 && hill.is_finite()) {
                    return bad("hill coefficient must be positive");
                }
            }
            Shape::Beta {
                e0,
                emax,
                delta1,
                delta2,
                scale,
            } => {
                if !(e0.is_finite() && emax.is_finite()) {
                    return bad("non-finite parameter");
                }
                if !(delta1 > 0.0 && delta2 > 0.0) {
                    return bad("beta shape parameters must be positive");
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return bad("beta scale must be positive");
                }
            }
            Shape::Linear { e0, slope } => {
                if !(e0.is_finite() && slope.is_finite()) {
                    return bad("non-finite parameter");
                }
            }
            Shape::LogLinear { e0, slope, offset } => {
                if !(e0.is_finite() && slope.is_finite()) {
                    return bad("non-finite parameter");
                }
                if !(offset > 0.0 && offset.is_finite()) {
                    return bad("log-linear offset must be positive");
                }
            }
            Shape::Flat { e0 } => {
                if !e0.is_finite() {
                    return bad("non-finite parameter");
                }
            }
        }
        Ok(())
    }

    /// Value at `dose` on the linear-predictor scale.
    pub fn eval(&self, dose: f64) -> Result<f64> {
        if !(dose >= 0.0 && dose.is_finite()) {
            return Err(Error::invalid(format!(
                "dose {dose} must be finite and >= 0"
            )));
        }
        let v = match self.shape {
            Shape::Emax { e0, emax, ed50 } => e0 + emax * dose / (ed50 + dose),
            Shape::SigEmax {
                e0,
                emax,
                ed50,
                hill,
            } => {
                let dh = dose.powf(hill);
                e0 + emax * dh / (ed50.powf(hill) + dh)
            }
            Shape::Beta {
                e0,
                emax,
                delta1,
                delta2,
                scale,
            } => {
                if dose > scale {
                    return Err(Error::invalid(format!(
                        "dose {dose} exceeds beta scale {scale}"
                    )));
                }
                let u = dose / scale;
                e0 + emax * beta(delta1, delta2) * u.powf(delta1) * (1.0 - u).powf(delta2)
            }
            Shape::Linear { e0, slope } => e0 + slope * dose,
            Shape::LogLinear { e0, slope, offset } => e0 + slope * (dose + offset).ln(),
            Shape::Flat { e0 } => e0,
        };
        Ok(v)
    }

    /// `(f(d_0), ..., f(d_{k-1}))` on the grid.
    pub fn standardized_shape(&self, grid: &DoseGrid) -> Result<Vec<f64>> {
        grid.doses().iter().map(|&d| self.eval(d)).collect()
    }
}

/// Non-empty list of candidate shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CandidateModel>", into = "Vec<CandidateModel>")]
pub struct CandidateSet {
    models: Vec<CandidateModel>,
}

impl CandidateSet {
    pub fn new(models: Vec<CandidateModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("candidate set is empty"));
        }
        for m in &models {
            m.validate()?;
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[CandidateModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Representative five-model set for a binary endpoint on a 0-100 mg
    /// grid: two Emax, two sigmoid Emax and one (non-monotone) beta shape.
    pub fn default_binary() -> Self {
        let models = vec![
            CandidateModel::named(
                "emax1",
                Shape::Emax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 5.0,
                },
            ),
            CandidateModel::named(
                "emax2",
                Shape::Emax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 25.0,
                },
            ),
            CandidateModel::named(
                "sigemax1",
                Shape::SigEmax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 25.0,
                    hill: 3.0,
                },
            ),
            CandidateModel::named(
                "sigemax2",
                Shape::SigEmax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 50.0,
                    hill: 5.0,
                },
            ),
            CandidateModel::named(
                "beta",
                Shape::Beta {
                    e0: 0.0,
                    emax: 1.0,
                    delta1: 1.0,
                    delta2: 1.0,
                    scale: 120.0,
                },
            ),
        ];
        Self::new(
            models
                .into_iter()
                .map(|m| m.expect("valid preset"))
                .collect(),
        )
        .expect("nonempty preset")
    }

    /// Flat, linear, log-linear, Emax and sigmoid Emax shapes for a
    /// continuous endpoint on a grid topping out near 1000.
    pub fn default_continuous() -> Self {
        let models = vec![
            CandidateModel::named("flat", Shape::Flat { e0: 0.0 }),
            CandidateModel::named(
                "linear",
                Shape::Linear {
                    e0: 0.0,
                    slope: 1.0,
                },
            ),
            CandidateModel::named(
                "loglinear",
                Shape::LogLinear {
                    e0: 0.0,
                    slope: 1.0,
                    offset: 10.0,
                },
            ),
            CandidateModel::named(
                "emax",
                Shape::Emax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 150.0,
                },
            ),
            CandidateModel::named(
                "sigemax",
                Shape::SigEmax {
                    e0: 0.0,
                    emax: 1.0,
                    ed50: 300.0,
                    hill: 3.0,
                },
            ),
        ];
        Self::new(
            models
                .into_iter()
                .map(|m| m.expect("valid preset"))
                .collect(),
        )
        .expect("nonempty preset")
    }
}

impl TryFrom<Vec<CandidateModel>> for CandidateSet {
    type Error = Error;
    fn try_from(v: Vec<CandidateModel>) -> Result<Self> {
        CandidateSet::new(v)
    }
}

impl From<CandidateSet> for Vec<CandidateModel> {
    fn from(s: CandidateSet) -> Self {
        s.models
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable inverse logit.
pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Intercept and maximum effect of an Emax truth hitting response rate `p0`
/// at placebo and `pk` at `d_max`, with the given ED50.
pub fn calibrate_emax(p0: f64, pk: f64, d_max: f64, ed50: f64) -> Result<(f64, f64)> {
    for (name, p) in [("p0", p0), ("pk", pk)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "{name}={p} must lie strictly in (0, 1)"
            )));
        }
    }
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::invalid("d_max must be positive"));
    }
    if !(ed50 > 0.0 && ed50.is_finite()) {
        return Err(Error::invalid("ed50 must be positive"));
    }
    let e0 = logit(p0);
    // logit(pk) = e0 + emax * d/(ed50 + d) is linear in emax.
    let emax = (logit(pk) - e0) * (ed50 + d_max) / d_max;
    Ok((e0, emax))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> DoseGrid {
        DoseGrid::new(vec![0.0, 10.0, 25.0, 100.0]).unwrap()
    }

    #[test]
    fn emax_at_placebo_is_e0() {
        let m = CandidateModel::emax(-1.39, 3.05, 10.0).unwrap();
        assert_eq!(m.eval(0.0).unwrap(), -1.39);
    }

    #[test]
    fn emax_trial_truth_reaches_eighty_percent() {
        let m = CandidateModel::emax(-1.39, 3.05, 10.0).unwrap();
        let p = inv_logit(m.eval(100.0).unwrap());
        assert!((p - 0.80).abs() < 0.005, "{p}");
    }

    #[test]
    fn sigemax_half_effect_at_ed50() {
        let m = CandidateModel::sig_emax(0.0, 1.0, 25.0, 3.0).unwrap();
        assert!((m.eval(25.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_rejects_dose_beyond_scale() {
        let m = CandidateModel::beta(0.0, 1.0, 1.0, 1.0, 120.0).unwrap();
        assert!(m.eval(121.0).is_err());
        assert!(m.eval(120.0).is_ok());
    }

    #[test]
    fn negative_dose_rejected() {
        assert!(CandidateModel::linear(0.0, 1.0)
            .unwrap()
            .eval(-1.0)
            .is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(CandidateModel::emax(0.0, 1.0, 0.0).is_err());
        assert!(CandidateModel::sig_emax(0.0, 1.0, 10.0, -1.0).is_err());
        assert!(CandidateModel::beta(0.0, 1.0, 0.0, 1.0, 120.0).is_err());
        assert!(CandidateSet::new(vec![]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::new(vec![0.0]).is_err());
        assert!(DoseGrid::new(vec![1.0, 2.0]).is_err());
        assert!(DoseGrid::new(vec![0.0, 5.0, 5.0]).is_err());
        assert_eq!(grid().k(), 4);
        assert_eq!(grid().arm_of(25.0), Some(2));
        assert_eq!(grid().arm_of(26.0), None);
    }

    #[test]
    fn calibration_matches_trial_values() {
        let (e0, emax) = calibrate_emax(0.2, 0.8, 100.0, 10.0).unwrap();
        assert!((e0 - (-1.386)).abs() < 1e-3);
        assert!((emax - 3.05).abs() < 5e-3, "{emax}");
    }

    #[test]
    fn calibration_equal_rates_gives_zero_slope() {
        for d in [1.0, 50.0, 1000.0] {
            let (e0, emax) = calibrate_emax(0.5, 0.5, d, 10.0).unwrap();
            assert_eq!(e0, 0.0);
            assert_eq!(emax, 0.0);
        }
    }

    #[test]
    fn calibration_recovers_target_rate() {
        for pk in [0.61, 0.364, 0.8, 0.05] {
            let (e0, emax) = calibrate_emax(0.2, pk, 100.0, 10.0).unwrap();
            let m = CandidateModel::emax(e0, emax, 10.0).unwrap();
            assert!((m.eval(100.0).unwrap() - logit(pk)).abs() < 1e-12);
            assert!((inv_logit(m.eval(100.0).unwrap()) - pk).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_boundary_rates() {
        assert!(calibrate_emax(0.0, 0.5, 100.0, 10.0).is_err());
        assert!(calibrate_emax(0.2, 1.0, 100.0, 10.0).is_err());
    }

    #[test]
    fn shapes_on_grid() {
        let flat = CandidateModel::flat(0.3);
        assert!(flat
            .standardized_shape(&grid())
            .unwrap()
            .iter()
            .all(|&v| v == 0.3));

        let lin = CandidateModel::linear(0.0, 1.0).unwrap();
        assert_eq!(
            lin.standardized_shape(&grid()).unwrap(),
            vec![0.0, 10.0, 25.0, 100.0]
        );

        let emax = CandidateModel::emax(0.0, 1.0, 10.0).unwrap();
        let mu = emax.standardized_shape(&grid()).unwrap();
        let expected = [0.0, 0.5, 25.0 / 35.0, 100.0 / 110.0];
        for (a, b) in mu.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn emax_family_monotone_on_fine_grid() {
        let models = [
            CandidateModel::emax(0.0, 2.0, 10.0).unwrap(),
            CandidateModel::sig_emax(-1.0, 0.7, 40.0, 4.0).unwrap(),
        ];
        for m in &models {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=10_000 {
                let v = m.eval(i as f64 * 0.01).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn beta_peaks_inside_scale() {
        for (d1, d2) in [(1.5, 2.0), (3.0, 1.2), (1.1, 1.1)] {
            let m = CandidateModel::beta(0.0, 1.0, d1, d2, 120.0).unwrap();
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
            for i in 0..=12_000 {
                let d = i as f64 * 0.01;
                let v = m.eval(d).unwrap();
                if v > best {
                    best = v;
                    arg = d;
                }
            }
            assert!(arg > 0.0 && arg < 120.0);
            // Mode of the kernel is scale * d1 / (d1 + d2).
            assert!((arg - 120.0 * d1 / (d1 + d2)).abs() < 0.02);
        }
    }

    #[test]
    fn candidate_config_roundtrip() {
        let set = CandidateSet::default_binary();
        let json = serde_json::to_string(&set).unwrap();
        let back: CandidateSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);
        let m: CandidateModel =
            serde_json::from_str(r#"{"shape":"sig_emax","ed50":25,"hill":3}"#).unwrap();
        assert_eq!(m.eval(25.0).unwrap(), 0.5);
    }
}
