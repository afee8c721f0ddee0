//! Trial datasets: arm assignment, outcome and baseline covariates in
//! enrollment order.

use std::fmt::Write as _;
use std::io::Read;

use nalgebra::DMatrix;

use crate::dose_response::DoseGrid;
use crate::error::{Error, Result};
use crate::randomization::TreatmentSequence;

#[derive(Debug, Clone)]
pub struct TrialDataset {
    pub grid: DoseGrid,
    pub sequence: TreatmentSequence,
    pub outcome: Vec<f64>,
    /// `n x p` covariate matrix; `p` may be zero.
    pub covariates: DMatrix<f64>,
}

impl TrialDataset {
    pub fn new(
        grid: DoseGrid,
        sequence: TreatmentSequence,
        outcome: Vec<f64>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sequence.len();
        if outcome.len() != n || covariates.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} assignments, {} outcomes, {} covariate rows",
                outcome.len(),
                covariates.nrows()
            )));
        }
        if let Some(&a) = sequence.arms().iter().find(|&&a| a >= grid.k()) {
            return Err(Error::invalid(format!(
                "arm index {a} outside the dose grid"
            )));
        }
        if outcome
            .iter()
            .chain(covariates.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("outcomes and covariates must be finite"));
        }
        Ok(Self {
            grid,
            sequence,
            outcome,
            covariates,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.outcome.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// The same patients with covariates dropped.
    pub fn without_covariates(&self) -> Self {
        Self {
            covariates: DMatrix::zeros(self.n(), 0),
            ..self.clone()
        }
    }

    /// Reads `enrollment_index,dose,outcome,covariate_1..covariate_p`.
    /// Rows are sorted by enrollment index; doses must lie on the grid.
    pub fn from_csv<R: Read>(grid: DoseGrid, reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::invalid(format!("missing column `{name}`")))
        };
        let (ci, cd, co) = (col("enrollment_index")?, col("dose")?, col("outcome")?);
        let cov_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim().starts_with("covariate_"))
            .map(|(i, _)| i)
            .collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("row {}: bad numeric field", line + 1)))
            };
            let idx = field(ci)?;
            let dose = field(cd)?;
            let arm = grid.arm_of(dose).ok_or_else(|| {
                Error::invalid(format!("row {}: dose {dose} is not on the grid", line + 1))
            })?;
            let covs = cov_cols
                .iter()
                .map(|&c| field(c))
                .collect::<Result<Vec<_>>>()?;
            rows.push((idx, arm, field(co)?, covs));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = rows.len();
        let p = cov_cols.len();
        let covariates = DMatrix::from_fn(n, p, |i, j| rows[i].3[j]);
        let seq = TreatmentSequence(rows.iter().map(|r| r.1).collect());
        let outcome = rows.iter().map(|r| r.2).collect();
        Self::new(grid, seq, outcome, covariates)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("enrollment_index,dose,outcome");
        for j in 0..self.n_covariates() {
            let _ = write!(out, ",covariate_{}", j + 1);
        }
        out.push('\n');
        for i in 0..self.n() {
            let dose = self.grid.doses()[self.sequence.0[i]];
            let _ = write!(out, "{},{dose},{}", i + 1, self.outcome[i]);
            for j in 0..self.n_covariates() {
                let _ = write!(out, ",{}", self.covariates[(i, j)]);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> DoseGrid {
        DoseGrid::new(vec![0.0, 10.0, 25.0, 100.0]).unwrap()
    }

    #[test]
    fn csv_roundtrip_and_ordering() {
        let text =
            "enrollment_index,dose,outcome,covariate_1\n2,25,1,0.5\n1,0,0,-1.25\n3,100,1,2\n";
        let d = TrialDataset::from_csv(grid(), text.as_bytes()).unwrap();
        assert_eq!(d.sequence.0, vec![0, 2, 3]);
        assert_eq!(d.outcome, vec![0.0, 1.0, 1.0]);
        assert_eq!(d.covariates[(0, 0)], -1.25);
        let again = TrialDataset::from_csv(grid(), d.to_csv().as_bytes()).unwrap();
        assert_eq!(again.sequence, d.sequence);
        assert_eq!(again.covariates, d.covariates);
    }

    #[test]
    fn unknown_dose_rejected() {
        let text = "enrollment_index,dose,outcome\n1,50,0\n";
        let err = TrialDataset::from_csv(grid(), text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("not on the grid"));
    }
}
