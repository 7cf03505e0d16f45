//! Canonical dataset and packed parameter-vector types shared by all
//! downstream stages.
//!
//! A [`Dataset`] holds one row per subject: a binary exposure (reference
//! level 0, exposed level 1), covariate blocks `C1` (exposure-outcome
//! confounders), `C2` (exposure-mediator confounders) and `C3`
//! (outcome covariates, accepted but unused by the default outcome model),
//! an `n x p` matrix of nonnegative integer mediator counts, a positive
//! per-subject offset (total sequencing depth), and a continuous outcome.
//!
//! [`ThetaVector`] is the packed mediator-model parameter vector. For a
//! single `C2` column the packed length is `P = 5p + 1`, laid out as the
//! blocks `beta_z0 | beta_l0 | beta_0 | beta_1 | beta_2 | sigma_delta`.
//! With `r2` C2 columns the `beta_2` block widens to `r2` consecutive
//! length-`p` subblocks (column-major), giving `P = (4 + r2) p + 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("mediator count at row {row}, column {col} is not a nonnegative integer: {value}")]
    NonIntegerCount { row: usize, col: usize, value: f64 },
    #[error("missing value in column '{column}' at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("exposure column contains a single level; both 0 and 1 are required")]
    ConstantExposure,
    #[error("offset at row {row} is not positive: {value}")]
    NonPositiveOffset { row: usize, value: f64 },
    #[error("exposure at row {row} is not 0/1: {value}")]
    NonBinaryExposure { row: usize, value: f64 },
    #[error("column lengths disagree: {0}")]
    LengthMismatch(String),
}

/// Column roles for [`validate_dataset`]. Each entry is an index into the
/// raw table's columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub id: Option<usize>,
    pub exposure: usize,
    pub c1: Vec<usize>,
    pub c2: Vec<usize>,
    pub c3: Vec<usize>,
    pub mediators: Vec<usize>,
    pub offset: usize,
    pub outcome: usize,
}

/// Validated analysis dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subject_id: Vec<String>,
    /// Exposure A_i, encoded 0 (reference) / 1 (exposed).
    pub exposure: Vec<f64>,
    /// Exposure-outcome confounders, n x r1.
    pub c1: DMatrix<f64>,
    /// Exposure-mediator confounders, n x r2.
    pub c2: DMatrix<f64>,
    /// Outcome covariates, n x r3 (may have zero columns).
    pub c3: DMatrix<f64>,
    /// Raw mediator counts, n x p (validated nonnegative integers).
    pub mediators: DMatrix<f64>,
    /// Per-subject offset zeta_i > 0.
    pub offset: Vec<f64>,
    /// Continuous outcome Y_i.
    pub outcome: Vec<f64>,
}

/// Summary metadata reported by [`validate_dataset`].
#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub p: usize,
    pub zero_proportion: Vec<f64>,
    pub offset_min: f64,
    pub offset_max: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.mediators.ncols()
    }

    /// Per-taxon proportion of zero counts.
    pub fn zero_proportions(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.p())
            .map(|j| self.mediators.column(j).iter().filter(|&&m| m == 0.0).count() as f64 / n)
            .collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            n: self.n(),
            p: self.p(),
            zero_proportion: self.zero_proportions(),
            offset_min: self.offset.iter().cloned().fold(f64::INFINITY, f64::min),
            offset_max: self.offset.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Checks all invariants on already-typed fields. Used both by
    /// [`validate_dataset`] and by constructors of simulated data.
    pub fn validate(self) -> Result<Dataset, DataError> {
        let n = self.outcome.len();
        let same = [
            ("subject_id", self.subject_id.len()),
            ("exposure", self.exposure.len()),
            ("c1", self.c1.nrows()),
            ("c2", self.c2.nrows()),
            ("c3", self.c3.nrows()),
            ("mediators", self.mediators.nrows()),
            ("offset", self.offset.len()),
        ];
        for (name, len) in same {
            if len != n {
                return Err(DataError::LengthMismatch(format!(
                    "{name} has {len} rows, outcome has {n}"
                )));
            }
        }
        for (row, &a) in self.exposure.iter().enumerate() {
            if a.is_nan() {
                return Err(DataError::MissingValue { column: "exposure".into(), row });
            }
            if a != 0.0 && a != 1.0 {
                return Err(DataError::NonBinaryExposure { row, value: a });
            }
        }
        if !self.exposure.contains(&0.0) || !self.exposure.contains(&1.0) {
            return Err(DataError::ConstantExposure);
        }
        for (row, &z) in self.offset.iter().enumerate() {
            if z.is_nan() {
                return Err(DataError::MissingValue { column: "offset".into(), row });
            }
            if z <= 0.0 {
                return Err(DataError::NonPositiveOffset { row, value: z });
            }
        }
        for row in 0..n {
            for col in 0..self.mediators.ncols() {
                let m = self.mediators[(row, col)];
                if m.is_nan() {
                    return Err(DataError::MissingValue { column: format!("mediator {col}"), row });
                }
                if m < 0.0 || m.fract() != 0.0 || !m.is_finite() {
                    return Err(DataError::NonIntegerCount { row, col, value: m });
                }
            }
        }
        for (name, mat) in [("c1", &self.c1), ("c2", &self.c2), ("c3", &self.c3)] {
            for row in 0..mat.nrows() {
                for col in 0..mat.ncols() {
                    if !mat[(row, col)].is_finite() {
                        return Err(DataError::MissingValue { column: format!("{name}[{col}]"), row });
                    }
                }
            }
        }
        for (row, &y) in self.outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::MissingValue { column: "outcome".into(), row });
            }
        }
        Ok(self)
    }
}

/// Builds a validated [`Dataset`] from a raw table (rows of f64 cells, NaN for
/// missing) and a column-role schema.
pub fn validate_dataset(
    raw: &[Vec<f64>],
    ids: Option<&[String]>,
    schema: &Schema,
) -> Result<(Dataset, DatasetSummary), DataError> {
    let n = raw.len();
    let col = |idx: usize| -> Vec<f64> { raw.iter().map(|r| r[idx]).collect() };
    let mat = |idxs: &[usize]| -> DMatrix<f64> {
        DMatrix::from_fn(n, idxs.len(), |r, c| raw[r][idxs[c]])
    };
    let subject_id = match ids {
        Some(v) => v.to_vec(),
        None => (0..n).map(|i| i.to_string()).collect(),
    };
    let ds = Dataset {
        subject_id,
        exposure: col(schema.exposure),
        c1: mat(&schema.c1),
        c2: mat(&schema.c2),
        c3: mat(&schema.c3),
        mediators: mat(&schema.mediators),
        offset: col(schema.offset),
        outcome: col(schema.outcome),
    }
    .validate()?;
    let summary = ds.summary();
    Ok((ds, summary))
}

/// Packed mediator-model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub beta_z0: Vec<f64>,
    pub beta_l0: Vec<f64>,
    pub beta_0: Vec<f64>,
    pub beta_1: Vec<f64>,
    /// p x r2 block; column k holds the slopes on the k-th C2 column.
    pub beta_2: DMatrix<f64>,
    pub sigma_delta: f64,
}

impl ThetaVector {
    pub fn zeros(p: usize, r2: usize) -> Self {
        ThetaVector {
            beta_z0: vec![0.0; p],
            beta_l0: vec![0.0; p],
            beta_0: vec![0.0; p],
            beta_1: vec![0.0; p],
            beta_2: DMatrix::zeros(p, r2),
            sigma_delta: 0.0,
        }
    }

    pub fn p(&self) -> usize {
        self.beta_0.len()
    }

    pub fn r2(&self) -> usize {
        self.beta_2.ncols()
    }

    /// Packed length P = (4 + r2) p + 1.
    pub fn packed_len(&self) -> usize {
        packed_len(self.p(), self.r2())
    }

    /// Linear predictor of the conditional mean on the log scale,
    /// excluding the random effect: beta_0j + beta_1j a + beta_2j' c2 + ln(zeta).
    pub fn eta(&self, j: usize, a: f64, c2_row: &[f64], offset: f64) -> f64 {
        let mut eta = self.beta_0[j] + self.beta_1[j] * a + offset.ln();
        for (k, &c) in c2_row.iter().enumerate() {
            eta += self.beta_2[(j, k)] * c;
        }
        eta
    }
}

pub fn packed_len(p: usize, r2: usize) -> usize {
    (4 + r2) * p + 1
}

/// Packs the parameter blocks into a single vector with the documented layout.
pub fn pack_theta(theta: &ThetaVector) -> Vec<f64> {
    let p = theta.p();
    let mut v = Vec::with_capacity(theta.packed_len());
    v.extend_from_slice(&theta.beta_z0);
    v.extend_from_slice(&theta.beta_l0);
    v.extend_from_slice(&theta.beta_0);
    v.extend_from_slice(&theta.beta_1);
    for k in 0..theta.r2() {
        for j in 0..p {
            v.push(theta.beta_2[(j, k)]);
        }
    }
    v.push(theta.sigma_delta);
    v
}

/// Inverse of [`pack_theta`]. The packed length must equal `(4 + r2) p + 1`.
pub fn unpack_theta(v: &[f64], p: usize, r2: usize) -> Result<ThetaVector, DataError> {
    if v.len() != packed_len(p, r2) {
        return Err(DataError::LengthMismatch(format!(
            "packed vector has length {}, expected {} for p={p}, r2={r2}",
            v.len(),
            packed_len(p, r2)
        )));
    }
    let block = |b: usize| v[b * p..(b + 1) * p].to_vec();
    let beta_2 = DMatrix::from_fn(p, r2, |j, k| v[(4 + k) * p + j]);
    Ok(ThetaVector {
        beta_z0: block(0),
        beta_l0: block(1),
        beta_0: block(2),
        beta_1: block(3),
        beta_2,
        sigma_delta: v[v.len() - 1],
    })
}

/// Fitted logistic exposure model.
#[derive(Debug, Clone)]
pub struct ExposureFit {
    /// Intercept followed by one slope per C1 column.
    pub alpha: Vec<f64>,
    /// P(A=1 | C1_i) per subject.
    pub fitted_prob: Vec<f64>,
    /// (P(A=1), P(A=0)), each the average of the fitted probabilities.
    pub marginal_prob: (f64, f64),
}

impl ExposureFit {
    /// P(A = a | C1_i).
    pub fn conditional(&self, i: usize, a: f64) -> f64 {
        if a == 1.0 {
            self.fitted_prob[i]
        } else {
            1.0 - self.fitted_prob[i]
        }
    }

    /// Marginal P(A = a).
    pub fn marginal(&self, a: f64) -> f64 {
        if a == 1.0 {
            self.marginal_prob.0
        } else {
            self.marginal_prob.1
        }
    }
}
