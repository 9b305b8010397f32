//! Experiment data: ingestion, validation and summary diagnostics.
//!
//! An [`ExperimentData`] holds observed outcomes `y`, takeups `d`, the
//! assignment `z` of a completely randomized experiment, and optionally a
//! covariate matrix. Covariates are centered once, at construction, and every
//! downstream computation relies on that.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the covariate centering check.
pub const CENTERING_TOL: f64 = 1e-10;

/// Observed data from one completely randomized experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    y: Vec<f64>,
    d: Vec<u8>,
    z: Vec<u8>,
    x: Option<DMatrix<f64>>,
    n1: usize,
}

impl ExperimentData {
    /// Validates and builds a data set. With `demean`, covariate columns are
    /// centered; without it they must already be centered.
    pub fn new(
        y: Vec<f64>,
        d: Vec<u8>,
        z: Vec<u8>,
        x: Option<DMatrix<f64>>,
        demean: bool,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.len() != n {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: y={}, d={}, z={}",
                n,
                d.len(),
                z.len()
            )));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: row + 1, col: "y".into() });
        }
        if let Some(row) = d.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryColumn { name: "d".into(), row: row + 1 });
        }
        if let Some(row) = z.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryColumn { name: "z".into(), row: row + 1 });
        }
        let n1 = z.iter().filter(|&&v| v == 1).count();
        check_design(n, n1)?;

        let x = match x {
            Some(mut m) => {
                if m.nrows() != n {
                    return Err(Error::InvalidArgument(format!(
                        "covariate matrix has {} rows, expected {}",
                        m.nrows(),
                        n
                    )));
                }
                for (j, col) in m.column_iter().enumerate() {
                    if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteValue { row: row + 1, col: format!("x{}", j + 1) });
                    }
                }
                for j in 0..m.ncols() {
                    if !column_is_centered(m.column(j).as_slice()) {
                        if !demean {
                            return Err(Error::InvalidArgument(format!(
                                "covariate column {} is not centered",
                                j + 1
                            )));
                        }
                        let mean = m.column(j).mean();
                        m.column_mut(j).add_scalar_mut(-mean);
                    }
                }
                if m.ncols() == 0 {
                    None
                } else {
                    Some(m)
                }
            }
            None => None,
        };

        Ok(Self { y, d, z, x, n1 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n() - self.n1
    }

    /// Treated share `n1 / n`.
    pub fn pi(&self) -> f64 {
        self.n1 as f64 / self.n() as f64
    }

    /// Number of covariates.
    pub fn k(&self) -> usize {
        self.x.as_ref().map_or(0, |m| m.ncols())
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn x(&self) -> Option<&DMatrix<f64>> {
        self.x.as_ref()
    }

    /// Takeups as reals.
    pub fn d_f64(&self) -> Vec<f64> {
        self.d.iter().map(|&v| f64::from(v)).collect()
    }

    /// Same data with covariates dropped.
    pub fn without_covariates(&self) -> Self {
        Self { x: None, ..self.clone() }
    }

    /// Writes the data as CSV with columns `Y,D,Z,X1..Xk`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["Y".to_string(), "D".to_string(), "Z".to_string()];
        header.extend((1..=self.k()).map(|j| format!("X{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.y[i]), self.d[i].to_string(), self.z[i].to_string()];
            if let Some(x) = &self.x {
                rec.extend((0..x.ncols()).map(|j| format!("{}", x[(i, j)])));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Both arms must hold at least two units so each group variance is defined.
pub(crate) fn check_design(n: usize, n1: usize) -> Result<()> {
    if n1 < 2 || n < n1 + 2 {
        return Err(Error::DegenerateDesign(format!(
            "need 2 <= n1 <= n - 2, got n = {n}, n1 = {n1}"
        )));
    }
    Ok(())
}

fn column_is_centered(col: &[f64]) -> bool {
    let sum: f64 = col.iter().sum();
    let max = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    sum.abs() <= CENTERING_TOL * (1.0 + max)
}

/// Names of the CSV columns to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub y: String,
    pub d: String,
    pub z: String,
    pub x: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { y: "Y".into(), d: "D".into(), z: "Z".into(), x: Vec::new() }
    }
}

/// Reads a headered CSV file into validated [`ExperimentData`].
pub fn load_csv<P: AsRef<Path>>(path: P, colmap: &ColumnMap, demean: bool) -> Result<ExperimentData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let iy = find(&colmap.y)?;
    let id = find(&colmap.d)?;
    let iz = find(&colmap.z)?;
    let ix = colmap.x.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        y.push(parse_real(&rec, iy, row, &colmap.y)?);
        d.push(parse_binary(&rec, id, row, &colmap.d)?);
        z.push(parse_binary(&rec, iz, row, &colmap.z)?);
        for (&j, name) in ix.iter().zip(&colmap.x) {
            xs.push(parse_real(&rec, j, row, name)?);
        }
    }
    let x = if ix.is_empty() { None } else { Some(DMatrix::from_row_slice(y.len(), ix.len(), &xs)) };
    ExperimentData::new(y, d, z, x, demean)
}

fn parse_real(rec: &csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<f64> {
    rec.get(idx)
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonFiniteValue { row, col: col.to_string() })
}

fn parse_binary(rec: &csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<u8> {
    match rec.get(idx).and_then(|s| s.parse::<f64>().ok()) {
        Some(0.0) => Ok(0),
        Some(1.0) => Ok(1),
        _ => Err(Error::NonBinaryColumn { name: col.to_string(), row }),
    }
}

/// Sample-level summary of takeup by arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDiagnostics {
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub k: usize,
    pub takeup_rate_treated: f64,
    pub takeup_rate_control: f64,
    pub estimated_compliance: f64,
    /// Aggregate necessary condition for monotonicity; a warning, never an error.
    pub monotonicity_flag: bool,
}

pub fn diagnose(data: &ExperimentData) -> DataDiagnostics {
    let (mut t1, mut t0) = (0usize, 0usize);
    for (&d, &z) in data.d.iter().zip(&data.z) {
        if d == 1 {
            if z == 1 {
                t1 += 1;
            } else {
                t0 += 1;
            }
        }
    }
    let treated = t1 as f64 / data.n1() as f64;
    let control = t0 as f64 / data.n0() as f64;
    DataDiagnostics {
        n: data.n(),
        n1: data.n1(),
        n0: data.n0(),
        k: data.k(),
        takeup_rate_treated: treated,
        takeup_rate_control: control,
        estimated_compliance: treated - control,
        monotonicity_flag: treated >= control,
    }
}
