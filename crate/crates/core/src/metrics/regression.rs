//! Fixed-effects least squares of per-patient kappa on standardized patient
//! covariates with dataset dummies.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{MetricsError, Result};
use crate::records::{PatientMeta, Sex};

const MIN_PATIENTS: usize = 10;
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTerm {
    pub name: String,
    pub coef: f64,
    pub std_err: f64,
    pub t: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub dof: usize,
    pub r_squared: f64,
    pub terms: Vec<RegressionTerm>,
    /// Columns removed because they were constant or collinear with earlier ones.
    pub dropped: Vec<String>,
    /// Patients left out for missing covariates.
    pub excluded: usize,
}

impl RegressionReport {
    pub fn term(&self, name: &str) -> Option<&RegressionTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd > 0.0 {
        v.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn dummies(prefix: &str, levels: &[String]) -> Vec<(String, Vec<f64>)> {
    let distinct: BTreeSet<&String> = levels.iter().collect();
    // first level (sorted) is the reference
    distinct
        .into_iter()
        .skip(1)
        .map(|lvl| {
            (
                format!("{prefix}[{lvl}]"),
                levels.iter().map(|l| if l == lvl { 1.0 } else { 0.0 }).collect(),
            )
        })
        .collect()
}

/// Regresses `kappas` on z-scored age, AHI and BMI, a male indicator and
/// one-hot ethnicity and dataset terms. Patients lacking age, AHI, BMI or a
/// known sex are excluded; a missing ethnicity is its own level.
pub fn error_regression(kappas: &[f64], meta: &[PatientMeta], datasets: &[String]) -> Result<RegressionReport> {
    if kappas.len() != meta.len() {
        return Err(MetricsError::LengthMismatch(kappas.len(), meta.len()));
    }
    if kappas.len() != datasets.len() {
        return Err(MetricsError::LengthMismatch(kappas.len(), datasets.len()));
    }
    let keep: Vec<usize> = (0..kappas.len())
        .filter(|&i| {
            let m = &meta[i];
            m.age.is_some() && m.ahi.is_some() && m.bmi.is_some() && m.sex != Sex::Unknown && kappas[i].is_finite()
        })
        .collect();
    if keep.len() < MIN_PATIENTS {
        return Err(MetricsError::InsufficientData {
            needed: MIN_PATIENTS,
            got: keep.len(),
        });
    }
    let col = |f: &dyn Fn(&PatientMeta) -> f64| zscore(&keep.iter().map(|&i| f(&meta[i])).collect::<Vec<_>>());
    let mut columns = vec![
        ("age".to_string(), col(&|m| m.age.unwrap())),
        (
            "sex[male]".to_string(),
            keep.iter().map(|&i| if meta[i].sex == Sex::Male { 1.0 } else { 0.0 }).collect(),
        ),
        ("ahi".to_string(), col(&|m| m.ahi.unwrap())),
        ("bmi".to_string(), col(&|m| m.bmi.unwrap())),
    ];
    let eth: Vec<String> = keep
        .iter()
        .map(|&i| meta[i].ethnicity.clone().unwrap_or_else(|| "unspecified".into()))
        .collect();
    columns.extend(dummies("ethnicity", &eth));
    let ds: Vec<String> = keep.iter().map(|&i| datasets[i].clone()).collect();
    columns.extend(dummies("dataset", &ds));
    let y: Vec<f64> = keep.iter().map(|&i| kappas[i]).collect();
    let mut report = ols(&columns, &y)?;
    report.excluded = kappas.len() - keep.len();
    Ok(report)
}

/// Ordinary least squares with an intercept. Columns that are (numerically)
/// in the span of the intercept and earlier columns are dropped and listed.
pub fn ols(columns: &[(String, Vec<f64>)], y: &[f64]) -> Result<RegressionReport> {
    let n = y.len();
    let mut kept: Vec<(String, Vec<f64>)> = vec![("intercept".into(), vec![1.0; n])];
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut dropped = Vec::new();
    for (name, c) in columns {
        if c.len() != n {
            return Err(MetricsError::LengthMismatch(c.len(), n));
        }
        let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = c.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= COLLINEAR_TOL * norm0.max(1.0) {
            dropped.push(name.clone());
            continue;
        }
        basis.push(r.into_iter().map(|v| v / norm).collect());
        kept.push((name.clone(), c.clone()));
    }
    let p = kept.len();
    if n <= p {
        return Err(MetricsError::InsufficientData { needed: p + 1, got: n });
    }
    let x = DMatrix::from_fn(n, p, |i, j| kept[j].1[i]);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let inv = xtx.cholesky().ok_or(MetricsError::Singular)?.inverse();
    let beta = &inv * x.transpose() * &yv;
    let resid = &yv - &x * &beta;
    let rss = resid.norm_squared();
    let dof = n - p;
    let sigma2 = rss / dof as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let t_dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|_| MetricsError::Singular)?;
    let terms = kept
        .iter()
        .enumerate()
        .map(|(j, (name, _))| {
            let se = (sigma2 * inv[(j, j)]).sqrt();
            let t = if se > 0.0 { beta[j] / se } else { f64::INFINITY * beta[j].signum() };
            let p_value = if t.is_finite() {
                (2.0 * (1.0 - t_dist.cdf(t.abs()))).min(1.0)
            } else {
                0.0
            };
            RegressionTerm {
                name: name.clone(),
                coef: beta[j],
                std_err: se,
                t,
                p_value,
            }
        })
        .collect();
    Ok(RegressionReport {
        n,
        dof,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        terms,
        dropped,
        excluded: 0,
    })
}
