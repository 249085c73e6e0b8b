//! Ordinary least squares on log-log tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// y = intercept + slope * x fitted by ordinary least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
    /// Root mean square of the residuals y - fit.
    pub rms_residual: f64,
    /// One-sided 95% lower confidence bound on the slope.
    pub slope_lower95: f64,
    pub points: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LinearFit {
    /// Residual of a log-log fit read as a relative error, exp(rms) - 1.
    pub fn relative_residual(&self) -> f64 {
        self.rms_residual.exp_m1()
    }
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Data(format!(
            "fit needs paired data, got {} and {}",
            n,
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::Data("fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in fit table".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("fit abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let rms_residual = (sse / nf).sqrt();
    let (slope_se, slope_lower95) = if n > 2 {
        let dof = nf - 2.0;
        let se = (sse / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .inverse_cdf(0.95);
        (se, slope - t * se)
    } else {
        (f64::INFINITY, f64::NEG_INFINITY)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        rms_residual,
        slope_lower95,
        points: n,
        x: x.to_vec(),
        y: y.to_vec(),
    })
}

/// Fit of ln(value) against ln(scale).
pub fn loglog(scales: &[f64], values: &[f64]) -> Result<LinearFit> {
    if scales.iter().chain(values).any(|v| !(*v > 0.0)) {
        return Err(Error::Data("log-log fit needs positive data".into()));
    }
    let x: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    ols(&x, &y)
}
