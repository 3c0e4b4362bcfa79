//! Parametric families: density, score `u = grad log f`, information `i = -grad u`
//! and the metadata the estimators need (support, integration hints, an
//! unconstrained chart for the optimizer, robust starting values).

use std::f64::consts::PI;
use std::fmt::Debug;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EpdError, Result};
use crate::quadrature::IntegrandDomain;

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.482_602_218_505_602;

/// Model parameter vector in the model's own order and units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    RealLine,
    HalfLine { lower: f64 },
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::RealLine => x.is_finite(),
            Support::HalfLine { lower } => x.is_finite() && x >= lower,
        }
    }
}

pub trait Model: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    fn param_names(&self) -> Vec<String>;

    fn support(&self) -> Support;

    fn check_params(&self, theta: &[f64]) -> Result<()>;

    /// `ln f_theta(x)`; `-inf` outside the support. Parameters are assumed valid.
    fn log_density(&self, theta: &[f64], x: f64) -> f64;

    /// Writes `u_theta(x)` into `out` (length `param_dim`).
    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]);

    /// Writes `i_theta(x)` row-major into `out` (length `param_dim^2`).
    fn information_into(&self, theta: &[f64], x: f64, out: &mut [f64]);

    /// `sup_x f_theta(x)`.
    fn density_sup(&self, theta: &[f64]) -> f64;

    /// Integration range with center/scale hints matched to `f_theta`.
    fn domain(&self, theta: &[f64]) -> IntegrandDomain;

    /// Map into an unconstrained chart for simplex search.
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64>;

    fn from_unconstrained(&self, z: &[f64]) -> ParamVector;

    /// Initial simplex steps in the unconstrained chart.
    fn unconstrained_steps(&self, theta: &[f64]) -> Vec<f64>;

    /// Natural scale of each coordinate (used to standardize residual norms).
    fn param_scales(&self, theta: &[f64]) -> Vec<f64>;

    /// Robust starting value computed from data.
    fn initial_estimate(&self, data: &[f64]) -> Result<ParamVector>;

    fn density(&self, theta: &[f64], x: f64) -> Result<f64> {
        self.check_params(theta)?;
        if !self.support().contains(x) {
            return Ok(0.0);
        }
        Ok(self.log_density(theta, x).exp())
    }

    fn score(&self, theta: &[f64], x: f64) -> Result<DVector<f64>> {
        self.check_params(theta)?;
        let mut out = vec![0.0; self.param_dim()];
        self.score_into(theta, x, &mut out);
        Ok(DVector::from_vec(out))
    }

    fn information(&self, theta: &[f64], x: f64) -> Result<DMatrix<f64>> {
        self.check_params(theta)?;
        let p = self.param_dim();
        let mut out = vec![0.0; p * p];
        self.information_into(theta, x, &mut out);
        Ok(DMatrix::from_row_slice(p, p, &out))
    }

    /// Score components odd about the center of a symmetric density (for any
    /// valid `theta`); `None` when `f_theta` is not symmetric.
    fn odd_components(&self) -> Option<Vec<bool>> {
        None
    }

    /// Coordinates in which mean squared errors are summed, with the Jacobian
    /// of the map. Identity unless a model overrides it.
    fn report_transform(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        (theta.to_vec(), DMatrix::identity(theta.len(), theta.len()))
    }
}

pub(crate) fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn sorted(data: &[f64]) -> Vec<f64> {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median and normalized MAD.
pub fn median_mad(data: &[f64]) -> (f64, f64) {
    let s = sorted(data);
    let med = median(&s);
    let dev = sorted(&s.iter().map(|x| (x - med).abs()).collect::<Vec<_>>());
    (med, MAD_SCALE * median(&dev))
}

/// `N(mu, sigma^2)` with `theta = (mu, sigma^2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormalLocationScale;

impl Model for NormalLocationScale {
    fn name(&self) -> &'static str {
        "normal"
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "sigma2".into()]
    }

    fn odd_components(&self) -> Option<Vec<bool>> {
        Some(vec![true, false])
    }

    fn support(&self) -> Support {
        Support::RealLine
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 2 {
            return Err(EpdError::Parameter(format!(
                "normal model expects 2 parameters, got {}",
                theta.len()
            )));
        }
        if !theta[0].is_finite() || !(theta[1].is_finite() && theta[1] > 0.0) {
            return Err(EpdError::Parameter(format!(
                "normal model requires finite mu and sigma^2 > 0, got ({}, {})",
                theta[0], theta[1]
            )));
        }
        Ok(())
    }

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        let d = x - theta[0];
        -0.5 * (2.0 * PI * theta[1]).ln() - d * d / (2.0 * theta[1])
    }

    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let s2 = theta[1];
        let d = x - theta[0];
        out[0] = d / s2;
        out[1] = (d * d - s2) / (2.0 * s2 * s2);
    }

    fn information_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let s2 = theta[1];
        let d = x - theta[0];
        let s4 = s2 * s2;
        out[0] = 1.0 / s2;
        out[1] = d / s4;
        out[2] = d / s4;
        out[3] = d * d / (s4 * s2) - 0.5 / s4;
    }

    fn density_sup(&self, theta: &[f64]) -> f64 {
        1.0 / (2.0 * PI * theta[1]).sqrt()
    }

    fn domain(&self, theta: &[f64]) -> IntegrandDomain {
        IntegrandDomain::real_line(theta[0], theta[1].sqrt())
    }

    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0], theta[1].ln()]
    }

    fn from_unconstrained(&self, z: &[f64]) -> ParamVector {
        ParamVector(vec![z[0], z[1].exp()])
    }

    fn unconstrained_steps(&self, theta: &[f64]) -> Vec<f64> {
        vec![0.1 * theta[1].sqrt(), 0.2]
    }

    fn param_scales(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[1].sqrt(), theta[1]]
    }

    fn initial_estimate(&self, data: &[f64]) -> Result<ParamVector> {
        if data.len() < 2 {
            return Err(EpdError::Data(
                "normal model needs at least 2 observations".into(),
            ));
        }
        let (med, mut mad) = median_mad(data);
        if !(mad > 0.0) {
            let n = data.len() as f64;
            let mean = data.iter().sum::<f64>() / n;
            mad = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        }
        if !(mad > 0.0) {
            mad = 1.0;
        }
        Ok(ParamVector(vec![med, mad * mad]))
    }

    /// `(mu, sigma)`: location and scale share units, so their squared errors add.
    fn report_transform(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let s = theta[1].sqrt();
        (
            vec![theta[0], s],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5 / s]),
        )
    }
}

/// Exponential distribution parameterized by its mean `theta`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExponentialMean;

impl Model for ExponentialMean {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["mean".into()]
    }

    fn support(&self) -> Support {
        Support::HalfLine { lower: 0.0 }
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 1 {
            return Err(EpdError::Parameter(format!(
                "exponential model expects 1 parameter, got {}",
                theta.len()
            )));
        }
        if !(theta[0].is_finite() && theta[0] > 0.0) {
            return Err(EpdError::Parameter(format!(
                "exponential mean must be positive, got {}",
                theta[0]
            )));
        }
        Ok(())
    }

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        -theta[0].ln() - x / theta[0]
    }

    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let t = theta[0];
        out[0] = (x - t) / (t * t);
    }

    fn information_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let t = theta[0];
        out[0] = 2.0 * x / (t * t * t) - 1.0 / (t * t);
    }

    fn density_sup(&self, theta: &[f64]) -> f64 {
        1.0 / theta[0]
    }

    fn domain(&self, theta: &[f64]) -> IntegrandDomain {
        IntegrandDomain::half_line(0.0, theta[0])
    }

    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0].ln()]
    }

    fn from_unconstrained(&self, z: &[f64]) -> ParamVector {
        ParamVector(vec![z[0].exp()])
    }

    fn unconstrained_steps(&self, _theta: &[f64]) -> Vec<f64> {
        vec![0.2]
    }

    fn param_scales(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0]]
    }

    fn initial_estimate(&self, data: &[f64]) -> Result<ParamVector> {
        if data.is_empty() {
            return Err(EpdError::Data("empty sample".into()));
        }
        if let Some(bad) = data.iter().find(|x| **x < 0.0) {
            return Err(EpdError::Data(format!(
                "exponential model requires nonnegative data, found {bad}"
            )));
        }
        let med = median(&sorted(data));
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let start = if med > 0.0 { med / std::f64::consts::LN_2 } else { mean };
        if !(start > 0.0) {
            return Err(EpdError::Data("all observations are zero".into()));
        }
        Ok(ParamVector(vec![start]))
    }
}

/// Observation `i` of the normal linear model: `Y_i ~ N(x_i^T eta, sigma^2)`,
/// `theta = (eta_1, ..., eta_p, sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionObservation {
    pub covariates: Vec<f64>,
}

impl RegressionObservation {
    pub fn new(covariates: Vec<f64>) -> Self {
        RegressionObservation { covariates }
    }

    pub fn mean(&self, theta: &[f64]) -> f64 {
        self.covariates
            .iter()
            .zip(theta)
            .map(|(x, e)| x * e)
            .sum()
    }

    fn p(&self) -> usize {
        self.covariates.len()
    }
}

impl Model for RegressionObservation {
    fn name(&self) -> &'static str {
        "regression-normal"
    }

    fn param_dim(&self) -> usize {
        self.p() + 1
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.p()).map(|j| format!("eta{j}")).collect();
        v.push("sigma2".into());
        v
    }

    fn support(&self) -> Support {
        Support::RealLine
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() + 1 {
            return Err(EpdError::Parameter(format!(
                "regression observation expects {} parameters, got {}",
                self.p() + 1,
                theta.len()
            )));
        }
        let s2 = theta[self.p()];
        if theta.iter().any(|v| !v.is_finite()) || !(s2 > 0.0) {
            return Err(EpdError::Parameter(
                "regression parameters must be finite with sigma^2 > 0".into(),
            ));
        }
        Ok(())
    }

    fn log_density(&self, theta: &[f64], y: f64) -> f64 {
        NormalLocationScale.log_density(&[self.mean(theta), theta[self.p()]], y)
    }

    fn score_into(&self, theta: &[f64], y: f64, out: &mut [f64]) {
        let p = self.p();
        let s2 = theta[p];
        let r = y - self.mean(theta);
        for j in 0..p {
            out[j] = r / s2 * self.covariates[j];
        }
        out[p] = (r * r - s2) / (2.0 * s2 * s2);
    }

    fn information_into(&self, theta: &[f64], y: f64, out: &mut [f64]) {
        let p = self.p();
        let q = p + 1;
        let s2 = theta[p];
        let s4 = s2 * s2;
        let r = y - self.mean(theta);
        let x = &self.covariates;
        for j in 0..p {
            for k in 0..p {
                out[j * q + k] = x[j] * x[k] / s2;
            }
            out[j * q + p] = r * x[j] / s4;
            out[p * q + j] = r * x[j] / s4;
        }
        out[p * q + p] = r * r / (s4 * s2) - 0.5 / s4;
    }

    fn density_sup(&self, theta: &[f64]) -> f64 {
        1.0 / (2.0 * PI * theta[self.p()]).sqrt()
    }

    fn domain(&self, theta: &[f64]) -> IntegrandDomain {
        IntegrandDomain::real_line(self.mean(theta), theta[self.p()].sqrt())
    }

    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        z[self.p()] = theta[self.p()].ln();
        z
    }

    fn from_unconstrained(&self, z: &[f64]) -> ParamVector {
        let mut t = z.to_vec();
        t[self.p()] = z[self.p()].exp();
        ParamVector(t)
    }

    fn unconstrained_steps(&self, theta: &[f64]) -> Vec<f64> {
        let s = theta[self.p()].sqrt();
        let mut v: Vec<f64> = self
            .covariates
            .iter()
            .map(|x| 0.1 * s / x.abs().max(1.0))
            .collect();
        v.push(0.2);
        v
    }

    fn param_scales(&self, theta: &[f64]) -> Vec<f64> {
        let s2 = theta[self.p()];
        let mut v = vec![s2.sqrt(); self.p()];
        v.push(s2);
        v
    }

    fn initial_estimate(&self, _data: &[f64]) -> Result<ParamVector> {
        Err(EpdError::Estimation(
            "a single regression observation has no standalone starting value; use the regression solver".into(),
        ))
    }
}
