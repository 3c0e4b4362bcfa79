//! The exponential-polynomial generating function
//!
//! ```text
//! B(t) = beta * (exp(alpha t) - 1 - alpha t) / alpha^2 + (1 - beta) * (t^(gamma+1) - t) / gamma
//! ```
//!
//! together with its first two derivatives and the induced weight
//! `w(t) = t B''(t) = beta t exp(alpha t) + (1 - beta)(gamma + 1) t^gamma`.
//!
//! `beta = 0` gives the density power divergence with power `gamma`,
//! `beta = 1` the Bregman exponential divergence with exponent `alpha`, and
//! `beta = 0, gamma -> 0` the Kullback-Leibler divergence (maximum likelihood).
//!
//! Every function has a `*_log` twin taking `ln t` instead of `t`. Estimation
//! code uses those so that a density that underflows to zero far in the tails
//! still produces the right limit (for example `B'(t) -> ln t + 1` in the
//! likelihood case).

use serde::{Deserialize, Serialize};

use crate::error::{EpdError, Result};

/// Below this `gamma` the polynomial summand switches to its `t ln t` limit.
pub const GAMMA_LIMIT: f64 = 1e-6;
/// Below this `|alpha|` the exponential summand switches to its quadratic limit.
pub const ALPHA_LIMIT: f64 = 1e-8;
/// Largest exponent passed to `exp` before reporting [`EpdError::Overflow`].
pub const EXP_LIMIT: f64 = 700.0;

/// `|alpha t|` below which series expansions replace the closed forms that cancel.
const SERIES_LIMIT: f64 = 1e-2;

/// Tuning parameters `(alpha, beta, gamma)` selecting one member of the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Triplet {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let trip = Triplet { alpha, beta, gamma };
        trip.validate()?;
        Ok(trip)
    }

    /// Density power divergence with power `gamma` (`alpha` is irrelevant and set to 0).
    pub fn dpd(gamma: f64) -> Self {
        Triplet {
            alpha: 0.0,
            beta: 0.0,
            gamma,
        }
    }

    /// Bregman exponential divergence with exponent `alpha`.
    pub fn bed(alpha: f64) -> Self {
        Triplet {
            alpha,
            beta: 1.0,
            gamma: 0.0,
        }
    }

    /// Kullback-Leibler member: the minimizer is the maximum likelihood estimate.
    pub fn kl() -> Self {
        Triplet::dpd(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()) {
            return Err(EpdError::Parameter(format!(
                "triplet components must be finite, got ({}, {}, {})",
                self.alpha, self.beta, self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(EpdError::Parameter(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.gamma < 0.0 {
            return Err(EpdError::Parameter(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// True when the exponential summand is absent.
    pub fn is_dpd(&self) -> bool {
        self.beta == 0.0
    }

    /// True when the member is (numerically) the likelihood one.
    pub fn is_kl(&self) -> bool {
        self.beta == 0.0 && self.gamma < GAMMA_LIMIT
    }

    fn has_exp(&self) -> bool {
        self.beta > 0.0
    }

    fn has_poly(&self) -> bool {
        self.beta < 1.0
    }
}

impl std::fmt::Display for Triplet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(alpha={}, beta={}, gamma={})",
            self.alpha, self.beta, self.gamma
        )
    }
}

fn check_t(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(EpdError::Domain(format!(
            "generating function argument must be nonnegative, got {t}"
        )));
    }
    Ok(())
}

fn check_log(log_t: f64) -> Result<()> {
    if log_t.is_nan() || log_t == f64::INFINITY {
        return Err(EpdError::Domain(format!("invalid log argument {log_t}")));
    }
    Ok(())
}

fn exp_checked(x: f64) -> Result<f64> {
    if x > EXP_LIMIT {
        return Err(EpdError::Overflow(x));
    }
    Ok(x.exp())
}

/// `(t^(gamma+1) - t) / gamma` and its `t ln t` limit.
fn poly_b(t: f64, log_t: f64, gamma: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if gamma < GAMMA_LIMIT {
        t * log_t * (1.0 + 0.5 * gamma * log_t)
    } else {
        t * (gamma * log_t).exp_m1() / gamma
    }
}

/// `((gamma+1) t^gamma - 1) / gamma` and its `ln t + 1` limit.
fn poly_b1(log_t: f64, gamma: f64) -> f64 {
    if gamma < GAMMA_LIMIT {
        if log_t == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        log_t * (1.0 + 0.5 * gamma * log_t) + (gamma * log_t).exp()
    } else {
        (gamma * log_t).exp_m1() / gamma + (gamma * log_t).exp()
    }
}

/// `(gamma+1) t^(gamma-1)`, infinite at `t = 0` when `gamma < 1`.
fn poly_b2(t: f64, log_t: f64, gamma: f64) -> f64 {
    if t == 0.0 && log_t == f64::NEG_INFINITY {
        return if gamma < 1.0 {
            f64::INFINITY
        } else if gamma == 1.0 {
            2.0
        } else {
            0.0
        };
    }
    (gamma + 1.0) * ((gamma - 1.0) * log_t).exp()
}

/// `(gamma+1) t^gamma`, with `t^0 = 1` at `t = 0` for the likelihood member.
fn poly_w(log_t: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    (gamma + 1.0) * (gamma * log_t).exp()
}

/// `(exp(alpha t) - 1 - alpha t) / alpha^2`.
fn exp_b(t: f64, alpha: f64) -> Result<f64> {
    let x = alpha * t;
    if x.abs() < SERIES_LIMIT {
        let s = 0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)));
        return Ok(t * t * s);
    }
    let e = exp_checked(x)?;
    Ok((e - 1.0 - x) / (alpha * alpha))
}

/// `(exp(alpha t) - 1) / alpha`.
fn exp_b1(t: f64, alpha: f64) -> Result<f64> {
    if alpha.abs() < ALPHA_LIMIT {
        return Ok(t * (1.0 + 0.5 * alpha * t));
    }
    let x = alpha * t;
    if x > EXP_LIMIT {
        return Err(EpdError::Overflow(x));
    }
    Ok(x.exp_m1() / alpha)
}

/// `t B'(t) - B(t)` for the exponential summand: `(exp(x)(x - 1) + 1) / alpha^2`.
fn exp_conj(t: f64, alpha: f64) -> Result<f64> {
    let x = alpha * t;
    if x.abs() < SERIES_LIMIT {
        let s = 0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0)));
        return Ok(t * t * s);
    }
    let e = exp_checked(x)?;
    Ok((e * (x - 1.0) + 1.0) / (alpha * alpha))
}

/// `t exp(alpha t)` evaluated in log space so that tiny `t` never overflows.
fn exp_w(log_t: f64, alpha: f64) -> Result<f64> {
    if log_t == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let t = log_t.exp();
    let expo = log_t + alpha * t;
    if expo > EXP_LIMIT {
        return Err(EpdError::Overflow(alpha * t));
    }
    Ok(expo.exp())
}

fn log_of(t: f64) -> f64 {
    if t == 0.0 {
        f64::NEG_INFINITY
    } else {
        t.ln()
    }
}

/// `B(t)`.
pub fn b_value(t: f64, trip: &Triplet) -> Result<f64> {
    check_t(t)?;
    trip.validate()?;
    let log_t = log_of(t);
    let mut v = 0.0;
    if trip.has_exp() {
        v += trip.beta * exp_b(t, trip.alpha)?;
    }
    if trip.has_poly() {
        v += (1.0 - trip.beta) * poly_b(t, log_t, trip.gamma);
    }
    Ok(v)
}

/// `B'(t)`; equals `-infinity` at `t = 0` for the likelihood member.
pub fn b_prime(t: f64, trip: &Triplet) -> Result<f64> {
    check_t(t)?;
    b_prime_log(log_of(t), trip)
}

/// `B'(t)` from `ln t`.
pub fn b_prime_log(log_t: f64, trip: &Triplet) -> Result<f64> {
    check_log(log_t)?;
    trip.validate()?;
    let t = log_t.exp();
    let mut v = 0.0;
    if trip.has_exp() {
        v += trip.beta * exp_b1(t, trip.alpha)?;
    }
    if trip.has_poly() {
        v += (1.0 - trip.beta) * poly_b1(log_t, trip.gamma);
    }
    Ok(v)
}

/// `B''(t)`. At `t = 0` with `gamma < 1` and `beta < 1` the value is
/// `+infinity`, which marks the boundary rather than an error.
pub fn b_second(t: f64, trip: &Triplet) -> Result<f64> {
    check_t(t)?;
    trip.validate()?;
    let log_t = log_of(t);
    let mut v = 0.0;
    if trip.has_exp() {
        v += trip.beta * exp_checked(trip.alpha * t)?;
    }
    if trip.has_poly() {
        v += (1.0 - trip.beta) * poly_b2(t, log_t, trip.gamma);
    }
    Ok(v)
}

/// Weight `w(t) = t B''(t)` attached to the score in the estimating equation.
pub fn weight(t: f64, trip: &Triplet) -> Result<f64> {
    check_t(t)?;
    weight_log(log_of(t), trip)
}

/// `w(t)` from `ln t`.
pub fn weight_log(log_t: f64, trip: &Triplet) -> Result<f64> {
    check_log(log_t)?;
    let mut v = 0.0;
    if trip.has_exp() {
        v += trip.beta * exp_w(log_t, trip.alpha)?;
    }
    if trip.has_poly() {
        v += (1.0 - trip.beta) * poly_w(log_t, trip.gamma);
    }
    Ok(v)
}

/// `t w'(t)`, the factor multiplying `u u^T` when differentiating `u w(f)`.
pub fn weight_slope_log(log_t: f64, trip: &Triplet) -> Result<f64> {
    check_log(log_t)?;
    let mut v = 0.0;
    if trip.has_exp() {
        let t = log_t.exp();
        v += trip.beta * exp_w(log_t, trip.alpha)? * (1.0 + trip.alpha * t);
    }
    if trip.has_poly() && trip.gamma > 0.0 {
        v += (1.0 - trip.beta) * trip.gamma * poly_w(log_t, trip.gamma);
    }
    Ok(v)
}

/// `t B'(t) - B(t)`, the integrand of the parameter-dependent constant in the
/// empirical objective.
pub fn conjugate(t: f64, trip: &Triplet) -> Result<f64> {
    check_t(t)?;
    let mut v = 0.0;
    if trip.has_exp() {
        v += trip.beta * exp_conj(t, trip.alpha)?;
    }
    if trip.has_poly() {
        let log_t = log_of(t);
        v += (1.0 - trip.beta) * if t == 0.0 { 0.0 } else { ((trip.gamma + 1.0) * log_t).exp() };
    }
    Ok(v)
}

/// Largest `alpha * t` reached for densities bounded by `sup`; used to reject
/// triplets that would overflow before any integration starts.
pub fn check_exp_range(trip: &Triplet, sup: f64) -> Result<()> {
    if trip.has_exp() && trip.alpha * sup > EXP_LIMIT {
        return Err(EpdError::Overflow(trip.alpha * sup));
    }
    Ok(())
}
