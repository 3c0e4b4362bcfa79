//! Sandwich matrices `J`, `K`, `xi`, the influence function, gross error
//! sensitivity, the empirical sandwich variance and the asymptotic summed MSE.
//!
//! With `T(x) = u(x) w(f(x))` and `A(x) = i(x) w(f(x)) - f w'(f) u(x) u(x)^T`
//! (so that `A = -grad T`), the general forms used throughout are
//!
//! ```text
//! xi   = E_g T
//! K    = E_g T T^T - xi xi^T
//! J    = int w f u u^T dx + E_g A - int f A dx
//! ```
//!
//! `J` is the expected Hessian of the per-observation objective. At
//! `g = f_theta` the last two terms cancel.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::divergence::{check_exp_range, weight_log, weight_slope_log, Triplet};
use crate::error::{EpdError, Result};
use crate::linalg::{inverse_symmetric, sandwich};
use crate::models::{Model, Support};
use crate::optim::golden_max;
use crate::quadrature::{integrate_vec, IntegrandDomain, QuadConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichMatrices {
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub xi: DVector<f64>,
    /// `J^{-1} K J^{-1}`, the asymptotic covariance of `sqrt(n) (theta_hat - theta)`.
    pub variance: DMatrix<f64>,
    pub condition: f64,
    /// Largest quadrature error estimate among the integrals involved.
    pub quad_err: f64,
}

impl SandwichMatrices {
    fn assemble(j: DMatrix<f64>, k: DMatrix<f64>, xi: DVector<f64>, quad_err: f64) -> Result<Self> {
        let (j_inv, condition) = inverse_symmetric(&j, "J matrix")?;
        let variance = sandwich(&j_inv, &k);
        Ok(SandwichMatrices {
            j,
            k,
            xi,
            variance,
            condition,
            quad_err,
        })
    }
}

/// Per-point quantities at `x`: density, weight and `f w'(f)`; fills `u` and `info`.
pub(crate) fn point_eval(
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
    x: f64,
    u: &mut [f64],
    info: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let log_f = model.log_density(theta, x);
    let w = weight_log(log_f, trip)?;
    let s = weight_slope_log(log_f, trip)?;
    model.score_into(theta, x, u);
    model.information_into(theta, x, info);
    Ok((log_f.exp(), w, s))
}

/// Model-side integrals at `theta`, all from one adaptive pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMoments {
    /// `int u w f`
    pub xi: DVector<f64>,
    /// `int w f u u^T`
    pub j_model: DMatrix<f64>,
    /// `int f A`
    pub f_a: DMatrix<f64>,
    /// `int w^2 f u u^T`
    pub tt: DMatrix<f64>,
    pub quad_err: f64,
}

pub fn model_moments(
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
    cfg: &QuadConfig,
) -> Result<ModelMoments> {
    model.check_params(theta)?;
    trip.validate()?;
    check_exp_range(trip, model.density_sup(theta))?;
    let p = model.param_dim();
    let pp = p * p;
    let failure: Cell<Option<EpdError>> = Cell::new(None);
    let mut u = vec![0.0; p];
    let mut info = vec![0.0; pp];
    let r = integrate_vec(
        |x, out: &mut [f64]| match point_eval(model, theta, trip, x, &mut u, &mut info) {
            Ok((f, w, s)) => {
                for j in 0..p {
                    out[j] = u[j] * w * f;
                    for k in 0..p {
                        let uu = u[j] * u[k];
                        out[p + j * p + k] = w * f * uu;
                        out[p + pp + j * p + k] = f * (info[j * p + k] * w - s * uu);
                        out[p + 2 * pp + j * p + k] = w * w * f * uu;
                    }
                }
            }
            Err(e) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                failure.set(Some(e));
            }
        },
        p + 3 * pp,
        &model.domain(theta),
        cfg,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let quad_err = r.max_err();
    let mut v = r.require()?;
    // integrals of odd integrands vanish exactly
    if let Some(odd) = model.odd_components() {
        for j in 0..p {
            if odd[j] {
                v[j] = 0.0;
            }
            for k in 0..p {
                if odd[j] != odd[k] {
                    for block in 0..3 {
                        v[p + block * pp + j * p + k] = 0.0;
                    }
                }
            }
        }
    }
    let mat = |off: usize| {
        let m = DMatrix::from_row_slice(p, p, &v[off..off + pp]);
        0.5 * (&m + m.transpose())
    };
    Ok(ModelMoments {
        xi: DVector::from_column_slice(&v[..p]),
        j_model: mat(p),
        f_a: mat(p + pp),
        tt: mat(p + 2 * pp),
        quad_err,
    })
}

/// Sample averages of `T`, `T T^T` and `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub t_mean: DVector<f64>,
    pub tt_mean: DMatrix<f64>,
    pub a_mean: DMatrix<f64>,
    /// Rows `T(X_i)^T`.
    pub t_rows: Vec<DVector<f64>>,
}

pub fn empirical_moments(
    data: &[f64],
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
) -> Result<EmpiricalMoments> {
    let p = model.param_dim();
    let n = data.len() as f64;
    let mut u = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut t_mean = DVector::zeros(p);
    let mut tt_mean = DMatrix::zeros(p, p);
    let mut a_mean = DMatrix::zeros(p, p);
    let mut t_rows = Vec::with_capacity(data.len());
    for &x in data {
        let (_, w, s) = point_eval(model, theta, trip, x, &mut u, &mut info)?;
        let t = DVector::from_iterator(p, u.iter().map(|v| v * w));
        for j in 0..p {
            for k in 0..p {
                a_mean[(j, k)] += (info[j * p + k] * w - s * u[j] * u[k]) / n;
            }
        }
        t_mean += &t / n;
        tt_mean += &t * t.transpose() / n;
        t_rows.push(t);
    }
    Ok(EmpiricalMoments {
        t_mean,
        tt_mean,
        a_mean,
        t_rows,
    })
}

/// `J`, `K`, `xi` at the model (`g = f_theta`).
pub fn model_jkxi(model: &dyn Model, theta: &[f64], trip: &Triplet) -> Result<SandwichMatrices> {
    model_jkxi_with(model, theta, trip, &QuadConfig::default())
}

pub fn model_jkxi_with(
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
    cfg: &QuadConfig,
) -> Result<SandwichMatrices> {
    let m = model_moments(model, theta, trip, cfg)?;
    let k = &m.tt - &m.xi * m.xi.transpose();
    SandwichMatrices::assemble(m.j_model, k, m.xi, m.quad_err)
}

/// The distribution `g` against which the general forms are evaluated.
pub enum TrueDensity<'a> {
    /// `g = f_theta`, evaluated by quadrature through the general formulas.
    Model,
    /// Empirical distribution of a sample.
    Empirical(&'a [f64]),
    /// An arbitrary density with its integration range.
    Density {
        g: &'a (dyn Fn(f64) -> f64 + Sync),
        domain: IntegrandDomain,
    },
}

/// General-`g` forms of `J`, `K`, `xi`.
pub fn general_jk(
    g: TrueDensity<'_>,
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
) -> Result<SandwichMatrices> {
    general_jk_with(g, model, theta, trip, &QuadConfig::default())
}

pub fn general_jk_with(
    g: TrueDensity<'_>,
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
    cfg: &QuadConfig,
) -> Result<SandwichMatrices> {
    let m = model_moments(model, theta, trip, cfg)?;
    let p = model.param_dim();
    let (xi, tt, a_g, err) = match g {
        TrueDensity::Model => (m.xi.clone(), m.tt.clone(), m.f_a.clone(), m.quad_err),
        TrueDensity::Empirical(data) => {
            if data.is_empty() {
                return Err(EpdError::Data("empty sample".into()));
            }
            let e = empirical_moments(data, model, theta, trip)?;
            (e.t_mean, e.tt_mean, e.a_mean, m.quad_err)
        }
        TrueDensity::Density { g, domain } => {
            let pp = p * p;
            let failure: Cell<Option<EpdError>> = Cell::new(None);
            let mut u = vec![0.0; p];
            let mut info = vec![0.0; pp];
            let r = integrate_vec(
                |x, out: &mut [f64]| {
                    let gx = g(x);
                    if gx == 0.0 || !model.support().contains(x) {
                        out.iter_mut().for_each(|o| *o = 0.0);
                        return;
                    }
                    match point_eval(model, theta, trip, x, &mut u, &mut info) {
                        Ok((_, w, s)) => {
                            for j in 0..p {
                                out[j] = u[j] * w * gx;
                                for k in 0..p {
                                    let uu = u[j] * u[k];
                                    out[p + j * p + k] = w * w * uu * gx;
                                    out[p + pp + j * p + k] = (info[j * p + k] * w - s * uu) * gx;
                                }
                            }
                        }
                        Err(e) => {
                            out.iter_mut().for_each(|o| *o = 0.0);
                            failure.set(Some(e));
                        }
                    }
                },
                p + 2 * pp,
                &domain,
                cfg,
            )?;
            if let Some(e) = failure.take() {
                return Err(e);
            }
            let err = r.max_err().max(m.quad_err);
            let v = r.require()?;
            (
                DVector::from_column_slice(&v[..p]),
                DMatrix::from_row_slice(p, p, &v[p..p + pp]),
                DMatrix::from_row_slice(p, p, &v[p + pp..p + 2 * pp]),
                err,
            )
        }
    };
    let j = &m.j_model + &a_g - &m.f_a;
    let j = 0.5 * (&j + j.transpose());
    let k = &tt - &xi * xi.transpose();
    let k = 0.5 * (&k + k.transpose());
    SandwichMatrices::assemble(j, k, xi, err)
}

/// Influence function of the minimum-divergence functional at the model.
#[derive(Debug, Clone)]
pub struct InfluenceFunction<'a> {
    model: &'a dyn Model,
    theta: Vec<f64>,
    trip: Triplet,
    j_inv: DMatrix<f64>,
    xi: DVector<f64>,
}

impl<'a> InfluenceFunction<'a> {
    pub fn new(model: &'a dyn Model, theta: &[f64], trip: &Triplet) -> Result<Self> {
        let m = model_jkxi(model, theta, trip)?;
        let (j_inv, _) = inverse_symmetric(&m.j, "J matrix")?;
        Ok(InfluenceFunction {
            model,
            theta: theta.to_vec(),
            trip: *trip,
            j_inv,
            xi: m.xi,
        })
    }

    pub fn at(&self, y: f64) -> Result<DVector<f64>> {
        let p = self.model.param_dim();
        let log_f = self.model.log_density(&self.theta, y);
        let w = weight_log(log_f, &self.trip)?;
        let mut u = vec![0.0; p];
        self.model.score_into(&self.theta, y, &mut u);
        let t = DVector::from_iterator(p, u.iter().map(|v| v * w));
        Ok(&self.j_inv * (t - &self.xi))
    }

    pub fn norm_at(&self, y: f64) -> Result<f64> {
        Ok(self.at(y)?.norm())
    }
}

/// `J^{-1} [u(y) w(f(y)) - xi]`.
pub fn influence(y: f64, model: &dyn Model, theta: &[f64], trip: &Triplet) -> Result<DVector<f64>> {
    InfluenceFunction::new(model, theta, trip)?.at(y)
}

/// Search region for the gross error sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GesGrid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GesGrid {
    /// `mu +- 12 sigma` for real-line models, `[0, 20 theta]` for half-line
    /// models, widened when `gamma` is small so the redescending peak of the
    /// polynomial summand stays inside the grid.
    pub fn default_for(model: &dyn Model, theta: &[f64], trip: &Triplet) -> Self {
        let dom = model.domain(theta);
        let widen = if trip.beta < 1.0 && trip.gamma > 0.0 {
            (0.1 / trip.gamma).sqrt().max(1.0)
        } else {
            1.0
        };
        match model.support() {
            Support::RealLine => GesGrid {
                lower: dom.center - 12.0 * widen * dom.scale,
                upper: dom.center + 12.0 * widen * dom.scale,
                points: 4001,
            },
            Support::HalfLine { lower } => GesGrid {
                lower,
                upper: lower + 20.0 * widen * dom.scale,
                points: 4001,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GesResult {
    pub y_star: f64,
    /// Supremum of the Euclidean norm of the influence function; `+inf` when unbounded.
    pub value: f64,
    pub bounded: bool,
    /// Largest norm actually observed on the grid.
    pub grid_max: f64,
}

/// Gross error sensitivity: supremum over `y` of `|IF(y)|`.
///
/// A maximum sitting on the grid boundary while still increasing outward is
/// reported as unbounded (`value = +inf`).
pub fn ges(model: &dyn Model, theta: &[f64], trip: &Triplet, grid: Option<GesGrid>) -> Result<GesResult> {
    let grid = grid.unwrap_or_else(|| GesGrid::default_for(model, theta, trip));
    if grid.points < 3 || !(grid.lower < grid.upper) {
        return Err(EpdError::Parameter("GES grid needs >= 3 points and lower < upper".into()));
    }
    let inf = InfluenceFunction::new(model, theta, trip)?;
    let h = (grid.upper - grid.lower) / (grid.points - 1) as f64;
    let ys: Vec<f64> = (0..grid.points).map(|i| grid.lower + h * i as f64).collect();
    let vals: Vec<f64> = ys.iter().map(|&y| inf.norm_at(y)).collect::<Result<_>>()?;
    let (best, grid_max) = vals
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let last = grid.points - 1;
    let lower_closed = matches!(model.support(), Support::HalfLine { lower } if lower == grid.lower);
    let at_edge = (best == last) || (best == 0 && !lower_closed);
    if at_edge {
        let outward = if best == last {
            inf.norm_at(grid.upper + 10.0 * h)?
        } else {
            inf.norm_at(grid.lower - 10.0 * h)?
        };
        if outward >= grid_max {
            return Ok(GesResult {
                y_star: ys[best],
                value: f64::INFINITY,
                bounded: false,
                grid_max,
            });
        }
    }
    let lo = ys[best.saturating_sub(1)];
    let hi = ys[(best + 1).min(last)];
    let (y_star, value) = golden_max(|y| inf.norm_at(y).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-12);
    let (y_star, value) = if value >= grid_max {
        (y_star, value)
    } else {
        (ys[best], grid_max)
    };
    Ok(GesResult {
        y_star,
        value,
        bounded: true,
        grid_max,
    })
}

/// Empirical sandwich estimate at a fitted parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    /// Estimate of the asymptotic covariance of `sqrt(n) (theta_hat - theta)`.
    pub asymptotic: DMatrix<f64>,
    /// `asymptotic / n`, the covariance of `theta_hat` itself.
    pub covariance: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// `(n - 1)^{-1} sum (R_i - Rbar)(R_i - Rbar)^T`
    pub r_cov: DMatrix<f64>,
    pub condition: f64,
}

impl SandwichEstimate {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// `J(G_n)^{-1} S J(G_n)^{-1}` with `S` the sample covariance of `R_i = u(X_i) w(f(X_i))`.
pub fn sandwich_variance(
    data: &[f64],
    model: &dyn Model,
    theta_hat: &[f64],
    trip: &Triplet,
) -> Result<SandwichEstimate> {
    if data.len() < 2 {
        return Err(EpdError::Data("sandwich variance needs n >= 2".into()));
    }
    let n = data.len() as f64;
    let m = model_moments(model, theta_hat, trip, &QuadConfig::default())?;
    let e = empirical_moments(data, model, theta_hat, trip)?;
    let j = &m.j_model + &e.a_mean - &m.f_a;
    let j = 0.5 * (&j + j.transpose());
    let p = model.param_dim();
    let mut r_cov = DMatrix::zeros(p, p);
    for t in &e.t_rows {
        let d = t - &e.t_mean;
        r_cov += &d * d.transpose();
    }
    r_cov /= n - 1.0;
    let (j_inv, condition) = inverse_symmetric(&j, "empirical J(G_n)")?;
    let asymptotic = sandwich(&j_inv, &r_cov);
    let covariance = &asymptotic / n;
    Ok(SandwichEstimate {
        asymptotic,
        covariance,
        j,
        r_cov,
        condition,
    })
}

/// `n^{-1} tr(J^{-1} K J^{-1}) + |theta_g - theta_star|^2`.
pub fn asymptotic_summed_mse(
    theta_g: &[f64],
    theta_star: &[f64],
    j: &DMatrix<f64>,
    k: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    if theta_g.len() != theta_star.len() || j.nrows() != theta_g.len() {
        return Err(EpdError::Parameter("summed MSE: dimension mismatch".into()));
    }
    if n == 0 {
        return Err(EpdError::Parameter("summed MSE: n must be positive".into()));
    }
    let (j_inv, _) = inverse_symmetric(j, "J matrix")?;
    let var = sandwich(&j_inv, k);
    let bias: f64 = theta_g
        .iter()
        .zip(theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(var.trace() / n as f64 + bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExponentialMean, NormalLocationScale};
    use approx::assert_relative_eq;

    #[test]
    fn fisher_information_at_kl() {
        let m = model_jkxi(&NormalLocationScale, &[0.0, 1.0], &Triplet::kl()).unwrap();
        assert_relative_eq!(m.j[(0, 0)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(m.j[(1, 1)], 0.5, epsilon = 1e-9);
        assert_relative_eq!(m.k[(1, 1)], 0.5, epsilon = 1e-9);
        assert_relative_eq!(m.variance[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(m.variance[(1, 1)], 2.0, epsilon = 1e-8);
        assert!(m.xi.norm() < 1e-10);
    }

    #[test]
    fn location_xi_vanishes() {
        for trip in [Triplet::new(0.7, 0.4, 0.3).unwrap(), Triplet::new(-3.0, 1.0, 0.0).unwrap()] {
            let m = model_jkxi(&NormalLocationScale, &[2.0, 3.0], &trip).unwrap();
            assert!(m.xi[0].abs() < 1e-12);
            assert!(m.xi[1].abs() > 1e-6);
        }
    }

    #[test]
    fn summed_mse_examples() {
        let id = DMatrix::identity(2, 2);
        let v = asymptotic_summed_mse(&[1.0, 2.0], &[1.0, 2.0], &id, &id, 100).unwrap();
        assert_relative_eq!(v, 0.02, epsilon = 1e-15);
        let a = asymptotic_summed_mse(&[1.0, 2.0], &[0.0, 2.0], &id, &id, 100).unwrap();
        let b = asymptotic_summed_mse(&[1.0, 2.0], &[0.0, 2.0], &id, &id, 200).unwrap();
        assert_relative_eq!(a - 1.0, 2.0 * (b - 1.0), epsilon = 1e-15);
        let sing = DMatrix::zeros(2, 2);
        assert!(asymptotic_summed_mse(&[0.0, 0.0], &[0.0, 0.0], &sing, &id, 10).is_err());
    }

    #[test]
    fn identical_points_have_zero_k() {
        let data = vec![1.5; 10];
        let m = general_jk(TrueDensity::Empirical(&data), &NormalLocationScale, &[1.0, 2.0], &Triplet::new(0.5, 0.3, 0.4).unwrap()).unwrap();
        assert!(m.k.abs().max() < 1e-15);
    }

    #[test]
    fn influence_at_center_is_zero_for_location() {
        for (mu, s2) in [(0.0, 1.0), (3.7, 0.2), (-120.0, 900.0)] {
            for trip in [Triplet::new(0.99, 0.4, 0.1).unwrap(), Triplet::new(-1.0, 0.8, 0.1).unwrap(), Triplet::kl()] {
                let v = influence(mu, &NormalLocationScale, &[mu, s2], &trip).unwrap();
                assert_eq!(v[0], 0.0);
                let m = model_jkxi(&NormalLocationScale, &[mu, s2], &trip).unwrap();
                assert_eq!(m.xi[0], 0.0);
                assert_eq!(m.j[(0, 1)], 0.0);
            }
        }
    }

    #[test]
    fn ges_flags_ml_and_bounds_dpd() {
        let n = NormalLocationScale;
        let r = ges(&n, &[0.0, 1.0], &Triplet::kl(), None).unwrap();
        assert!(!r.bounded);
        assert!(r.value.is_infinite());
        let r = ges(&n, &[0.0, 1.0], &Triplet::dpd(0.1), None).unwrap();
        assert!(r.bounded && r.value.is_finite());
        let e = ExponentialMean;
        let r = ges(&e, &[2.0], &Triplet::kl(), None).unwrap();
        assert!(!r.bounded);
        let r = ges(&e, &[2.0], &Triplet::dpd(0.5), None).unwrap();
        assert!(r.bounded);
    }
}
