//! Minimum-EPD estimation for IID samples.
//!
//! `H_n(theta) = int conj(f_theta) dx - n^{-1} sum B'(f_theta(X_i))` where
//! `conj(t) = t B'(t) - B(t)`. The fitter runs a simplex search on `H_n` in the
//! model's unconstrained chart, then polishes with Newton steps on the
//! estimating equation using the exact Hessian `J(G_n)`.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::asymptotics::{empirical_moments, model_moments, sandwich_variance};
use crate::divergence::{b_prime_log, check_exp_range, conjugate, Triplet};
use crate::error::{EpdError, Result};
use crate::linalg::{min_eigenvalue, solve};
use crate::models::{Model, ParamVector};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::quadrature::{integrate, QuadConfig};

/// An IID sample with its label and source note.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observations: Vec<f64>,
    pub name: String,
    pub provenance: String,
}

impl Sample {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        Self::named("sample", "", observations)
    }

    pub fn named(name: &str, provenance: &str, observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(EpdError::Data(format!("{name}: empty sample")));
        }
        if let Some(i) = observations.iter().position(|v| !v.is_finite()) {
            return Err(EpdError::Data(format!(
                "{name}: observation {i} is not finite ({})",
                observations[i]
            )));
        }
        Ok(Sample {
            observations,
            name: name.to_string(),
            provenance: provenance.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.observations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multistart {
    /// Five starts when `gamma >= 0.3` or `beta >= 0.5`, otherwise one.
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Simplex search on `H_n`, then Newton polish.
    SimplexThenNewton,
    /// Newton from each start; the simplex runs only when Newton fails to reach
    /// a point with positive definite `J(G_n)`. Cheap from good warm starts.
    NewtonFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub strategy: Strategy,
    pub nelder_mead: NelderMeadConfig,
    pub quad: QuadConfig,
    /// Bound on the Euclidean norm of the estimating-equation residual.
    pub ee_tol: f64,
    pub newton_max: usize,
    pub multistart: Multistart,
    pub compute_variance: bool,
    /// Extra starting values tried in addition to the default ones.
    pub extra_starts: Vec<ParamVector>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            strategy: Strategy::SimplexThenNewton,
            nelder_mead: NelderMeadConfig::default(),
            quad: QuadConfig::default(),
            ee_tol: 1e-7,
            newton_max: 50,
            multistart: Multistart::Auto,
            compute_variance: true,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    /// `H_n` at `theta_hat`.
    pub objective: f64,
    pub ee_residual_norm: f64,
    pub converged: bool,
    /// Simplex iterations plus Newton steps of the selected start.
    pub iterations: usize,
    /// Sandwich estimate of the covariance of `theta_hat`.
    pub variance: Option<DMatrix<f64>>,
    pub multiple_roots: bool,
    /// Distinct local minima found by other starts, with their objective values.
    pub alternatives: Vec<(ParamVector, f64)>,
    pub warnings: Vec<String>,
    pub triplet: Triplet,
}

impl FitResult {
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.variance
            .as_ref()
            .map(|v| v.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect())
    }
}

/// `int conj(f_theta(x)) dx` by adaptive quadrature.
pub fn integral_term(model: &dyn Model, theta: &[f64], trip: &Triplet, cfg: &QuadConfig) -> Result<f64> {
    model.check_params(theta)?;
    check_exp_range(trip, model.density_sup(theta))?;
    let failure = RefCell::new(None);
    let r = integrate(
        |x| {
            let f = model.log_density(theta, x).exp();
            conjugate(f, trip).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                0.0
            })
        },
        &model.domain(theta),
        cfg,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    r.require().map_err(|e| EpdError::Estimation(format!("integral term at theta = {theta:?}: {e}")))
}

/// Per-observation objective with the integral term cached for the last `theta`.
#[derive(Debug)]
pub struct Objective<'a> {
    model: &'a dyn Model,
    trip: Triplet,
    quad: QuadConfig,
    cache: RefCell<Option<(Vec<f64>, f64)>>,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a dyn Model, trip: &Triplet, quad: &QuadConfig) -> Result<Self> {
        trip.validate()?;
        Ok(Objective {
            model,
            trip: *trip,
            quad: *quad,
            cache: RefCell::new(None),
        })
    }

    fn integral(&self, theta: &[f64]) -> Result<f64> {
        if let Some((t, v)) = self.cache.borrow().as_ref() {
            if t.as_slice() == theta {
                return Ok(*v);
            }
        }
        let v = integral_term(self.model, theta, &self.trip, &self.quad)?;
        *self.cache.borrow_mut() = Some((theta.to_vec(), v));
        Ok(v)
    }

    /// `V_theta(x)`.
    pub fn v(&self, theta: &[f64], x: f64) -> Result<f64> {
        let i = self.integral(theta)?;
        Ok(i - b_prime_log(self.model.log_density(theta, x), &self.trip)?)
    }

    /// `H_n(theta)`.
    pub fn mean(&self, data: &[f64], theta: &[f64]) -> Result<f64> {
        let i = self.integral(theta)?;
        let mut s = 0.0;
        for &x in data {
            s += b_prime_log(self.model.log_density(theta, x), &self.trip)?;
        }
        let h = i - s / data.len() as f64;
        if h.is_finite() {
            Ok(h)
        } else {
            Err(EpdError::Estimation(format!("objective not finite at theta = {theta:?}")))
        }
    }
}

pub fn v_theta(model: &dyn Model, theta: &[f64], trip: &Triplet, x: f64) -> Result<f64> {
    if !model.support().contains(x) {
        return Err(EpdError::Domain(format!("x = {x} outside the support of {}", model.name())));
    }
    Objective::new(model, trip, &QuadConfig::default())?.v(theta, x)
}

pub fn objective_hn(sample: &Sample, model: &dyn Model, theta: &[f64], trip: &Triplet) -> Result<f64> {
    Objective::new(model, trip, &QuadConfig::default())?.mean(sample.as_slice(), theta)
}

/// `n^{-1} sum T(X_i) - E_f T`, the negative gradient of `H_n`.
pub fn estimating_residual(
    sample: &Sample,
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
) -> Result<DVector<f64>> {
    let m = model_moments(model, theta, trip, &QuadConfig::default())?;
    let e = empirical_moments(sample.as_slice(), model, theta, trip)?;
    Ok(e.t_mean - m.xi)
}

/// Residual and Hessian `J(G_n)` of `H_n` at `theta`.
fn residual_and_hessian(
    data: &[f64],
    model: &dyn Model,
    theta: &[f64],
    trip: &Triplet,
    quad: &QuadConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = model_moments(model, theta, trip, quad)?;
    let e = empirical_moments(data, model, theta, trip)?;
    let j = &m.j_model + &e.a_mean - &m.f_a;
    Ok((e.t_mean - m.xi, 0.5 * (&j + j.transpose())))
}

struct Polished {
    theta: Vec<f64>,
    objective: f64,
    residual: f64,
    step_rel: f64,
    steps: usize,
    min_eig: f64,
}

/// Damped Newton on the estimating equation; `H_n` may not increase.
fn newton_polish(
    data: &[f64],
    model: &dyn Model,
    trip: &Triplet,
    obj: &Objective<'_>,
    theta0: &[f64],
    cfg: &FitConfig,
) -> Result<Polished> {
    let mut theta = theta0.to_vec();
    let mut h = obj.mean(data, &theta)?;
    let mut steps = 0;
    let mut step_rel = f64::INFINITY;
    let (mut r, mut j) = residual_and_hessian(data, model, &theta, trip, &cfg.quad)?;
    for _ in 0..cfg.newton_max {
        let Some(delta) = solve(&j, &r) else { break };
        let scales = model.param_scales(&theta);
        step_rel = delta
            .iter()
            .zip(&scales)
            .map(|(d, s)| (d / s).abs())
            .fold(0.0, f64::max);
        if !step_rel.is_finite() || step_rel < 1e-14 {
            break;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + lambda * d).collect();
            if model.check_params(&cand).is_ok() {
                if let Ok(hc) = obj.mean(data, &cand) {
                    if hc <= h + 1e-13 * (1.0 + h.abs()) {
                        if let Ok((rc, jc)) = residual_and_hessian(data, model, &cand, trip, &cfg.quad) {
                            if rc.norm() <= r.norm() || hc < h {
                                theta = cand;
                                h = hc;
                                r = rc;
                                j = jc;
                                accepted = true;
                                break;
                            }
                        }
                    }
                }
            }
            lambda *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
        if step_rel * lambda < 1e-12 {
            break;
        }
    }
    Ok(Polished {
        objective: h,
        residual: r.norm(),
        step_rel,
        theta,
        steps,
        min_eig: min_eigenvalue(&j),
    })
}

fn default_starts(model: &dyn Model, base: &[f64], multistart: bool) -> Vec<Vec<f64>> {
    let z0 = model.to_unconstrained(base);
    let steps = model.unconstrained_steps(base);
    let mut out = vec![base.to_vec()];
    if multistart {
        let p = z0.len();
        let moves = [(0, 5.0), (0, -5.0), (p - 1, 5.0), (p - 1, -5.0)];
        for (k, &(j, s)) in moves.iter().enumerate() {
            let mut z = z0.clone();
            let s = if p == 1 && k >= 2 { 2.0 * s } else { s };
            z[j] += s * steps[j];
            out.push(model.from_unconstrained(&z).into_vec());
        }
    }
    out
}

struct StartOutcome {
    theta: Vec<f64>,
    objective: f64,
    residual: f64,
    nm_converged: bool,
    newton_converged: bool,
    iterations: usize,
}

fn run_start(
    data: &[f64],
    model: &dyn Model,
    trip: &Triplet,
    obj: &Objective<'_>,
    start: &[f64],
    cfg: &FitConfig,
) -> Result<StartOutcome> {
    if cfg.strategy == Strategy::NewtonFirst {
        if let Ok(pol) = newton_polish(data, model, trip, obj, start, cfg) {
            if pol.step_rel < 1e-8 && pol.residual <= cfg.ee_tol && pol.min_eig > 0.0 {
                return Ok(StartOutcome {
                    newton_converged: true,
                    theta: pol.theta,
                    objective: pol.objective,
                    residual: pol.residual,
                    nm_converged: false,
                    iterations: pol.steps,
                });
            }
        }
    }
    let nm = nelder_mead(
        |z| {
            let theta = model.from_unconstrained(z);
            obj.mean(data, &theta).unwrap_or(f64::INFINITY)
        },
        &model.to_unconstrained(start),
        &model.unconstrained_steps(start),
        &cfg.nelder_mead,
    )?;
    let theta = model.from_unconstrained(&nm.x).into_vec();
    let pol = newton_polish(data, model, trip, obj, &theta, cfg)?;
    Ok(StartOutcome {
        newton_converged: pol.step_rel < 1e-8 && pol.residual <= cfg.ee_tol,
        theta: pol.theta,
        objective: pol.objective,
        residual: pol.residual,
        nm_converged: nm.converged,
        iterations: nm.iterations + pol.steps,
    })
}

/// Minimum-EPD estimate of `theta`.
pub fn fit_mepde(sample: &Sample, model: &dyn Model, trip: &Triplet, init: Option<&ParamVector>) -> Result<FitResult> {
    fit_mepde_with(sample, model, trip, init, &FitConfig::default())
}

pub fn fit_mepde_with(
    sample: &Sample,
    model: &dyn Model,
    trip: &Triplet,
    init: Option<&ParamVector>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    trip.validate()?;
    let data = sample.as_slice();
    if data.len() < model.param_dim() {
        return Err(EpdError::Data(format!(
            "{}: {} observations for {} parameters",
            sample.name,
            data.len(),
            model.param_dim()
        )));
    }
    if let Some(x) = data.iter().find(|&&x| !model.support().contains(x)) {
        return Err(EpdError::Domain(format!("observation {x} outside the support of {}", model.name())));
    }
    let base = match init {
        Some(t) => {
            model.check_params(t)?;
            t.to_vec()
        }
        None => model.initial_estimate(data)?.into_vec(),
    };
    check_exp_range(trip, model.density_sup(&base))?;
    let multi = match cfg.multistart {
        Multistart::Auto => trip.gamma >= 0.3 || trip.beta >= 0.5,
        Multistart::Never => false,
        Multistart::Always => true,
    };
    let mut starts = default_starts(model, &base, multi);
    starts.extend(cfg.extra_starts.iter().map(|s| s.to_vec()));

    let obj = Objective::new(model, trip, &cfg.quad)?;
    let mut outcomes = Vec::new();
    let mut errors = Vec::new();
    for s in &starts {
        match run_start(data, model, trip, &obj, s, cfg) {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    if outcomes.is_empty() {
        return Err(errors
            .into_iter()
            .next()
            .unwrap_or_else(|| EpdError::Estimation("no starting value".into())));
    }
    // lowest objective wins; ties go to the earlier start
    let best_idx = outcomes
        .iter()
        .enumerate()
        .fold(0, |b, (i, o)| if o.objective < outcomes[b].objective { i } else { b });
    let best = &outcomes[best_idx];
    let scales = model.param_scales(&best.theta);

    let mut alternatives: Vec<(ParamVector, f64)> = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        if i == best_idx || !(o.nm_converged || o.newton_converged) {
            continue;
        }
        let dist = o
            .theta
            .iter()
            .zip(&best.theta)
            .zip(&scales)
            .map(|((a, b), s)| ((a - b) / s).abs())
            .fold(0.0, f64::max);
        let distinct = alternatives.iter().all(|(t, _)| {
            t.iter()
                .zip(&o.theta)
                .zip(&scales)
                .map(|((a, b), s)| ((a - b) / s).abs())
                .fold(0.0, f64::max)
                > 1e-4
        });
        if dist > 1e-4 && distinct {
            alternatives.push((ParamVector::new(o.theta.clone()), o.objective));
        }
    }

    let mut warnings = Vec::new();
    let converged = (best.nm_converged || best.newton_converged) && best.residual <= cfg.ee_tol;
    if !converged {
        warnings.push(format!(
            "solver did not converge: residual norm {:.3e}, simplex converged {}, Newton converged {}",
            best.residual, best.nm_converged, best.newton_converged
        ));
    }
    let multiple_roots = !alternatives.is_empty();
    if multiple_roots {
        warnings.push(format!(
            "{} other local minima found; reporting the lowest objective {:.12e}",
            alternatives.len(),
            best.objective
        ));
    }
    for e in &errors {
        warnings.push(format!("a start failed: {e}"));
    }
    let variance = if cfg.compute_variance && data.len() >= 2 {
        match sandwich_variance(data, model, &best.theta, trip) {
            Ok(s) => Some(s.covariance),
            Err(e) => {
                warnings.push(format!("variance unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok(FitResult {
        theta_hat: ParamVector::new(best.theta.clone()),
        objective: best.objective,
        ee_residual_norm: best.residual,
        converged,
        iterations: best.iterations,
        variance,
        multiple_roots,
        alternatives,
        warnings,
        triplet: *trip,
    })
}

/// Maximum-likelihood fit, the Kullback-Leibler member of the family.
pub fn fit_mle(sample: &Sample, model: &dyn Model) -> Result<FitResult> {
    fit_mepde(sample, model, &Triplet::kl(), None)
}
