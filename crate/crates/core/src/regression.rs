//! Minimum-EPD estimation for the normal linear model `Y_i ~ N(x_i^T eta, sigma^2)`
//! with fixed design, `theta = (eta, sigma^2)`.
//!
//! Every model-side integral depends on `sigma^2` only: after `y -> y - x_i^T eta`
//! the density of observation `i` is the centered `N(0, sigma^2)` density. The
//! objective and the `sigma^2` estimating equation therefore need one quadrature
//! per `sigma^2`, shared by all observations.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::asymptotics::{general_jk, TrueDensity};
use crate::divergence::{b_prime_log, check_exp_range, conjugate, weight_log, weight_slope_log, Triplet};
use crate::error::{EpdError, Result};
use crate::estimation::Strategy;
use crate::linalg::{inverse_symmetric, sandwich, solve, MAX_CONDITION};
use crate::models::{median, sorted, ParamVector, RegressionObservation, MAD_SCALE};
use crate::optim::{brent_root, nelder_mead, NelderMeadConfig};
use crate::quadrature::{integrate_vec, IntegrandDomain, QuadConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    /// `n x p`, including the intercept column when one was requested.
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub column_names: Vec<String>,
}

impl RegressionProblem {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let names = (0..design.ncols()).map(|j| format!("eta{j}")).collect();
        Self::with_names(design, response, names)
    }

    pub fn with_names(design: DMatrix<f64>, response: DVector<f64>, column_names: Vec<String>) -> Result<Self> {
        let (n, p) = design.shape();
        if response.len() != n {
            return Err(EpdError::Data(format!("design has {n} rows but response has {}", response.len())));
        }
        if p == 0 || n <= p {
            return Err(EpdError::Data(format!("need n > p >= 1, got n = {n}, p = {p}")));
        }
        if column_names.len() != p {
            return Err(EpdError::Data("one name per design column required".into()));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(EpdError::Data("design and response must be finite".into()));
        }
        let xtx = design.transpose() * &design;
        let cond = crate::linalg::condition_number(&xtx);
        if !(cond <= MAX_CONDITION) {
            return Err(EpdError::Singular {
                context: "design is rank deficient (X^T X)".into(),
                condition: cond,
            });
        }
        Ok(RegressionProblem {
            design,
            response,
            column_names,
        })
    }

    /// Prepends a column of ones to `predictors` when `intercept` is set.
    pub fn from_columns(predictors: &DMatrix<f64>, response: DVector<f64>, names: &[String], intercept: bool) -> Result<Self> {
        let n = predictors.nrows();
        let (design, column_names) = if intercept {
            let mut d = DMatrix::from_element(n, predictors.ncols() + 1, 1.0);
            d.view_mut((0, 1), (n, predictors.ncols())).copy_from(predictors);
            let mut nm = vec!["intercept".to_string()];
            nm.extend(names.iter().cloned());
            (d, nm)
        } else {
            (predictors.clone(), names.to_vec())
        };
        Self::with_names(design, response, column_names)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    fn residuals(&self, eta: &[f64]) -> Vec<f64> {
        let eta = DVector::from_column_slice(eta);
        (&self.response - &self.design * eta).iter().copied().collect()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.design.row(i).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub eta: DVector<f64>,
    /// Residual variance with `n - p` denominator.
    pub sigma2: f64,
    /// Residual variance with `n` denominator (the normal MLE).
    pub sigma2_ml: f64,
}

pub fn ols(problem: &RegressionProblem) -> Result<OlsFit> {
    let x = &problem.design;
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &problem.response;
    let eta = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| EpdError::Singular {
            context: "X^T X".into(),
            condition: f64::INFINITY,
        })?;
    let r = &problem.response - x * &eta;
    let rss = r.norm_squared();
    let (n, p) = (problem.n() as f64, problem.p() as f64);
    Ok(OlsFit {
        eta,
        sigma2: rss / (n - p),
        sigma2_ml: rss / n,
    })
}

/// Scalar integrals against the centered normal density `phi(y; sigma)`.
///
/// With `v(y) = (y^2 - sigma^2) / (2 sigma^4)` and `w = w(phi(y))`:
/// `omega1 = int y^2/sigma^4 w phi`, `omega2 = int v^2 w phi`,
/// `omega3 = int y^2/sigma^4 w^2 phi`, `omega4 = int v^2 w^2 phi - xi_sigma^2`,
/// `xi_sigma = int v w phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaIntegrals {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub omega4: f64,
    pub xi_sigma: f64,
    /// `int v^2 w^2 phi` before the square of `xi_sigma` is removed.
    pub omega4_raw: f64,
    /// `int conj(phi)`, the integral term of the objective.
    pub conj: f64,
    /// `int phi (w/sigma^2 - phi w' y^2/sigma^4)`, the eta-block of `int f A`.
    pub a_eta: f64,
    /// `int phi (w (y^2/sigma^6 - 1/(2 sigma^4)) - phi w' v^2)`, the sigma^2 entry.
    pub a_sigma: f64,
    pub err_est: f64,
}

pub fn omega_integrals(sigma2: f64, trip: &Triplet) -> Result<OmegaIntegrals> {
    omega_integrals_with(sigma2, trip, &QuadConfig::default())
}

pub fn omega_integrals_with(sigma2: f64, trip: &Triplet, cfg: &QuadConfig) -> Result<OmegaIntegrals> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(EpdError::Parameter(format!("sigma^2 must be positive, got {sigma2}")));
    }
    trip.validate()?;
    check_exp_range(trip, (2.0 * std::f64::consts::PI * sigma2).sqrt().recip())?;
    let s4 = sigma2 * sigma2;
    let failure = RefCell::new(None);
    let r = integrate_vec(
        |y, out: &mut [f64]| {
            let log_f = -0.5 * (LN_2PI + sigma2.ln()) - y * y / (2.0 * sigma2);
            let f = log_f.exp();
            let eval = (|| -> Result<(f64, f64, f64)> {
                Ok((weight_log(log_f, trip)?, weight_slope_log(log_f, trip)?, conjugate(f, trip)?))
            })();
            let (w, s, c) = match eval {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
            };
            let u1 = y * y / s4;
            let v = (y * y - sigma2) / (2.0 * s4);
            out[0] = c;
            out[1] = v * w * f;
            out[2] = u1 * w * f;
            out[3] = v * v * w * f;
            out[4] = u1 * w * w * f;
            out[5] = v * v * w * w * f;
            out[6] = f * (w / sigma2 - s * u1);
            out[7] = f * (w * (y * y / (s4 * sigma2) - 0.5 / s4) - s * v * v);
        },
        8,
        &IntegrandDomain::real_line(0.0, sigma2.sqrt()),
        cfg,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let err_est = r.max_err();
    let v = r.require()?;
    Ok(OmegaIntegrals {
        conj: v[0],
        xi_sigma: v[1],
        omega1: v[2],
        omega2: v[3],
        omega3: v[4],
        omega4_raw: v[5],
        omega4: v[5] - v[1] * v[1],
        a_eta: v[6],
        a_sigma: v[7],
        err_est,
    })
}

fn block_diag(xtx_scaled: DMatrix<f64>, corner: f64) -> DMatrix<f64> {
    let p = xtx_scaled.nrows();
    let mut m = DMatrix::zeros(p + 1, p + 1);
    m.view_mut((0, 0), (p, p)).copy_from(&xtx_scaled);
    m[(p, p)] = corner;
    m
}

/// `Psi_n = blockdiag(omega1 X^T X / n, omega2)`, `Omega_n = blockdiag(omega3 X^T X / n, omega4)`.
pub fn psi_omega_matrices(problem: &RegressionProblem, sigma2: f64, trip: &Triplet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let om = omega_integrals(sigma2, trip)?;
    let xtx = problem.design.transpose() * &problem.design / problem.n() as f64;
    Ok((block_diag(&xtx * om.omega1, om.omega2), block_diag(&xtx * om.omega3, om.omega4)))
}

/// Per-observation densities `g_i` used in the general forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InhDensity {
    /// `g_i = f_i(.; theta)`, each term by quadrature through the generic machinery.
    Model,
    /// Single-observation empirical plug-in at `Y_i`.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InhMatrices {
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub xi: Vec<DVector<f64>>,
}

/// Per-observation pieces at `theta`: `T_i`, the `A_i` matrix and model constants.
struct ObsTerms {
    t: Vec<DVector<f64>>,
    a: Vec<DMatrix<f64>>,
}

fn obs_terms(problem: &RegressionProblem, theta: &[f64], trip: &Triplet) -> Result<ObsTerms> {
    let p = problem.p();
    let s2 = theta[p];
    let s4 = s2 * s2;
    let res = problem.residuals(&theta[..p]);
    let log_norm = -0.5 * (LN_2PI + s2.ln());
    let mut t = Vec::with_capacity(problem.n());
    let mut a = Vec::with_capacity(problem.n());
    for (i, &r) in res.iter().enumerate() {
        let log_f = log_norm - r * r / (2.0 * s2);
        let w = weight_log(log_f, trip)?;
        let s = weight_slope_log(log_f, trip)?;
        let x = problem.row(i);
        let v = (r * r - s2) / (2.0 * s4);
        let mut ti = DVector::zeros(p + 1);
        let mut ai = DMatrix::zeros(p + 1, p + 1);
        for j in 0..p {
            ti[j] = x[j] * r / s2 * w;
            for k in 0..p {
                ai[(j, k)] = x[j] * x[k] * (w / s2 - s * r * r / s4);
            }
            let c = x[j] * (w * r / s4 - s * r / s2 * v);
            ai[(j, p)] = c;
            ai[(p, j)] = c;
        }
        ti[p] = v * w;
        ai[(p, p)] = w * (r * r / (s4 * s2) - 0.5 / s4) - s * v * v;
        t.push(ti);
        a.push(ai);
    }
    Ok(ObsTerms { t, a })
}

/// Empirical `Psi_n` (the Hessian of `H_n`), the residual `n^{-1} sum psi_i`
/// and the rows `psi_i`.
fn empirical_system(
    problem: &RegressionProblem,
    theta: &[f64],
    trip: &Triplet,
    om: &OmegaIntegrals,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>)> {
    let p = problem.p();
    let n = problem.n() as f64;
    let terms = obs_terms(problem, theta, trip)?;
    let xtx = problem.design.transpose() * &problem.design / n;
    let mut psi = block_diag(&xtx * (om.omega1 - om.a_eta), om.omega2 - om.a_sigma);
    for a in &terms.a {
        psi += a / n;
    }
    let mut xi = DVector::zeros(p + 1);
    xi[p] = om.xi_sigma;
    let rows: Vec<DVector<f64>> = terms.t.iter().map(|t| t - &xi).collect();
    let resid = rows.iter().fold(DVector::zeros(p + 1), |acc, r| acc + r) / n;
    Ok((0.5 * (&psi + psi.transpose()), resid, rows))
}

/// General forms of `Psi_n`, `Omega_n` and `xi_i`.
///
/// With the empirical plug-in the variance of a single-point distribution is
/// zero, so `Omega_n` uses the M-estimator form `n^{-1} sum psi_i psi_i^T` with
/// `psi_i = T_i - E_{f_i} T`.
pub fn general_inh_matrices(problem: &RegressionProblem, theta: &[f64], trip: &Triplet, g: InhDensity) -> Result<InhMatrices> {
    check_theta(problem, theta)?;
    let p = problem.p();
    let n = problem.n() as f64;
    match g {
        InhDensity::Model => {
            let mut psi = DMatrix::zeros(p + 1, p + 1);
            let mut omega = DMatrix::zeros(p + 1, p + 1);
            let mut xi = Vec::with_capacity(problem.n());
            for i in 0..problem.n() {
                let obs = RegressionObservation::new(problem.row(i));
                let m = general_jk(TrueDensity::Model, &obs, theta, trip)?;
                psi += &m.j / n;
                omega += &m.k / n;
                xi.push(m.xi);
            }
            Ok(InhMatrices { psi, omega, xi })
        }
        InhDensity::Empirical => {
            let om = omega_integrals(theta[p], trip)?;
            let (psi, _, rows) = empirical_system(problem, theta, trip, &om)?;
            let mut omega = DMatrix::zeros(p + 1, p + 1);
            for r in &rows {
                omega += r * r.transpose() / n;
            }
            let terms = obs_terms(problem, theta, trip)?;
            Ok(InhMatrices {
                psi,
                omega: 0.5 * (&omega + omega.transpose()),
                xi: terms.t,
            })
        }
    }
}

fn check_theta(problem: &RegressionProblem, theta: &[f64]) -> Result<()> {
    let p = problem.p();
    if theta.len() != p + 1 {
        return Err(EpdError::Parameter(format!("expected {} parameters, got {}", p + 1, theta.len())));
    }
    if theta.iter().any(|v| !v.is_finite()) || !(theta[p] > 0.0) {
        return Err(EpdError::Parameter("parameters must be finite with sigma^2 > 0".into()));
    }
    Ok(())
}

/// Integral term of the objective, cached on `sigma^2`.
#[derive(Debug)]
struct ConjCache {
    trip: Triplet,
    quad: QuadConfig,
    last: RefCell<Option<(f64, OmegaIntegrals)>>,
}

impl ConjCache {
    fn new(trip: &Triplet, quad: &QuadConfig) -> Self {
        ConjCache {
            trip: *trip,
            quad: *quad,
            last: RefCell::new(None),
        }
    }

    fn get(&self, sigma2: f64) -> Result<OmegaIntegrals> {
        if let Some((s, om)) = *self.last.borrow() {
            if s == sigma2 {
                return Ok(om);
            }
        }
        let om = omega_integrals_with(sigma2, &self.trip, &self.quad)?;
        *self.last.borrow_mut() = Some((sigma2, om));
        Ok(om)
    }
}

fn objective_with(problem: &RegressionProblem, theta: &[f64], trip: &Triplet, cache: &ConjCache) -> Result<f64> {
    check_theta(problem, theta)?;
    let p = problem.p();
    let s2 = theta[p];
    let om = cache.get(s2)?;
    let log_norm = -0.5 * (LN_2PI + s2.ln());
    let mut acc = 0.0;
    for r in problem.residuals(&theta[..p]) {
        acc += b_prime_log(log_norm - r * r / (2.0 * s2), trip)?;
    }
    let h = om.conj - acc / problem.n() as f64;
    if h.is_finite() {
        Ok(h)
    } else {
        Err(EpdError::Estimation(format!("objective not finite at theta = {theta:?}")))
    }
}

/// `H_n(eta, sigma^2) = int conj(phi) - n^{-1} sum B'(f_i(Y_i))`.
pub fn regression_objective(problem: &RegressionProblem, theta: &[f64], trip: &Triplet) -> Result<f64> {
    objective_with(problem, theta, trip, &ConjCache::new(trip, &QuadConfig::default()))
}

/// `n^{-1} sum psi_i`: the eta rows are `x_ij r_i w_i / sigma^2`, the last row
/// `v_i w_i - xi_sigma`.
pub fn regression_residual(problem: &RegressionProblem, theta: &[f64], trip: &Triplet) -> Result<DVector<f64>> {
    check_theta(problem, theta)?;
    let om = omega_integrals(theta[problem.p()], trip)?;
    Ok(empirical_system(problem, theta, trip, &om)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    pub nelder_mead: NelderMeadConfig,
    pub quad: QuadConfig,
    pub ee_tol: f64,
    pub newton_max: usize,
    pub max_alternations: usize,
    pub compute_variance: bool,
    /// Elemental subsets drawn for the least-median-of-squares start when
    /// exhaustive enumeration would exceed this count.
    pub lms_subsets: usize,
    pub seed: u64,
    pub extra_starts: Vec<ParamVector>,
    pub strategy: Strategy,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            nelder_mead: NelderMeadConfig::default(),
            quad: QuadConfig::default(),
            ee_tol: 1e-7,
            newton_max: 50,
            max_alternations: 200,
            compute_variance: true,
            lms_subsets: 3000,
            seed: 0,
            extra_starts: Vec::new(),
            strategy: Strategy::SimplexThenNewton,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub eta_hat: DVector<f64>,
    pub sigma2_hat: f64,
    /// Model-based `Psi_n` at the estimate.
    pub psi_n: DMatrix<f64>,
    /// Model-based `Omega_n` at the estimate.
    pub omega_n: DMatrix<f64>,
    /// `Psi_n^{-1} Omega_n Psi_n^{-1}`, the asymptotic covariance of `sqrt(n) (theta_hat - theta)`.
    pub variance: DMatrix<f64>,
    pub objective: f64,
    pub ee_residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub multiple_roots: bool,
    pub alternatives: Vec<(ParamVector, f64)>,
    pub warnings: Vec<String>,
    pub triplet: Triplet,
}

impl RegressionFit {
    pub fn theta(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.eta_hat.iter().copied().collect();
        t.push(self.sigma2_hat);
        t
    }

    /// Standard errors of `theta_hat`: `sqrt(diag(variance) / n)`.
    pub fn standard_errors(&self, n: usize) -> Vec<f64> {
        self.variance.diagonal().iter().map(|v| (v.max(0.0) / n as f64).sqrt()).collect()
    }
}

fn mad_sigma2(res: &[f64]) -> f64 {
    let abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
    let m = MAD_SCALE * median(&sorted(&abs));
    if m > 0.0 {
        m * m
    } else {
        let ms = res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64;
        if ms > 0.0 {
            ms
        } else {
            1.0
        }
    }
}

fn weighted_ls(problem: &RegressionProblem, weights: &[f64]) -> Option<DVector<f64>> {
    let p = problem.p();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for (i, &w) in weights.iter().enumerate() {
        let x = problem.design.row(i).transpose();
        xtwx += &x * x.transpose() * w;
        xtwy += &x * (w * problem.response[i]);
    }
    solve(&xtwx, &xtwy)
}

/// Least absolute deviations by iteratively reweighted least squares.
pub fn lad(problem: &RegressionProblem) -> Result<DVector<f64>> {
    let mut eta = ols(problem)?.eta;
    let scale = problem.response.amax().max(1.0);
    for _ in 0..200 {
        let res = problem.residuals(eta.as_slice());
        let w: Vec<f64> = res.iter().map(|r| 1.0 / r.abs().max(1e-9 * scale)).collect();
        let Some(next) = weighted_ls(problem, &w) else { break };
        let change = (&next - &eta).amax() / (1.0 + eta.amax());
        eta = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(eta)
}

/// Least median of squares over elemental subsets (exhaustive when small).
pub fn lms(problem: &RegressionProblem, max_subsets: usize, seed: u64) -> Result<DVector<f64>> {
    let (n, p) = (problem.n(), problem.p());
    let h = n / 2 + (p + 1) / 2;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |idx: &[usize]| {
        let x = DMatrix::from_fn(p, p, |r, c| problem.design[(idx[r], c)]);
        let y = DVector::from_fn(p, |r, _| problem.response[idx[r]]);
        let Some(eta) = x.lu().solve(&y) else { return };
        let mut sq: Vec<f64> = problem.residuals(eta.as_slice()).iter().map(|r| r * r).collect();
        sq.sort_by(f64::total_cmp);
        let crit = sq[h.min(n) - 1];
        if best.as_ref().map_or(true, |(b, _)| crit < *b) {
            best = Some((crit, eta));
        }
    };
    let total = binomial(n, p);
    if total <= max_subsets as f64 {
        let mut idx: Vec<usize> = (0..p).collect();
        loop {
            consider(&idx);
            // next combination in lexicographic order
            let mut k = p;
            while k > 0 && idx[k - 1] == n - p + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..p {
                idx[j] = idx[j - 1] + 1;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_subsets {
            let mut idx = sample_indices(&mut rng, n, p).into_vec();
            idx.sort_unstable();
            consider(&idx);
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| EpdError::Estimation("no nonsingular elemental subset".into()))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `sigma^2` root of the second estimating equation at fixed `eta`, taken in
/// the downhill-to-uphill bracket closest to `s0`.
fn sigma2_step(problem: &RegressionProblem, eta: &[f64], s0: f64, trip: &Triplet, cache: &ConjCache) -> Result<f64> {
    let res = problem.residuals(eta);
    let n = problem.n() as f64;
    let eq = |log_s2: f64| -> Result<f64> {
        let s2 = log_s2.exp();
        let om = cache.get(s2)?;
        let s4 = s2 * s2;
        let log_norm = -0.5 * (LN_2PI + s2.ln());
        let mut acc = 0.0;
        for &r in &res {
            let w = weight_log(log_norm - r * r / (2.0 * s2), trip)?;
            acc += (r * r - s2) / (2.0 * s4) * w;
        }
        // scaled by sigma^4 so the bracket search sees O(1) values
        Ok((acc / n - om.xi_sigma) * s4)
    };
    // walk outward from s0 until the residual changes from + (below) to - (above)
    let l0 = s0.ln();
    let g0 = eq(l0)?;
    let step = 0.25;
    let (mut lo, mut hi) = (l0, l0);
    let mut bracketed = false;
    if g0 > 0.0 {
        for _ in 0..80 {
            hi += step;
            if eq(hi)? <= 0.0 {
                lo = hi - step;
                bracketed = true;
                break;
            }
        }
    } else {
        for _ in 0..80 {
            lo -= step;
            if eq(lo)? > 0.0 {
                hi = lo + step;
                bracketed = true;
                break;
            }
        }
    }
    if !bracketed {
        return Err(EpdError::Estimation("sigma^2 equation not bracketed".into()));
    }
    Ok(brent_root(eq, lo, hi, 1e-14, 200)?.exp())
}

/// Alternating eta (weighted least squares) and sigma^2 (scalar root) steps.
fn alternate(problem: &RegressionProblem, start: &[f64], trip: &Triplet, cache: &ConjCache, cfg: &RegressionConfig) -> Option<(Vec<f64>, usize)> {
    let p = problem.p();
    let mut eta = start[..p].to_vec();
    let mut s2 = start[p];
    for it in 0..cfg.max_alternations {
        let log_norm = -0.5 * (LN_2PI + s2.ln());
        let res = problem.residuals(&eta);
        let w: Option<Vec<f64>> = res
            .iter()
            .map(|r| weight_log(log_norm - r * r / (2.0 * s2), trip).ok())
            .collect();
        let new_eta = weighted_ls(problem, &w?)?;
        let new_s2 = sigma2_step(problem, new_eta.as_slice(), s2, trip, cache).ok()?;
        let scale = s2.sqrt();
        let d_eta = new_eta
            .iter()
            .zip(&eta)
            .enumerate()
            .map(|(j, (a, b))| (a - b).abs() * problem.design.column(j).amax().max(1e-300) / scale)
            .fold(0.0, f64::max);
        let d_s2 = (new_s2 / s2 - 1.0).abs();
        eta = new_eta.as_slice().to_vec();
        s2 = new_s2;
        if d_eta.max(d_s2) < 1e-12 {
            let mut t = eta;
            t.push(s2);
            return Some((t, it + 1));
        }
    }
    None
}

fn param_scales(problem: &RegressionProblem, theta: &[f64]) -> Vec<f64> {
    let p = problem.p();
    let s = theta[p].sqrt();
    let mut v: Vec<f64> = (0..p).map(|j| s / problem.design.column(j).amax().max(1e-300)).collect();
    v.push(theta[p]);
    v
}

fn simplex_fit(problem: &RegressionProblem, start: &[f64], trip: &Triplet, cache: &ConjCache, cfg: &RegressionConfig) -> Result<(Vec<f64>, usize, bool)> {
    let p = problem.p();
    let to_theta = |z: &[f64]| {
        let mut t = z.to_vec();
        t[p] = z[p].exp();
        t
    };
    let mut z0 = start.to_vec();
    z0[p] = start[p].ln();
    let mut steps: Vec<f64> = param_scales(problem, start).iter().map(|s| 0.1 * s).collect();
    steps[p] = 0.2;
    let nm = nelder_mead(
        |z| objective_with(problem, &to_theta(z), trip, cache).unwrap_or(f64::INFINITY),
        &z0,
        &steps,
        &cfg.nelder_mead,
    )?;
    Ok((to_theta(&nm.x), nm.iterations, nm.converged))
}

struct Polished {
    theta: Vec<f64>,
    objective: f64,
    residual: f64,
    step_rel: f64,
    steps: usize,
    min_eig: f64,
}

fn newton_polish(problem: &RegressionProblem, theta0: &[f64], trip: &Triplet, cache: &ConjCache, cfg: &RegressionConfig) -> Result<Polished> {
    let p = problem.p();
    let mut theta = theta0.to_vec();
    let mut h = objective_with(problem, &theta, trip, cache)?;
    let (mut j, mut r, _) = empirical_system(problem, &theta, trip, &cache.get(theta[p])?)?;
    let mut step_rel = f64::INFINITY;
    let mut steps = 0;
    for _ in 0..cfg.newton_max {
        let Some(delta) = solve(&j, &r) else { break };
        let scales = param_scales(problem, &theta);
        step_rel = delta.iter().zip(&scales).map(|(d, s)| (d / s).abs()).fold(0.0, f64::max);
        if !step_rel.is_finite() || step_rel < 1e-14 {
            break;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + lambda * d).collect();
            if cand[p] > 0.0 {
                if let Ok(hc) = objective_with(problem, &cand, trip, cache) {
                    if hc <= h + 1e-13 * (1.0 + h.abs()) {
                        let om = cache.get(cand[p])?;
                        if let Ok((jc, rc, _)) = empirical_system(problem, &cand, trip, &om) {
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
        if !accepted || step_rel * lambda < 1e-12 {
            break;
        }
    }
    let min_eig = j.clone().symmetric_eigenvalues().min();
    Ok(Polished {
        objective: h,
        residual: r.norm(),
        step_rel,
        theta,
        steps,
        min_eig,
    })
}

struct StartOutcome {
    theta: Vec<f64>,
    objective: f64,
    residual: f64,
    converged: bool,
    iterations: usize,
}

fn run_start(problem: &RegressionProblem, start: &[f64], trip: &Triplet, cache: &ConjCache, cfg: &RegressionConfig) -> Result<StartOutcome> {
    if cfg.strategy == Strategy::NewtonFirst {
        if let Ok(pol) = newton_polish(problem, start, trip, cache, cfg) {
            if pol.step_rel < 1e-8 && pol.residual <= cfg.ee_tol && pol.min_eig > 0.0 {
                return Ok(StartOutcome {
                    converged: true,
                    theta: pol.theta,
                    objective: pol.objective,
                    residual: pol.residual,
                    iterations: pol.steps,
                });
            }
        }
    }
    let (theta, iters, solved) = match alternate(problem, start, trip, cache, cfg) {
        Some((t, it)) => (t, it, true),
        None => {
            let (t, it, conv) = simplex_fit(problem, start, trip, cache, cfg)?;
            (t, it, conv)
        }
    };
    // the alternation fixed point may be a saddle of H_n; a short simplex run
    // from it confirms a local minimum before polishing
    let (theta, extra, nm_conv) = if solved {
        simplex_fit(problem, &theta, trip, cache, cfg)?
    } else {
        (theta, 0, false)
    };
    let pol = newton_polish(problem, &theta, trip, cache, cfg)?;
    let newton_conv = pol.step_rel < 1e-8;
    Ok(StartOutcome {
        converged: (solved || nm_conv || newton_conv) && pol.residual <= cfg.ee_tol,
        theta: pol.theta,
        objective: pol.objective,
        residual: pol.residual,
        iterations: iters + extra + pol.steps,
    })
}

/// Default starting values: LAD, least median of squares and OLS, each with a
/// MAD-based `sigma^2` from its residuals.
pub fn regression_starts(problem: &RegressionProblem, cfg: &RegressionConfig) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut push = |eta: DVector<f64>| {
        let s2 = mad_sigma2(&problem.residuals(eta.as_slice()));
        let mut t: Vec<f64> = eta.iter().copied().collect();
        t.push(s2);
        out.push(t);
    };
    push(lad(problem)?);
    if let Ok(e) = lms(problem, cfg.lms_subsets, cfg.seed) {
        push(e);
    }
    let o = ols(problem)?;
    push(o.eta);
    Ok(out)
}

pub fn fit_regression_mepde(problem: &RegressionProblem, trip: &Triplet, init: Option<&ParamVector>) -> Result<RegressionFit> {
    fit_regression_mepde_with(problem, trip, init, &RegressionConfig::default())
}

pub fn fit_regression_mepde_with(
    problem: &RegressionProblem,
    trip: &Triplet,
    init: Option<&ParamVector>,
    cfg: &RegressionConfig,
) -> Result<RegressionFit> {
    trip.validate()?;
    let p = problem.p();
    let mut starts = match init {
        Some(t) => {
            check_theta(problem, t)?;
            vec![t.to_vec()]
        }
        None => regression_starts(problem, cfg)?,
    };
    starts.extend(cfg.extra_starts.iter().map(|s| s.to_vec()));
    let cache = ConjCache::new(trip, &cfg.quad);
    let mut outcomes = Vec::new();
    let mut errors = Vec::new();
    for s in &starts {
        match run_start(problem, s, trip, &cache, cfg) {
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
    let bi = outcomes
        .iter()
        .enumerate()
        .fold(0, |b, (i, o)| if o.objective < outcomes[b].objective { i } else { b });
    let best = &outcomes[bi];
    let scales = param_scales(problem, &best.theta);
    let mut alternatives: Vec<(ParamVector, f64)> = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        if i == bi || !o.converged {
            continue;
        }
        let far = |t: &[f64]| {
            t.iter()
                .zip(&o.theta)
                .zip(&scales)
                .map(|((a, b), s)| ((a - b) / s).abs())
                .fold(0.0, f64::max)
                > 1e-4
        };
        if far(&best.theta) && alternatives.iter().all(|(t, _)| far(t)) {
            alternatives.push((ParamVector::new(o.theta.clone()), o.objective));
        }
    }
    let mut warnings = Vec::new();
    if !best.converged {
        warnings.push(format!("solver did not converge: residual norm {:.3e}", best.residual));
    }
    if !alternatives.is_empty() {
        warnings.push(format!(
            "{} other local minima found; reporting the lowest objective {:.12e}",
            alternatives.len(),
            best.objective
        ));
    }
    for e in &errors {
        warnings.push(format!("a start failed: {e}"));
    }
    let (psi_n, omega_n) = psi_omega_matrices(problem, best.theta[p], trip)?;
    let variance = if cfg.compute_variance {
        match inverse_symmetric(&psi_n, "Psi_n") {
            Ok((inv, _)) => sandwich(&inv, &omega_n),
            Err(e) => {
                warnings.push(format!("variance unavailable: {e}"));
                DMatrix::from_element(p + 1, p + 1, f64::NAN)
            }
        }
    } else {
        DMatrix::from_element(p + 1, p + 1, f64::NAN)
    };
    Ok(RegressionFit {
        eta_hat: DVector::from_column_slice(&best.theta[..p]),
        sigma2_hat: best.theta[p],
        psi_n,
        omega_n,
        variance,
        objective: best.objective,
        ee_residual_norm: best.residual,
        converged: best.converged,
        iterations: best.iterations,
        multiple_roots: !alternatives.is_empty(),
        alternatives,
        warnings,
        triplet: *trip,
    })
}
