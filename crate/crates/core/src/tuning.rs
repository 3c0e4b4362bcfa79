//! Tuning-parameter selection by minimizing an empirical summed MSE around a
//! robust pilot estimate (the Warwick-Jones criterion).
//!
//! `mse(trip) = n^{-1} tr(D V D^T) + |h(theta_hat) - h(pilot)|^2`, with `V` the
//! sandwich `J^{-1} K J^{-1}` from empirical plug-ins at `theta_hat(trip)`, `h`
//! the model's reporting coordinates and `D` its Jacobian.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::asymptotics::{general_jk, model_jkxi, TrueDensity};
use crate::divergence::Triplet;
use crate::error::{EpdError, Result};
use crate::estimation::{fit_mepde, fit_mepde_with, FitConfig, Multistart, Sample, Strategy};
use crate::linalg::{inverse_symmetric, sandwich};
use crate::models::{Model, ParamVector};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::regression::{
    fit_regression_mepde_with, general_inh_matrices, psi_omega_matrices, InhDensity,
    RegressionConfig, RegressionProblem,
};

/// Where `J` and `K` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariancePlugin {
    /// Empirical distribution of the data (`J(G_n)`, `K(G_n)`).
    Empirical,
    /// The fitted model `f_{theta_hat}`.
    Model,
    /// `J` at the fitted model, `K` from the data.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub gamma_range: (f64, f64),
    /// Grid points for alpha, beta, gamma.
    pub grid_sizes: [usize; 3],
    pub refine: bool,
    /// Number of best grid cells refined by the simplex.
    pub refine_cells: usize,
    pub pilot_gamma: f64,
    /// `None` selects the target's default plug-in.
    pub variance: Option<VariancePlugin>,
    pub refine_iterations: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            alpha_range: (-50.0, 2.0),
            beta_range: (0.0, 1.0),
            gamma_range: (0.0, 1.0),
            grid_sizes: [13, 6, 11],
            refine: true,
            refine_cells: 3,
            pilot_gamma: 0.5,
            variance: None,
            refine_iterations: 150,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.alpha_range) || !ok(self.beta_range) || !ok(self.gamma_range) {
            return Err(EpdError::Tuning("ranges must be finite with lo <= hi".into()));
        }
        if self.beta_range.0 < 0.0 || self.beta_range.1 > 1.0 || self.gamma_range.0 < 0.0 {
            return Err(EpdError::Tuning("beta range must lie in [0, 1] and gamma range in [0, inf)".into()));
        }
        if self.grid_sizes.iter().any(|&g| g == 0) {
            return Err(EpdError::Tuning("grid sizes must be positive".into()));
        }
        if !(self.pilot_gamma > 0.0) {
            return Err(EpdError::Tuning("pilot gamma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub triplet: Triplet,
    /// `+inf` marks a degenerate or failed evaluation.
    pub mse: f64,
    pub theta: Option<ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub triplet: Triplet,
    pub theta_hat: ParamVector,
    pub empirical_mse: f64,
    pub surface: Vec<SurfacePoint>,
    pub pilot: ParamVector,
    /// Messages about sentinel cells and refinement.
    pub log: Vec<String>,
}

/// Selected unrestricted optimum with its DPD-restricted (`beta = 0`) companion.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub unrestricted: TuneResult,
    pub dpd: TuneResult,
}

/// A problem the criterion can be evaluated on.
pub trait WjTarget: Sync {
    fn n(&self) -> usize;
    fn default_plugin(&self) -> VariancePlugin;
    fn pilot(&self, gamma: f64) -> Result<Vec<f64>>;
    /// `theta_hat(trip)`, with `warm` as additional starting values.
    fn fit(&self, trip: &Triplet, warm: &[Vec<f64>]) -> Result<Vec<f64>>;
    /// Reporting coordinates `h(theta)` and the covariance of `sqrt(n) h(theta_hat)`.
    fn reported_variance(&self, theta: &[f64], trip: &Triplet, plugin: VariancePlugin) -> Result<(Vec<f64>, DMatrix<f64>)>;
    fn report(&self, theta: &[f64]) -> Vec<f64>;
}

pub struct UnivariateTarget<'a> {
    pub sample: &'a Sample,
    pub model: &'a dyn Model,
}

fn tuning_fit_config(warm: &[Vec<f64>]) -> FitConfig {
    FitConfig {
        strategy: Strategy::NewtonFirst,
        multistart: Multistart::Never,
        compute_variance: false,
        extra_starts: warm.iter().cloned().map(ParamVector::new).collect(),
        ..FitConfig::default()
    }
}

impl WjTarget for UnivariateTarget<'_> {
    fn n(&self) -> usize {
        self.sample.len()
    }

    fn default_plugin(&self) -> VariancePlugin {
        VariancePlugin::Hybrid
    }

    fn pilot(&self, gamma: f64) -> Result<Vec<f64>> {
        Ok(pilot_estimate_gamma(self.sample, self.model, gamma)?.into_vec())
    }

    fn fit(&self, trip: &Triplet, warm: &[Vec<f64>]) -> Result<Vec<f64>> {
        let f = fit_mepde_with(self.sample, self.model, trip, None, &tuning_fit_config(warm))?;
        if !f.converged {
            return Err(EpdError::Estimation(format!("fit at {trip} did not converge")));
        }
        Ok(f.theta_hat.into_vec())
    }

    fn reported_variance(&self, theta: &[f64], trip: &Triplet, plugin: VariancePlugin) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let empirical = || general_jk(TrueDensity::Empirical(self.sample.as_slice()), self.model, theta, trip);
        let v = match plugin {
            VariancePlugin::Empirical => empirical()?.variance,
            VariancePlugin::Model => model_jkxi(self.model, theta, trip)?.variance,
            VariancePlugin::Hybrid => {
                let j = model_jkxi(self.model, theta, trip)?.j;
                let (inv, _) = inverse_symmetric(&j, "J")?;
                sandwich(&inv, &empirical()?.k)
            }
        };
        let (h, d) = self.model.report_transform(theta);
        Ok((h, &d * &v * d.transpose()))
    }

    fn report(&self, theta: &[f64]) -> Vec<f64> {
        self.model.report_transform(theta).0
    }
}

pub struct RegressionTarget<'a> {
    pub problem: &'a RegressionProblem,
    /// Seed for the least-median-of-squares start of the pilot fit.
    pub seed: u64,
}

impl<'a> RegressionTarget<'a> {
    pub fn new(problem: &'a RegressionProblem) -> Self {
        RegressionTarget { problem, seed: 0 }
    }
}

impl WjTarget for RegressionTarget<'_> {
    fn n(&self) -> usize {
        self.problem.n()
    }

    /// A fixed design has one draw per density, so only the model-based
    /// `Psi_n` and `Omega_n` are available.
    fn default_plugin(&self) -> VariancePlugin {
        VariancePlugin::Model
    }

    fn pilot(&self, gamma: f64) -> Result<Vec<f64>> {
        let cfg = RegressionConfig {
            compute_variance: false,
            seed: self.seed,
            ..RegressionConfig::default()
        };
        let f = fit_regression_mepde_with(self.problem, &Triplet::dpd(gamma), None, &cfg)?;
        if !f.converged {
            return Err(EpdError::Tuning("regression pilot fit did not converge".into()));
        }
        Ok(f.theta())
    }

    fn fit(&self, trip: &Triplet, warm: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cfg = RegressionConfig {
            compute_variance: false,
            strategy: Strategy::NewtonFirst,
            seed: self.seed,
            extra_starts: warm.iter().skip(1).cloned().map(ParamVector::new).collect(),
            ..RegressionConfig::default()
        };
        let init = warm.first().cloned().map(ParamVector::new);
        let f = fit_regression_mepde_with(self.problem, trip, init.as_ref(), &cfg)?;
        if !f.converged {
            return Err(EpdError::Estimation(format!("regression fit at {trip} did not converge")));
        }
        Ok(f.theta())
    }

    fn reported_variance(&self, theta: &[f64], trip: &Triplet, plugin: VariancePlugin) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let empirical = || general_inh_matrices(self.problem, theta, trip, InhDensity::Empirical);
        let model = || psi_omega_matrices(self.problem, theta[self.problem.p()], trip);
        let (psi, omega) = match plugin {
            VariancePlugin::Empirical => {
                let m = empirical()?;
                (m.psi, m.omega)
            }
            VariancePlugin::Model => model()?,
            VariancePlugin::Hybrid => (model()?.0, empirical()?.omega),
        };
        let (inv, _) = inverse_symmetric(&psi, "Psi_n")?;
        Ok((theta.to_vec(), sandwich(&inv, &omega)))
    }

    fn report(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }
}

/// Criterion at one triplet; returns the value and `theta_hat`.
pub fn evaluate_mse(
    target: &dyn WjTarget,
    trip: &Triplet,
    pilot: &[f64],
    plugin: VariancePlugin,
    warm: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let mut starts = vec![pilot.to_vec()];
    starts.extend(warm.iter().cloned());
    let theta = target.fit(trip, &starts)?;
    let (h, v) = target.reported_variance(&theta, trip, plugin)?;
    let hp = target.report(pilot);
    let bias: f64 = h.iter().zip(&hp).map(|(a, b)| (a - b) * (a - b)).sum();
    let mse = v.trace() / target.n() as f64 + bias;
    if mse.is_finite() && mse >= 0.0 {
        Ok((mse, theta))
    } else {
        Err(EpdError::Tuning(format!("non-finite criterion at {trip}")))
    }
}

/// MDPDE at `gamma = 0.5`.
pub fn pilot_estimate(sample: &Sample, model: &dyn Model) -> Result<ParamVector> {
    pilot_estimate_gamma(sample, model, 0.5)
}

pub fn pilot_estimate_gamma(sample: &Sample, model: &dyn Model, gamma: f64) -> Result<ParamVector> {
    let f = fit_mepde(sample, model, &Triplet::dpd(gamma), None)?;
    if !f.converged {
        return Err(EpdError::Tuning(format!("pilot fit did not converge: {:?}", f.warnings)));
    }
    Ok(f.theta_hat)
}

/// Empirical summed MSE at `trip` with the hybrid plug-in; `+inf` when the fit
/// or `J` degenerates.
pub fn empirical_mse(sample: &Sample, model: &dyn Model, trip: &Triplet, pilot: &ParamVector) -> f64 {
    empirical_mse_with(sample, model, trip, pilot, VariancePlugin::Hybrid)
}

pub fn empirical_mse_with(sample: &Sample, model: &dyn Model, trip: &Triplet, pilot: &ParamVector, plugin: VariancePlugin) -> f64 {
    let target = UnivariateTarget { sample, model };
    evaluate_mse(&target, trip, pilot, plugin, &[])
        .map(|(m, _)| m)
        .unwrap_or(f64::INFINITY)
}

fn linspace((lo, hi): (f64, f64), k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// Representative of the equivalence class of triplets that define the same
/// divergence: alpha is inert when beta = 0, gamma when beta = 1.
fn canonical(t: Triplet) -> Triplet {
    let mut t = t;
    if t.beta == 0.0 {
        t.alpha = 0.0;
    }
    if t.beta == 1.0 {
        t.gamma = 0.0;
    }
    t
}

/// Order used for tie-breaking: smaller gamma, then beta, then |alpha|.
fn prefer(a: &SurfacePoint, b: &SurfacePoint) -> bool {
    let tol = 1e-10 * (1.0 + a.mse.abs().min(b.mse.abs()));
    if (a.mse - b.mse).abs() > tol || !a.mse.is_finite() || !b.mse.is_finite() {
        return a.mse < b.mse;
    }
    let ka = (a.triplet.gamma, a.triplet.beta, a.triplet.alpha.abs());
    let kb = (b.triplet.gamma, b.triplet.beta, b.triplet.alpha.abs());
    ka < kb
}

fn best_of(points: &[SurfacePoint]) -> Option<&SurfacePoint> {
    points.iter().fold(None, |acc: Option<&SurfacePoint>, p| match acc {
        Some(b) if !prefer(p, b) => Some(b),
        _ => Some(p),
    })
}

fn evaluate_cells(target: &dyn WjTarget, cells: &[Triplet], pilot: &[f64], plugin: VariancePlugin) -> Vec<SurfacePoint> {
    cells
        .par_iter()
        .map(|t| match evaluate_mse(target, t, pilot, plugin, &[]) {
            Ok((mse, th)) => SurfacePoint {
                triplet: *t,
                mse,
                theta: Some(ParamVector::new(th)),
            },
            Err(_) => SurfacePoint {
                triplet: *t,
                mse: f64::INFINITY,
                theta: None,
            },
        })
        .collect()
}

/// Simplex refinement in the box, from one grid cell. Coordinates are scaled
/// by the grid spacing; `free` selects which of (alpha, beta, gamma) move.
fn refine_from(
    target: &dyn WjTarget,
    start: &SurfacePoint,
    pilot: &[f64],
    cfg: &TuneConfig,
    free: [bool; 3],
) -> Vec<SurfacePoint> {
    let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
    let ranges = [cfg.alpha_range, cfg.beta_range, cfg.gamma_range];
    let widths: Vec<f64> = ranges
        .iter()
        .zip(cfg.grid_sizes)
        .map(|(&(lo, hi), k)| if k > 1 { (hi - lo) / (k - 1) as f64 } else { (hi - lo).max(1e-3) })
        .collect();
    let base = [start.triplet.alpha, start.triplet.beta, start.triplet.gamma];
    let idx: Vec<usize> = (0..3).filter(|&j| free[j] && ranges[j].1 > ranges[j].0).collect();
    if idx.is_empty() {
        return Vec::new();
    }
    let warm = std::cell::RefCell::new(start.theta.clone().map(|t| t.into_vec()));
    let visited = std::cell::RefCell::new(Vec::new());
    let to_trip = |z: &[f64]| -> Option<Triplet> {
        let mut v = base;
        for (k, &j) in idx.iter().enumerate() {
            v[j] = base[j] + z[k] * widths[j];
            if v[j] < ranges[j].0 || v[j] > ranges[j].1 {
                return None;
            }
        }
        Triplet::new(v[0], v[1], v[2]).ok()
    };
    let f = |z: &[f64]| -> f64 {
        let Some(t) = to_trip(z) else { return f64::INFINITY };
        let w: Vec<Vec<f64>> = warm.borrow().iter().cloned().collect();
        match evaluate_mse(target, &t, pilot, plugin, &w) {
            Ok((m, th)) => {
                *warm.borrow_mut() = Some(th.clone());
                visited.borrow_mut().push(SurfacePoint {
                    triplet: t,
                    mse: m,
                    theta: Some(ParamVector::new(th)),
                });
                m
            }
            Err(_) => f64::INFINITY,
        }
    };
    let nm_cfg = NelderMeadConfig {
        max_iterations: cfg.refine_iterations,
        x_tol: 1e-5,
        f_tol: 1e-12,
    };
    let z0 = vec![0.0; idx.len()];
    // step inward so the initial simplex stays in the box
    let step: Vec<f64> = idx
        .iter()
        .map(|&j| if base[j] + 0.5 * widths[j] > ranges[j].1 { -0.5 } else { 0.5 })
        .collect();
    let _ = nelder_mead(f, &z0, &step, &nm_cfg);
    visited.into_inner()
}

fn search(
    target: &dyn WjTarget,
    pilot: &[f64],
    cfg: &TuneConfig,
    grid: Vec<Triplet>,
    free: [bool; 3],
    extra: &[SurfacePoint],
) -> Result<TuneResult> {
    let mut uniq: Vec<Triplet> = Vec::new();
    for t in grid.into_iter().map(canonical) {
        if !uniq.contains(&t) {
            uniq.push(t);
        }
    }
    let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
    let mut surface = evaluate_cells(target, &uniq, pilot, plugin);
    let mut log = Vec::new();
    let sentinels = surface.iter().filter(|p| !p.mse.is_finite()).count();
    if sentinels > 0 {
        log.push(format!("{sentinels} of {} grid cells degenerate (+inf sentinel)", surface.len()));
    }
    if surface.iter().all(|p| !p.mse.is_finite()) {
        return Err(EpdError::Tuning("every grid cell is degenerate".into()));
    }
    if cfg.refine && cfg.refine_cells > 0 {
        let mut order: Vec<usize> = (0..surface.len()).filter(|&i| surface[i].mse.is_finite()).collect();
        order.sort_by(|&a, &b| {
            if prefer(&surface[a], &surface[b]) {
                std::cmp::Ordering::Less
            } else if prefer(&surface[b], &surface[a]) {
                std::cmp::Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        let starts: Vec<SurfacePoint> = order.iter().take(cfg.refine_cells).map(|&i| surface[i].clone()).collect();
        let refined: Vec<Vec<SurfacePoint>> = starts.par_iter().map(|s| refine_from(target, s, pilot, cfg, free)).collect();
        let count: usize = refined.iter().map(Vec::len).sum();
        log.push(format!("refinement evaluated {count} triplets from {} cells", starts.len()));
        surface.extend(refined.into_iter().flatten());
    }
    surface.extend(extra.iter().cloned());
    let best = best_of(&surface).cloned().ok_or_else(|| EpdError::Tuning("empty surface".into()))?;
    Ok(TuneResult {
        triplet: best.triplet,
        theta_hat: best.theta.clone().ok_or_else(|| EpdError::Tuning("no finite criterion value".into()))?,
        empirical_mse: best.mse,
        surface,
        pilot: ParamVector::new(pilot.to_vec()),
        log,
    })
}

/// Grid scan then simplex refinement over the triplet box, plus the
/// DPD-restricted companion. The restricted optimum is offered to the
/// unrestricted search so its criterion can never be worse.
pub fn tune_target(target: &dyn WjTarget, cfg: &TuneConfig) -> Result<TuneReport> {
    cfg.validate()?;
    let pilot = target.pilot(cfg.pilot_gamma)?;
    let [ka, kb, kg] = cfg.grid_sizes;
    let alphas = linspace(cfg.alpha_range, ka);
    let betas = linspace(cfg.beta_range, kb);
    let gammas = linspace(cfg.gamma_range, kg);

    let dpd_grid: Vec<Triplet> = gammas.iter().map(|&g| Triplet::dpd(g)).collect();
    let dpd_cfg = TuneConfig {
        alpha_range: (0.0, 0.0),
        beta_range: (0.0, 0.0),
        ..cfg.clone()
    };
    let dpd = search(target, &pilot, &dpd_cfg, dpd_grid, [false, false, true], &[])?;

    let mut grid = Vec::with_capacity(ka * kb * kg);
    for &a in &alphas {
        for &b in &betas {
            for &g in &gammas {
                grid.push(Triplet::new(a, b, g)?);
            }
        }
    }
    let in_box = cfg.beta_range.0 == 0.0;
    let extra: Vec<SurfacePoint> = if in_box {
        dpd.surface.iter().filter(|p| p.triplet.gamma >= cfg.gamma_range.0 && p.triplet.gamma <= cfg.gamma_range.1).cloned().collect()
    } else {
        Vec::new()
    };
    let mut unrestricted = search(target, &pilot, cfg, grid, [true, true, true], &extra)?;
    // the tie rule in `prefer` may trade up to 1e-10 relative for a smaller
    // gamma; dominance over the restricted search must hold exactly
    if in_box && dpd.empirical_mse < unrestricted.empirical_mse {
        unrestricted.triplet = dpd.triplet;
        unrestricted.theta_hat = dpd.theta_hat.clone();
        unrestricted.empirical_mse = dpd.empirical_mse;
    }
    Ok(TuneReport { unrestricted, dpd })
}

pub fn tune_wj(sample: &Sample, model: &dyn Model, cfg: &TuneConfig) -> Result<TuneReport> {
    tune_target(&UnivariateTarget { sample, model }, cfg)
}

pub fn tune_regression_wj(problem: &RegressionProblem, cfg: &TuneConfig) -> Result<TuneReport> {
    tune_target(&RegressionTarget::new(problem), cfg)
}

/// Criterion on a grid without refinement (for plotting).
pub fn mse_surface(target: &dyn WjTarget, cfg: &TuneConfig) -> Result<(Vec<f64>, Vec<SurfacePoint>)> {
    cfg.validate()?;
    let pilot = target.pilot(cfg.pilot_gamma)?;
    let [ka, kb, kg] = cfg.grid_sizes;
    let mut grid = Vec::new();
    for &a in &linspace(cfg.alpha_range, ka) {
        for &b in &linspace(cfg.beta_range, kb) {
            for &g in &linspace(cfg.gamma_range, kg) {
                grid.push(Triplet::new(a, b, g)?);
            }
        }
    }
    let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
    Ok((pilot.clone(), evaluate_cells(target, &grid, &pilot, plugin)))
}
