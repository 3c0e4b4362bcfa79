//! Independent reference computations shared by the integration tests. None
//! of these call the library's solvers or quadrature.

#![allow(dead_code)]

use std::f64::consts::PI;

use epd::nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn normal_sample(n: usize, mu: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mu, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

pub fn phi(x: f64, mu: f64, s2: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()
}

/// `int phi^{1+a} = (2 pi s2)^{-a/2} / sqrt(1+a)`.
pub fn gauss_power(s2: f64, a: f64) -> f64 {
    (2.0 * PI * s2).powf(-a / 2.0) / (1.0 + a).sqrt()
}

/// `E[u u^T]` for the normal score under `N(mu, tau2)`, with `u` taken at variance `s2`.
fn score_outer(s2: f64, tau2: f64) -> DMatrix<f64> {
    let s4 = s2 * s2;
    let v = (3.0 * tau2 * tau2 - 2.0 * tau2 * s2 + s4) / (4.0 * s4 * s4);
    DMatrix::from_row_slice(2, 2, &[tau2 / s4, 0.0, 0.0, v])
}

/// `E[u]` under `N(mu, tau2)`.
fn score_mean(s2: f64, tau2: f64) -> DVector<f64> {
    DVector::from_vec(vec![0.0, (tau2 - s2) / (2.0 * s2 * s2)])
}

/// Model `J`, `K`, `xi` of the density power divergence for `N(mu, s2)`, where
/// the weight is `w(f) = (1 + gamma) f^gamma`.
pub fn dpd_jk_oracle(s2: f64, gamma: f64) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let c1 = (1.0 + gamma) * gauss_power(s2, gamma);
    let c2 = (1.0 + gamma).powi(2) * gauss_power(s2, 2.0 * gamma);
    let t1 = s2 / (1.0 + gamma);
    let t2 = s2 / (1.0 + 2.0 * gamma);
    let xi = score_mean(s2, t1) * c1;
    let j = score_outer(s2, t1) * c1;
    let k = score_outer(s2, t2) * c2 - &xi * xi.transpose();
    (j, k, xi)
}

/// `(omega1, omega2, omega3, omega4)` for the density power divergence.
pub fn dpd_omega_oracle(s2: f64, gamma: f64) -> [f64; 4] {
    let (j, k, _) = dpd_jk_oracle(s2, gamma);
    let c2 = (1.0 + gamma).powi(2) * gauss_power(s2, 2.0 * gamma);
    let t2 = s2 / (1.0 + 2.0 * gamma);
    // y^2 / s2^2 moments coincide with u_mu^2
    [j[(0, 0)], j[(1, 1)], c2 * t2 / (s2 * s2), k[(1, 1)]]
}

/// Closed-form density power divergence objective (up to constants) for the normal model.
pub fn dpd_objective(x: &[f64], mu: f64, s2: f64, gamma: f64) -> f64 {
    let mean: f64 = x.iter().map(|&xi| phi(xi, mu, s2).powf(gamma)).sum::<f64>() / x.len() as f64;
    gauss_power(s2, gamma) - (1.0 + 1.0 / gamma) * mean
}

/// Plain Nelder-Mead, written separately from the library's.
pub fn simplex_min(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, iters: usize) -> Vec<f64> {
    let d = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let cent: Vec<f64> = (0..d).map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| cent[j] + t * (pts[d][j] - cent[j])).collect() };
        let r = along(-1.0);
        let fr = f(&r);
        if fr < vals[0] {
            let e = along(-2.0);
            let fe = f(&e);
            if fe < fr {
                pts[d] = e;
                vals[d] = fe;
            } else {
                pts[d] = r;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = r;
            vals[d] = fr;
        } else {
            let c = if fr < vals[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&c);
            if fc < vals[d].min(fr) {
                pts[d] = c;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    pts[i] = (0..d).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    pts[best].clone()
}

/// Direct minimizer of the closed-form DPD objective: simplex on `(mu, ln s2)`
/// followed by the weighted-moment fixed point of its stationarity equations.
pub fn dpd_direct(x: &[f64], gamma: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let m0 = x.iter().sum::<f64>() / n;
    let v0 = x.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / n;
    let z = simplex_min(|p| dpd_objective(x, p[0], p[1].exp(), gamma), &[m0, v0.ln()], 0.3, 2000);
    let (mut mu, mut s2) = (z[0], z[1].exp());
    for _ in 0..10_000 {
        let w: Vec<f64> = x.iter().map(|&xi| phi(xi, mu, s2).powf(gamma)).collect();
        let sw: f64 = w.iter().sum();
        let mu_new = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / sw;
        let mw = sw / n;
        let mr: f64 = w.iter().zip(x).map(|(a, b)| a * (b - mu_new).powi(2)).sum::<f64>() / n;
        let c = gamma * gauss_power(s2, gamma) / (1.0 + gamma);
        let s2_new = mr / (mw - c);
        let done = (mu_new - mu).abs() < 1e-15 * (1.0 + mu.abs()) && (s2_new - s2).abs() < 1e-15 * s2;
        mu = mu_new;
        s2 = s2_new;
        if done {
            break;
        }
    }
    (mu, s2)
}

/// Regression DPD estimate by iterated weighted least squares on the
/// stationarity equations, started from `start`.
pub fn regression_dpd_direct(x: &DMatrix<f64>, y: &DVector<f64>, gamma: f64, start: &[f64]) -> Vec<f64> {
    let n = y.len();
    let p = x.ncols();
    let mut eta = DVector::from_column_slice(&start[..p]);
    let mut s2 = start[p];
    for _ in 0..20_000 {
        let r = y - x * &eta;
        let w: Vec<f64> = r.iter().map(|&ri| phi(ri, 0.0, s2).powf(gamma)).collect();
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwy = DVector::zeros(p);
        for i in 0..n {
            let row = x.row(i).transpose();
            xtwx += &row * row.transpose() * w[i];
            xtwy += &row * (w[i] * y[i]);
        }
        let eta_new = xtwx.cholesky().unwrap().solve(&xtwy);
        let r = y - x * &eta_new;
        let mw = w.iter().sum::<f64>() / n as f64;
        let mr = w.iter().zip(r.iter()).map(|(a, b)| a * b * b).sum::<f64>() / n as f64;
        let c = gamma * gauss_power(s2, gamma) / (1.0 + gamma);
        let s2_new = mr / (mw - c);
        let step = (&eta_new - &eta).amax() + (s2_new - s2).abs();
        eta = eta_new;
        s2 = s2_new;
        if step < 1e-15 * (1.0 + eta.amax() + s2) {
            break;
        }
    }
    let mut out: Vec<f64> = eta.iter().copied().collect();
    out.push(s2);
    out
}

/// Minimizer of `f` over a box by repeated grid zooming.
pub fn grid_zoom(f: impl Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], points: usize, rounds: usize) -> Vec<f64> {
    let d = lo.len();
    let (mut lo, mut hi) = (lo.to_vec(), hi.to_vec());
    let mut best = lo.clone();
    for _ in 0..rounds {
        let mut fbest = f64::INFINITY;
        let total = points.pow(d as u32);
        for idx in 0..total {
            let mut k = idx;
            let p: Vec<f64> = (0..d)
                .map(|j| {
                    let i = k % points;
                    k /= points;
                    lo[j] + (hi[j] - lo[j]) * i as f64 / (points - 1) as f64
                })
                .collect();
            let v = f(&p);
            if v < fbest {
                fbest = v;
                best = p;
            }
        }
        for j in 0..d {
            let h = 2.0 * (hi[j] - lo[j]) / (points - 1) as f64;
            lo[j] = best[j] - h;
            hi[j] = best[j] + h;
        }
    }
    best
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Prints the criterion line and returns the verdict.
pub fn report(id: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
