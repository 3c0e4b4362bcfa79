//! Small derivative-free optimizers used by the estimators.

use crate::error::{EpdError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    pub max_iterations: usize,
    /// Stop when every vertex lies within `x_tol * (1 + |x|)` of the best vertex.
    pub x_tol: f64,
    /// ... and the function values span less than `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iterations: 2000,
            x_tol: 1e-9,
            f_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Relative simplex diameter at exit.
    pub diameter: f64,
}

/// Minimize `f` starting from `x0` with per-coordinate initial steps `step`.
///
/// Non-finite objective values are treated as `+inf`, so infeasible points are
/// simply rejected by the simplex moves. Standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], cfg: &NelderMeadConfig) -> Result<NelderMeadResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 || step.len() != n {
        return Err(EpdError::Parameter("nelder_mead: dimension mismatch".into()));
    }
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    if values.iter().all(|v| v.is_infinite()) {
        return Err(EpdError::Estimation(
            "objective is not finite anywhere on the initial simplex".into(),
        ));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut diameter = f64::INFINITY;
    while iterations < cfg.max_iterations {
        // order vertices by value, index-stable for determinism
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = &simplex[0];
        diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        let spread = values[n] - values[0];
        if diameter < cfg.x_tol && spread.abs() <= cfg.f_tol * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            values[i] = eval(&simplex[i]);
        }
    }
    let (ib, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    Ok(NelderMeadResult {
        x: simplex[ib].clone(),
        f: values[ib],
        iterations,
        evaluations,
        converged,
        diameter,
    })
}

/// Brent's method for a root of `f` in `[a, b]`; `f(a)` and `f(b)` must differ in sign.
pub fn brent_root<F>(f: F, mut a: f64, mut b: f64, x_tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(EpdError::Estimation(format!(
            "root not bracketed in [{a}, {b}] (f = {fa}, {fb})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * x_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(EpdError::Estimation("brent_root: iteration limit reached".into()))
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub fn golden_max<F>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol * (1.0 + a.abs().max(b.abs())) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
            &NelderMeadConfig {
                max_iterations: 5000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let r = nelder_mead(
            |x| if x[0] <= 0.0 { f64::NAN } else { x[0] - x[0].ln() },
            &[3.0],
            &[0.5],
            &NelderMeadConfig::default(),
        )
        .unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| Ok(x * x * x - 2.0), 0.0, 2.0, 1e-14, 100).unwrap();
        assert_relative_eq!(r, 2f64.cbrt(), epsilon = 1e-12);
        assert!(brent_root(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 100).is_err());
    }

    #[test]
    fn golden_finds_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3).powi(2) + 2.0, -1.0, 2.0, 1e-10);
        assert_relative_eq!(x, 0.3, epsilon = 1e-7);
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }
}
