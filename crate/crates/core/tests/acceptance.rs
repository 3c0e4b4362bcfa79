//! One test per acceptance criterion. Each prints a single PASS/FAIL line with
//! the measured quantities before asserting.

mod common;

use std::time::Instant;

use common::*;
use epd::asymptotics::{ges, influence, model_jkxi};
use epd::data::load_dataset;
use epd::estimation::{estimating_residual, objective_hn, Sample};
use epd::regression::{ols, omega_integrals};
use epd::tuning::{evaluate_mse, tune_target, RegressionTarget, TuneConfig, UnivariateTarget, WjTarget};
use epd::{fit_mepde, fit_mle, fit_regression_mepde, ExponentialMean, Model, NormalLocationScale, Triplet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn sample(name: &str) -> Sample {
    load_dataset(name).unwrap().sample().unwrap().clone()
}

fn within(got: &[f64], want: &[f64], tol: f64) -> (bool, f64) {
    let worst = got.iter().zip(want).map(|(g, w)| rel(*g, *w)).fold(0.0, f64::max);
    (worst <= tol, worst)
}

#[test]
fn criterion_01_reduction_identities() {
    let t0 = Instant::now();
    let model = NormalLocationScale;
    let mut worst_fit: f64 = 0.0;
    for seed in 0..20 {
        let x = normal_sample(10 + 3 * seed as usize, 2.0 * seed as f64 - 15.0, 0.5 + seed as f64, seed);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let f = fit_mle(&Sample::new(x).unwrap(), &model).unwrap();
        worst_fit = worst_fit.max(((f.theta_hat[0] - mean) / var.sqrt()).abs()).max(rel(f.theta_hat[1], var));
    }
    let mut worst_info: f64 = 0.0;
    for (mu, s2) in [(0.0, 1.0), (3.0, 0.25), (-40.0, 90.0)] {
        let m = model_jkxi(&model, &[mu, s2], &Triplet::kl()).unwrap();
        let fisher = [1.0 / s2, 0.0, 0.0, 1.0 / (2.0 * s2 * s2)];
        for (i, want) in fisher.iter().enumerate() {
            let got = m.j[(i / 2, i % 2)];
            let scale = fisher[0].max(fisher[3]);
            worst_info = worst_info.max((got - want).abs() / scale);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_fit <= 1e-8 && worst_info <= 1e-7 && secs < 1.0;
    let detail = format!("MLE max rel dev {worst_fit:.2e} (tol 1e-8), Fisher info max rel dev {worst_info:.2e} (tol 1e-7), {secs:.3}s (< 1s)");
    assert!(report("1", pass, &detail));
}

#[test]
fn criterion_02_dpd_equivalence() {
    let t0 = Instant::now();
    let model = NormalLocationScale;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let x = normal_sample(50, 0.0, 1.0, 1000 + seed);
        let s = Sample::new(x.clone()).unwrap();
        for gamma in [0.1, 0.25, 0.5, 1.0] {
            let (mu, s2) = dpd_direct(&x, gamma);
            let f = fit_mepde(&s, &model, &Triplet::dpd(gamma), None).unwrap();
            worst = worst.max((f.theta_hat[0] - mu).abs()).max((f.theta_hat[1] - s2).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && secs < 10.0;
    assert!(report("2", pass, &format!("max coordinate deviation from direct DPD minimizer {worst:.2e} (tol 1e-6) over 80 fits, {secs:.2}s (< 10s)")));
}

#[test]
fn criterion_03_telephone_fault() {
    let s = sample("telephone-fault");
    let m = fit_mle(&s, &NormalLocationScale).unwrap();
    let f = fit_mepde(&s, &NormalLocationScale, &Triplet::new(0.98, 0.367, 0.146).unwrap(), None).unwrap();
    let (p1, e1) = within(&[m.theta_hat[0], m.theta_hat[1].sqrt()], &[40.3571, 311.332], 5e-3);
    let (p2, e2) = within(&[f.theta_hat[0], f.theta_hat[1].sqrt()], &[122.205, 136.962], 1e-2);
    let detail = format!(
        "MLE ({:.4}, {:.3}) max rel {e1:.2e} (tol 5e-3); MEPDE ({:.4}, {:.4}) vs (122.205, 136.962) max rel {e2:.2e} (tol 1e-2)",
        m.theta_hat[0],
        m.theta_hat[1].sqrt(),
        f.theta_hat[0],
        f.theta_hat[1].sqrt()
    );
    assert!(report("3", p1 && p2 && f.converged, &detail));
}

#[test]
fn criterion_04_newcomb() {
    let s = sample("newcomb");
    let m = fit_mle(&s, &NormalLocationScale).unwrap();
    let f = fit_mepde(&s, &NormalLocationScale, &Triplet::new(0.996, 0.422, 0.297).unwrap(), None).unwrap();
    let (p1, e1) = within(&[m.theta_hat[0], m.theta_hat[1].sqrt()], &[26.2121, 10.6636], 5e-3);
    let (p2, e2) = within(&[f.theta_hat[0], f.theta_hat[1].sqrt()], &[27.6036, 4.99074], 1e-2);
    let detail = format!(
        "MLE ({:.4}, {:.4}) max rel {e1:.2e} (tol 5e-3); MEPDE ({:.4}, {:.5}) vs (27.6036, 4.99074) max rel {e2:.2e} (tol 1e-2)",
        m.theta_hat[0],
        m.theta_hat[1].sqrt(),
        f.theta_hat[0],
        f.theta_hat[1].sqrt()
    );
    assert!(report("4", p1 && p2 && f.converged, &detail));
}

#[test]
fn criterion_05_darwin() {
    let s = sample("darwin");
    let f = fit_mepde(&s, &NormalLocationScale, &Triplet::dpd(0.5353), None).unwrap();
    let (p, e) = within(&[f.theta_hat[0], f.theta_hat[1].sqrt()], &[29.8026, 25.2416], 1e-2);
    let detail = format!("MDPDE ({:.4}, {:.4}) vs (29.8026, 25.2416) max rel {e:.2e} (tol 1e-2)", f.theta_hat[0], f.theta_hat[1].sqrt());
    assert!(report("5", p && f.converged, &detail));
}

#[test]
fn criterion_06_insulating_fluid() {
    let s = sample("insulating-fluid");
    let m = fit_mle(&s, &ExponentialMean).unwrap();
    let f = fit_mepde(&s, &ExponentialMean, &Triplet::new(-33.0234, 1.0, 0.5878).unwrap(), None).unwrap();
    let e1 = rel(m.theta_hat[0], 14.3589);
    let e2 = rel(f.theta_hat[0], 8.1599);
    // informational: the same digits with the decimal point two places left
    let g = fit_mepde(&s, &ExponentialMean, &Triplet::new(-0.330234, 1.0, 0.5878).unwrap(), None).unwrap();
    println!(
        "criterion 6 (info, not asserted): at alpha = -0.330234 the estimate is {:.4}, rel dev {:.2e} from 8.1599",
        g.theta_hat[0],
        rel(g.theta_hat[0], 8.1599)
    );
    let detail = format!(
        "MLE {:.4} rel {e1:.2e} (tol 5e-3); MEPDE at alpha -33.0234 = {:.4} vs 8.1599 rel {e2:.2e} (tol 2e-2)",
        m.theta_hat[0], f.theta_hat[0]
    );
    assert!(report("6", e1 <= 5e-3 && e2 <= 2e-2 && f.converged, &detail));
}

fn regression_case(id: &str, name: &str, trip: (f64, f64, f64), ols_want: [f64; 3], fit_want: [f64; 3]) {
    let p = load_dataset(name).unwrap().problem(true).unwrap();
    let o = ols(&p).unwrap();
    let (p1, e1) = within(&[o.eta[0], o.eta[1], o.sigma2], &ols_want, 5e-3);
    let f = fit_regression_mepde(&p, &Triplet::new(trip.0, trip.1, trip.2).unwrap(), None).unwrap();
    let t = f.theta();
    let (p2, e2) = within(&t, &fit_want, 2e-2);
    let detail = format!(
        "OLS ({:.4}, {:.4}, {:.4}) max rel {e1:.2e} (tol 5e-3); MEPDE ({:.4}, {:.4}, {:.4}) vs {fit_want:?} max rel {e2:.2e} (tol 2e-2)",
        o.eta[0], o.eta[1], o.sigma2, t[0], t[1], t[2]
    );
    assert!(report(id, p1 && p2 && f.converged, &detail));
}

#[test]
fn criterion_07_star_cluster() {
    regression_case("7", "star-cluster", (-4.8715, 0.9897, 0.7558), [6.7935, -0.4133, 0.3188], [-8.1389, 2.9660, 0.1035]);
}

#[test]
fn criterion_08_belgian_phones() {
    regression_case("8", "belgian-phones", (-4.2416, 0.0543, 0.3205), [-26.006, 0.5041, 31.6107], [-5.2278, 0.1095, 0.0123]);
}

fn tuning_case(name: &str, target: &dyn WjTarget, reference: Triplet) -> bool {
    let t0 = Instant::now();
    let cfg = TuneConfig::default();
    let rep = tune_target(target, &cfg).unwrap();
    let plugin = target.default_plugin();
    let at_reference = evaluate_mse(target, &reference, rep.unrestricted.pilot.as_slice(), plugin, &[])
        .map(|r| r.0)
        .unwrap_or(f64::INFINITY);
    let secs = t0.elapsed().as_secs_f64();
    let u = rep.unrestricted.empirical_mse;
    let d = rep.dpd.empirical_mse;
    let ratio = at_reference / u;
    let pass = u <= d && ratio <= 1.10 && secs <= 300.0;
    println!(
        "criterion 9 [{name}]: {} | unrestricted {u:.6e} at {} <= DPD {d:.6e}: {}; reference triplet {reference} mse {at_reference:.6e}, ratio {ratio:.4} (tol 1.10); {secs:.1}s (<= 300s)",
        if pass { "PASS" } else { "FAIL" },
        rep.unrestricted.triplet,
        u <= d
    );
    pass
}

#[test]
fn criterion_09_tuning_dominance() {
    let mut all = true;
    for (name, reference) in [
        ("telephone-fault", (0.98, 0.367, 0.146)),
        ("newcomb", (0.996, 0.422, 0.297)),
        ("darwin", (1.0, 0.0, 0.5353)),
        ("insulating-fluid", (-33.0234, 1.0, 0.5878)),
    ] {
        let rec = load_dataset(name).unwrap();
        let model: &dyn Model = if rec.default_model == "exponential" { &ExponentialMean } else { &NormalLocationScale };
        let target = UnivariateTarget { sample: rec.sample().unwrap(), model };
        all &= tuning_case(name, &target, Triplet::new(reference.0, reference.1, reference.2).unwrap());
    }
    for (name, reference) in [("star-cluster", (-4.8715, 0.9897, 0.7558)), ("belgian-phones", (-4.2416, 0.0543, 0.3205))] {
        let problem = load_dataset(name).unwrap().problem(true).unwrap();
        let target = RegressionTarget::new(&problem);
        all &= tuning_case(name, &target, Triplet::new(reference.0, reference.1, reference.2).unwrap());
    }
    assert!(report("9", all, "all six datasets (see per-dataset lines)"));
}

#[test]
fn criterion_10_sandwich_calibration() {
    let t0 = Instant::now();
    let trip = Triplet::new(-1.0, 0.4, 0.2).unwrap();
    let model = NormalLocationScale;
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let d = Normal::new(0.0, 1.0).unwrap();
    let mut mus = Vec::with_capacity(500);
    for _ in 0..500 {
        let x: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let f = fit_mepde(&Sample::new(x).unwrap(), &model, &trip, None).unwrap();
        assert!(f.converged);
        mus.push(f.theta_hat[0]);
    }
    let m = mus.iter().sum::<f64>() / mus.len() as f64;
    let sd = (mus.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (mus.len() - 1) as f64).sqrt();
    let asym = (model_jkxi(&model, &[0.0, 1.0], &trip).unwrap().variance[(0, 0)] / n as f64).sqrt();
    let secs = t0.elapsed().as_secs_f64();
    let e = rel(sd, asym);
    let pass = e <= 0.15 && secs <= 120.0;
    assert!(report("10", pass, &format!("Monte Carlo sd {sd:.5} vs asymptotic {asym:.5}, rel {e:.3} (tol 0.15), {secs:.1}s (<= 120s)")));
}

#[test]
fn criterion_11_gradient_and_oracles() {
    let model = NormalLocationScale;
    // (a) finite differences of H_n against the analytic residual
    let mut worst_fd: f64 = 0.0;
    for (seed, trip) in [(1, Triplet::new(0.5, 0.3, 0.4).unwrap()), (2, Triplet::new(-2.0, 0.8, 0.2).unwrap()), (3, Triplet::dpd(0.7)), (4, Triplet::bed(1.5))] {
        let s = Sample::new(normal_sample(30, 1.0, 2.0, seed)).unwrap();
        let theta = [1.3, 3.1];
        let r = estimating_residual(&s, &model, &theta, &trip).unwrap();
        for j in 0..2 {
            let h = 1e-4 * [2.0, 3.1][j];
            let at = |d: f64| {
                let mut t = theta;
                t[j] += d;
                objective_hn(&s, &model, &t, &trip).unwrap()
            };
            // fourth-order central difference
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            worst_fd = worst_fd.max((fd + r[j]).abs() / r[j].abs().max(1e-3));
        }
    }
    // (b) grid-search oracle on tiny samples
    let mut worst_grid: f64 = 0.0;
    for (x, trip) in [
        (vec![-1.0, 0.2, 0.5, 1.8], Triplet::new(0.5, 0.5, 0.5).unwrap()),
        (vec![0.0, 1.0, 2.5, 3.0, 9.0], Triplet::dpd(0.5)),
        (vec![2.0, 2.4, 3.1], Triplet::new(-1.0, 0.7, 0.3).unwrap()),
    ] {
        let s = Sample::new(x).unwrap();
        let f = fit_mepde(&s, &model, &trip, None).unwrap();
        let t = f.theta_hat.clone();
        let g = grid_zoom(
            |p| objective_hn(&s, &model, p, &trip).unwrap_or(f64::INFINITY),
            &[t[0] - 2.0, t[1] * 0.2],
            &[t[0] + 2.0, t[1] * 3.0],
            41,
            6,
        );
        worst_grid = worst_grid.max((g[0] - t[0]).abs() / t[1].sqrt()).max(rel(g[1], t[1]));
    }
    // (c) Gaussian power integrals
    let mut worst_pow: f64 = 0.0;
    for gamma in [0.5, 1.0] {
        for (mu, s2) in [(0.0, 1.0), (2.0, 0.3)] {
            let (j, k, _) = dpd_jk_oracle(s2, gamma);
            let m = model_jkxi(&model, &[mu, s2], &Triplet::dpd(gamma)).unwrap();
            for (a, b) in [(0, 0), (1, 1)] {
                worst_pow = worst_pow.max(rel(m.j[(a, b)], j[(a, b)])).max(rel(m.k[(a, b)], k[(a, b)]));
            }
            let om = omega_integrals(s2, &Triplet::dpd(gamma)).unwrap();
            let want = dpd_omega_oracle(s2, gamma);
            for (got, w) in [om.omega1, om.omega2, om.omega3, om.omega4].iter().zip(want) {
                worst_pow = worst_pow.max(rel(*got, w));
            }
        }
    }
    let pass = worst_fd <= 1e-5 && worst_grid <= 2e-3 && worst_pow <= 1e-6;
    let detail = format!("finite-difference rel {worst_fd:.2e} (tol 1e-5); grid-search {worst_grid:.2e} (tol 2e-3); Gaussian power J,K,omega rel {worst_pow:.2e} (tol 1e-6)");
    assert!(report("11", pass, &detail));
}

#[test]
fn criterion_12_influence_properties() {
    let model = NormalLocationScale;
    let robust = [Triplet::dpd(0.1), Triplet::new(-1.0, 0.4, 0.1).unwrap(), Triplet::new(0.99, 0.8, 0.1).unwrap(), Triplet::new(0.5, 0.5, 0.5).unwrap()];
    let bounded = robust.iter().all(|t| {
        let r = ges(&model, &[0.0, 1.0], t, None).unwrap();
        r.bounded && r.value.is_finite()
    });
    let ml = ges(&model, &[0.0, 1.0], &Triplet::kl(), None).unwrap();
    let flagged = !ml.bounded && ml.value.is_infinite();
    let mut center = true;
    let mut odd = true;
    for t in robust.iter().chain([Triplet::kl()].iter()) {
        for s2 in [1.0, 2.5] {
            center &= influence(0.0, &model, &[0.0, s2], t).unwrap()[0] == 0.0;
            for y in [0.3, 1.0, 2.7, 6.0] {
                let a = influence(y, &model, &[0.0, s2], t).unwrap();
                let b = influence(-y, &model, &[0.0, s2], t).unwrap();
                odd &= a[0] == -b[0] && a[1] == b[1];
            }
        }
    }
    let detail = format!("bounded for gamma > 0: {bounded}; ML flagged unbounded: {flagged}; zero at center: {center}; location component odd: {odd}");
    assert!(report("12", bounded && flagged && center && odd, &detail));
}
