use serde_json::{json, Map, Value};

use epd::asymptotics::model_jkxi;
use epd::curves::{emit_curve, uniform_grid, CurveKind};
use epd::data::{load_dataset, DatasetKind, DatasetRecord};
use epd::error::{EpdError, Result};
use epd::estimation::{fit_mepde_with, FitConfig};
use epd::regression::{fit_regression_mepde_with, ols, omega_integrals, RegressionConfig};
use epd::tuning::{mse_surface, tune_target, RegressionTarget, TuneConfig, TuneResult, UnivariateTarget, VariancePlugin, WjTarget};
use epd::{ExponentialMean, FitResult, Model, NormalLocationScale, ParamVector, Triplet};

use crate::args::*;
use crate::render::{matrix, named, num, nums, Document, Table};

pub fn run(cli: &Cli) -> Result<Document> {
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Mle(a) => mle(a),
        Command::Tune(a) => tune(a),
        Command::Regress(a) => regress(a, cli.seed),
        Command::TuneRegress(a) => tune_regress(a, cli.seed),
        Command::Curve(a) => curve(a),
        Command::MseSurface(a) => surface(a, cli.seed),
    }
}

fn doc(command: &str, inputs: Value, dataset: Option<&DatasetRecord>, result: Value) -> Document {
    let mut body = Map::new();
    body.insert("command".into(), json!(command));
    body.insert("inputs".into(), inputs);
    if let Some(d) = dataset {
        body.insert("dataset".into(), dataset_json(d));
    }
    body.insert("result".into(), result);
    Document { body, table: None }
}

fn dataset_json(d: &DatasetRecord) -> Value {
    let checks: Vec<Value> = d
        .validation
        .iter()
        .map(|c| {
            json!({
                "statistic": c.check.statistic,
                "expected": num(c.check.expected),
                "got": num(c.got),
                "tolerance": num(c.check.tolerance),
                "passed": c.passed,
            })
        })
        .collect();
    json!({
        "name": d.name,
        "kind": match d.kind() { DatasetKind::Univariate => "univariate", DatasetKind::Regression => "regression" },
        "n": d.n(),
        "bundled": d.bundled,
        "source": d.source_citation,
        "validation": checks,
        "valid": d.is_valid(),
    })
}

fn triplet_json(t: &Triplet) -> Value {
    json!({ "alpha": num(t.alpha), "beta": num(t.beta), "gamma": num(t.gamma) })
}

fn model_for(kind: Option<ModelKind>, rec: &DatasetRecord) -> Box<dyn Model> {
    match kind {
        Some(ModelKind::Exponential) => Box::new(ExponentialMean),
        Some(ModelKind::Normal) => Box::new(NormalLocationScale),
        None if rec.default_model == "exponential" => Box::new(ExponentialMean),
        None => Box::new(NormalLocationScale),
    }
}

fn trip(a: &TripletArgs) -> Result<Triplet> {
    Triplet::new(a.alpha, a.beta, a.gamma)
}

/// Estimates keyed by parameter name; normal fits also carry `sigma`.
fn estimates(model: &dyn Model, theta: &[f64]) -> Value {
    let mut v = named(&model.param_names(), theta);
    if model.name() == "normal" {
        v["sigma"] = num(theta[1].sqrt());
    }
    v
}

fn fit_json(model: &dyn Model, f: &FitResult) -> Value {
    let theta = f.theta_hat.as_slice();
    let alternatives: Vec<Value> = f
        .alternatives
        .iter()
        .map(|(t, h)| json!({ "estimates": estimates(model, t), "objective": num(*h) }))
        .collect();
    let quad_err = model_jkxi(model, theta, &f.triplet).map(|m| m.quad_err).ok();
    let mut out = json!({
        "triplet": triplet_json(&f.triplet),
        "estimates": estimates(model, theta),
        "theta": nums(theta),
        "objective": num(f.objective),
        "converged": f.converged,
        "multiple_roots": f.multiple_roots,
        "alternatives": alternatives,
        "warnings": f.warnings,
        "diagnostics": {
            "iterations": f.iterations,
            "ee_residual_norm": num(f.ee_residual_norm),
            "quadrature_error": quad_err.map(num),
        },
    });
    if let (Some(v), Some(se)) = (&f.variance, f.standard_errors()) {
        let mut se_v = named(&model.param_names(), &se);
        if model.name() == "normal" {
            // report coordinates are (mu, sigma)
            let (_, d) = model.report_transform(theta);
            let vr = &d * v * d.transpose();
            se_v["sigma"] = num(vr[(1, 1)].max(0.0).sqrt());
        }
        out["covariance"] = matrix(v);
        out["standard_errors"] = se_v;
    }
    out
}

fn fit(a: &FitArgs) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let sample = rec.sample()?;
    let model = model_for(a.model, &rec);
    let t = trip(&a.triplet)?;
    let init = a.init.clone().map(ParamVector::new);
    let cfg = FitConfig {
        compute_variance: a.variance,
        ..FitConfig::default()
    };
    let f = fit_mepde_with(sample, model.as_ref(), &t, init.as_ref(), &cfg)?;
    let inputs = json!({
        "model": model.name(),
        "data": a.data.data,
        "triplet": triplet_json(&t),
        "init": a.init.as_deref().map(nums),
        "variance": a.variance,
    });
    Ok(doc("fit", inputs, Some(&rec), fit_json(model.as_ref(), &f)))
}

fn mle(a: &MleArgs) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let sample = rec.sample()?;
    let model = model_for(a.model, &rec);
    let cfg = FitConfig {
        compute_variance: a.variance,
        ..FitConfig::default()
    };
    let f = fit_mepde_with(sample, model.as_ref(), &Triplet::kl(), None, &cfg)?;
    let inputs = json!({ "model": model.name(), "data": a.data.data, "variance": a.variance });
    Ok(doc("mle", inputs, Some(&rec), fit_json(model.as_ref(), &f)))
}

fn parse_range(s: &Option<String>, default: (f64, f64), what: &str) -> Result<(f64, f64)> {
    let Some(s) = s else { return Ok(default) };
    let bad = || EpdError::Parameter(format!("{what} range must be lo:hi, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

fn tune_config(r: &RangeArgs, dpd_only: bool) -> Result<TuneConfig> {
    let d = TuneConfig::default();
    let mut cfg = TuneConfig {
        alpha_range: parse_range(&r.alpha_range, d.alpha_range, "alpha")?,
        beta_range: parse_range(&r.beta_range, d.beta_range, "beta")?,
        gamma_range: parse_range(&r.gamma_range, d.gamma_range, "gamma")?,
        refine: !r.no_refine,
        refine_cells: r.refine_cells.unwrap_or(d.refine_cells),
        pilot_gamma: r.pilot_gamma.unwrap_or(d.pilot_gamma),
        variance: r.plugin.map(|p| match p {
            Plugin::Hybrid => VariancePlugin::Hybrid,
            Plugin::Empirical => VariancePlugin::Empirical,
            Plugin::Model => VariancePlugin::Model,
        }),
        ..d
    };
    if let Some(g) = &r.grid {
        let bad = || EpdError::Parameter(format!("grid sizes must be a,b,g, got '{g}'"));
        let v: Vec<usize> = g.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        cfg.grid_sizes = v.try_into().map_err(|_| bad())?;
    }
    if dpd_only {
        cfg.alpha_range = (0.0, 0.0);
        cfg.beta_range = (0.0, 0.0);
        cfg.grid_sizes[0] = 1;
        cfg.grid_sizes[1] = 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ranges_json(cfg: &TuneConfig, plugin: VariancePlugin) -> Value {
    json!({
        "alpha_range": nums(&[cfg.alpha_range.0, cfg.alpha_range.1]),
        "beta_range": nums(&[cfg.beta_range.0, cfg.beta_range.1]),
        "gamma_range": nums(&[cfg.gamma_range.0, cfg.gamma_range.1]),
        "grid": cfg.grid_sizes,
        "refine": cfg.refine,
        "refine_cells": cfg.refine_cells,
        "pilot_gamma": num(cfg.pilot_gamma),
        "plugin": format!("{plugin:?}").to_lowercase(),
    })
}

fn tune_result_json(r: &TuneResult, names: &[String], surface: bool) -> Value {
    let mut v = json!({
        "triplet": triplet_json(&r.triplet),
        "estimates": named(names, r.theta_hat.as_slice()),
        "empirical_mse": num(r.empirical_mse),
        "evaluations": r.surface.len(),
        "log": r.log,
    });
    if surface {
        v["surface"] = Value::Array(
            r.surface
                .iter()
                .map(|p| json!({ "triplet": triplet_json(&p.triplet), "mse": num(p.mse), "theta": p.theta.as_deref().map(nums) }))
                .collect(),
        );
    }
    v
}

fn tune_report(target: &dyn WjTarget, cfg: &TuneConfig, names: &[String], dpd_only: bool, surface: bool) -> Result<Value> {
    let rep = tune_target(target, cfg)?;
    let mut out = json!({
        "pilot": named(names, rep.dpd.pilot.as_slice()),
        "dpd": tune_result_json(&rep.dpd, names, surface),
    });
    if !dpd_only {
        out["unrestricted"] = tune_result_json(&rep.unrestricted, names, surface);
    }
    Ok(out)
}

fn tune(a: &TuneArgs) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let sample = rec.sample()?;
    let model = model_for(a.model, &rec);
    let cfg = tune_config(&a.ranges, a.dpd_only)?;
    let target = UnivariateTarget { sample, model: model.as_ref() };
    let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
    let result = tune_report(&target, &cfg, &model.param_names(), a.dpd_only, a.surface)?;
    let inputs = json!({ "model": model.name(), "data": a.data.data, "config": ranges_json(&cfg, plugin), "dpd_only": a.dpd_only });
    Ok(doc("tune", inputs, Some(&rec), result))
}

fn problem_names(p: &epd::RegressionProblem) -> Vec<String> {
    let mut names = p.column_names.clone();
    names.push("sigma2".into());
    names
}

fn regress(a: &RegressArgs, seed: u64) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let problem = rec.problem(a.intercept)?;
    let t = trip(&a.triplet)?;
    let cfg = RegressionConfig {
        compute_variance: a.variance,
        seed,
        ..RegressionConfig::default()
    };
    let f = fit_regression_mepde_with(&problem, &t, None, &cfg)?;
    let names = problem_names(&problem);
    let theta = f.theta();
    let o = ols(&problem)?;
    let quad_err = omega_integrals(f.sigma2_hat, &t).map(|w| w.err_est).ok();
    let alternatives: Vec<Value> = f
        .alternatives
        .iter()
        .map(|(t, h)| json!({ "estimates": named(&names, t), "objective": num(*h) }))
        .collect();
    let mut result = json!({
        "triplet": triplet_json(&t),
        "estimates": named(&names, &theta),
        "theta": nums(&theta),
        "objective": num(f.objective),
        "converged": f.converged,
        "multiple_roots": f.multiple_roots,
        "alternatives": alternatives,
        "warnings": f.warnings,
        "ols": {
            "eta": named(&problem.column_names, o.eta.as_slice()),
            "sigma2": num(o.sigma2),
            "sigma2_ml": num(o.sigma2_ml),
        },
        "diagnostics": {
            "iterations": f.iterations,
            "ee_residual_norm": num(f.ee_residual_norm),
            "quadrature_error": quad_err.map(num),
        },
    });
    if a.variance {
        let n = problem.n();
        result["standard_errors"] = named(&names, &f.standard_errors(n));
        result["covariance"] = matrix(&(&f.variance / n as f64));
        result["psi_n"] = matrix(&f.psi_n);
        result["omega_n"] = matrix(&f.omega_n);
    }
    let inputs = json!({ "data": a.data.data, "intercept": a.intercept, "triplet": triplet_json(&t), "variance": a.variance, "seed": seed });
    Ok(doc("regress", inputs, Some(&rec), result))
}

fn tune_regress(a: &TuneRegressArgs, seed: u64) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let problem = rec.problem(a.intercept)?;
    let cfg = tune_config(&a.ranges, a.dpd_only)?;
    let target = RegressionTarget { problem: &problem, seed };
    let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
    let result = tune_report(&target, &cfg, &problem_names(&problem), a.dpd_only, a.surface)?;
    let inputs = json!({ "data": a.data.data, "intercept": a.intercept, "config": ranges_json(&cfg, plugin), "dpd_only": a.dpd_only, "seed": seed });
    Ok(doc("tune-regress", inputs, Some(&rec), result))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || EpdError::Parameter(format!("grid must be lo:hi:n, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    uniform_grid(lo, hi, n)
}

fn curve(a: &CurveArgs) -> Result<Document> {
    let model: Box<dyn Model> = match a.model {
        ModelKind::Normal => Box::new(NormalLocationScale),
        ModelKind::Exponential => Box::new(ExponentialMean),
    };
    let theta = a.theta.clone().unwrap_or_else(|| match a.model {
        ModelKind::Normal => vec![0.0, 1.0],
        ModelKind::Exponential => vec![1.0],
    });
    let mut trips = Vec::new();
    for &al in &a.alpha {
        for &b in &a.beta {
            for &g in &a.gamma {
                trips.push(Triplet::new(al, b, g)?);
            }
        }
    }
    let kind = match a.kind {
        CurveArg::Influence => CurveKind::Influence,
        CurveArg::Weight => CurveKind::Weight,
    };
    if kind == CurveKind::Influence && trips.len() != 1 {
        return Err(EpdError::Parameter("influence curves take a single triplet".into()));
    }
    let grid = parse_grid(&a.grid)?;
    let table = emit_curve(kind, model.as_ref(), &theta, &trips, &grid)?;
    let inputs = json!({
        "kind": format!("{:?}", a.kind).to_lowercase(),
        "model": model.name(),
        "theta": nums(&theta),
        "triplets": trips.iter().map(triplet_json).collect::<Vec<_>>(),
        "grid": a.grid,
    });
    let mut d = doc("curve", inputs, None, json!({ "rows": table.rows.len() }));
    d.table = Some(Table {
        columns: table.columns,
        rows: table.rows,
    });
    Ok(d)
}

fn surface(a: &SurfaceArgs, seed: u64) -> Result<Document> {
    let rec = load_dataset(&a.data.data)?;
    let cfg = tune_config(&a.ranges, false)?;
    let (names, pilot, points, plugin, model_name) = match rec.kind() {
        DatasetKind::Univariate => {
            let model = model_for(a.model, &rec);
            let target = UnivariateTarget {
                sample: rec.sample()?,
                model: model.as_ref(),
            };
            let (pilot, pts) = mse_surface(&target, &cfg)?;
            let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
            (model.param_names(), pilot, pts, plugin, model.name())
        }
        DatasetKind::Regression => {
            let problem = rec.problem(a.intercept)?;
            let target = RegressionTarget { problem: &problem, seed };
            let (pilot, pts) = mse_surface(&target, &cfg)?;
            let plugin = cfg.variance.unwrap_or_else(|| target.default_plugin());
            (problem_names(&problem), pilot, pts, plugin, "regression")
        }
    };
    let mut columns = vec!["alpha".to_string(), "beta".into(), "gamma".into(), "mse".into()];
    columns.extend(names.iter().cloned());
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.triplet.alpha, p.triplet.beta, p.triplet.gamma, p.mse];
            match &p.theta {
                Some(t) => r.extend(t.iter()),
                None => r.extend(std::iter::repeat_n(f64::NAN, names.len())),
            }
            r
        })
        .collect();
    let degenerate = points.iter().filter(|p| !p.mse.is_finite()).count();
    let inputs = json!({ "model": model_name, "data": a.data.data, "intercept": a.intercept, "config": ranges_json(&cfg, plugin), "seed": seed });
    let result = json!({ "pilot": named(&names, &pilot), "cells": rows.len(), "degenerate_cells": degenerate });
    let mut d = doc("mse-surface", inputs, Some(&rec), result);
    d.table = Some(Table { columns, rows });
    Ok(d)
}
