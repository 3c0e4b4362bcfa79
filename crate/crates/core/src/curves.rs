//! Plot-ready tables of influence and weight functions.

use crate::asymptotics::InfluenceFunction;
use crate::divergence::{weight, Triplet};
use crate::error::{EpdError, Result};
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Influence,
    Weight,
}

impl std::str::FromStr for CurveKind {
    type Err = EpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "influence" => Ok(CurveKind::Influence),
            "weight" => Ok(CurveKind::Weight),
            other => Err(EpdError::Parameter(format!("unknown curve kind '{other}'"))),
        }
    }
}

/// Column-labelled table; rows are sorted by the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// `n` equally spaced points on `[lo, hi]`, both ends included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || n < 2 {
        return Err(EpdError::Parameter(format!("grid needs finite lo < hi and n >= 2, got {lo}:{hi}:{n}")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
        return Err(EpdError::Parameter("grid must be non-empty and finite".into()));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    Ok(g)
}

/// Weight `w(t)` for each triplet; columns `t, w[trip_1], ...`.
pub fn weight_curve(trips: &[Triplet], grid: &[f64]) -> Result<CurveTable> {
    let g = sorted_grid(grid)?;
    if g[0] < 0.0 {
        return Err(EpdError::Parameter("weight curve abscissa is a density value, must be >= 0".into()));
    }
    let mut columns = vec!["t".to_string()];
    columns.extend(trips.iter().map(|t| format!("w[{t}]")));
    let rows = g
        .iter()
        .map(|&t| {
            let mut row = vec![t];
            for trip in trips {
                row.push(weight(t, trip)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(CurveTable { columns, rows })
}

/// Influence function at `theta`; columns `y`, one per parameter, then its norm.
pub fn influence_curve(model: &dyn Model, theta: &[f64], trip: &Triplet, grid: &[f64]) -> Result<CurveTable> {
    let g = sorted_grid(grid)?;
    let inf = InfluenceFunction::new(model, theta, trip)?;
    let mut columns = vec!["y".to_string()];
    columns.extend(model.param_names().into_iter().map(|p| format!("IF_{p}")));
    columns.push("norm".into());
    let rows = g
        .iter()
        .map(|&y| {
            let v = inf.at(y)?;
            let mut row = vec![y];
            row.extend(v.iter());
            row.push(v.norm());
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(CurveTable { columns, rows })
}

/// Influence curves use the first triplet only.
pub fn emit_curve(kind: CurveKind, model: &dyn Model, theta: &[f64], trips: &[Triplet], grid: &[f64]) -> Result<CurveTable> {
    match kind {
        CurveKind::Weight => weight_curve(trips, grid),
        CurveKind::Influence => {
            let trip = trips
                .first()
                .ok_or_else(|| EpdError::Parameter("influence curve needs a triplet".into()))?;
            influence_curve(model, theta, trip, grid)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NormalLocationScale;

    #[test]
    fn kl_weight_is_one() {
        let g = uniform_grid(0.0, 5.0, 11).unwrap();
        let t = weight_curve(&[Triplet::kl()], &g).unwrap();
        assert!(t.rows.iter().all(|r| (r[1] - 1.0).abs() < 1e-15));
    }

    #[test]
    fn bed_column_is_t_exp_t() {
        let trips: Vec<Triplet> = [0.0, 0.5, 1.0].iter().map(|&b| Triplet::new(1.0, b, 1.0).unwrap()).collect();
        let g = uniform_grid(0.0, 3.0, 31).unwrap();
        let t = weight_curve(&trips, &g).unwrap();
        for r in &t.rows {
            let x = r[0];
            assert!((r[3] - x * x.exp()).abs() <= 1e-13 * (1.0 + x * x.exp()));
            assert!((r[1] - 2.0 * x).abs() <= 1e-13 * (1.0 + x));
        }
    }

    #[test]
    fn location_influence_is_odd() {
        let g = uniform_grid(-6.0, 6.0, 25).unwrap();
        let t = influence_curve(&NormalLocationScale, &[0.0, 1.0], &Triplet::dpd(0.1), &g).unwrap();
        let n = t.rows.len();
        for i in 0..n {
            assert!((t.rows[i][1] + t.rows[n - 1 - i][1]).abs() < 1e-12);
            assert!((t.rows[i][2] - t.rows[n - 1 - i][2]).abs() < 1e-12);
        }
        assert_eq!(t.columns.len(), 4);
    }

    #[test]
    fn rows_sorted_and_bad_grid_rejected() {
        let t = weight_curve(&[Triplet::dpd(0.5)], &[2.0, 0.0, 1.0]).unwrap();
        assert_eq!(t.rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        assert!(weight_curve(&[Triplet::dpd(0.5)], &[-1.0]).is_err());
        assert!(uniform_grid(1.0, 1.0, 5).is_err());
    }
}
