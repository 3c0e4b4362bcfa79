//! Dataset loading: bundled reference corpora with validation gates, and
//! comma-separated files with a header row.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{EpdError, Result};
use crate::estimation::Sample;
use crate::regression::{ols, RegressionProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Univariate,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetValues {
    Univariate(Sample),
    Regression {
        /// `n x q`, without an intercept column.
        predictors: DMatrix<f64>,
        response: DVector<f64>,
        predictor_names: Vec<String>,
        response_name: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub statistic: String,
    pub expected: f64,
    /// Relative tolerance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: ValidationCheck,
    pub got: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub name: String,
    pub values: DatasetValues,
    pub source_citation: String,
    pub validation_checks: Vec<ValidationCheck>,
    pub validation: Vec<CheckOutcome>,
    pub bundled: bool,
    /// Model the reference analyses use: "normal", "exponential" or "regression".
    pub default_model: &'static str,
}

impl DatasetRecord {
    pub fn kind(&self) -> DatasetKind {
        match self.values {
            DatasetValues::Univariate(_) => DatasetKind::Univariate,
            DatasetValues::Regression { .. } => DatasetKind::Regression,
        }
    }

    pub fn sample(&self) -> Result<&Sample> {
        match &self.values {
            DatasetValues::Univariate(s) => Ok(s),
            DatasetValues::Regression { .. } => Err(EpdError::Data(format!("{} is a regression dataset", self.name))),
        }
    }

    /// Regression problem; an intercept column is prepended when requested.
    pub fn problem(&self, intercept: bool) -> Result<RegressionProblem> {
        match &self.values {
            DatasetValues::Regression {
                predictors,
                response,
                predictor_names,
                ..
            } => RegressionProblem::from_columns(predictors, response.clone(), predictor_names, intercept),
            DatasetValues::Univariate(_) => Err(EpdError::Data(format!("{} is a univariate dataset", self.name))),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validation.iter().all(|c| c.passed)
    }

    pub fn n(&self) -> usize {
        match &self.values {
            DatasetValues::Univariate(s) => s.len(),
            DatasetValues::Regression { response, .. } => response.len(),
        }
    }
}

struct Bundled {
    name: &'static str,
    csv: &'static str,
    citation: &'static str,
    model: &'static str,
    checks: &'static [(&'static str, f64, f64)],
}

const BUNDLED: &[Bundled] = &[
    Bundled {
        name: "telephone-fault",
        csv: include_str!("../data/telephone-fault.csv"),
        citation: "Welch (1987), J. Amer. Statist. Assoc. 82, 693-700",
        model: "normal",
        checks: &[("mle_mean", 40.3571, 5e-3), ("mle_sd", 311.332, 5e-3)],
    },
    Bundled {
        name: "newcomb",
        csv: include_str!("../data/newcomb.csv"),
        citation: "Stigler (1977), Ann. Statist. 5, 1055-1098",
        model: "normal",
        checks: &[("mle_mean", 26.2121, 5e-3), ("mle_sd", 10.6636, 5e-3)],
    },
    Bundled {
        name: "darwin",
        csv: include_str!("../data/darwin.csv"),
        citation: "Darwin (1878) via Spiegelhalter (1985)",
        model: "normal",
        checks: &[("mle_mean", 20.9333, 5e-3), ("mle_sd", 36.4645, 5e-3)],
    },
    Bundled {
        name: "insulating-fluid",
        csv: include_str!("../data/insulating-fluid.csv"),
        citation: "Nelson (1972), IEEE Trans. Elect. Insul. EI-7, 5-8 (34 kV group)",
        model: "exponential",
        checks: &[("mle_mean", 14.3589, 5e-3)],
    },
    Bundled {
        name: "star-cluster",
        csv: include_str!("../data/star-cluster.csv"),
        citation: "Rousseeuw and Leroy (1987), Robust Regression and Outlier Detection (CYG OB1)",
        model: "regression",
        checks: &[("ols_eta0", 6.7935, 5e-3), ("ols_eta1", -0.4133, 5e-3), ("ols_sigma2", 0.3188, 5e-3)],
    },
    Bundled {
        name: "belgian-phones",
        csv: include_str!("../data/belgian-phones.csv"),
        citation: "Rousseeuw and Leroy (1987), Robust Regression and Outlier Detection (calls / 10)",
        model: "regression",
        checks: &[("ols_eta0", -26.006, 5e-3), ("ols_eta1", 0.5041, 5e-3), ("ols_sigma2", 31.6107, 5e-3)],
    },
];

/// Names of the bundled datasets.
pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|b| b.name).collect()
}

/// Text of the bundled provenance notes.
pub const PROVENANCE: &str = include_str!("../data/PROVENANCE.md");

/// Parsed table: header and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Parse comma-separated text with a header row; every field must be a finite number.
pub fn parse_csv(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(&e, 1))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(EpdError::Parse {
            line: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(&e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| EpdError::Parse {
                line,
                column: j + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(EpdError::Parse {
                    line,
                    column: j + 1,
                    message: format!("non-finite value {field:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EpdError::Data("no data rows".into()));
    }
    Ok(Table { header, rows })
}

fn parse_error(e: &csv::Error, fallback_line: usize) -> EpdError {
    let (line, message) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => (
            pos.as_ref().map_or(fallback_line, |p| p.line() as usize),
            format!("expected {expected_len} fields, found {len}"),
        ),
        _ => (e.position().map_or(fallback_line, |p| p.line() as usize), e.to_string()),
    };
    EpdError::Parse {
        line,
        column: 0,
        message,
    }
}

/// One column gives a univariate sample; two or more give a regression table
/// whose last column is the response.
fn table_to_values(name: &str, table: Table, provenance: &str) -> Result<DatasetValues> {
    let q = table.header.len();
    if q == 1 {
        let obs = table.rows.into_iter().map(|r| r[0]).collect();
        return Ok(DatasetValues::Univariate(Sample::named(name, provenance, obs)?));
    }
    let n = table.rows.len();
    let predictors = DMatrix::from_fn(n, q - 1, |i, j| table.rows[i][j]);
    let response = DVector::from_fn(n, |i, _| table.rows[i][q - 1]);
    Ok(DatasetValues::Regression {
        predictors,
        response,
        predictor_names: table.header[..q - 1].to_vec(),
        response_name: table.header[q - 1].clone(),
    })
}

fn statistic(values: &DatasetValues, name: &str) -> Result<f64> {
    match values {
        DatasetValues::Univariate(s) => {
            let x = s.as_slice();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            match name {
                "mle_mean" => Ok(mean),
                "mle_sd" => Ok((x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()),
                _ => Err(EpdError::Data(format!("unknown statistic {name}"))),
            }
        }
        DatasetValues::Regression {
            predictors,
            response,
            predictor_names,
            ..
        } => {
            let fit = ols(&RegressionProblem::from_columns(predictors, response.clone(), predictor_names, true)?)?;
            match name {
                "ols_sigma2" => Ok(fit.sigma2),
                s if s.starts_with("ols_eta") => {
                    let j: usize = s[7..].parse().map_err(|_| EpdError::Data(format!("unknown statistic {name}")))?;
                    fit.eta.get(j).copied().ok_or_else(|| EpdError::Data(format!("unknown statistic {name}")))
                }
                _ => Err(EpdError::Data(format!("unknown statistic {name}"))),
            }
        }
    }
}

fn run_checks(values: &DatasetValues, checks: &[ValidationCheck]) -> Result<Vec<CheckOutcome>> {
    checks
        .iter()
        .map(|c| {
            let got = statistic(values, &c.statistic)?;
            let passed = ((got - c.expected) / c.expected).abs() <= c.tolerance;
            Ok(CheckOutcome {
                check: c.clone(),
                got,
                passed,
            })
        })
        .collect()
}

/// Load a bundled dataset by name, or a CSV file by path.
///
/// Bundled datasets must pass their validation checks; a failure is an error.
pub fn load_dataset(name_or_path: &str) -> Result<DatasetRecord> {
    if let Some(b) = BUNDLED.iter().find(|b| b.name == name_or_path) {
        let table = parse_csv(b.csv)?;
        let values = table_to_values(b.name, table, b.citation)?;
        let checks: Vec<ValidationCheck> = b
            .checks
            .iter()
            .map(|&(s, e, t)| ValidationCheck {
                statistic: s.to_string(),
                expected: e,
                tolerance: t,
            })
            .collect();
        let validation = run_checks(&values, &checks)?;
        if let Some(bad) = validation.iter().find(|c| !c.passed) {
            return Err(EpdError::Validation {
                dataset: b.name.to_string(),
                statistic: bad.check.statistic.clone(),
                expected: bad.check.expected,
                got: bad.got,
                tolerance: bad.check.tolerance,
            });
        }
        return Ok(DatasetRecord {
            name: b.name.to_string(),
            values,
            source_citation: b.citation.to_string(),
            validation_checks: checks,
            validation,
            bundled: true,
            default_model: b.model,
        });
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(EpdError::Data(format!(
            "unknown dataset {name_or_path:?}: not a bundled name ({}) and no such file",
            bundled_names().join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| EpdError::Data(format!("{name_or_path}: {e}")))?;
    let table = parse_csv(&text)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name_or_path).to_string();
    let values = table_to_values(&name, table, name_or_path)?;
    let default_model = match values {
        DatasetValues::Univariate(_) => "normal",
        DatasetValues::Regression { .. } => "regression",
    };
    Ok(DatasetRecord {
        name,
        values,
        source_citation: name_or_path.to_string(),
        validation_checks: Vec::new(),
        validation: Vec::new(),
        bundled: false,
        default_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sets_load_and_validate() {
        let expected = [
            ("telephone-fault", 14),
            ("newcomb", 66),
            ("darwin", 15),
            ("insulating-fluid", 19),
            ("star-cluster", 47),
            ("belgian-phones", 24),
        ];
        for (name, n) in expected {
            let d = load_dataset(name).unwrap();
            assert_eq!(d.n(), n, "{name}");
            assert!(d.is_valid() && d.bundled);
        }
        let star = load_dataset("star-cluster").unwrap();
        assert_eq!(star.problem(true).unwrap().p(), 2);
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_csv("x,y\n1,2\n3,abc\n").unwrap_err();
        assert_eq!(
            e,
            EpdError::Parse {
                line: 3,
                column: 2,
                message: "not a number: \"abc\"".into()
            }
        );
        assert!(matches!(parse_csv("x,y\n1,2\n3\n"), Err(EpdError::Parse { line: 3, .. })));
        assert!(parse_csv("x\n").is_err());
        assert!(matches!(parse_csv("x\nNaN\n"), Err(EpdError::Parse { line: 2, column: 1, .. })));
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(load_dataset("no-such-dataset"), Err(EpdError::Data(_))));
    }
}
