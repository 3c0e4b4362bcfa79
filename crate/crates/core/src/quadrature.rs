//! Adaptive one-dimensional quadrature.
//!
//! Globally adaptive bisection with the 21-point Gauss-Kronrod pair (QUADPACK
//! error heuristic). Infinite ranges are folded onto `[0, 1)` with
//! `x = a + s * t / (1 - t)`, where `s` is a caller supplied length scale;
//! doubly infinite ranges are split at a caller supplied center first.
//! Gauss-Kronrod nodes never touch an interval endpoint, so integrable
//! endpoint singularities are never evaluated.
//!
//! Integrands may be vector valued; all components share one subdivision and
//! the loop runs until every component meets its tolerance.

use crate::error::{EpdError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Range of integration plus hints for the infinite-range maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrandDomain {
    pub lower: f64,
    pub upper: f64,
    /// Split point for doubly infinite ranges.
    pub center: f64,
    /// Length scale of the tail map `x = a + scale * t / (1 - t)`.
    pub scale: f64,
    pub singular_lower: bool,
    pub singular_upper: bool,
}

impl IntegrandDomain {
    pub fn finite(lower: f64, upper: f64) -> Self {
        IntegrandDomain {
            lower,
            upper,
            center: 0.5 * (lower + upper),
            scale: (upper - lower).abs().max(f64::MIN_POSITIVE),
            singular_lower: false,
            singular_upper: false,
        }
    }

    pub fn real_line(center: f64, scale: f64) -> Self {
        IntegrandDomain {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            center,
            scale,
            singular_lower: false,
            singular_upper: false,
        }
    }

    pub fn half_line(lower: f64, scale: f64) -> Self {
        IntegrandDomain {
            lower,
            upper: f64::INFINITY,
            center: lower,
            scale,
            singular_lower: false,
            singular_upper: false,
        }
    }

    pub fn with_singular_lower(mut self) -> Self {
        self.singular_lower = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lower.is_nan() || self.upper.is_nan() || !(self.lower < self.upper) {
            return Err(EpdError::Domain(format!(
                "integration range requires lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) || !self.center.is_finite() {
            return Err(EpdError::Domain(format!(
                "invalid center/scale hint ({}, {})",
                self.center, self.scale
            )));
        }
        Ok(())
    }
}

/// Relative to `int |f|`; four times the per-segment roundoff estimate.
const ROUNDOFF_FLOOR: f64 = 200.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_intervals: 400,
        }
    }
}

impl QuadConfig {
    /// Looser setting used inside optimizer inner loops.
    pub fn inner() -> Self {
        QuadConfig {
            rel_tol: 1e-7,
            abs_tol: 1e-12,
            max_intervals: 400,
        }
    }

    pub fn tight() -> Self {
        QuadConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            max_intervals: 2000,
        }
    }
}

/// Result of a scalar integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub err_est: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl Integral {
    /// Value, or [`EpdError::Quadrature`] when the tolerance was not met.
    pub fn require(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(EpdError::Quadrature {
                value: self.value,
                err_est: self.err_est,
                intervals: 0,
            })
        }
    }
}

/// Result of a vector-valued integration.
#[derive(Debug, Clone, PartialEq)]
pub struct VecIntegral {
    pub values: Vec<f64>,
    pub err_est: Vec<f64>,
    pub converged: bool,
    pub intervals: usize,
    pub evaluations: usize,
}

impl VecIntegral {
    pub fn require(self) -> Result<Vec<f64>> {
        if self.converged {
            Ok(self.values)
        } else {
            let (k, e) = self
                .err_est
                .iter()
                .copied()
                .enumerate()
                .fold((0, 0.0), |acc, (k, e)| if e > acc.1 { (k, e) } else { acc });
            Err(EpdError::Quadrature {
                value: self.values[k],
                err_est: e,
                intervals: self.intervals,
            })
        }
    }

    pub fn max_err(&self) -> f64 {
        self.err_est.iter().copied().fold(0.0, f64::max)
    }
}

/// Integrate a scalar function.
pub fn integrate<F>(f: F, domain: &IntegrandDomain, cfg: &QuadConfig) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    let r = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), 1, domain, cfg)?;
    Ok(Integral {
        value: r.values[0],
        err_est: r.err_est[0],
        converged: r.converged,
        evaluations: r.evaluations,
    })
}

#[derive(Clone, Copy)]
enum Map {
    /// `x = t`
    Identity,
    /// `x = origin + dir * scale * t / (1 - t)`, `t` in `[0, 1)`
    Tail { origin: f64, dir: f64, scale: f64 },
}

impl Map {
    fn apply(&self, t: f64) -> (f64, f64) {
        match *self {
            Map::Identity => (t, 1.0),
            Map::Tail { origin, dir, scale } => {
                let one_m = 1.0 - t;
                (origin + dir * scale * t / one_m, scale / (one_m * one_m))
            }
        }
    }
}

struct Segment {
    piece: usize,
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    abs: Vec<f64>,
}

/// Integrate an `dim`-component function `f(x, out)` that writes its values into `out`.
pub fn integrate_vec<F>(
    mut f: F,
    dim: usize,
    domain: &IntegrandDomain,
    cfg: &QuadConfig,
) -> Result<VecIntegral>
where
    F: FnMut(f64, &mut [f64]),
{
    domain.validate()?;
    if !(cfg.rel_tol > 0.0 && cfg.abs_tol > 0.0) {
        return Err(EpdError::Parameter(
            "quadrature tolerances must be positive".into(),
        ));
    }
    let lo_inf = domain.lower == f64::NEG_INFINITY;
    let hi_inf = domain.upper == f64::INFINITY;
    let s = domain.scale;
    // (map, t-range) per piece
    let pieces: Vec<(Map, f64, f64)> = match (lo_inf, hi_inf) {
        (false, false) => vec![(Map::Identity, domain.lower, domain.upper)],
        (false, true) => vec![(
            Map::Tail {
                origin: domain.lower,
                dir: 1.0,
                scale: s,
            },
            0.0,
            1.0,
        )],
        (true, false) => vec![(
            Map::Tail {
                origin: domain.upper,
                dir: -1.0,
                scale: s,
            },
            0.0,
            1.0,
        )],
        (true, true) => vec![
            (
                Map::Tail {
                    origin: domain.center,
                    dir: -1.0,
                    scale: s,
                },
                0.0,
                1.0,
            ),
            (
                Map::Tail {
                    origin: domain.center,
                    dir: 1.0,
                    scale: s,
                },
                0.0,
                1.0,
            ),
        ],
    };

    let mut evaluations = 0usize;
    let mut buf = vec![0.0; dim];
    let mut fv = vec![[0.0f64; 21]; dim];
    let mut rule = |map: Map, a: f64, b: f64, evals: &mut usize| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let c = 0.5 * (a + b);
        let hl = 0.5 * (b - a);
        for (j, &node) in XGK.iter().enumerate() {
            let offsets: &[f64] = if node == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
            for (side, &sgn) in offsets.iter().enumerate() {
                let t = c + sgn * hl * node;
                let (x, jac) = map.apply(t);
                let slot = if node == 0.0 { 20 } else { 2 * j + side };
                if !x.is_finite() || !jac.is_finite() {
                    for comp in fv.iter_mut() {
                        comp[slot] = 0.0;
                    }
                    continue;
                }
                f(x, &mut buf);
                *evals += 1;
                for (k, &v) in buf.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(EpdError::Integrand {
                            abscissa: x,
                            value: v,
                        });
                    }
                    fv[k][slot] = if v == 0.0 { 0.0 } else { v * jac };
                }
            }
        }
        let mut vals = Vec::with_capacity(dim);
        let mut errs = Vec::with_capacity(dim);
        let mut abss = Vec::with_capacity(dim);
        for comp in fv.iter() {
            let center = comp[20];
            let mut resk = WGK[10] * center;
            let mut resabs = resk.abs();
            let mut resg = 0.0;
            for j in 0..10 {
                let pair = comp[2 * j] + comp[2 * j + 1];
                resk += WGK[j] * pair;
                resabs += WGK[j] * (comp[2 * j].abs() + comp[2 * j + 1].abs());
                if j % 2 == 1 {
                    resg += WG[j / 2] * pair;
                }
            }
            let mean = 0.5 * resk;
            let mut resasc = WGK[10] * (center - mean).abs();
            for j in 0..10 {
                resasc += WGK[j] * ((comp[2 * j] - mean).abs() + (comp[2 * j + 1] - mean).abs());
            }
            let result = resk * hl;
            resabs *= hl.abs();
            resasc *= hl.abs();
            let mut err = ((resk - resg) * hl).abs();
            if resasc != 0.0 && err != 0.0 {
                err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
            }
            if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
                err = err.max(50.0 * f64::EPSILON * resabs);
            }
            vals.push(result);
            errs.push(err);
            abss.push(resabs);
        }
        Ok((vals, errs, abss))
    };

    let mut segments: Vec<Segment> = Vec::new();
    for (idx, &(map, a, b)) in pieces.iter().enumerate() {
        let (values, errors, abs) = rule(map, a, b, &mut evaluations)?;
        segments.push(Segment {
            piece: idx,
            a,
            b,
            values,
            errors,
            abs,
        });
    }

    loop {
        let mut total = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        let mut abs = vec![0.0; dim];
        for seg in &segments {
            for k in 0..dim {
                total[k] += seg.values[k];
                err[k] += seg.errors[k];
                abs[k] += seg.abs[k];
            }
        }
        // a component that cancels to ~0 cannot be resolved below the roundoff
        // floor of int |f|
        let tol: Vec<f64> = total
            .iter()
            .zip(&abs)
            .map(|(v, a)| (cfg.rel_tol * v.abs()).max(cfg.abs_tol).max(ROUNDOFF_FLOOR * a))
            .collect();
        let converged = err.iter().zip(&tol).all(|(e, t)| e <= t);
        if converged || segments.len() >= cfg.max_intervals {
            return Ok(VecIntegral {
                values: total,
                err_est: err,
                converged,
                intervals: segments.len(),
                evaluations,
            });
        }
        // bisect the segment with the worst error relative to its component tolerance
        let (worst, _) = segments
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let score = seg
                    .errors
                    .iter()
                    .zip(&tol)
                    .map(|(e, t)| e / t)
                    .fold(0.0, f64::max);
                (i, score)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // interval can no longer be split in floating point
            return Ok(VecIntegral {
                values: total,
                err_est: err,
                converged: false,
                intervals: segments.len() + 1,
                evaluations,
            });
        }
        let map = pieces[seg.piece].0;
        let (v1, e1, a1) = rule(map, seg.a, mid, &mut evaluations)?;
        let (v2, e2, a2) = rule(map, mid, seg.b, &mut evaluations)?;
        segments.push(Segment {
            piece: seg.piece,
            a: seg.a,
            b: mid,
            values: v1,
            errors: e1,
            abs: a1,
        });
        segments.push(Segment {
            piece: seg.piece,
            a: mid,
            b: seg.b,
            values: v2,
            errors: e2,
            abs: a2,
        });
    }
}
