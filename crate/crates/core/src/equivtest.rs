//! Non-inferiority and equivalence tests built from one-sided confidence
//! bounds.
//!
//! The tested quantity is always `target(reference) − target(test)`: the
//! survival difference `S_ref(t) − S_test(t)` or the log hazard ratio
//! `ln(h_ref(t)/h_test(t))`. The null hypothesis of harm is that this
//! quantity is at least the margin. Swap the two fits to test the other
//! direction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bands::{band_sigmas, band_from_sigmas, check_alpha, BandMethod, BandTarget, ConfidenceBand, VarianceMethod};
use crate::error::{domain, Error, Result};
use crate::inference::FitResult;

/// Grid points used for interval tests unless the caller chooses otherwise:
/// 100 equal steps, both endpoints included.
pub const DEFAULT_INTERVAL_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    NonInferiority,
    Equivalence,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::NonInferiority => "noninf",
            TestKind::Equivalence => "equiv",
        })
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noninf" | "ni" | "noninferiority" | "non_inferiority" | "non-inferiority" => Ok(TestKind::NonInferiority),
            "equiv" | "eq" | "equivalence" => Ok(TestKind::Equivalence),
            other => domain(format!("unknown test kind '{other}' (expected noninf or equiv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub value: f64,
    pub target: BandTarget,
}

impl Margin {
    pub fn new(value: f64, target: BandTarget) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self { value, target })
        } else {
            domain(format!("margin must be positive and finite, got {value}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSpec {
    Point { t: f64 },
    Interval { start: f64, end: f64, grid_n: usize },
}

impl TimeSpec {
    pub fn point(t: f64) -> Self {
        TimeSpec::Point { t }
    }

    pub fn interval(start: f64, end: f64, grid_n: usize) -> Self {
        TimeSpec::Interval { start, end, grid_n }
    }

    /// Evaluation times. An interval with `start == end` is a single point.
    pub fn grid(&self) -> Result<Vec<f64>> {
        match *self {
            TimeSpec::Point { t } => {
                if t.is_finite() && t > 0.0 {
                    Ok(vec![t])
                } else {
                    domain(format!("test time must be positive, got {t}"))
                }
            }
            TimeSpec::Interval { start, end, .. } if start == end => TimeSpec::point(start).grid(),
            TimeSpec::Interval { start, end, grid_n } => {
                if !(start.is_finite() && end.is_finite() && start > 0.0 && start < end) {
                    return domain(format!("interval needs 0 < t1 < t2, got [{start}, {end}]"));
                }
                if grid_n < 2 {
                    return domain(format!("interval grid needs at least 2 points, got {grid_n}"));
                }
                Ok(linspace(start, end, grid_n))
            }
        }
    }
}

/// `n` equispaced points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { end } else { start + step * i as f64 }).collect()
        }
    }
}

/// Extremal bounds over the evaluated times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalBounds {
    pub max_upper: f64,
    pub t_max_upper: f64,
    pub min_lower: f64,
    pub t_min_lower: f64,
}

impl CriticalBounds {
    pub fn from_band(band: &ConfidenceBand) -> Result<Self> {
        let mut out: Option<Self> = None;
        for p in &band.points {
            if !p.available {
                return Err(Error::Numerical(format!("band unavailable at t = {}", p.t)));
            }
            let c = out.get_or_insert(Self {
                max_upper: p.upper,
                t_max_upper: p.t,
                min_lower: p.lower,
                t_min_lower: p.t,
            });
            if p.upper > c.max_upper {
                c.max_upper = p.upper;
                c.t_max_upper = p.t;
            }
            if p.lower < c.min_lower {
                c.min_lower = p.lower;
                c.t_min_lower = p.t;
            }
        }
        out.ok_or_else(|| Error::Input("band has no points".into()))
    }
}

/// The rejection rule: `U ≤ δ` for non-inferiority, additionally `L ≥ −δ`
/// for equivalence.
pub fn decide(kind: TestKind, bounds: &CriticalBounds, margin: f64) -> bool {
    let upper = bounds.max_upper <= margin;
    match kind {
        TestKind::NonInferiority => upper,
        TestKind::Equivalence => upper && bounds.min_lower >= -margin,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub reference: String,
    pub test: String,
    /// Human-readable tested quantity, e.g. `S[standard](t) - S[test](t)`.
    pub quantity: String,
}

impl Direction {
    fn new(fit_ref: &FitResult, fit_test: &FitResult, target: BandTarget) -> Self {
        let (r, t) = (&fit_ref.group, &fit_test.group);
        let quantity = match target {
            BandTarget::SurvivalDifference => format!("S[{r}](t) - S[{t}](t)"),
            BandTarget::LogHazardRatio => format!("log(h[{r}](t) / h[{t}](t))"),
        };
        Self {
            reference: r.clone(),
            test: t.clone(),
            quantity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub kind: TestKind,
    pub target: BandTarget,
    pub margin: Margin,
    pub time: TimeSpec,
    pub alpha: f64,
    pub method: BandMethod,
    pub reject: bool,
    pub critical_bounds: CriticalBounds,
    /// Point estimate of the tested quantity, for point tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    pub direction: Direction,
}

/// General entry point for a point or interval test.
pub fn run_test(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    kind: TestKind,
    time: TimeSpec,
    margin: Margin,
    alpha: f64,
    method: &VarianceMethod,
) -> Result<TestDecision> {
    check_alpha(alpha)?;
    let grid = time.grid()?;
    let sigmas = band_sigmas(fit_ref, fit_test, &grid, margin.target, method)?;
    let band = band_from_sigmas(fit_ref, fit_test, &grid, &sigmas, margin.target, alpha, method.band_method())?;
    decision_from_band(fit_ref, fit_test, kind, time, margin, &band)
}

/// Decision from a band already computed on the test's grid.
pub fn decision_from_band(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    kind: TestKind,
    time: TimeSpec,
    margin: Margin,
    band: &ConfidenceBand,
) -> Result<TestDecision> {
    if band.target != margin.target {
        return domain(format!("band target {} does not match margin target {}", band.target, margin.target));
    }
    let critical_bounds = CriticalBounds::from_band(band)?;
    let estimate = match band.points.as_slice() {
        [p] => Some(p.estimate),
        _ => None,
    };
    Ok(TestDecision {
        kind,
        target: margin.target,
        margin,
        time,
        alpha: band.alpha,
        method: band.method,
        reject: decide(kind, &critical_bounds, margin.value),
        critical_bounds,
        estimate,
        direction: Direction::new(fit_ref, fit_test, margin.target),
    })
}

/// Rejects when the upper `(1−α)` bound of the tested quantity at `t0` is at
/// most the margin.
pub fn noninferiority_test(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    t0: f64,
    margin: Margin,
    alpha: f64,
    method: &VarianceMethod,
) -> Result<TestDecision> {
    run_test(fit_ref, fit_test, TestKind::NonInferiority, TimeSpec::point(t0), margin, alpha, method)
}

/// Rejects when both one-sided `(1−α)` bounds at `t0` lie in `[−δ, δ]`.
pub fn equivalence_test(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    t0: f64,
    margin: Margin,
    alpha: f64,
    method: &VarianceMethod,
) -> Result<TestDecision> {
    run_test(fit_ref, fit_test, TestKind::Equivalence, TimeSpec::point(t0), margin, alpha, method)
}

/// Test over `[t1, t2]` on `grid_n` equispaced points. All bootstrap
/// variances come from one shared set of replicates.
#[allow(clippy::too_many_arguments)]
pub fn interval_test(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    t1: f64,
    t2: f64,
    grid_n: usize,
    margin: Margin,
    alpha: f64,
    kind: TestKind,
    method: &VarianceMethod,
) -> Result<TestDecision> {
    run_test(fit_ref, fit_test, kind, TimeSpec::interval(t1, t2, grid_n), margin, alpha, method)
}

/// Earliest grid time from which the upper bound stays at or below `delta`
/// through the end of the band.
pub fn noninferiority_onset(band: &ConfidenceBand, delta: f64) -> Option<f64> {
    let mut onset = None;
    for p in band.points.iter().rev() {
        if p.available && p.upper <= delta {
            onset = Some(p.t);
        } else {
            break;
        }
    }
    onset
}
