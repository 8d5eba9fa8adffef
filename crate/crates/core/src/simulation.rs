//! Scenario registry and Monte-Carlo harness: data generation with random
//! and administrative censoring, coverage studies and rejection-rate studies.
//!
//! Run `k` of a study draws from the random substream `(seed, k)`, so results
//! do not depend on scheduling. A run whose fits or bands fail is redrawn
//! from the same stream; the study fails once the total number of draws
//! exceeds `10·n_sim`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{
    band_from_sigmas, bootstrap_replicates, check_alpha, delta_variance, true_value, BandMethod, BandTarget,
    BootstrapOptions, BootstrapReplicates,
};
use crate::distributions::Family;
use crate::equivtest::{decide, linspace, CriticalBounds, TestKind, TimeSpec};
use crate::error::{domain, Error, Result};
use crate::inference::{fit_with_censoring, FitOptions, FitResult, Record, SurvivalSample};
use crate::rng::{substream, StreamRng};
use crate::special::standard_normal_quantile;

/// Truth within this distance below the margin still counts as a null
/// (boundary) configuration; tables quote true differences rounded to the
/// margin, e.g. 0.199 as 0.2.
pub const BOUNDARY_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    Exponential { rate: f64 },
    /// Uniform on `(0, upper)`.
    Uniform { upper: f64 },
}

impl Censoring {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Censoring::Exponential { rate } => Family::Exponential.draw(&[rate], rng),
            Censoring::Uniform { upper } => upper * rng.random::<f64>(),
        }
    }

    fn cdf(&self, c: f64) -> f64 {
        match *self {
            Censoring::Exponential { rate } => -(-rate * c).exp_m1(),
            Censoring::Uniform { upper } => (c / upper).clamp(0.0, 1.0),
        }
    }

    fn check(&self) -> Result<()> {
        let v = match *self {
            Censoring::Exponential { rate } => rate,
            Censoring::Uniform { upper } => upper,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            domain(format!("censoring parameter must be positive, got {v}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub family: Family,
    pub theta: Vec<f64>,
    pub censoring: Censoring,
}

/// Which difference the tables report: the first group is the reference
/// for `FirstMinusSecond`, the second group for `SecondMinusFirst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    FirstMinusSecond,
    SecondMinusFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Type I error and coverage configuration.
    Null,
    /// Power configuration.
    Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Linspace { start: f64, end: f64, n: usize },
    Points(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Linspace { start, end, n } => linspace(*start, *end, *n),
            GridSpec::Points(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub purpose: Purpose,
    /// Administrative end of follow-up.
    pub t_max: f64,
    pub grid: GridSpec,
    pub orientation: Orientation,
    /// Family fitted to simulated data; differs from the truth in
    /// misspecification scenarios.
    pub analysis_family: Family,
    #[serde(default = "exponential")]
    pub censoring_family: Family,
    pub groups: Vec<GroupSpec>,
}

fn exponential() -> Family {
    Family::Exponential
}

#[derive(Deserialize)]
struct Registry {
    version: u32,
    scenario: Vec<ScenarioConfig>,
}

const REGISTRY: &str = include_str!("scenarios.toml");

fn registry() -> &'static [ScenarioConfig] {
    static CELL: OnceLock<Vec<ScenarioConfig>> = OnceLock::new();
    CELL.get_or_init(|| {
        let r: Registry = toml::from_str(REGISTRY).expect("bundled scenario registry is valid TOML");
        assert_eq!(r.version, 1, "unsupported scenario registry version");
        r.scenario
    })
}

pub fn scenario_names() -> Vec<&'static str> {
    registry().iter().map(|s| s.name.as_str()).collect()
}

/// A scenario from the bundled registry.
pub fn scenario(name: &str) -> Result<ScenarioConfig> {
    registry()
        .iter()
        .find(|s| s.name == name)
        .cloned()
        .ok_or_else(|| Error::Domain(format!("unknown scenario '{name}' (known: {})", scenario_names().join(", "))))
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups.len() != 2 {
            return domain(format!("scenario '{}' needs exactly two groups", self.name));
        }
        for g in &self.groups {
            g.family.check(&g.theta)?;
            g.censoring.check()?;
        }
        if !(self.t_max > 0.0) {
            return domain(format!("t_max must be positive, got {}", self.t_max));
        }
        let grid = self.grid.points();
        if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t <= self.t_max)) {
            return domain(format!("grid of '{}' must lie in (0, t_max]", self.name));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> Vec<f64> {
        self.grid.points()
    }

    /// Same scenario evaluated on other time points.
    pub fn with_grid(mut self, points: Vec<f64>) -> Self {
        self.grid = GridSpec::Points(points);
        self
    }

    /// Indices of the (reference, test) groups.
    pub fn roles(&self) -> (usize, usize) {
        match self.orientation {
            Orientation::FirstMinusSecond => (0, 1),
            Orientation::SecondMinusFirst => (1, 0),
        }
    }

    /// True `target(reference) − target(test)` at `t`.
    pub fn true_difference(&self, t: f64, target: BandTarget) -> Result<f64> {
        let (r, s) = self.roles();
        let (a, b) = (&self.groups[r], &self.groups[s]);
        true_value(a.family, &a.theta, b.family, &b.theta, t, target)
    }

    /// True value in group order, `target(group 1) − target(group 2)`.
    pub fn true_value(&self, t: f64, target: BandTarget) -> Result<f64> {
        let (a, b) = (&self.groups[0], &self.groups[1]);
        true_value(a.family, &a.theta, b.family, &b.theta, t, target)
    }
}

fn simulate_group<R: Rng + ?Sized>(
    label: &str,
    group: &GroupSpec,
    n: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<SurvivalSample> {
    let records = (0..n)
        .map(|_| {
            let y = group.family.draw(&group.theta, rng);
            let c = group.censoring.draw(rng).min(t_max);
            Record::new(y.min(c), y <= c)
        })
        .collect();
    SurvivalSample::new(label, records)
}

/// One simulated data set: `t = min(y, c, t_max)`, event iff `y ≤ min(c, t_max)`.
pub fn generate_pair<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    n1: usize,
    n2: usize,
    rng: &mut R,
) -> Result<(SurvivalSample, SurvivalSample)> {
    config.validate()?;
    if n1 == 0 || n2 == 0 {
        return domain("group sizes must be at least 1");
    }
    Ok((
        simulate_group("group1", &config.groups[0], n1, config.t_max, rng)?,
        simulate_group("group2", &config.groups[1], n2, config.t_max, rng)?,
    ))
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + inner + f(b)) * h / 3.0
}

/// P(min(C, t_max) < Y), the expected censored fraction of a group.
pub fn censoring_fraction(family: Family, theta: &[f64], censoring: Censoring, t_max: f64) -> Result<f64> {
    family.check(theta)?;
    censoring.check()?;
    let survival = |t: f64| if t <= 0.0 { 1.0 } else { family.survival(theta, t).unwrap_or(0.0) };
    let end = match censoring {
        Censoring::Uniform { upper } => upper.min(t_max),
        Censoring::Exponential { .. } => t_max,
    };
    let density_part = match censoring {
        Censoring::Exponential { rate } => {
            if end.is_finite() {
                simpson(|c| rate * (-rate * c).exp() * survival(c), 0.0, end, 20_000)
            } else {
                // substitute c = −ln(u)/rate to map the half line onto (0, 1]
                simpson(|u| if u > 0.0 { survival(-u.ln() / rate) } else { 0.0 }, 0.0, 1.0, 20_000)
            }
        }
        Censoring::Uniform { upper } => simpson(survival, 0.0, end, 20_000) / upper,
    };
    let beyond = if t_max.is_finite() { (1.0 - censoring.cdf(t_max)) * survival(t_max) } else { 0.0 };
    Ok(density_part + beyond)
}

/// Upper bound `c` of uniform censoring giving `target_rate` censored
/// subjects under administrative cutoff `t_max`, by bisection.
pub fn calibrate_uniform_censoring(family: Family, theta: &[f64], t_max: f64, target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return domain(format!("target censoring rate must lie in (0, 1), got {target_rate}"));
    }
    let rate = |c: f64| censoring_fraction(family, theta, Censoring::Uniform { upper: c }, t_max);
    let floor = if t_max.is_finite() { family.survival(theta, t_max)? } else { 0.0 };
    if target_rate <= floor {
        return Err(Error::Input(format!(
            "censoring rate {target_rate} unattainable: administrative censoring alone gives {floor:.4}"
        )));
    }
    let scale = family.median(theta)?;
    let (mut lo, mut hi) = (scale * 1e-6, scale);
    while rate(hi)? > target_rate {
        lo = hi;
        hi *= 2.0;
        if hi > scale * 1e12 {
            return Err(Error::Input(format!("censoring rate {target_rate} unattainable")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which interpretation a rejection rate has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    TypeIError,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub kind: TestKind,
    pub target: BandTarget,
    pub time: TimeSpec,
    pub margin: f64,
}

impl FromStr for TestSpec {
    type Err = Error;

    /// `KIND,TARGET,TIME,MARGIN` with TIME a point `4` or an interval
    /// `1.5:6` (101 grid points) or `1.5:6:23`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [kind, target, time, margin] = parts.as_slice() else {
            return domain(format!("test spec '{s}' must look like KIND,TARGET,TIME,MARGIN"));
        };
        let number = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Domain(format!("invalid number '{v}' in test spec '{s}'")))
        };
        let fields: Vec<&str> = time.split(':').collect();
        let time = match fields.as_slice() {
            [t] => TimeSpec::point(number(t)?),
            [a, b] => TimeSpec::interval(number(a)?, number(b)?, crate::equivtest::DEFAULT_INTERVAL_GRID),
            [a, b, n] => TimeSpec::interval(
                number(a)?,
                number(b)?,
                n.parse().map_err(|_| Error::Domain(format!("invalid grid size '{n}'")))?,
            ),
            _ => return domain(format!("invalid time '{time}' in test spec '{s}'")),
        };
        time.grid()?;
        let margin = number(margin)?;
        if !(margin > 0.0) {
            return domain(format!("margin must be positive in test spec '{s}'"));
        }
        Ok(Self {
            kind: kind.parse()?,
            target: target.parse()?,
            time,
            margin,
        })
    }
}

impl fmt::Display for TestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.kind, self.target, time_label(&self.time), self.margin)
    }
}

fn time_label(time: &TimeSpec) -> String {
    match time {
        TimeSpec::Point { t } => format!("{t}"),
        TimeSpec::Interval { start, end, grid_n } => format!("{start}:{end}:{grid_n}"),
    }
}

impl TestSpec {
    /// Truth statistic compared with the margin: the largest difference for
    /// non-inferiority, the largest absolute difference for equivalence.
    pub fn true_statistic(&self, config: &ScenarioConfig) -> Result<f64> {
        let mut out = f64::NEG_INFINITY;
        for t in self.time.grid()? {
            let d = config.true_difference(t, self.target)?;
            out = out.max(match self.kind {
                TestKind::NonInferiority => d,
                TestKind::Equivalence => d.abs(),
            });
        }
        Ok(out)
    }

    pub fn regime(&self, config: &ScenarioConfig) -> Result<Regime> {
        Ok(if self.true_statistic(config)? >= self.margin - BOUNDARY_TOLERANCE {
            Regime::TypeIError
        } else {
            Regime::Power
        })
    }
}

/// Variance method of a study; bootstrap replicates use the administrative
/// cutoff of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMethod {
    Asymptotic,
    Bootstrap,
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asymptotic" => Ok(StudyMethod::Asymptotic),
            "bootstrap" => Ok(StudyMethod::Bootstrap),
            other => domain(format!("unknown study method '{other}'")),
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyMethod::Asymptotic => "asymptotic",
            StudyMethod::Bootstrap => "bootstrap",
        })
    }
}

impl From<StudyMethod> for BandMethod {
    fn from(m: StudyMethod) -> Self {
        match m {
            StudyMethod::Asymptotic => BandMethod::Asymptotic,
            StudyMethod::Bootstrap => BandMethod::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: StudyMethod,
    pub target: BandTarget,
    pub t: f64,
    pub true_value: f64,
    /// Two-sided `(1−α)` band, `±z_{1−α/2}·σ`.
    pub coverage: f64,
    pub se: f64,
    /// One-sided `(1−α)` bounds, `est − z_{1−α}·σ ≤ truth` and `truth ≤ est + z_{1−α}·σ`.
    pub lower_coverage: f64,
    pub upper_coverage: f64,
    pub mean_sigma: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub test: TestSpec,
    pub true_statistic: f64,
    pub regime: Regime,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Coverage,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: StudyKind,
    pub scenario: String,
    pub purpose: Purpose,
    pub n1: usize,
    pub n2: usize,
    pub n_sim: usize,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    /// Redrawn data sets, summed over runs.
    pub failed_runs: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<CoverageRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejection: Vec<RejectionRow>,
}

fn monte_carlo_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn fmt_rate(p: f64) -> String {
    format!("{p:.3}")
}

impl StudyResult {
    /// Long-format CSV, one row per (method, target, time) or test.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv output: {e}"));
        match self.study {
            StudyKind::Coverage => {
                w.write_record([
                    "scenario", "n1", "n2", "method", "target", "t", "true_value", "coverage", "se",
                    "lower_coverage", "upper_coverage", "mean_sigma", "runs",
                ])
                .map_err(csv_err)?;
                for r in &self.coverage {
                    w.write_record([
                        self.scenario.clone(),
                        self.n1.to_string(),
                        self.n2.to_string(),
                        r.method.to_string(),
                        r.target.to_string(),
                        r.t.to_string(),
                        r.true_value.to_string(),
                        r.coverage.to_string(),
                        r.se.to_string(),
                        r.lower_coverage.to_string(),
                        r.upper_coverage.to_string(),
                        r.mean_sigma.to_string(),
                        r.runs.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            StudyKind::Rejection => {
                w.write_record([
                    "scenario", "n1", "n2", "kind", "target", "time", "margin", "true_statistic", "regime",
                    "rejections", "rate", "se", "runs",
                ])
                .map_err(csv_err)?;
                for r in &self.rejection {
                    w.write_record([
                        self.scenario.clone(),
                        self.n1.to_string(),
                        self.n2.to_string(),
                        r.test.kind.to_string(),
                        r.test.target.to_string(),
                        time_label(&r.test.time),
                        r.test.margin.to_string(),
                        r.true_statistic.to_string(),
                        serde_json::to_value(r.regime)
                            .ok()
                            .and_then(|v| v.as_str().map(String::from))
                            .unwrap_or_default(),
                        r.rejections.to_string(),
                        r.rate.to_string(),
                        r.se.to_string(),
                        r.runs.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?)
            .map_err(|e| Error::Numerical(e.to_string()))
    }

    /// Rejection rates pivoted like the paper's tables: one row per
    /// (target, time), one column per margin, cells `equivalence (non-inferiority)`.
    /// Cells outside the null of a null scenario are `-`.
    pub fn to_table_csv(&self) -> Result<String> {
        let margins: Vec<f64> = {
            let mut m: Vec<f64> = self.rejection.iter().map(|r| r.test.margin).collect();
            m.sort_by(f64::total_cmp);
            m.dedup();
            m
        };
        let mut rows: BTreeMap<(String, String), BTreeMap<String, [Option<&RejectionRow>; 2]>> = BTreeMap::new();
        let mut order: Vec<(String, String)> = Vec::new();
        for r in &self.rejection {
            let key = (r.test.target.to_string(), time_label(&r.test.time));
            if !order.contains(&key) {
                order.push(key.clone());
            }
            let slot = rows.entry(key).or_default().entry(r.test.margin.to_string()).or_default();
            slot[usize::from(r.test.kind == TestKind::NonInferiority)] = Some(r);
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["n1".to_string(), "n2".into(), "target".into(), "t0".into(), "truth".into()];
        header.extend(margins.iter().map(|m| format!("delta={m}")));
        w.write_record(&header).map_err(|e| Error::Numerical(e.to_string()))?;
        for key in order {
            let cells = &rows[&key];
            let time = self
                .rejection
                .iter()
                .find(|r| r.test.target.to_string() == key.0 && time_label(&r.test.time) == key.1)
                .map(|r| r.test.time)
                .expect("row key comes from a rejection row");
            let truth = match (time, scenario(&self.scenario)) {
                (TimeSpec::Point { t }, Ok(cfg)) => cfg
                    .true_difference(t, key.0.parse()?)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default(),
                _ => String::new(),
            };
            let mut record = vec![self.n1.to_string(), self.n2.to_string(), key.0.clone(), key.1.clone(), truth];
            for m in &margins {
                let cell = match cells.get(&m.to_string()) {
                    None => String::new(),
                    Some(pair) => {
                        let outside_null = pair.iter().flatten().all(|r| r.regime == Regime::Power);
                        if self.purpose == Purpose::Null && outside_null {
                            "-".to_string()
                        } else {
                            match pair {
                                [Some(eq), Some(ni)] => format!("{} ({})", fmt_rate(eq.rate), fmt_rate(ni.rate)),
                                [Some(eq), None] => fmt_rate(eq.rate),
                                [None, Some(ni)] => format!("({})", fmt_rate(ni.rate)),
                                [None, None] => String::new(),
                            }
                        }
                    }
                };
                record.push(cell);
            }
            w.write_record(&record).map_err(|e| Error::Numerical(e.to_string()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?)
            .map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("json output: {e}")))
    }

    pub fn coverage_row(&self, method: StudyMethod, target: BandTarget, t: f64) -> Option<&CoverageRow> {
        self.coverage
            .iter()
            .find(|r| r.method == method && r.target == target && r.t == t)
    }

    pub fn rejection_row(&self, spec: &TestSpec) -> Option<&RejectionRow> {
        self.rejection.iter().find(|r| r.test == *spec)
    }
}

/// Fitted pair of one simulated data set, in group order.
struct Fits {
    group: [FitResult; 2],
}

fn fit_pair(config: &ScenarioConfig, samples: &(SurvivalSample, SurvivalSample)) -> Option<Fits> {
    let opts = FitOptions::default();
    let fit = |s: &SurvivalSample| {
        fit_with_censoring(s, config.analysis_family, config.censoring_family, &opts)
            .ok()
            .filter(|f| f.converged)
    };
    Some(Fits {
        group: [fit(&samples.0)?, fit(&samples.1)?],
    })
}

/// Runs `n_sim` independent simulations; `run` returns `None` to request a
/// redraw. Returns the outcomes in run order and the number of redraws.
fn monte_carlo<T: Send>(
    config: &ScenarioConfig,
    n1: usize,
    n2: usize,
    n_sim: usize,
    seed: u64,
    run: impl Fn(&Fits, &mut StreamRng) -> Option<T> + Sync,
) -> Result<(Vec<T>, usize)> {
    if n_sim == 0 {
        return domain("n_sim must be at least 1");
    }
    config.validate()?;
    let budget = 10 * n_sim;
    let per_run = budget - (n_sim - 1);
    let outcomes: Vec<Result<(T, usize)>> = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            for draw in 1..=per_run {
                let samples = generate_pair(config, n1, n2, &mut rng)?;
                let Some(fits) = fit_pair(config, &samples) else {
                    continue;
                };
                if let Some(out) = run(&fits, &mut rng) {
                    return Ok((out, draw));
                }
            }
            Err(Error::Numerical(format!("simulation run {k} failed {per_run} times in a row")))
        })
        .collect();
    let mut results = Vec::with_capacity(n_sim);
    let mut draws = 0;
    for o in outcomes {
        let (v, d) = o?;
        results.push(v);
        draws += d;
    }
    if draws > budget {
        return Err(Error::Numerical(format!(
            "simulation needed {draws} data sets for {n_sim} runs (budget {budget})"
        )));
    }
    Ok((results, draws - n_sim))
}

fn bootstrap_for(
    fit_ref: &FitResult,
    fit_test: &FitResult,
    grid: &[f64],
    n_boot: usize,
    t_max: f64,
    rng: &mut StreamRng,
) -> Option<BootstrapReplicates> {
    let options = BootstrapOptions {
        admin_cutoff: Some(t_max),
        ..BootstrapOptions::parametric(n_boot, rng.random())
    };
    bootstrap_replicates(fit_ref, fit_test, grid, &options).ok()
}

/// Per-point indicators of one run: (two-sided, lower, upper, sigma) per
/// method, target and grid point.
type CoverageOutcome = Vec<(bool, bool, bool, f64)>;

/// Coverage of pointwise bands for the true target in group order
/// `target(group 1) − target(group 2)`.
#[allow(clippy::too_many_arguments)]
pub fn coverage_study(
    config: &ScenarioConfig,
    n1: usize,
    n2: usize,
    n_sim: usize,
    methods: &[StudyMethod],
    targets: &[BandTarget],
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<StudyResult> {
    check_alpha(alpha)?;
    if methods.is_empty() || targets.is_empty() {
        return domain("coverage study needs at least one method and one target");
    }
    if methods.contains(&StudyMethod::Bootstrap) && n_boot < 2 {
        return domain("bootstrap coverage needs n_boot >= 2");
    }
    let grid = config.grid_points();
    let z_two = standard_normal_quantile(1.0 - alpha / 2.0)?;
    let truth: Vec<Vec<f64>> = targets
        .iter()
        .map(|&target| grid.iter().map(|&t| config.true_value(t, target)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let (outcomes, failed) = monte_carlo(config, n1, n2, n_sim, seed, |fits: &Fits, rng: &mut StreamRng| {
        let [f1, f2] = &fits.group;
        let replicates = if methods.contains(&StudyMethod::Bootstrap) {
            Some(bootstrap_for(f1, f2, &grid, n_boot, config.t_max, rng)?)
        } else {
            None
        };
        let mut out: CoverageOutcome = Vec::new();
        for &method in methods {
            for (ti, &target) in targets.iter().enumerate() {
                let variances = match method {
                    StudyMethod::Asymptotic => grid
                        .iter()
                        .map(|&t| delta_variance(f1, f2, t, target))
                        .collect::<Result<Vec<_>>>()
                        .ok()?,
                    StudyMethod::Bootstrap => replicates.as_ref()?.variances(target),
                };
                let sigmas: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
                let band = band_from_sigmas(f1, f2, &grid, &sigmas, target, alpha, method.into()).ok()?;
                for (p, &truth) in band.points.iter().zip(&truth[ti]) {
                    let dev = truth - p.estimate;
                    out.push((
                        dev.abs() <= z_two * p.sigma,
                        p.lower <= truth,
                        truth <= p.upper,
                        p.sigma,
                    ));
                }
            }
        }
        Some(out)
    })?;

    let mut rows = Vec::new();
    let mut idx = 0;
    for &method in methods {
        for (ti, &target) in targets.iter().enumerate() {
            for (gi, &t) in grid.iter().enumerate() {
                let (mut both, mut lower, mut upper, mut sigma) = (0usize, 0usize, 0usize, 0.0);
                for o in &outcomes {
                    let (b, l, u, s) = o[idx];
                    both += b as usize;
                    lower += l as usize;
                    upper += u as usize;
                    sigma += s;
                }
                let coverage = both as f64 / n_sim as f64;
                rows.push(CoverageRow {
                    method,
                    target,
                    t,
                    true_value: truth[ti][gi],
                    coverage,
                    se: monte_carlo_se(coverage, n_sim),
                    lower_coverage: lower as f64 / n_sim as f64,
                    upper_coverage: upper as f64 / n_sim as f64,
                    mean_sigma: sigma / n_sim as f64,
                    runs: n_sim,
                });
                idx += 1;
            }
        }
    }
    Ok(StudyResult {
        study: StudyKind::Coverage,
        scenario: config.name.clone(),
        purpose: config.purpose,
        n1,
        n2,
        n_sim,
        alpha,
        n_boot: if methods.contains(&StudyMethod::Bootstrap) { n_boot } else { 0 },
        seed,
        failed_runs: failed,
        coverage: rows,
        rejection: Vec::new(),
    })
}

/// Rejection frequencies of the given tests. Roles follow the scenario's
/// orientation; every test in a run uses the same fitted models and one
/// shared set of bootstrap replicates.
#[allow(clippy::too_many_arguments)]
pub fn rejection_study(
    config: &ScenarioConfig,
    n1: usize,
    n2: usize,
    n_sim: usize,
    tests: &[TestSpec],
    alpha: f64,
    method: StudyMethod,
    n_boot: usize,
    seed: u64,
) -> Result<StudyResult> {
    check_alpha(alpha)?;
    if tests.is_empty() {
        return domain("rejection study needs at least one test");
    }
    if method == StudyMethod::Bootstrap && n_boot < 2 {
        return domain("bootstrap rejection study needs n_boot >= 2");
    }
    let grids: Vec<Vec<f64>> = tests.iter().map(|s| s.time.grid()).collect::<Result<_>>()?;
    let mut union: Vec<f64> = grids.iter().flatten().copied().collect();
    union.sort_by(f64::total_cmp);
    union.dedup();
    let index: Vec<Vec<usize>> = grids
        .iter()
        .map(|g| g.iter().map(|t| union.partition_point(|u| u < t)).collect())
        .collect();
    let z = standard_normal_quantile(1.0 - alpha)?;
    let (r, s) = config.roles();

    let (outcomes, failed) = monte_carlo(config, n1, n2, n_sim, seed, |fits: &Fits, rng: &mut StreamRng| {
        let (fit_ref, fit_test) = (&fits.group[r], &fits.group[s]);
        let replicates = match method {
            StudyMethod::Bootstrap => Some(bootstrap_for(fit_ref, fit_test, &union, n_boot, config.t_max, rng)?),
            StudyMethod::Asymptotic => None,
        };
        let mut sigma: BTreeMap<BandTarget, Vec<f64>> = BTreeMap::new();
        let mut estimate: BTreeMap<BandTarget, Vec<f64>> = BTreeMap::new();
        for spec in tests {
            if sigma.contains_key(&spec.target) {
                continue;
            }
            let sd = match &replicates {
                Some(rep) => rep.variances(spec.target).into_iter().map(f64::sqrt).collect(),
                None => union
                    .iter()
                    .map(|&t| delta_variance(fit_ref, fit_test, t, spec.target).map(f64::sqrt))
                    .collect::<Result<Vec<_>>>()
                    .ok()?,
            };
            let est = union
                .iter()
                .map(|&t| crate::bands::target_value(fit_ref, fit_test, t, spec.target))
                .collect::<Result<Vec<_>>>()
                .ok()?;
            sigma.insert(spec.target, sd);
            estimate.insert(spec.target, est);
        }
        let rejects: Vec<bool> = tests
            .iter()
            .zip(&index)
            .map(|(spec, idx)| {
                let (sd, est) = (&sigma[&spec.target], &estimate[&spec.target]);
                let mut b = CriticalBounds {
                    max_upper: f64::NEG_INFINITY,
                    t_max_upper: f64::NAN,
                    min_lower: f64::INFINITY,
                    t_min_lower: f64::NAN,
                };
                for &i in idx {
                    let (lo, hi) = (est[i] - z * sd[i], est[i] + z * sd[i]);
                    if hi > b.max_upper {
                        b.max_upper = hi;
                        b.t_max_upper = union[i];
                    }
                    if lo < b.min_lower {
                        b.min_lower = lo;
                        b.t_min_lower = union[i];
                    }
                }
                decide(spec.kind, &b, spec.margin)
            })
            .collect();
        Some(rejects)
    })?;

    let rows = tests
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let rejections = outcomes.iter().filter(|o| o[j]).count();
            let rate = rejections as f64 / n_sim as f64;
            Ok(RejectionRow {
                test: *spec,
                true_statistic: spec.true_statistic(config)?,
                regime: spec.regime(config)?,
                rejections,
                rate,
                se: monte_carlo_se(rate, n_sim),
                runs: n_sim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        study: StudyKind::Rejection,
        scenario: config.name.clone(),
        purpose: config.purpose,
        n1,
        n2,
        n_sim,
        alpha,
        n_boot: if method == StudyMethod::Bootstrap { n_boot } else { 0 },
        seed,
        failed_runs: failed,
        coverage: Vec::new(),
        rejection: rows,
    })
}

/// A study as read from a TOML file.
///
/// ```toml
/// study = "rejection"          # or "coverage"
/// scenario = "scen1a_null"
/// n1 = 150
/// n2 = 150
/// n_sim = 1000
/// seed = 1
/// alpha = 0.05                 # default 0.05
/// n_boot = 500                 # default 500
/// method = "asymptotic"        # rejection studies
/// tests = ["equiv,diff,4,0.2", "noninf,diff,4,0.2"]
/// methods = ["asymptotic", "bootstrap"]   # coverage studies
/// targets = ["diff", "loghr"]             # coverage studies
/// grid = [1.5, 2.3, 4.0]                  # optional, overrides the scenario grid
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub scenario: String,
    pub n1: usize,
    pub n2: usize,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_method")]
    pub method: StudyMethod,
    #[serde(default)]
    pub tests: Vec<String>,
    #[serde(default = "default_methods")]
    pub methods: Vec<StudyMethod>,
    #[serde(default = "default_targets")]
    pub targets: Vec<BandTarget>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

fn default_n_sim() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_n_boot() -> usize {
    500
}
fn default_method() -> StudyMethod {
    StudyMethod::Asymptotic
}
fn default_methods() -> Vec<StudyMethod> {
    vec![StudyMethod::Asymptotic]
}
fn default_targets() -> Vec<BandTarget> {
    vec![BandTarget::SurvivalDifference]
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("study config: {e}")))
    }

    pub fn run(&self) -> Result<StudyResult> {
        let mut config = scenario(&self.scenario)?;
        if let Some(grid) = &self.grid {
            config = config.with_grid(grid.clone());
        }
        match self.study {
            StudyKind::Coverage => coverage_study(
                &config,
                self.n1,
                self.n2,
                self.n_sim,
                &self.methods,
                &self.targets,
                self.alpha,
                self.n_boot,
                self.seed,
            ),
            StudyKind::Rejection => {
                let tests = self.tests.iter().map(|t| t.parse()).collect::<Result<Vec<TestSpec>>>()?;
                rejection_study(&config, self.n1, self.n2, self.n_sim, &tests, self.alpha, self.method, self.n_boot, self.seed)
            }
        }
    }
}
