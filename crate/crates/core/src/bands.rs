//! Pointwise confidence bands for the survival difference and the log hazard
//! ratio of two fitted groups.
//!
//! A band point is `estimate ± z_{1−α}·σ`, so `lower` and `upper` are each
//! one-sided `(1−α)` bounds. σ comes from the delta method or from a
//! bootstrap of the fitted models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Family;
use crate::error::{domain, Error, Result};
use crate::inference::{refit_parameters, CensoringFit, FitResult, Record, SurvivalSample};
use crate::rng::{substream, StreamRng};

pub use crate::special::standard_normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTarget {
    /// Δ(t) = S₁(t) − S₂(t)
    SurvivalDifference,
    /// r(t) = ln h₁(t) − ln h₂(t)
    LogHazardRatio,
}

impl BandTarget {
    pub const ALL: [BandTarget; 2] = [BandTarget::SurvivalDifference, BandTarget::LogHazardRatio];

    pub fn tag(self) -> &'static str {
        match self {
            BandTarget::SurvivalDifference => "diff",
            BandTarget::LogHazardRatio => "loghr",
        }
    }
}

impl fmt::Display for BandTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BandTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diff" | "survival_difference" | "survival-difference" => Ok(BandTarget::SurvivalDifference),
            "loghr" | "log_hazard_ratio" | "log-hazard-ratio" => Ok(BandTarget::LogHazardRatio),
            other => domain(format!("unknown band target '{other}' (expected diff or loghr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    Asymptotic,
    Bootstrap,
    NonparametricBootstrap,
    /// Kaplan–Meier difference with Greenwood variances.
    Greenwood,
}

impl fmt::Display for BandMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandMethod::Asymptotic => "asymptotic",
            BandMethod::Bootstrap => "bootstrap",
            BandMethod::NonparametricBootstrap => "nonparametric_bootstrap",
            BandMethod::Greenwood => "greenwood",
        })
    }
}

impl FromStr for BandMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asymptotic" | "delta" => Ok(BandMethod::Asymptotic),
            "bootstrap" | "parametric_bootstrap" => Ok(BandMethod::Bootstrap),
            "nonparametric_bootstrap" | "np_bootstrap" | "nonparametric-bootstrap" => {
                Ok(BandMethod::NonparametricBootstrap)
            }
            "greenwood" | "km" => Ok(BandMethod::Greenwood),
            other => domain(format!("unknown band method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub t: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma: f64,
    /// False when the point lies outside the support of the estimate
    /// (Kaplan–Meier beyond the last observed time). Values are then NaN.
    pub available: bool,
}

impl BandPoint {
    pub fn new(t: f64, estimate: f64, sigma: f64, z: f64) -> Self {
        Self {
            t,
            estimate,
            lower: estimate - z * sigma,
            upper: estimate + z * sigma,
            sigma,
            available: true,
        }
    }

    pub fn unavailable(t: f64) -> Self {
        Self {
            t,
            estimate: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            sigma: f64::NAN,
            available: false,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.available && self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub target: BandTarget,
    pub method: BandMethod,
    pub alpha: f64,
    pub points: Vec<BandPoint>,
}

impl ConfidenceBand {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    /// The point at time `t`, if `t` is on the grid.
    pub fn at(&self, t: f64) -> Option<&BandPoint> {
        self.points.iter().find(|p| p.t == t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resampling {
    /// Event and censoring times drawn from the fitted models.
    Parametric,
    /// Records drawn with replacement from the observed samples.
    Nonparametric { sample1: SurvivalSample, sample2: SurvivalSample },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
    /// Administrative end of follow-up applied to simulated times.
    pub admin_cutoff: Option<f64>,
    pub resampling: Resampling,
}

impl BootstrapOptions {
    pub fn parametric(n_boot: usize, seed: u64) -> Self {
        Self {
            n_boot,
            seed,
            admin_cutoff: None,
            resampling: Resampling::Parametric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceMethod {
    Asymptotic,
    Bootstrap(BootstrapOptions),
}

impl VarianceMethod {
    pub fn band_method(&self) -> BandMethod {
        match self {
            VarianceMethod::Asymptotic => BandMethod::Asymptotic,
            VarianceMethod::Bootstrap(o) => match o.resampling {
                Resampling::Parametric => BandMethod::Bootstrap,
                Resampling::Nonparametric { .. } => BandMethod::NonparametricBootstrap,
            },
        }
    }
}

/// Target evaluated at arbitrary parameters.
pub fn true_value(
    family1: Family,
    theta1: &[f64],
    family2: Family,
    theta2: &[f64],
    t: f64,
    target: BandTarget,
) -> Result<f64> {
    match target {
        BandTarget::SurvivalDifference => Ok(family1.survival(theta1, t)? - family2.survival(theta2, t)?),
        BandTarget::LogHazardRatio => Ok(family1.log_hazard(theta1, t)? - family2.log_hazard(theta2, t)?),
    }
}

/// Target evaluated at the fitted parameters.
pub fn target_value(fit1: &FitResult, fit2: &FitResult, t: f64, target: BandTarget) -> Result<f64> {
    true_value(fit1.family, fit1.theta(), fit2.family, fit2.theta(), t, target)
}

fn require_converged(fit: &FitResult) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "{} fit for group '{}' did not converge",
            fit.family, fit.group
        )))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        domain(format!("band time must be positive and finite, got {t}"))
    }
}

/// Delta-method variance `Σℓ gℓᵀ Iℓ⁻¹ gℓ` with the total-sample observed
/// information of each fit.
pub fn delta_variance(fit1: &FitResult, fit2: &FitResult, t: f64, target: BandTarget) -> Result<f64> {
    check_time(t)?;
    let mut total = 0.0;
    for fit in [fit1, fit2] {
        require_converged(fit)?;
        let g = match target {
            BandTarget::SurvivalDifference => fit.family.grad_survival(fit.theta(), t)?,
            BandTarget::LogHazardRatio => fit.family.grad_log_hazard(fit.theta(), t)?,
        };
        total += fit.observed_info.inverse_quadratic_form(&g)?;
    }
    Ok(total)
}

/// Replicate curves of both targets on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicates {
    pub grid: Vec<f64>,
    /// `diff[k][i]`: survival difference of replicate `k` at `grid[i]`.
    pub diff: Vec<Vec<f64>>,
    pub loghr: Vec<Vec<f64>>,
    /// Draws spent, including redrawn failures.
    pub draws: usize,
}

impl BootstrapReplicates {
    pub fn n_boot(&self) -> usize {
        self.diff.len()
    }

    /// Sample variance (divisor `B − 1`) per grid point.
    pub fn variances(&self, target: BandTarget) -> Vec<f64> {
        let curves = match target {
            BandTarget::SurvivalDifference => &self.diff,
            BandTarget::LogHazardRatio => &self.loghr,
        };
        let b = curves.len() as f64;
        (0..self.grid.len())
            .map(|i| {
                let mean = curves.iter().map(|c| c[i]).sum::<f64>() / b;
                curves.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (b - 1.0)
            })
            .collect()
    }
}

fn censoring_model(fit: &FitResult) -> Result<Option<(Family, &[f64])>> {
    match &fit.censoring {
        Some(CensoringFit::Fitted { fit: c }) => Ok(Some((c.family, c.theta()))),
        Some(CensoringFit::Degenerate { .. }) => Ok(None),
        None => domain(format!(
            "parametric bootstrap needs a censoring fit for group '{}'",
            fit.group
        )),
    }
}

fn parametric_resample(
    fit: &FitResult,
    censoring: Option<(Family, &[f64])>,
    admin_cutoff: Option<f64>,
    rng: &mut StreamRng,
) -> Result<SurvivalSample> {
    let cutoff = admin_cutoff.unwrap_or(f64::INFINITY);
    let records = (0..fit.n)
        .map(|_| {
            let y = fit.family.draw(fit.theta(), rng);
            let c = censoring.map_or(f64::INFINITY, |(family, psi)| family.draw(psi, rng)).min(cutoff);
            Record::new(y.min(c), y <= c)
        })
        .collect();
    SurvivalSample::new(fit.group.clone(), records)
}

fn record_resample(sample: &SurvivalSample, rng: &mut StreamRng) -> Result<SurvivalSample> {
    let records = sample.records();
    let drawn = (0..records.len()).map(|_| records[rng.random_range(0..records.len())]).collect();
    SurvivalSample::new(sample.label(), drawn)
}

fn refit(fit: &FitResult, sample: &SurvivalSample) -> Option<Vec<f64>> {
    refit_parameters(sample, fit.family, fit.theta())
}

/// One replicate: redraws until both refits succeed or `budget` draws are
/// spent. Returns the curves and the number of draws used.
fn replicate(
    fit1: &FitResult,
    fit2: &FitResult,
    grid: &[f64],
    options: &BootstrapOptions,
    censoring: [Option<(Family, &[f64])>; 2],
    k: usize,
    budget: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut rng = substream(options.seed, k as u64);
    for draw in 1..=budget {
        let samples = match &options.resampling {
            Resampling::Parametric => (
                parametric_resample(fit1, censoring[0], options.admin_cutoff, &mut rng)?,
                parametric_resample(fit2, censoring[1], options.admin_cutoff, &mut rng)?,
            ),
            Resampling::Nonparametric { sample1, sample2 } => {
                (record_resample(sample1, &mut rng)?, record_resample(sample2, &mut rng)?)
            }
        };
        let (Some(r1), Some(r2)) = (refit(fit1, &samples.0), refit(fit2, &samples.1)) else {
            continue;
        };
        let curves = |target| {
            grid.iter()
                .map(|&t| true_value(fit1.family, &r1, fit2.family, &r2, t, target))
                .collect::<Result<Vec<_>>>()
        };
        if let (Ok(diff), Ok(loghr)) = (
            curves(BandTarget::SurvivalDifference),
            curves(BandTarget::LogHazardRatio),
        ) {
            return Ok((diff, loghr, draw));
        }
    }
    Err(Error::Numerical(format!(
        "bootstrap replicate {k} failed {budget} times in a row"
    )))
}

/// Bootstrap replicate curves on `grid`, computed in parallel.
///
/// Replicate `k` uses the random substream `(seed, k)` and redraws its own
/// resample after a failed refit. The run fails if the total number of
/// draws exceeds `10·n_boot`.
pub fn bootstrap_replicates(
    fit1: &FitResult,
    fit2: &FitResult,
    grid: &[f64],
    options: &BootstrapOptions,
) -> Result<BootstrapReplicates> {
    if options.n_boot < 2 {
        return domain(format!("n_boot must be at least 2, got {}", options.n_boot));
    }
    check_grid(grid)?;
    if let Some(c) = options.admin_cutoff {
        if !(c > 0.0) {
            return domain(format!("administrative cutoff must be positive, got {c}"));
        }
    }
    let censoring = match options.resampling {
        Resampling::Parametric => [censoring_model(fit1)?, censoring_model(fit2)?],
        Resampling::Nonparametric { .. } => [None, None],
    };
    let budget = 10 * options.n_boot;
    let results: Vec<_> = (0..options.n_boot)
        .into_par_iter()
        .map(|k| replicate(fit1, fit2, grid, options, censoring, k, budget - (options.n_boot - 1)))
        .collect();
    let mut out = BootstrapReplicates {
        grid: grid.to_vec(),
        diff: Vec::with_capacity(options.n_boot),
        loghr: Vec::with_capacity(options.n_boot),
        draws: 0,
    };
    for r in results {
        let (diff, loghr, draws) = r?;
        out.diff.push(diff);
        out.loghr.push(loghr);
        out.draws += draws;
    }
    if out.draws > budget {
        return Err(Error::Numerical(format!(
            "bootstrap needed {} draws for {} replicates (budget {budget})",
            out.draws, options.n_boot
        )));
    }
    Ok(out)
}

/// Bootstrap variance of the target at a single time point.
pub fn bootstrap_variance(
    fit1: &FitResult,
    fit2: &FitResult,
    t: f64,
    target: BandTarget,
    options: &BootstrapOptions,
) -> Result<f64> {
    check_time(t)?;
    Ok(bootstrap_replicates(fit1, fit2, &[t], options)?.variances(target)[0])
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return domain("time grid is empty");
    }
    for &t in grid {
        check_time(t)?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return domain("time grid must be strictly ascending");
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        domain(format!("alpha must lie in (0, 1), got {alpha}"))
    }
}

/// Standard deviations of the target over `grid` by either method.
pub fn band_sigmas(
    fit1: &FitResult,
    fit2: &FitResult,
    grid: &[f64],
    target: BandTarget,
    method: &VarianceMethod,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    match method {
        VarianceMethod::Asymptotic => grid
            .iter()
            .map(|&t| delta_variance(fit1, fit2, t, target).map(f64::sqrt))
            .collect(),
        VarianceMethod::Bootstrap(options) => Ok(bootstrap_replicates(fit1, fit2, grid, options)?
            .variances(target)
            .into_iter()
            .map(f64::sqrt)
            .collect()),
    }
}

/// Assembles a band from estimates and standard deviations.
pub fn band_from_sigmas(
    fit1: &FitResult,
    fit2: &FitResult,
    grid: &[f64],
    sigmas: &[f64],
    target: BandTarget,
    alpha: f64,
    method: BandMethod,
) -> Result<ConfidenceBand> {
    check_alpha(alpha)?;
    let z = standard_normal_quantile(1.0 - alpha)?;
    let points = grid
        .iter()
        .zip(sigmas)
        .map(|(&t, &sigma)| Ok(BandPoint::new(t, target_value(fit1, fit2, t, target)?, sigma, z)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceBand {
        target,
        method,
        alpha,
        points,
    })
}

/// `estimate ± z_{1−α}·σ` at every grid point.
pub fn pointwise_band(
    fit1: &FitResult,
    fit2: &FitResult,
    grid: &[f64],
    target: BandTarget,
    alpha: f64,
    method: &VarianceMethod,
) -> Result<ConfidenceBand> {
    check_alpha(alpha)?;
    let sigmas = band_sigmas(fit1, fit2, grid, target, method)?;
    band_from_sigmas(fit1, fit2, grid, &sigmas, target, alpha, method.band_method())
}
