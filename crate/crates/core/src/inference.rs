//! Censored maximum likelihood for event and censoring distributions.
//!
//! For a right-censored record `(t, δ)` the event model contributes
//! `δ·ln f(t) + (1−δ)·ln S(t)` and the censoring model contributes
//! `δ·ln(1−G(t)) + (1−δ)·ln g(t)`. With disjoint parameters the joint
//! likelihood factorises, so the two parts are maximised separately.
//!
//! Fits minimise the negative log-likelihood over log-parameters with
//! Nelder–Mead, then refine coordinate-wise. The observed information is the
//! negative numeric Hessian in the original parametrisation.

use serde::{Deserialize, Serialize};

use crate::distributions::{softplus, Family, ParamVector};
use crate::error::{input, Error, Result};
use crate::optim::{
    coordinate_polish, nelder_mead, newton_minimize, numeric_gradient, numeric_hessian, InfoMatrix, SimplexOptions,
};
use crate::special::ln_normal_sf;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Relative step of the numeric Hessian behind the observed information.
pub const HESSIAN_RELATIVE_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub time: f64,
    /// `true` for an observed event, `false` for a censored time.
    pub event: bool,
}

impl Record {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }
}

/// Right-censored observations of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    label: String,
    records: Vec<Record>,
}

impl SurvivalSample {
    pub fn new(label: impl Into<String>, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return input("a sample needs at least one record");
        }
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| !(r.time.is_finite() && r.time > 0.0)) {
            return input(format!("record {i}: time must be finite and > 0, got {}", r.time));
        }
        Ok(Self {
            label: label.into(),
            records,
        })
    }

    /// Builds a sample from parallel time / status columns (status 1 = event).
    pub fn from_columns(label: impl Into<String>, times: &[f64], status: &[u8]) -> Result<Self> {
        if times.len() != status.len() {
            return input(format!("{} times but {} statuses", times.len(), status.len()));
        }
        let records = times
            .iter()
            .zip(status)
            .map(|(&t, &s)| match s {
                0 => Ok(Record::new(t, false)),
                1 => Ok(Record::new(t, true)),
                other => input(format!("status must be 0 or 1, got {other}")),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(label, records)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn n_censored(&self) -> usize {
        self.len() - self.n_events()
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }

    /// Same times with event and censoring roles exchanged.
    pub fn flipped(&self) -> Self {
        Self {
            label: self.label.clone(),
            records: self.records.iter().map(|r| Record::new(r.time, !r.event)).collect(),
        }
    }

    fn median_time(&self) -> f64 {
        let mut times: Vec<f64> = self.records.iter().map(|r| r.time).collect();
        times.sort_by(f64::total_cmp);
        let n = times.len();
        if n % 2 == 1 {
            times[n / 2]
        } else {
            0.5 * (times[n / 2 - 1] + times[n / 2])
        }
    }
}

/// Column-oriented copy of a sample with the sums the likelihoods reuse.
struct Prepared {
    ln_time: Vec<f64>,
    event: Vec<bool>,
    n_events: f64,
    sum_time: f64,
    sum_event_ln_time: f64,
}

impl Prepared {
    fn new(sample: &SurvivalSample) -> Self {
        let time: Vec<f64> = sample.records.iter().map(|r| r.time).collect();
        let ln_time: Vec<f64> = time.iter().map(|t| t.ln()).collect();
        let event: Vec<bool> = sample.records.iter().map(|r| r.event).collect();
        let n_events = event.iter().filter(|&&e| e).count() as f64;
        let sum_time = time.iter().sum();
        let sum_event_ln_time = ln_time.iter().zip(&event).filter(|(_, &e)| e).map(|(l, _)| l).sum();
        Self {
            ln_time,
            event,
            n_events,
            sum_time,
            sum_event_ln_time,
        }
    }

    fn loglik(&self, family: Family, theta: &[f64]) -> f64 {
        let d = self.n_events;
        match family {
            Family::Exponential => d * theta[0].ln() - theta[0] * self.sum_time,
            Family::Weibull => {
                let (k, ln_lambda) = (theta[0], theta[1].ln());
                let cum_hazard: f64 = self.ln_time.iter().map(|l| (k * (l - ln_lambda)).exp()).sum();
                d * (k.ln() - ln_lambda) + (k - 1.0) * (self.sum_event_ln_time - d * ln_lambda) - cum_hazard
            }
            Family::LogLogistic => {
                let (beta, ln_alpha) = (theta[0], theta[1].ln());
                let tail: f64 = self
                    .ln_time
                    .iter()
                    .zip(&self.event)
                    .map(|(l, &e)| (if e { 2.0 } else { 1.0 }) * softplus(beta * (l - ln_alpha)))
                    .sum();
                d * (beta.ln() - ln_alpha) + (beta - 1.0) * (self.sum_event_ln_time - d * ln_alpha) - tail
            }
            Family::LogNormal => {
                let (sigma, ln_m) = (theta[0], theta[1].ln());
                let ln_sigma = sigma.ln();
                self.ln_time
                    .iter()
                    .zip(&self.event)
                    .map(|(l, &e)| {
                        let z = (l - ln_m) / sigma;
                        if e {
                            -0.5 * z * z - LN_SQRT_2PI - ln_sigma - l
                        } else {
                            ln_normal_sf(z)
                        }
                    })
                    .sum()
            }
        }
    }
}

/// Σ[δ ln f(t) + (1−δ) ln S(t)]. Returns −∞ when the density vanishes at an
/// event time.
pub fn log_likelihood(sample: &SurvivalSample, family: Family, theta: &[f64]) -> Result<f64> {
    family.check(theta)?;
    Ok(Prepared::new(sample).loglik(family, theta))
}

/// Σ[δ ln(1−G(t)) + (1−δ) ln g(t)] for a censoring distribution G.
pub fn censoring_log_likelihood(sample: &SurvivalSample, family: Family, psi: &[f64]) -> Result<f64> {
    log_likelihood(&sample.flipped(), family, psi)
}

/// Log of the full two-part likelihood (event and censoring models).
pub fn joint_log_likelihood(
    sample: &SurvivalSample,
    family: Family,
    theta: &[f64],
    censor_family: Family,
    psi: &[f64],
) -> Result<f64> {
    Ok(log_likelihood(sample, family, theta)? + censoring_log_likelihood(sample, censor_family, psi)?)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub start: Option<Vec<f64>>,
    pub max_iter: usize,
    /// Convergence threshold on the gradient norm of the mean log-likelihood
    /// with respect to the log-parameters.
    pub tol: f64,
    /// Initial simplex edge in log-parameter units.
    pub simplex_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            start: None,
            max_iter: 2000,
            tol: 1e-6,
            simplex_step: 0.25,
        }
    }
}

impl FitOptions {
    /// Options for refits near a known solution, e.g. bootstrap replicates
    /// started at the generating parameters.
    pub fn warm(start: &[f64]) -> Self {
        Self {
            start: Some(start.to_vec()),
            simplex_step: 0.1,
            ..Self::default()
        }
    }
}

/// Fitted censoring model attached to an event-time fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CensoringFit {
    Fitted { fit: Box<FitResult> },
    /// No censored records: the censoring rate is reported as zero and
    /// resampling draws no random censoring.
    Degenerate { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub group: String,
    pub family: Family,
    pub theta_hat: ParamVector,
    pub loglik: f64,
    /// Total-sample observed information, −∇² log L at `theta_hat`.
    pub observed_info: InfoMatrix,
    pub n: usize,
    pub n_events: usize,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censoring: Option<CensoringFit>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn survival(&self, t: f64) -> Result<f64> {
        self.family.survival(&self.theta_hat, t)
    }

    pub fn log_hazard(&self, t: f64) -> Result<f64> {
        self.family.log_hazard(&self.theta_hat, t)
    }

    pub fn aic_from(n_params: usize, loglik: f64) -> f64 {
        2.0 * n_params as f64 - 2.0 * loglik
    }
}

fn default_start(family: Family, sample: &SurvivalSample) -> Vec<f64> {
    let median = sample.median_time();
    match family {
        // shape 1, so median / (ln 2)^{1/shape} = median / ln 2
        Family::Weibull => vec![1.0, median / 2f64.ln()],
        Family::Exponential => vec![2f64.ln() / median],
        Family::LogLogistic | Family::LogNormal => vec![1.0, median],
    }
}

/// Maximum-likelihood fit of `family` to the event part of `sample`.
pub fn fit_mle(sample: &SurvivalSample, family: Family, options: &FitOptions) -> Result<FitResult> {
    if sample.n_events() == 0 {
        return input(format!("group '{}' has no events; cannot fit {family}", sample.label()));
    }
    if sample.len() < family.n_params() {
        return input(format!(
            "group '{}' has {} records, fewer than the {} parameters of {family}",
            sample.label(),
            sample.len(),
            family.n_params()
        ));
    }
    let start = options.start.clone().unwrap_or_else(|| default_start(family, sample));
    family.check(&start)?;

    let prepared = Prepared::new(sample);
    let dim = family.n_params();
    let mut nll = |x: &[f64]| {
        let mut theta = [0.0; 2];
        for (t, v) in theta.iter_mut().zip(x) {
            *t = v.exp();
        }
        let theta = &theta[..dim];
        if theta.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return f64::INFINITY;
        }
        -prepared.loglik(family, theta)
    };

    let x0: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    let simplex = SimplexOptions {
        step: options.simplex_step,
        max_iter: options.max_iter,
        ..SimplexOptions::default()
    };
    let first = nelder_mead(&mut nll, &x0, &simplex);
    // Restart once from the best vertex with a small simplex to guard against
    // a collapsed simplex.
    let second = nelder_mead(
        &mut nll,
        &first.x,
        &SimplexOptions {
            step: 0.02,
            ..simplex.clone()
        },
    );
    let mut x = second.x;
    let mut value = second.value;
    coordinate_polish(&mut nll, &mut x, &mut value, 1e-5, 50);
    // The simplex stalls near 1e-8 relative accuracy; Newton steps finish
    // the job when the surface is locally convex.
    if let Some(xn) = newton_minimize(&mut nll, &x, 1e-4, 20) {
        let v = nll(&xn);
        if v <= value + 1e-12 * value.abs() {
            x = xn;
            value = v;
        }
    }

    let n = sample.len();
    let grad = numeric_gradient(&mut nll, &x, &vec![1e-5; dim]);
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / n as f64;

    let theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let loglik = -value;
    let steps: Vec<f64> = theta.iter().map(|v| HESSIAN_RELATIVE_STEP * v.abs()).collect();
    let mut negative_loglik = |p: &[f64]| -prepared.loglik(family, p);
    let observed_info = InfoMatrix::new(numeric_hessian(&mut negative_loglik, &theta, &steps));

    let converged = first.converged
        && second.converged
        && loglik.is_finite()
        && grad_norm < options.tol
        && theta.iter().all(|v| v.is_finite() && *v > 0.0)
        && observed_info.is_positive_definite();

    let theta_hat = match ParamVector::new(family, theta) {
        Ok(p) => p,
        Err(e) => return Err(Error::Numerical(format!("fit left the parameter domain: {e}"))),
    };
    Ok(FitResult {
        group: sample.label().to_string(),
        family,
        theta_hat,
        loglik,
        observed_info,
        n,
        n_events: sample.n_events(),
        aic: FitResult::aic_from(dim, loglik),
        converged,
        iterations: first.iterations + second.iterations,
        grad_norm,
        censoring: None,
    })
}

/// Parameter estimate only, by Newton steps from `start` with a fallback to
/// [`fit_mle`]. Used for resamples whose estimate is known to be close to
/// `start`; `None` when neither route converges.
pub fn refit_parameters(sample: &SurvivalSample, family: Family, start: &[f64]) -> Option<Vec<f64>> {
    if sample.n_events() == 0 || sample.len() < family.n_params() || family.check(start).is_err() {
        return None;
    }
    let prepared = Prepared::new(sample);
    let mut nll = |x: &[f64]| {
        let theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        if theta.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return f64::INFINITY;
        }
        -prepared.loglik(family, &theta)
    };
    let x0: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    if let Some(x) = newton_minimize(&mut nll, &x0, 1e-4, 50) {
        let theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        if family.check(&theta).is_ok() {
            return Some(theta);
        }
    }
    fit_mle(sample, family, &FitOptions::warm(start))
        .ok()
        .filter(|f| f.converged)
        .map(|f| f.theta_hat.into_inner())
}

/// Fit of the censoring distribution: the event fit of the flipped sample.
pub fn fit_censoring(sample: &SurvivalSample, family: Family) -> Result<FitResult> {
    fit_censoring_with(sample, family, &FitOptions::default())
}

pub fn fit_censoring_with(sample: &SurvivalSample, family: Family, options: &FitOptions) -> Result<FitResult> {
    if sample.n_censored() == 0 {
        return input(format!(
            "group '{}' has no censored records; the censoring distribution is not estimable",
            sample.label()
        ));
    }
    fit_mle(&sample.flipped(), family, options)
}

/// Event fit with the censoring model attached, as needed by the parametric
/// bootstrap. A sample without censored records gets
/// [`CensoringFit::Degenerate`].
pub fn fit_with_censoring(
    sample: &SurvivalSample,
    family: Family,
    censor_family: Family,
    options: &FitOptions,
) -> Result<FitResult> {
    let mut fit = fit_mle(sample, family, options)?;
    fit.censoring = Some(if sample.n_censored() == 0 {
        CensoringFit::Degenerate { rate: 0.0 }
    } else {
        CensoringFit::Fitted {
            fit: Box::new(fit_censoring(sample, censor_family)?),
        }
    });
    Ok(fit)
}

/// Fits every family and ranks by AIC. Non-converged fits go last; ties are
/// broken by fewer parameters, then by family order.
pub fn select_model(sample: &SurvivalSample, families: &[Family]) -> Result<Vec<FitResult>> {
    if families.is_empty() {
        return input("model selection needs at least one family");
    }
    let mut fits = families
        .iter()
        .map(|&f| fit_mle(sample, f, &FitOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| {
        (!a.converged)
            .cmp(&!b.converged)
            .then(a.aic.total_cmp(&b.aic))
            .then(a.n_params().cmp(&b.n_params()))
            .then(a.family.cmp(&b.family))
    });
    Ok(fits)
}
