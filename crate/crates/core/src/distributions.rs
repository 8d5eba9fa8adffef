//! Parametric event-time families.
//!
//! Parameter order is fixed per family and every entry must be strictly
//! positive:
//!
//! | family        | parameters        | survival S(t)                  |
//! |---------------|-------------------|--------------------------------|
//! | `weibull`     | (shape k, scale λ) | exp{−(t/λ)^k}                  |
//! | `exponential` | (rate ψ)          | exp{−ψt}                       |
//! | `log_logistic`| (shape β, scale α) | 1 / (1 + (t/α)^β)              |
//! | `log_normal`  | (shape σ, scale m) | 1 − Φ((ln t − ln m) / σ)       |
//!
//! Scales are in time units, rates in 1/time. For the log-logistic and
//! log-normal families the scale is the median.
//!
//! Gradients with respect to the parameters are analytic for the Weibull,
//! exponential and log-logistic families. The log-normal family uses central
//! finite differences with step `1e-5 * max(1, |θᵢ|)`.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::special::{ln_normal_sf, normal_cdf, standard_normal_quantile};

/// Relative step of the central differences used where no analytic
/// derivative is coded.
pub const FD_RELATIVE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Weibull,
    Exponential,
    LogLogistic,
    LogNormal,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Weibull,
        Family::Exponential,
        Family::LogLogistic,
        Family::LogNormal,
    ];

    pub fn n_params(self) -> usize {
        match self {
            Family::Exponential => 1,
            _ => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::Exponential => "exponential",
            Family::LogLogistic => "log_logistic",
            Family::LogNormal => "log_normal",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Exponential => &["rate"],
            _ => &["shape", "scale"],
        }
    }

    /// Checks length and positivity of `theta`.
    pub fn check(self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return domain(format!(
                "{} expects {} parameter(s), got {}",
                self,
                self.n_params(),
                theta.len()
            ));
        }
        if let Some(bad) = theta.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return domain(format!("{self} parameters must be finite and > 0, got {bad}"));
        }
        Ok(())
    }

    fn check_time(t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return domain(format!("time must be finite and > 0, got {t}"));
        }
        Ok(())
    }

    /// All five curve values at time `t`.
    pub fn eval(self, theta: &[f64], t: f64) -> Result<CurveValues> {
        self.check(theta)?;
        Self::check_time(t)?;
        let (log_s, log_h) = self.log_survival_and_hazard(theta, t);
        let survival = log_s.exp();
        let hazard = log_h.exp();
        let cdf = match self {
            Family::LogNormal => normal_cdf((t.ln() - theta[1].ln()) / theta[0]),
            Family::LogLogistic => {
                let u = (theta[0] * (t.ln() - theta[1].ln())).exp();
                if u.is_infinite() {
                    1.0
                } else {
                    u / (1.0 + u)
                }
            }
            _ => -log_s.exp_m1(),
        };
        Ok(CurveValues {
            pdf: (log_h + log_s).exp(),
            cdf,
            survival,
            hazard,
            cum_hazard: -log_s,
        })
    }

    pub fn survival(self, theta: &[f64], t: f64) -> Result<f64> {
        self.check(theta)?;
        Self::check_time(t)?;
        Ok(self.log_survival_and_hazard(theta, t).0.exp())
    }

    pub fn log_hazard(self, theta: &[f64], t: f64) -> Result<f64> {
        self.check(theta)?;
        Self::check_time(t)?;
        let log_h = self.log_survival_and_hazard(theta, t).1;
        if !log_h.is_finite() {
            return Err(Error::Numerical(format!(
                "{self} hazard is zero or infinite at t={t}"
            )));
        }
        Ok(log_h)
    }

    /// (ln S(t), ln h(t)) without argument checks.
    pub(crate) fn log_survival_and_hazard(self, theta: &[f64], t: f64) -> (f64, f64) {
        match self {
            Family::Weibull => {
                let (k, lambda) = (theta[0], theta[1]);
                let w = t.ln() - lambda.ln();
                let z = (k * w).exp();
                (-z, k.ln() - lambda.ln() + (k - 1.0) * w)
            }
            Family::Exponential => (-theta[0] * t, theta[0].ln()),
            Family::LogLogistic => {
                let (beta, alpha) = (theta[0], theta[1]);
                let w = beta * (t.ln() - alpha.ln());
                let log1p_u = softplus(w);
                (-log1p_u, beta.ln() - t.ln() + w - log1p_u)
            }
            Family::LogNormal => {
                let (sigma, m) = (theta[0], theta[1]);
                let z = (t.ln() - m.ln()) / sigma;
                let log_s = ln_normal_sf(z);
                let log_f = -0.5 * z * z - LN_SQRT_2PI - (sigma * t).ln();
                (log_s, log_f - log_s)
            }
        }
    }

    /// Time at which the survival function equals `s`, for `s` in (0, 1].
    pub(crate) fn inverse_survival(self, theta: &[f64], s: f64) -> f64 {
        match self {
            Family::Weibull => theta[1] * (-s.ln()).powf(1.0 / theta[0]),
            Family::Exponential => -s.ln() / theta[0],
            Family::LogLogistic => theta[1] * ((1.0 - s) / s).powf(1.0 / theta[0]),
            Family::LogNormal => {
                // s in (0,1) from Open01 so the quantile is defined.
                let z = standard_normal_quantile(s).unwrap_or(0.0);
                theta[1] * (-theta[0] * z).exp()
            }
        }
    }

    /// Inverse of the distribution function: F(quantile(p)) = p.
    pub fn quantile(self, theta: &[f64], p: f64) -> Result<f64> {
        self.check(theta)?;
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("quantile requires 0 < p < 1, got {p}"));
        }
        Ok(match self {
            Family::Weibull => theta[1] * (-(-p).ln_1p()).powf(1.0 / theta[0]),
            Family::Exponential => -(-p).ln_1p() / theta[0],
            Family::LogLogistic => theta[1] * (p / (1.0 - p)).powf(1.0 / theta[0]),
            Family::LogNormal => theta[1] * (theta[0] * standard_normal_quantile(p)?).exp(),
        })
    }

    pub fn median(self, theta: &[f64]) -> Result<f64> {
        self.quantile(theta, 0.5)
    }

    /// `n` independent draws by inverse transform of a uniform on (0, 1).
    pub fn sample<R: Rng + ?Sized>(self, theta: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check(theta)?;
        if n == 0 {
            return domain("sample size must be at least 1");
        }
        Ok((0..n).map(|_| self.draw(theta, rng)).collect())
    }

    /// One draw; `theta` must already be valid.
    pub(crate) fn draw<R: Rng + ?Sized>(self, theta: &[f64], rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.inverse_survival(theta, u)
    }

    /// ∂S(t)/∂θ.
    pub fn grad_survival(self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(theta)?;
        Self::check_time(t)?;
        Ok(match self {
            Family::Weibull => {
                let (k, lambda) = (theta[0], theta[1]);
                let w = (t / lambda).ln();
                let z = (k * w).exp();
                let s = (-z).exp();
                vec![-s * z * w, s * z * k / lambda]
            }
            Family::Exponential => vec![-t * (-theta[0] * t).exp()],
            Family::LogLogistic => {
                let (beta, alpha) = (theta[0], theta[1]);
                let w = (t / alpha).ln();
                let u = (beta * w).exp();
                let s = 1.0 / (1.0 + u);
                // dS/du = -S², with du/dβ = u·ln(t/α) and du/dα = -β·u/α.
                if u.is_infinite() {
                    vec![0.0, 0.0]
                } else {
                    vec![-s * s * u * w, s * s * beta * u / alpha]
                }
            }
            Family::LogNormal => central_gradient(theta, |p| self.log_survival_and_hazard(p, t).0.exp()),
        })
    }

    /// ∂ ln h(t)/∂θ.
    pub fn grad_log_hazard(self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        let log_h = self.log_hazard(theta, t)?;
        debug_assert!(log_h.is_finite());
        Ok(match self {
            Family::Weibull => {
                let (k, lambda) = (theta[0], theta[1]);
                vec![1.0 / k + (t / lambda).ln(), -k / lambda]
            }
            Family::Exponential => vec![1.0 / theta[0]],
            Family::LogLogistic => {
                let (beta, alpha) = (theta[0], theta[1]);
                let w = (t / alpha).ln();
                let s = (-softplus(beta * w)).exp();
                vec![1.0 / beta + w * s, -beta * s / alpha]
            }
            Family::LogNormal => central_gradient(theta, |p| self.log_survival_and_hazard(p, t).1),
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "weibull" => Ok(Family::Weibull),
            "exponential" | "exp" => Ok(Family::Exponential),
            "log_logistic" | "loglogistic" | "llogis" => Ok(Family::LogLogistic),
            "log_normal" | "lognormal" | "lnorm" => Ok(Family::LogNormal),
            other => Err(Error::Input(format!("unknown family '{other}'"))),
        }
    }
}

/// Validated, strictly positive parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self> {
        family.check(&values)?;
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveValues {
    pub pdf: f64,
    pub cdf: f64,
    pub survival: f64,
    pub hazard: f64,
    pub cum_hazard: f64,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// ln(1 + e^w) without overflow.
pub(crate) fn softplus(w: f64) -> f64 {
    if w > 35.0 {
        w
    } else {
        w.exp().ln_1p()
    }
}

fn central_gradient(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = FD_RELATIVE_STEP * theta[i].abs().max(1.0);
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
