//! Parametric survival analysis under non-proportional hazards.
//!
//! Two groups of right-censored event times are fitted with parametric
//! families by maximum likelihood. From the fits the crate builds pointwise
//! confidence bands for the survival difference `S₁(t) − S₂(t)` and the log
//! hazard ratio `ln(h₁(t)/h₂(t))`, either by the delta method or by a
//! parametric bootstrap, and turns those bands into non-inferiority and
//! equivalence decisions at a time point or over an interval.
//!
//! Kaplan–Meier curves, Greenwood bands and the log-rank test are provided as
//! the nonparametric baseline, and [`simulation`] holds the Monte-Carlo
//! harness with the reference scenarios.

pub mod bands;
pub mod dataset;
pub mod distributions;
pub mod equivtest;
pub mod error;
pub mod inference;
pub mod nonparametric;
pub mod optim;
pub mod rng;
pub mod simulation;
pub mod special;

pub use bands::{BandMethod, BandTarget, ConfidenceBand, VarianceMethod};
pub use distributions::{CurveValues, Family, ParamVector};
pub use error::{Error, Result};
pub use inference::{CensoringFit, FitOptions, FitResult, Record, SurvivalSample};
