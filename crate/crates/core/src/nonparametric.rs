//! Kaplan–Meier curves with Greenwood variances, their difference band, and
//! the two-group log-rank test.
//!
//! At tied times events are processed before censorings, so a subject
//! censored at an event time counts as at risk for that event.

use serde::{Deserialize, Serialize};

use crate::bands::{check_alpha, check_grid, BandMethod, BandPoint, BandTarget, ConfidenceBand};
use crate::error::{input, Result};
use crate::inference::SurvivalSample;
use crate::special::{chi_square_1_sf, standard_normal_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMEstimate {
    /// Distinct event times, ascending.
    pub event_times: Vec<f64>,
    /// Ŝ just after each event time.
    pub survival: Vec<f64>,
    pub greenwood_var: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub n_events: Vec<usize>,
    /// Largest observed time, event or censored.
    pub last_time: f64,
}

impl KMEstimate {
    fn step_index(&self, t: f64) -> Option<usize> {
        self.event_times.partition_point(|&e| e <= t).checked_sub(1)
    }

    /// Right-continuous Ŝ(t); 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.step_index(t).map_or(1.0, |i| self.survival[i])
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        self.step_index(t).map_or(0.0, |i| self.greenwood_var[i])
    }

    /// Whether Ŝ is determined at `t`, i.e. `t` does not exceed the last
    /// observed time.
    pub fn covers(&self, t: f64) -> bool {
        t <= self.last_time
    }
}

/// Product-limit estimate with Greenwood's variance `Ŝ²·Σ d/(n(n−d))`.
/// The variance is reported as 0 once Ŝ reaches 0.
pub fn kaplan_meier(sample: &SurvivalSample) -> KMEstimate {
    let mut records = sample.records().to_vec();
    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut km = KMEstimate {
        event_times: Vec::new(),
        survival: Vec::new(),
        greenwood_var: Vec::new(),
        at_risk: Vec::new(),
        n_events: Vec::new(),
        last_time: records.last().map_or(0.0, |r| r.time),
    };
    let mut at_risk = records.len();
    let mut s = 1.0;
    // Ŝ as a reduced fraction while it fits, so small samples give the
    // correctly rounded product-limit value.
    let mut exact: Option<(u128, u128)> = Some((1, 1));
    let mut sum = 0.0;
    let mut i = 0;
    while i < records.len() {
        let t = records[i].time;
        let (mut d, mut c) = (0, 0);
        while i < records.len() && records[i].time == t {
            if records[i].event {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            let (n, d_f) = (at_risk as f64, d as f64);
            exact = exact.and_then(|(num, den)| {
                let (num, den) = (num.checked_mul((at_risk - d) as u128)?, den.checked_mul(at_risk as u128)?);
                let g = gcd(num, den);
                Some((num / g, den / g))
            });
            s = match exact {
                Some((num, den)) if num < (1 << 53) && den < (1 << 53) => num as f64 / den as f64,
                _ => s * (1.0 - d_f / n),
            };
            sum += if d < at_risk { d_f / (n * (n - d_f)) } else { f64::INFINITY };
            km.event_times.push(t);
            km.survival.push(s);
            km.greenwood_var.push(if s > 0.0 { s * s * sum } else { 0.0 });
            km.at_risk.push(at_risk);
            km.n_events.push(d);
        }
        at_risk -= d + c;
    }
    km
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Band for `Ŝ₁ − Ŝ₂` with the Greenwood variances added. Points beyond the
/// last observed time of either group are flagged unavailable.
pub fn km_difference_band(km1: &KMEstimate, km2: &KMEstimate, grid: &[f64], alpha: f64) -> Result<ConfidenceBand> {
    check_grid(grid)?;
    check_alpha(alpha)?;
    let z = standard_normal_quantile(1.0 - alpha)?;
    let points = grid
        .iter()
        .map(|&t| {
            if km1.covers(t) && km2.covers(t) {
                let sigma = (km1.variance_at(t) + km2.variance_at(t)).sqrt();
                BandPoint::new(t, km1.survival_at(t) - km2.survival_at(t), sigma, z)
            } else {
                BandPoint::unavailable(t)
            }
        })
        .collect();
    Ok(ConfidenceBand {
        target: BandTarget::SurvivalDifference,
        method: BandMethod::Greenwood,
        alpha,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed: [usize; 2],
    pub expected: [f64; 2],
    pub variance: f64,
}

/// Two-group log-rank test, chi-square with one degree of freedom.
pub fn logrank_test(sample1: &SurvivalSample, sample2: &SurvivalSample) -> Result<LogRankResult> {
    let mut pooled: Vec<(f64, bool, usize)> = sample1
        .records()
        .iter()
        .map(|r| (r.time, r.event, 0))
        .chain(sample2.records().iter().map(|r| (r.time, r.event, 1)))
        .collect();
    if !pooled.iter().any(|r| r.1) {
        return input("log-rank test needs at least one event");
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk = [sample1.len() as f64, sample2.len() as f64];
    let mut observed = [0usize; 2];
    let mut expected = [0.0; 2];
    let mut variance = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut deaths = [0.0; 2];
        let mut leaving = [0.0; 2];
        while i < pooled.len() && pooled[i].0 == t {
            let g = pooled[i].2;
            if pooled[i].1 {
                deaths[g] += 1.0;
            }
            leaving[g] += 1.0;
            i += 1;
        }
        let d = deaths[0] + deaths[1];
        let n = at_risk[0] + at_risk[1];
        if d > 0.0 {
            for g in 0..2 {
                observed[g] += deaths[g] as usize;
                expected[g] += d * at_risk[g] / n;
            }
            if n > 1.0 {
                variance += d * (at_risk[0] / n) * (at_risk[1] / n) * (n - d) / (n - 1.0);
            }
        }
        at_risk[0] -= leaving[0];
        at_risk[1] -= leaving[1];
    }
    let diff = observed[0] as f64 - expected[0];
    let statistic = if variance > 0.0 { diff * diff / variance } else { 0.0 };
    Ok(LogRankResult {
        statistic,
        p_value: chi_square_1_sf(statistic),
        observed,
        expected,
        variance,
    })
}
