//! Derivative-free minimization and numeric second derivatives.
//!
//! Fits run on log-transformed parameters, so the minimizers here are
//! unconstrained. The objective may return `+inf` (or NaN) for infeasible
//! points; those vertices are simply never preferred.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex.
    pub step: f64,
    pub max_iter: usize,
    /// Stop when the spread of objective values falls below
    /// `f_tol * (1 + |f_best|)` and the simplex diameter below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            step: 0.25,
            max_iter: 2000,
            f_tol: 1e-13,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when the iteration budget ran out first.
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead with the standard coefficients (1, 2, ½, ½).
pub fn nelder_mead(f: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], opts: &SimplexOptions) -> Minimum {
    let dim = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if best.is_finite() && (worst - best) <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let along = |coef: f64, out: &mut Vec<f64>, worst_x: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst_x) {
                *o = c + coef * (c - w);
            }
        };

        let worst_x = simplex[dim].0.clone();
        along(1.0, &mut trial, &worst_x);
        let reflected = trial.clone();
        let fr = eval(&reflected, &mut evaluations);

        if fr < simplex[0].1 {
            along(2.0, &mut trial, &worst_x);
            let fe = eval(&trial, &mut evaluations);
            simplex[dim] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        // contraction, outside or inside
        let (coef, reference) = if fr < worst { (0.5, fr) } else { (-0.5, worst) };
        along(coef, &mut trial, &worst_x);
        let fc = eval(&trial, &mut evaluations);
        if fc < reference {
            simplex[dim] = (trial.clone(), fc);
            continue;
        }
        // shrink toward the best vertex
        let best_x = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best_x) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *v = eval(x, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        evaluations,
        converged,
    }
}

/// Coordinate-wise Newton refinement on central differences.
///
/// Function values alone cannot locate a minimum better than about
/// `sqrt(eps)` in relative terms; a root of the differenced first derivative
/// can. Steps that increase the objective are halved and then rejected.
pub fn coordinate_polish(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], value: &mut f64, h: f64, sweeps: usize) {
    for _ in 0..sweeps {
        let mut largest = 0.0f64;
        for i in 0..x.len() {
            let xi = x[i];
            x[i] = xi + h;
            let up = sanitize(f(x));
            x[i] = xi - h;
            let down = sanitize(f(x));
            x[i] = xi;
            let g = (up - down) / (2.0 * h);
            let c = (up - 2.0 * *value + down) / (h * h);
            if !(g.is_finite() && c.is_finite()) || c <= 0.0 {
                continue;
            }
            let mut step = (-g / c).clamp(-0.5, 0.5);
            for _ in 0..8 {
                x[i] = xi + step;
                let v = sanitize(f(x));
                if v <= *value {
                    *value = v;
                    largest = largest.max(step.abs());
                    break;
                }
                x[i] = xi;
                step *= 0.5;
            }
        }
        if largest < 1e-13 {
            break;
        }
    }
}

/// Damped Newton iteration on central differences for 1- or 2-dimensional
/// objectives, meant for restarts close to the minimum. Returns `None` when
/// the local Hessian is not positive definite, no descent step is found, or
/// the iteration budget runs out.
pub fn newton_minimize(f: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], h: f64, max_iter: usize) -> Option<Vec<f64>> {
    let dim = x0.len();
    let steps = vec![h; dim];
    let mut x = x0.to_vec();
    let mut value = sanitize(f(&x));
    if !value.is_finite() {
        return None;
    }
    for _ in 0..max_iter {
        let g = extrapolated_gradient(f, &x, &steps);
        let hess = numeric_hessian(f, &x, &steps);
        let mut step = match dim {
            1 if hess[0][0] > 0.0 => vec![-g[0] / hess[0][0]],
            2 => {
                let (a, b, d) = (hess[0][0], hess[0][1], hess[1][1]);
                let det = a * d - b * b;
                if !(a > 0.0 && det > 0.0) {
                    return None;
                }
                vec![-(d * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det]
            }
            _ => return None,
        };
        let norm = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        if !norm.is_finite() {
            return None;
        }
        if norm < 1e-9 {
            return Some(x);
        }
        if norm < 1e-6 {
            // Below the resolution of the objective value; trust the
            // gradient and take the full step.
            x.iter_mut().zip(&step).for_each(|(a, s)| *a += s);
            value = sanitize(f(&x));
            continue;
        }
        if norm > 1.0 {
            step.iter_mut().for_each(|s| *s /= norm);
        }
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
            let v = sanitize(f(&trial));
            if v <= value {
                x = trial;
                value = v;
                accepted = true;
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        if !accepted {
            // No decrease at any scale: already at the minimum to rounding.
            return (step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-6).then_some(x);
        }
    }
    None
}

/// Richardson extrapolation of central differences at `h` and `h/2`; the
/// O(h²) truncation term would otherwise bias the Newton fixed point.
fn extrapolated_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], steps: &[f64]) -> Vec<f64> {
    let half: Vec<f64> = steps.iter().map(|h| h / 2.0).collect();
    let coarse = numeric_gradient(f, x, steps);
    let fine = numeric_gradient(f, x, &half);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Central-difference gradient with per-coordinate steps.
pub fn numeric_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + steps[i];
            let up = f(&p);
            p[i] = x[i] - steps[i];
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * steps[i])
        })
        .collect()
}

/// Symmetric central-difference Hessian with per-coordinate steps.
pub fn numeric_hessian(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut hess = vec![vec![0.0; n]; n];
    let mut p = x.to_vec();
    for i in 0..n {
        let hi = steps[i];
        p[i] = x[i] + hi;
        let up = f(&p);
        p[i] = x[i] - hi;
        let down = f(&p);
        p[i] = x[i];
        hess[i][i] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let value = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            hess[i][j] = value;
            hess[j][i] = value;
        }
    }
    hess
}

/// Largest condition number accepted when inverting an information matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// Symmetric observed-information matrix (1×1 or 2×2 in practice).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InfoMatrix(Vec<Vec<f64>>);

impl InfoMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self(rows)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.0[i][j] == self.0[j][i]))
    }

    /// Eigenvalues in ascending order. Only dimensions 1 and 2 are needed.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.0[0][0]],
            2 => {
                let (a, b, d) = (self.0[0][0], self.0[0][1], self.0[1][1]);
                let mean = 0.5 * (a + d);
                let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                vec![mean - radius, mean + radius]
            }
            n => panic!("eigenvalues implemented for dimension <= 2, got {n}"),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite()) && self.eigenvalues().iter().all(|&e| e > 0.0)
    }

    pub fn condition(&self) -> f64 {
        let ev = self.eigenvalues();
        let lo = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let hi = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// gᵀ I⁻¹ g by a direct 1×1 / 2×2 solve, refusing ill-conditioned or
    /// indefinite matrices.
    pub fn inverse_quadratic_form(&self, g: &[f64]) -> Result<f64> {
        let condition = self.condition();
        if !self.is_positive_definite() || !(condition <= MAX_CONDITION) {
            return Err(Error::SingularInformation { condition });
        }
        match self.dim() {
            1 => Ok(g[0] * g[0] / self.0[0][0]),
            2 => {
                let (a, b, d) = (self.0[0][0], self.0[0][1], self.0[1][1]);
                let det = a * d - b * b;
                Ok((d * g[0] * g[0] - 2.0 * b * g[0] * g[1] + a * g[1] * g[1]) / det)
            }
            n => Err(Error::Numerical(format!("unsupported information dimension {n}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(&mut f, &[-1.2, 1.0], &SimplexOptions { step: 0.5, max_iter: 5000, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn one_dimensional_and_infeasible_regions() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(&mut f, &[0.5], &SimplexOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn reports_exhausted_budget() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let m = nelder_mead(&mut f, &[0.0, 0.0], &SimplexOptions { max_iter: 3, ..Default::default() });
        assert!(!m.converged);
    }

    #[test]
    fn polish_sharpens_a_quadratic() {
        let mut f = |x: &[f64]| 1e4 + 50.0 * (x[0] - 0.123_456_789).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let mut x = vec![0.1234, -1.9999];
        let mut v = f(&x);
        coordinate_polish(&mut f, &mut x, &mut v, 1e-5, 20);
        assert!((x[0] - 0.123_456_789).abs() < 1e-8);
        assert!((x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn newton_matches_simplex() {
        let mut f = |x: &[f64]| (x[0].exp() - 2.0).powi(2) + 3.0 * (x[1] - 0.5 * x[0]).powi(2) + 1.0;
        let x = newton_minimize(&mut f, &[0.3, 0.0], 1e-4, 50).unwrap();
        assert!((x[0] - 2f64.ln()).abs() < 1e-7 && (x[1] - 0.5 * 2f64.ln()).abs() < 1e-7, "{x:?}");
        let mut concave = |x: &[f64]| -x[0] * x[0];
        assert!(newton_minimize(&mut concave, &[0.1], 1e-4, 50).is_none());
    }

    #[test]
    fn hessian_of_quadratic() {
        let mut f = |x: &[f64]| 2.0 * x[0] * x[0] + 3.0 * x[0] * x[1] + 5.0 * x[1] * x[1];
        let h = numeric_hessian(&mut f, &[0.3, -0.7], &[1e-4, 1e-4]);
        assert!((h[0][0] - 4.0).abs() < 1e-5);
        assert!((h[0][1] - 3.0).abs() < 1e-5);
        assert!((h[1][1] - 10.0).abs() < 1e-5);
        assert_eq!(h[0][1], h[1][0]);
    }

    #[test]
    fn inverse_quadratic_form_and_guard() {
        let m = InfoMatrix::new(vec![vec![4.0, 1.0], vec![1.0, 3.0]]);
        // I^{-1} = [[3,-1],[-1,4]]/11
        let q = m.inverse_quadratic_form(&[1.0, 2.0]).unwrap();
        assert!((q - (3.0 - 4.0 + 16.0) / 11.0).abs() < 1e-15);
        let singular = InfoMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            singular.inverse_quadratic_form(&[1.0, 0.0]),
            Err(Error::SingularInformation { .. })
        ));
        let ill = InfoMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1e-12]]);
        assert!(ill.inverse_quadratic_form(&[1.0, 0.0]).is_err());
    }
}
