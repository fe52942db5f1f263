use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{assemble_b, j_matrix, SturmCoefficients};
use crate::error::{Error, Result};

/// One-step scheme for the linear system `u' = J B u`.
///
/// Both choices are symplectic. The two-stage Gauss-Legendre rule is fourth order
/// and is the default; the implicit midpoint rule is second order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Gauss4,
    Midpoint,
}

/// Fundamental solution `φ(t_j)` on a uniform grid, with `φ(0) = I`.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub s: f64,
    pub times: Vec<f64>,
    pub phi: Vec<DMatrix<f64>>,
    dim: usize,
}

impl FundamentalSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.phi.last().expect("at least the initial sample")
    }

    /// Lower-left `n x n` block: maps `y(0)` to `ξ(t_j)` for solutions with `ξ(0) = 0`.
    pub fn lower_left(&self, j: usize) -> DMatrix<f64> {
        let n = self.dim;
        self.phi[j].view((n, 0), (n, n)).into_owned()
    }

    /// `max |φᵀJφ − J|` relative to `max(1, max|φ|²)`. Rounding alone leaves a
    /// residual of order `ε max|φ|²`, so strongly growing solutions need the scaling.
    pub fn symplectic_defect(&self, j: usize) -> f64 {
        let jm = j_matrix(self.dim);
        let scale = self.phi[j].amax().powi(2).max(1.0);
        (self.phi[j].transpose() * &jm * &self.phi[j] - jm).amax() / scale
    }

    pub fn max_symplectic_defect(&self) -> f64 {
        (0..self.phi.len())
            .map(|j| self.symplectic_defect(j))
            .fold(0.0, f64::max)
    }
}

fn generator(coeffs: &SturmCoefficients, s: f64, t: f64) -> DMatrix<f64> {
    j_matrix(coeffs.dim()) * assemble_b(coeffs, s, t)
}

fn single_step(
    coeffs: &SturmCoefficients,
    s: f64,
    t0: f64,
    h: f64,
    integrator: Integrator,
) -> Option<DMatrix<f64>> {
    let d = 2 * coeffs.dim();
    let id = DMatrix::<f64>::identity(d, d);
    match integrator {
        Integrator::Midpoint => {
            let k = generator(coeffs, s, t0 + 0.5 * h) * (0.5 * h);
            let lhs = &id - &k;
            let rhs = &id + &k;
            lhs.lu().solve(&rhs)
        }
        Integrator::Gauss4 => {
            let r3 = 3f64.sqrt() / 6.0;
            let (c1, c2) = (0.5 - r3, 0.5 + r3);
            let (a11, a12, a21, a22) = (0.25, 0.25 - r3, 0.25 + r3, 0.25);
            let k1 = generator(coeffs, s, t0 + c1 * h);
            let k2 = generator(coeffs, s, t0 + c2 * h);
            let mut lhs = DMatrix::<f64>::identity(2 * d, 2 * d);
            {
                let mut v = lhs.view_mut((0, 0), (d, d));
                v += &k1 * (-h * a11);
            }
            {
                let mut v = lhs.view_mut((0, d), (d, d));
                v += &k1 * (-h * a12);
            }
            {
                let mut v = lhs.view_mut((d, 0), (d, d));
                v += &k2 * (-h * a21);
            }
            {
                let mut v = lhs.view_mut((d, d), (d, d));
                v += &k2 * (-h * a22);
            }
            let mut rhs = DMatrix::<f64>::zeros(2 * d, d);
            rhs.view_mut((0, 0), (d, d)).copy_from(&k1);
            rhs.view_mut((d, 0), (d, d)).copy_from(&k2);
            let stages = lhs.lu().solve(&rhs)?;
            let sum = stages.view((0, 0), (d, d)) + stages.view((d, 0), (d, d));
            Some(id + sum * (0.5 * h))
        }
    }
    .filter(|g| g.iter().all(|v| v.is_finite()))
}

/// One-step propagator from `t0` to `t0 + h`; a singular solve retries once with two half steps.
pub(crate) fn step_matrix(
    coeffs: &SturmCoefficients,
    s: f64,
    t0: f64,
    h: f64,
    integrator: Integrator,
) -> Result<DMatrix<f64>> {
    if let Some(g) = single_step(coeffs, s, t0, h, integrator) {
        return Ok(g);
    }
    let first = single_step(coeffs, s, t0, 0.5 * h, integrator);
    let second = single_step(coeffs, s, t0 + 0.5 * h, 0.5 * h, integrator);
    match (first, second) {
        (Some(a), Some(b)) => Ok(b * a),
        _ => Err(Error::Singular(format!(
            "propagator step at t = {t0:.6} is singular"
        ))),
    }
}

/// Propagate over `[0, 1]` with `steps` uniform steps.
pub fn propagate(
    coeffs: &SturmCoefficients,
    s: f64,
    steps: usize,
    integrator: Integrator,
) -> Result<FundamentalSolution> {
    propagate_to(coeffs, s, steps, 1.0, integrator)
}

/// Propagate over `[0, t_end]` with step `1 / steps`; beyond `s t = 1` the coefficients are held at their final value.
pub fn propagate_to(
    coeffs: &SturmCoefficients,
    s: f64,
    steps: usize,
    t_end: f64,
    integrator: Integrator,
) -> Result<FundamentalSolution> {
    if steps == 0 {
        return Err(Error::config("steps", "must be positive"));
    }
    if !s.is_finite() || !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::Domain(
            "propagation parameters must be finite".into(),
        ));
    }
    let d = 2 * coeffs.dim();
    let h = 1.0 / steps as f64;
    let count = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(count + 1);
    let mut phi = Vec::with_capacity(count + 1);
    times.push(0.0);
    phi.push(DMatrix::identity(d, d));
    for j in 0..count {
        let t0 = j as f64 * h;
        let t1 = ((j + 1) as f64 * h).min(t_end);
        let g = step_matrix(coeffs, s, t0, t1 - t0, integrator)?;
        let next = g * &phi[j];
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "fundamental solution at t = {t1:.6}"
            )));
        }
        times.push(t1);
        phi.push(next);
    }
    Ok(FundamentalSolution {
        s,
        times,
        phi,
        dim: coeffs.dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(omega: f64) -> SturmCoefficients {
        SturmCoefficients::scalar(-omega * omega, 1.0).unwrap()
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let w = 3.0;
        for (integ, tol) in [(Integrator::Gauss4, 1e-10), (Integrator::Midpoint, 1e-4)] {
            let f = propagate(&harmonic(w), 1.0, 400, integ).unwrap();
            // ξ' = y and y' = -ω²ξ, so ξ(t) = sin(ωt)/ω for y(0) = 1
            let c = f.lower_left(400)[(0, 0)];
            assert!((c - w.sin() / w).abs() < tol, "{integ:?}: {c}");
            assert!(f.max_symplectic_defect() < 1e-12);
        }
    }

    #[test]
    fn gauss_is_fourth_order() {
        let w = 4.0;
        let err = |m| {
            (propagate(&harmonic(w), 1.0, m, Integrator::Gauss4)
                .unwrap()
                .lower_left(m)[(0, 0)]
                - w.sin() / w)
                .abs()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn extended_propagation_holds_coefficients() {
        let f = propagate_to(&harmonic(1.0), 1.0, 100, 1.05, Integrator::Gauss4).unwrap();
        assert!((f.times.last().unwrap() - 1.05).abs() < 1e-14);
        let c = f.last()[(1, 0)];
        assert!((c - 1.05f64.sin()).abs() < 1e-9);
    }
}
