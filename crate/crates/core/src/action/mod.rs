//! Discretized free-time action
//!
//! ```text
//! S(x, T) = Σ_i [ N |x_{i+1} - x_i|² / (2T) - (T/N) U(σ, m_i) + (T/N) k ],   m_i = (x_i + x_{i+1}) / 2
//! ```
//!
//! on a uniform grid of the unit interval, with its exact gradient and second
//! variation. Interior nodes `x_1..x_{N-1}` are the unknowns; the endpoints are pinned.

mod critical;

pub use critical::{k0_value, mane_value, CriticalValues, K0Method, ManeValue};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{BlockTridiag, Bordered};
use crate::potential::PotentialModel;

/// Discrete transition path on `t_i = i/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    nodes: Vec<DVector<f64>>,
    duration: f64,
    sigma: f64,
    energy_offset: f64,
}

impl PathState {
    pub fn new(
        nodes: Vec<DVector<f64>>,
        duration: f64,
        sigma: f64,
        energy_offset: f64,
    ) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Domain(format!(
                "need N ≥ 2 intervals, got {}",
                nodes.len().saturating_sub(1)
            )));
        }
        let n = nodes[0].len();
        if n == 0 || nodes.iter().any(|x| x.len() != n) {
            return Err(Error::Domain("inconsistent node dimensions".into()));
        }
        if nodes.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("path node".into()));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Domain(format!(
                "duration must be positive, got {duration}"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "noise intensity must be ≥ 0, got {sigma}"
            )));
        }
        if !energy_offset.is_finite() {
            return Err(Error::Domain("energy offset must be finite".into()));
        }
        Ok(PathState {
            nodes,
            duration,
            sigma,
            energy_offset,
        })
    }

    pub fn straight_line(
        x_minus: &DVector<f64>,
        x_plus: &DVector<f64>,
        intervals: usize,
        duration: f64,
        sigma: f64,
        energy_offset: f64,
    ) -> Result<Self> {
        if x_minus.len() != x_plus.len() {
            return Err(Error::Domain("endpoint dimensions differ".into()));
        }
        let nodes = (0..=intervals)
            .map(|i| {
                let t = i as f64 / intervals as f64;
                x_minus * (1.0 - t) + x_plus * t
            })
            .collect();
        let mut p = PathState::new(nodes, duration, sigma, energy_offset)?;
        // exact endpoints regardless of rounding in the interpolation
        p.nodes[0] = x_minus.clone();
        p.nodes[intervals] = x_plus.clone();
        Ok(p)
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn energy_offset(&self) -> f64 {
        self.energy_offset
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn x_minus(&self) -> &DVector<f64> {
        &self.nodes[0]
    }

    pub fn x_plus(&self) -> &DVector<f64> {
        &self.nodes[self.intervals()]
    }

    pub fn midpoint(&self, i: usize) -> DVector<f64> {
        (&self.nodes[i] + &self.nodes[i + 1]) * 0.5
    }

    /// Linear interpolation of the nodes at `t ∈ [0, 1]` (clamped).
    pub fn position_at(&self, t: f64) -> DVector<f64> {
        let n = self.intervals();
        let u = t.clamp(0.0, 1.0) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let w = u - i as f64;
        &self.nodes[i] * (1.0 - w) + &self.nodes[i + 1] * w
    }

    pub fn interior_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut v = DVector::zeros(n * (self.intervals() - 1));
        for j in 1..self.intervals() {
            v.rows_mut((j - 1) * n, n).copy_from(&self.nodes[j]);
        }
        v
    }

    pub fn with_interior(&self, v: &DVector<f64>) -> PathState {
        let n = self.dim();
        let mut p = self.clone();
        for j in 1..self.intervals() {
            p.nodes[j] = v.rows((j - 1) * n, n).into_owned();
        }
        p
    }

    pub fn with_duration(&self, duration: f64) -> PathState {
        let mut p = self.clone();
        p.duration = duration;
        p
    }

    pub fn with_sigma(&self, sigma: f64) -> PathState {
        let mut p = self.clone();
        p.sigma = sigma;
        p
    }

    pub fn with_energy_offset(&self, k: f64) -> PathState {
        let mut p = self.clone();
        p.energy_offset = k;
        p
    }

    /// Re-samples onto `intervals` uniform intervals by linear interpolation.
    pub fn resample(&self, intervals: usize) -> Result<PathState> {
        if intervals == self.intervals() {
            return Ok(self.clone());
        }
        let nodes = (0..=intervals)
            .map(|i| self.position_at(i as f64 / intervals as f64))
            .collect();
        PathState::new(nodes, self.duration, self.sigma, self.energy_offset)
    }

    /// Largest node norm.
    pub fn sup_norm(&self) -> f64 {
        self.nodes.iter().map(|x| x.amax()).fold(0.0, f64::max)
    }

    /// Sup-norm distance between node sets (same grid assumed).
    pub fn sup_distance(&self, other: &PathState) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionGradient {
    pub x: DVector<f64>,
    pub t: f64,
}

impl ActionGradient {
    pub fn norm_inf(&self) -> f64 {
        self.x.amax().max(self.t.abs())
    }
}

/// Discretized second variation: bordered matrix `[[A(r), B], [Bᵀ, C(r)]]`.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    pub a: BlockTridiag,
    pub b: DVector<f64>,
    pub c: f64,
    pub r: f64,
}

impl HessianBlocks {
    pub fn bordered(&self) -> Bordered {
        Bordered {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.bordered().to_dense()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyStats {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub dev: f64,
}

fn velocity(path: &PathState, i: usize) -> DVector<f64> {
    (&path.nodes[i + 1] - &path.nodes[i]) * (path.intervals() as f64 / path.duration)
}

pub fn action_value(path: &PathState, model: &PotentialModel) -> f64 {
    let n = path.intervals() as f64;
    let t = path.duration;
    let mut s = 0.0;
    for i in 0..path.intervals() {
        let dx = &path.nodes[i + 1] - &path.nodes[i];
        s += n * dx.norm_squared() / (2.0 * t)
            - (t / n) * model.effective_value(path.sigma, &path.midpoint(i));
    }
    s + t * path.energy_offset
}

/// Onsager–Machlup value: the action at zero energy offset plus `V(x+) - V(x-)`.
pub fn om_value(path: &PathState, model: &PotentialModel) -> f64 {
    action_value(&path.with_energy_offset(0.0), model) + model.value(path.x_plus())
        - model.value(path.x_minus())
}

pub fn action_gradient(path: &PathState, model: &PotentialModel) -> ActionGradient {
    let nn = path.intervals();
    let n = nn as f64;
    let t = path.duration;
    let d = path.dim();
    let mut grad_u = Vec::with_capacity(nn);
    let mut gt = 0.0;
    for i in 0..nn {
        let (u, g) = model.effective_grad(path.sigma, &path.midpoint(i));
        gt += path.energy_offset - 0.5 * velocity(path, i).norm_squared() - u;
        grad_u.push(g);
    }
    let mut gx = DVector::zeros(d * (nn - 1));
    for j in 1..nn {
        let lap = &path.nodes[j] * 2.0 - &path.nodes[j - 1] - &path.nodes[j + 1];
        let gj = lap * (n / t) - (&grad_u[j - 1] + &grad_u[j]) * (0.5 * t / n);
        gx.rows_mut((j - 1) * d, d).copy_from(&gj);
    }
    ActionGradient { x: gx, t: gt / n }
}

/// Midpoint-rule mass matrix of `∫ ξ·η dt` on the interior nodes.
pub fn mass_matrix(intervals: usize, dim: usize) -> BlockTridiag {
    let h = 1.0 / intervals as f64;
    let eye = DMatrix::<f64>::identity(dim, dim);
    BlockTridiag::new(
        vec![&eye * (0.5 * h); intervals - 1],
        vec![&eye * (0.25 * h); intervals - 2],
    )
}

/// `∫ |ẋ|²` on the unit interval by the midpoint rule (κ with `P = I`).
pub fn kinetic_integral(path: &PathState) -> f64 {
    let n = path.intervals() as f64;
    (0..path.intervals())
        .map(|i| (&path.nodes[i + 1] - &path.nodes[i]).norm_squared() * n)
        .sum()
}

pub fn action_hessian(path: &PathState, model: &PotentialModel, r: f64) -> HessianBlocks {
    let nn = path.intervals();
    let n = nn as f64;
    let t = path.duration;
    let d = path.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let evals: Vec<_> = (0..nn)
        .map(|i| model.effective(path.sigma, &path.midpoint(i)))
        .collect();

    let diag = (1..nn)
        .map(|j| {
            &eye * (2.0 * n / t) - (&evals[j - 1].hessian + &evals[j].hessian) * (0.25 * t / n)
        })
        .collect();
    let upper = (1..nn - 1)
        .map(|j| &eye * (-n / t) - &evals[j].hessian * (0.25 * t / n))
        .collect();
    let mut a = BlockTridiag::new(diag, upper);
    if r != 0.0 {
        a = a.add_scaled(r / t, &mass_matrix(nn, d));
    }

    let mut b = DVector::zeros(d * (nn - 1));
    for j in 1..nn {
        let lap = &path.nodes[j] * 2.0 - &path.nodes[j - 1] - &path.nodes[j + 1];
        let bj = lap * (-n / (t * t)) - (&evals[j - 1].gradient + &evals[j].gradient) * (0.5 / n);
        b.rows_mut((j - 1) * d, d).copy_from(&bj);
    }
    let c = (1.0 + r) * kinetic_integral(path) / t.powi(3);
    HessianBlocks { a, b, c, r }
}

pub fn path_energy(path: &PathState, model: &PotentialModel) -> EnergyStats {
    let samples: Vec<f64> = (0..path.intervals())
        .map(|i| {
            0.5 * velocity(path, i).norm_squared()
                + model.effective_value(path.sigma, &path.midpoint(i))
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let dev = samples.iter().map(|e| (e - mean).abs()).fold(0.0, f64::max);
    EnergyStats { samples, mean, dev }
}

/// Magnitude used to scale energy tolerances: `1 + max|U| + max ½|v|²` over the intervals.
pub fn energy_scale(path: &PathState, model: &PotentialModel) -> f64 {
    let mut u_max: f64 = 0.0;
    let mut k_max: f64 = 0.0;
    for i in 0..path.intervals() {
        u_max = u_max.max(model.effective_value(path.sigma, &path.midpoint(i)).abs());
        k_max = k_max.max(0.5 * velocity(path, i).norm_squared());
    }
    1.0 + u_max + k_max
}

/// The σ-coefficient of the action: `-T (1/N) Σ ΔV(m_i)`.
pub fn noise_action(path: &PathState, model: &PotentialModel) -> f64 {
    let n = path.intervals() as f64;
    -path.duration
        * (0..path.intervals())
            .map(|i| model.laplacian(&path.midpoint(i)))
            .sum::<f64>()
        / n
}

/// Differential of [`noise_action`] with respect to interior nodes and `T`.
pub fn noise_action_gradient(path: &PathState, model: &PotentialModel) -> ActionGradient {
    let nn = path.intervals();
    let n = nn as f64;
    let t = path.duration;
    let d = path.dim();
    let gl: Vec<DVector<f64>> = (0..nn)
        .map(|i| model.grad_laplacian(&path.midpoint(i)))
        .collect();
    let mut gx = DVector::zeros(d * (nn - 1));
    for j in 1..nn {
        gx.rows_mut((j - 1) * d, d)
            .copy_from(&((&gl[j - 1] + &gl[j]) * (-0.5 * t / n)));
    }
    ActionGradient {
        x: gx,
        t: noise_action(path, model) / t,
    }
}

/// Smallest eigenvalue of `A(0)` in the L² representation, i.e. the smallest
/// generalized eigenvalue of the pencil `(A(0), mass)`, by inertia bisection.
pub fn min_l2_eigenvalue(a: &BlockTridiag, mass: &BlockTridiag) -> f64 {
    let below = |lam: f64| a.add_scaled(-lam, mass).count_below(0.0);
    let mut hi = 1.0;
    while below(hi) == 0 && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = -1.0;
    while below(lo) > 0 && lo > -1e300 {
        lo *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if below(mid) > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * (1.0 + lo.abs()) {
            break;
        }
    }
    lo
}

/// Regularization weight making the full second variation positive definite.
///
/// Starts from `2 T max(0, -λ_min) + 1` with `λ_min` the smallest L²-eigenvalue of
/// `A(0)`, then doubles until the bordered matrix has no non-positive eigenvalue.
pub fn r0_select(path: &PathState, model: &PotentialModel) -> f64 {
    let h0 = action_hessian(path, model, 0.0);
    let mass = mass_matrix(path.intervals(), path.dim());
    let lam = min_l2_eigenvalue(&h0.a, &mass);
    let mut r = 2.0 * path.duration * (-lam).max(0.0) + 1.0;
    for _ in 0..64 {
        let hr = action_hessian(path, model, r);
        if hr.bordered().count_below(0.0) == 0 && hr.a.factor(0.0).is_ok() {
            return r;
        }
        r *= 2.0;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(a: f64, b: f64, n: usize, t: f64, sigma: f64) -> PathState {
        PathState::straight_line(
            &DVector::from_element(1, a),
            &DVector::from_element(1, b),
            n,
            t,
            sigma,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn straight_line_action() {
        // ∫ ½ + ½ t² = 2/3
        let s = action_value(
            &line(0.0, 1.0, 200, 1.0, 0.0),
            &PotentialModel::quadratic(1),
        );
        assert!((s - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn constant_path_action() {
        let p = line(1.5, 1.5, 10, 2.0, 0.0);
        let s = action_value(&p, &PotentialModel::quadratic(1));
        // L = -U = ½|∇V|² = ½ x²
        assert!((s - 2.0 * 0.5 * 1.5 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn om_shift() {
        let m = PotentialModel::quadratic(1);
        let p = line(1.0, 2.0, 20, 1.0, 0.5);
        let base = action_value(&p, &m);
        assert!((om_value(&p, &m) - base - 1.5).abs() < 1e-12);
        let dw = PotentialModel::double_well_1d();
        let q = line(-1.0, 1.0, 20, 1.0, 0.2);
        assert!((om_value(&q, &dw) - action_value(&q, &dw)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_block_is_discrete_operator() {
        // R = 1: A = (1/T) stiffness + T * (midpoint mass)
        let m = PotentialModel::quadratic(1);
        let n = 8usize;
        let t = 1.3;
        let p = line(1.0, 2.0, n, t, 0.5);
        let h = action_hessian(&p, &m, 0.0);
        let nf = n as f64;
        let expect_diag = 2.0 * nf / t + t * 0.5 / nf;
        let expect_off = -nf / t + t * 0.25 / nf;
        assert!((h.a.diag_block(3)[(0, 0)] - expect_diag).abs() < 1e-12);
        assert!((h.a.upper_block(3)[(0, 0)] - expect_off).abs() < 1e-12);
    }

    #[test]
    fn regularized_form_is_positive_definite() {
        let dw = PotentialModel::double_well_1d();
        let p = line(-1.0, 1.0, 40, 4.0, 0.3);
        let r0 = r0_select(&p, &dw);
        let h = action_hessian(&p, &dw, r0);
        let eig = nalgebra::SymmetricEigen::new(h.to_dense());
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn energy_of_constant_critical_path() {
        let dw = PotentialModel::double_well_1d();
        let p = line(0.0, 0.0, 10, 1.0, 0.2);
        let e = path_energy(&p, &dw);
        // U(0) = σ ΔV(0) = -σ
        assert!((e.mean + 0.2).abs() < 1e-14 && e.dev < 1e-14, "{:?}", e);
    }
}
