use nalgebra::{DMatrix, DVector};

use super::propagate::{propagate, propagate_to, step_matrix, FundamentalSolution, Integrator};
use super::{assemble_b, j_matrix, SturmCoefficients};
use crate::error::{Error, Result};
use crate::linalg::BlockTridiag;

#[derive(Debug, Clone)]
pub struct HamiltonianConfig {
    /// Propagation steps on `[0, 1]`; `None` uses the coefficients' default.
    pub steps: Option<usize>,
    /// Relative threshold on singular values of the lower-left block.
    pub kernel_tol: f64,
    pub integrator: Integrator,
    pub bisection_tol: f64,
    /// Relative finite-difference step for crossing forms.
    pub form_step: f64,
    /// Largest accepted relative gap between the two crossing-form evaluations.
    pub form_gap_tol: f64,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        HamiltonianConfig {
            steps: None,
            kernel_tol: 1e-8,
            integrator: Integrator::Gauss4,
            bisection_tol: 1e-10,
            form_step: 1e-4,
            form_gap_tol: 1e-2,
        }
    }
}

impl HamiltonianConfig {
    pub fn steps_for(&self, coeffs: &SturmCoefficients) -> usize {
        self.steps.unwrap_or_else(|| coeffs.default_steps())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    End,
}

/// Crossing form evaluated two ways, on the kernel basis of a crossing.
#[derive(Debug, Clone)]
pub struct CrossingForm {
    /// From the derivative of the fundamental solution at `t = 1`.
    pub matrix: DMatrix<f64>,
    /// From quadrature of `⟨∂B u, u⟩` along the solution.
    pub quadrature: DMatrix<f64>,
    pub gap: f64,
}

impl CrossingForm {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Scalar value for one-dimensional kernels, trace otherwise.
    pub fn value(&self) -> f64 {
        self.matrix.trace()
    }

    /// Positive minus negative eigenvalues; eigenvalues within `rel` of the largest count as zero.
    pub fn signature(&self, rel: f64) -> i64 {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let eps = rel * scale;
        ev.iter()
            .map(|&v| {
                if v > eps {
                    1
                } else if v < -eps {
                    -1
                } else {
                    0
                }
            })
            .sum()
    }

    pub fn is_degenerate(&self, rel: f64) -> bool {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        scale == 0.0 || ev.iter().any(|v| v.abs() <= rel * scale)
    }
}

/// A conjugate instant `s` where the lower-left block of `φ(s)` is singular.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub s: f64,
    pub kernel_dim: usize,
    /// Initial momenta `y(0)` spanning the kernel, orthonormal.
    pub kernel_basis: Vec<DVector<f64>>,
    pub endpoint: Option<Endpoint>,
    /// Form in the `s` direction; absent for crossings flagged at the start.
    pub form_s: Option<CrossingForm>,
}

impl Crossing {
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.kernel_basis)
    }
}

/// Coefficients of a one-parameter family in `σ`.
pub trait SigmaCoefficients: Sync {
    fn coefficients_at(&self, sigma: f64) -> Result<SturmCoefficients>;
}

impl<F> SigmaCoefficients for F
where
    F: Fn(f64) -> Result<SturmCoefficients> + Sync,
{
    fn coefficients_at(&self, sigma: f64) -> Result<SturmCoefficients> {
        self(sigma)
    }
}

/// Singular pairs of `c`, ascending: `(value, right vector)`.
fn singular_pairs(c: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let svd = c.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut pairs: Vec<(f64, DVector<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, vt.row(i).transpose()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

struct Scanner<'a> {
    coeffs: &'a SturmCoefficients,
    cfg: &'a HamiltonianConfig,
    steps: usize,
    base: FundamentalSolution,
}

impl Scanner<'_> {
    fn lower_left_at(&self, s: f64) -> Result<DMatrix<f64>> {
        let n = self.coeffs.dim();
        let h = 1.0 / self.steps as f64;
        let j = ((s / h).floor().max(0.0) as usize).min(self.base.phi.len() - 1);
        let tj = self.base.times[j];
        if (s - tj).abs() <= 1e-15 {
            return Ok(self.base.lower_left(j));
        }
        let g = step_matrix(self.coeffs, 1.0, tj, s - tj, self.cfg.integrator)?;
        Ok((g * &self.base.phi[j]).view((n, 0), (n, n)).into_owned())
    }

    fn tol(&self, c: &DMatrix<f64>) -> f64 {
        let smax = singular_pairs(c).last().map_or(0.0, |p| p.0);
        self.cfg.kernel_tol * smax.max(1.0)
    }

    fn det_at(&self, s: f64) -> Result<f64> {
        Ok(self.lower_left_at(s)?.determinant())
    }

    fn smin_at(&self, s: f64) -> Result<f64> {
        Ok(singular_pairs(&self.lower_left_at(s)?)[0].0)
    }

    fn bisect(&self, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
        while b - a > self.cfg.bisection_tol {
            let mid = 0.5 * (a + b);
            let fm = self.det_at(mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if fa * fm < 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn golden(&self, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = self.smin_at(x1)?;
        let mut f2 = self.smin_at(x2)?;
        while b - a > self.cfg.bisection_tol {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = self.smin_at(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = self.smin_at(x2)?;
            }
        }
        let s = 0.5 * (a + b);
        Ok((s, self.smin_at(s)?))
    }
}

/// Locate conjugate instants in `s ∈ (0, 1]` and evaluate their `s`-direction forms.
///
/// Sign changes of `det c(s)` on the propagation grid are bisected; local minima of
/// the smallest singular value are refined by golden section to catch tangential
/// crossings. The trivial kernel at `s = 0` is excluded by starting at the first grid
/// point, so a crossing only lands in the start band when the tolerance is too loose
/// to separate it.
pub fn conjugate_scan(
    coeffs: &SturmCoefficients,
    cfg: &HamiltonianConfig,
) -> Result<Vec<Crossing>> {
    let steps = cfg.steps_for(coeffs);
    if steps < 2 {
        return Err(Error::config(
            "steps",
            "need at least two propagation steps",
        ));
    }
    let base = propagate(coeffs, 1.0, steps, cfg.integrator)?;
    let sc = Scanner {
        coeffs,
        cfg,
        steps,
        base,
    };
    let h = 1.0 / steps as f64;
    let mut det = vec![0.0; steps + 1];
    let mut smin = vec![0.0; steps + 1];
    let mut smax = vec![0.0; steps + 1];
    for j in 1..=steps {
        let c = sc.base.lower_left(j);
        det[j] = c.determinant();
        let sv = singular_pairs(&c);
        smin[j] = sv[0].0;
        smax[j] = sv.last().unwrap().0;
    }

    // (location, from a sign change)
    let mut found: Vec<(f64, bool)> = Vec::new();
    let mut sign_change = vec![false; steps + 1];
    for j in 1..steps {
        if det[j] == 0.0 {
            found.push((j as f64 * h, true));
        } else if det[j] * det[j + 1] < 0.0 {
            sign_change[j] = true;
            found.push((sc.bisect(j as f64 * h, (j + 1) as f64 * h, det[j])?, true));
        }
    }
    let refine_cap = (100.0 * cfg.kernel_tol).max(1e-2);
    for j in 1..=steps {
        let left = if j > 1 { smin[j - 1] } else { f64::INFINITY };
        let right = if j < steps {
            smin[j + 1]
        } else {
            f64::INFINITY
        };
        let near_change = sign_change[j] || sign_change[j - 1] || (j >= 2 && sign_change[j - 2]);
        if smin[j] > left || smin[j] > right || near_change || det[j] == 0.0 {
            continue;
        }
        if smin[j] > refine_cap * smax[j].max(1.0) {
            continue;
        }
        let a = (j.max(2) - 1) as f64 * h;
        let b = (j + 1).min(steps) as f64 * h;
        let (s, v) = sc.golden(a, b)?;
        if v <= sc.tol(&sc.lower_left_at(s)?) {
            found.push((s, false));
        }
    }
    if smin[steps] <= cfg.kernel_tol * smax[steps].max(1.0) {
        found.push((1.0, false));
    }

    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, bool)> = Vec::new();
    for (s, sgn) in found {
        match merged.last_mut() {
            Some(last) if (s - last.0).abs() <= 1e-7 => {
                // prefer the exact endpoint or the bisected location
                if s == 1.0 || (sgn && !last.1 && last.0 != 1.0) {
                    *last = (s, sgn || last.1);
                }
            }
            _ => merged.push((s, sgn)),
        }
    }

    let mut out = Vec::with_capacity(merged.len());
    for (s, from_sign) in merged {
        let c = sc.lower_left_at(s)?;
        let pairs = singular_pairs(&c);
        let mut thr = sc.tol(&c);
        if from_sign {
            let d = 1e-6;
            let dc = (sc.lower_left_at(s + d)? - sc.lower_left_at((s - d).max(0.0))?) / (2.0 * d);
            thr = thr.max(10.0 * cfg.bisection_tol * dc.norm());
        }
        let mut k = pairs.iter().filter(|p| p.0 <= thr).count();
        if from_sign {
            k = k.max(1);
        }
        if k == 0 {
            continue;
        }
        let basis: Vec<DVector<f64>> = pairs.iter().take(k).map(|p| p.1.clone()).collect();
        let endpoint = if s <= cfg.kernel_tol {
            Some(Endpoint::Start)
        } else if s >= 1.0 - cfg.kernel_tol {
            Some(Endpoint::End)
        } else {
            None
        };
        let form_s = if endpoint == Some(Endpoint::Start) {
            None
        } else {
            Some(crossing_form_s(coeffs, s, &basis, cfg)?)
        };
        if let Some(f) = &form_s {
            if f.signature(1e-8) != k as i64 {
                log::warn!("s-direction crossing form at s = {s:.10} is not positive definite");
            }
        }
        out.push(Crossing {
            s,
            kernel_dim: k,
            kernel_basis: basis,
            endpoint,
            form_s,
        });
    }
    Ok(out)
}

/// Conjugate instant of odd multiplicity nearest to `s_guess` within `radius`.
///
/// The propagation is extended past `s = 1` when needed, holding the coefficients at
/// their final value; `None` when `det c(s)` has no sign change in the window.
pub fn locate_crossing_near(
    coeffs: &SturmCoefficients,
    s_guess: f64,
    radius: f64,
    cfg: &HamiltonianConfig,
) -> Result<Option<f64>> {
    let steps = cfg.steps_for(coeffs);
    let h = 1.0 / steps as f64;
    let lo = (s_guess - radius).max(h);
    let hi = s_guess + radius;
    if hi <= lo {
        return Ok(None);
    }
    let base = propagate_to(coeffs, 1.0, steps, hi, cfg.integrator)?;
    let sc = Scanner {
        coeffs,
        cfg,
        steps,
        base,
    };
    let mut pts: Vec<f64> = vec![lo];
    pts.extend(sc.base.times.iter().copied().filter(|&t| t > lo && t < hi));
    pts.push(hi);
    let dets: Vec<f64> = pts.iter().map(|&t| sc.det_at(t)).collect::<Result<_>>()?;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..pts.len() - 1 {
        let found = if dets[i] == 0.0 {
            Some(pts[i])
        } else if dets[i] * dets[i + 1] < 0.0 {
            Some(sc.bisect(pts[i], pts[i + 1], dets[i])?)
        } else {
            None
        };
        if let Some(s) = found {
            let d = (s - s_guess).abs();
            if best.is_none_or(|b| d < b.1) {
                best = Some((s, d));
            }
        }
    }
    Ok(best.map(|b| b.0))
}

fn embed(basis: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(2 * n, basis.len());
    for (i, b) in basis.iter().enumerate() {
        z.view_mut((0, i), (n, 1)).copy_from(b);
    }
    z
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `φ(τ)` from a stored trajectory, finishing with a partial step off the grid.
fn phi_at(
    coeffs: &SturmCoefficients,
    base: &FundamentalSolution,
    tau: f64,
    integrator: Integrator,
) -> Result<DMatrix<f64>> {
    let j = base
        .times
        .iter()
        .rposition(|&t| t <= tau)
        .unwrap_or_default();
    let tj = base.times[j];
    if (tau - tj).abs() <= 1e-15 {
        return Ok(base.phi[j].clone());
    }
    Ok(step_matrix(coeffs, 1.0, tj, tau - tj, integrator)? * &base.phi[j])
}

/// `∫₀^s Zᵀ φ(τ)ᵀ D(τ) φ(τ) Z dτ` by three-point Gauss rules on each grid step.
fn gauss_integral(
    coeffs: &SturmCoefficients,
    base: &FundamentalSolution,
    s: f64,
    z: &DMatrix<f64>,
    integrator: Integrator,
    weight: impl Fn(f64) -> DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r = (0.6f64).sqrt();
    let rule = [(-r, 5.0 / 9.0), (0.0, 8.0 / 9.0), (r, 5.0 / 9.0)];
    let mut acc = DMatrix::zeros(z.ncols(), z.ncols());
    for j in 0..base.times.len() {
        let a = base.times[j];
        if a >= s {
            break;
        }
        let b = base.times.get(j + 1).copied().unwrap_or(s).min(s);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, w) in &rule {
            let tau = mid + half * x;
            let u = step_matrix(coeffs, 1.0, a, tau - a, integrator)? * &base.phi[j] * z;
            acc += (u.transpose() * weight(tau) * u) * (w * half);
        }
    }
    Ok(sym(acc))
}

fn finish_form(
    matrix: DMatrix<f64>,
    quadrature: DMatrix<f64>,
    scale: f64,
    gap_tol: f64,
) -> Result<CrossingForm> {
    let floor = 1e-8 * (1.0 + scale);
    let gap = (&matrix - &quadrature).norm() / matrix.norm().max(quadrature.norm()).max(floor);
    if gap > gap_tol {
        return Err(Error::FormDisagreement {
            matrix: matrix.trace(),
            quadrature: quadrature.trace(),
            gap,
        });
    }
    Ok(CrossingForm {
        matrix,
        quadrature,
        gap,
    })
}

/// `-Zᵀ φᵀ J dφ Z`, the matrix form of `-J φ⁻¹ dφ` for symplectic `φ`.
fn matrix_form(phi: &DMatrix<f64>, dphi: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let jm = j_matrix(phi.nrows() / 2);
    sym(-(z.transpose() * phi.transpose() * jm * dphi * z))
}

/// Crossing form in the `s` direction at a conjugate instant `s`.
///
/// Both evaluations use `φ_s(1) = φ(s)`, the unscaled fundamental solution at time
/// `s`: the matrix route differentiates it in `s`, the quadrature route integrates
/// `⟨∂_s[s B(s t)] u, u⟩` after the substitution `τ = s t`.
pub fn crossing_form_s(
    coeffs: &SturmCoefficients,
    s: f64,
    basis: &[DVector<f64>],
    cfg: &HamiltonianConfig,
) -> Result<CrossingForm> {
    let steps = cfg.steps_for(coeffs);
    let delta = cfg.form_step * s.abs().max(1e-2);
    let base = propagate_to(coeffs, 1.0, steps, s + delta, cfg.integrator)?;
    let z = embed(basis, coeffs.dim());
    let phi = phi_at(coeffs, &base, s, cfg.integrator)?;
    let dphi = (phi_at(coeffs, &base, s + delta, cfg.integrator)?
        - phi_at(coeffs, &base, s - delta, cfg.integrator)?)
        / (2.0 * delta);
    let matrix = matrix_form(&phi, &dphi, &z);
    let eps = 1e-6 / steps as f64;
    let quadrature = gauss_integral(coeffs, &base, s, &z, cfg.integrator, |tau| {
        let b = assemble_b(coeffs, 1.0, tau);
        let db =
            (assemble_b(coeffs, 1.0, tau + eps) - assemble_b(coeffs, 1.0, tau - eps)) / (2.0 * eps);
        (b + db * tau) / s
    })?;
    finish_form(matrix, quadrature, phi.amax(), cfg.form_gap_tol)
}

/// Crossing form in the `σ` direction at `(σ, s)`.
pub fn crossing_form_sigma(
    family: &dyn SigmaCoefficients,
    sigma: f64,
    s: f64,
    basis: &[DVector<f64>],
    cfg: &HamiltonianConfig,
) -> Result<CrossingForm> {
    let delta = cfg.form_step * sigma.abs().max(1e-2);
    let centre = family.coefficients_at(sigma)?;
    let up = family.coefficients_at(sigma + delta)?;
    let down = family.coefficients_at(sigma - delta)?;
    let steps = cfg.steps_for(&centre);
    let run = |c: &SturmCoefficients| propagate_to(c, 1.0, steps, s, cfg.integrator);
    let (base, base_up, base_down) = (run(&centre)?, run(&up)?, run(&down)?);
    let z = embed(basis, centre.dim());
    let phi = phi_at(&centre, &base, s, cfg.integrator)?;
    let dphi = (phi_at(&up, &base_up, s, cfg.integrator)?
        - phi_at(&down, &base_down, s, cfg.integrator)?)
        / (2.0 * delta);
    let matrix = matrix_form(&phi, &dphi, &z);
    let quadrature = gauss_integral(&centre, &base, s, &z, cfg.integrator, |tau| {
        (assemble_b(&up, 1.0, tau) - assemble_b(&down, 1.0, tau)) / (2.0 * delta)
    })?;
    finish_form(matrix, quadrature, phi.amax(), cfg.form_gap_tol)
}

/// Spectral flow of the `s`-family on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SpectralFlowS {
    pub dim: usize,
    pub interior: Vec<Crossing>,
    pub at_end: Vec<Crossing>,
    pub at_start: Vec<Crossing>,
    /// `dim` (the trivial kernel at `s = 0`) plus the signed interior crossings.
    pub value: i64,
}

impl SpectralFlowS {
    /// Signed count of interior crossings; equals the fixed-endpoint Morse index.
    pub fn interior_count(&self) -> i64 {
        self.value - self.dim as i64
    }

    pub fn end_nullity(&self) -> usize {
        self.at_end.iter().map(|c| c.kernel_dim).sum()
    }
}

pub fn spectral_flow_s(
    coeffs: &SturmCoefficients,
    cfg: &HamiltonianConfig,
) -> Result<SpectralFlowS> {
    let crossings = conjugate_scan(coeffs, cfg)?;
    let mut out = SpectralFlowS {
        dim: coeffs.dim(),
        interior: Vec::new(),
        at_end: Vec::new(),
        at_start: Vec::new(),
        value: coeffs.dim() as i64,
    };
    for c in crossings {
        match c.endpoint {
            Some(Endpoint::Start) => out.at_start.push(c),
            Some(Endpoint::End) => out.at_end.push(c),
            None => {
                out.value += c
                    .form_s
                    .as_ref()
                    .map_or(c.kernel_dim as i64, |f| f.signature(1e-8));
                out.interior.push(c);
            }
        }
    }
    Ok(out)
}

/// Finite-element version of the quadratic form
/// `∫ (1/T)⟨Pξ',η'⟩ + ⟨Qξ,η'⟩ + ⟨Qᵀξ',η⟩ + T⟨Rξ,η⟩ dt` on piecewise-linear
/// functions vanishing at both ends, with coefficients at interval midpoints.
pub fn discretized_form(coeffs: &SturmCoefficients, intervals: usize) -> BlockTridiag {
    let n = coeffs.dim();
    let t_len = coeffs.duration();
    let h = 1.0 / intervals as f64;
    let mut out = BlockTridiag::zeros(intervals - 1, n);
    for i in 0..intervals {
        let (p, q, r) = coeffs.at((i as f64 + 0.5) * h);
        // local 2x2 block matrix over (ξ_i, ξ_{i+1}); D = (-I, I)/h, E = (I, I)/2
        let pp = &p / (t_len * h * h);
        let qd = &q * (0.5 / h);
        let rr = &r * (0.25 * t_len);
        let k00 = &pp - &qd - qd.transpose() + &rr;
        let k11 = &pp + &qd + qd.transpose() + &rr;
        let k01 = -&pp - &qd + qd.transpose() + &rr;
        let (k00, k11, k01) = (k00 * h, k11 * h, k01 * h);
        if i >= 1 {
            *out.diag_block_mut(i - 1) += &k00;
        }
        if i + 1 < intervals {
            *out.diag_block_mut(i) += &k11;
        }
        if i >= 1 && i + 1 < intervals {
            *out.upper_block_mut(i - 1) += &k01;
        }
    }
    out
}
