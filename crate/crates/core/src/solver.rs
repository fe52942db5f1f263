//! Newton solvers for critical points of the discrete action.
//!
//! Fixed-time solves work on the interior nodes only. Free-time solves add the
//! duration through `T = Tmin + (τ - Tmin) sigmoid(θ)`, so the iterate always stays
//! in `(Tmin, τ)`. When `θ` runs off to `+∞` the cap binds, and the solve finishes
//! as a fixed-time solve at `T = τ`.
//!
//! Steps are damped Newton steps. A full step is accepted whenever it shrinks the
//! gradient enough, so saddles are reachable. Otherwise Levenberg damping and
//! Armijo backtracking enforce descent.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action::{
    action_gradient, action_hessian, action_value, energy_scale, path_energy, PathState,
};
use crate::error::{Error, Result};
use crate::linalg::Bordered;
use crate::potential::PotentialModel;

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub c1: f64,
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            c1: 1e-4,
            backtrack: 0.5,
            min_step: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStart {
    /// Number of perturbed starts in addition to the unperturbed one.
    pub count: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for MultiStart {
    fn default() -> Self {
        MultiStart {
            count: 0,
            amplitude: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    StraightLine,
    Supplied(PathState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub intervals: usize,
    pub tol_grad: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub t_min: f64,
    pub initial: InitialGuess,
    pub line_search: LineSearch,
    pub multi_start: MultiStart,
}

impl SolveConfig {
    pub fn new(intervals: usize, tau: f64) -> Self {
        SolveConfig {
            intervals,
            tol_grad: 1e-10,
            max_iter: 200,
            tau,
            t_min: 1e-3,
            initial: InitialGuess::StraightLine,
            line_search: LineSearch::default(),
            multi_start: MultiStart::default(),
        }
    }

    pub fn with_initial(&self, path: PathState) -> Self {
        let mut c = self.clone();
        c.initial = InitialGuess::Supplied(path);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals < 2 {
            return Err(Error::config("N", "need at least 2 intervals"));
        }
        if !(self.tol_grad > 0.0) {
            return Err(Error::config("tolerances.tolGrad", "must be positive"));
        }
        if !(self.t_min > 0.0) {
            return Err(Error::config("tMin", "must be positive"));
        }
        if !(self.tau > self.t_min) || !self.tau.is_finite() {
            return Err(Error::config(
                "tau",
                format!(
                    "time cap τ = {} must exceed tMin = {}",
                    self.tau, self.t_min
                ),
            ));
        }
        let ls = &self.line_search;
        if !(ls.c1 > 0.0
            && ls.c1 < 1.0
            && ls.backtrack > 0.0
            && ls.backtrack < 1.0
            && ls.min_step > 0.0)
        {
            return Err(Error::config(
                "lineSearch",
                "need 0 < c1 < 1, 0 < backtrack < 1, minStep > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub path: PathState,
    pub converged: bool,
    pub boundary_t: bool,
    pub residual: f64,
    pub iterations: usize,
}

const THETA_CAP: f64 = 30.0;

fn start_path(
    cfg: &SolveConfig,
    sigma: f64,
    k: f64,
    duration: f64,
    x_minus: &DVector<f64>,
    x_plus: &DVector<f64>,
    keep_duration: bool,
) -> Result<PathState> {
    match &cfg.initial {
        InitialGuess::StraightLine => {
            PathState::straight_line(x_minus, x_plus, cfg.intervals, duration, sigma, k)
        }
        InitialGuess::Supplied(p) => {
            if p.dim() != x_minus.len() {
                return Err(Error::config(
                    "warmStart",
                    "warm-start path has the wrong dimension",
                ));
            }
            let mut nodes = p.resample(cfg.intervals)?.nodes().to_vec();
            nodes[0] = x_minus.clone();
            let last = nodes.len() - 1;
            nodes[last] = x_plus.clone();
            let t = if keep_duration {
                p.duration()
            } else {
                duration
            };
            PathState::new(nodes, t, sigma, k)
        }
    }
}

fn perturbed(path: &PathState, amplitude: f64, rng: &mut ChaCha8Rng) -> PathState {
    let n = path.intervals();
    let d = path.dim();
    let coeffs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..d)
                .map(|_| rng.random_range(-1.0..1.0) * amplitude)
                .collect()
        })
        .collect();
    let mut v = path.interior_vector();
    for j in 1..n {
        let t = j as f64 / n as f64;
        for (m, c) in coeffs.iter().enumerate() {
            let s = ((m + 1) as f64 * std::f64::consts::PI * t).sin();
            for a in 0..d {
                v[(j - 1) * d + a] += c[a] * s;
            }
        }
    }
    path.with_interior(&v)
}

/// Runs `solve` from the base start and `count` perturbations, keeping the converged
/// result with the lowest action.
fn with_multi_start<F>(
    model: &PotentialModel,
    cfg: &SolveConfig,
    base: PathState,
    solve: F,
) -> Result<SolveResult>
where
    F: Fn(PathState) -> Result<SolveResult> + Sync,
{
    if cfg.multi_start.count == 0 {
        return solve(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.multi_start.seed);
    let mut starts = vec![base.clone()];
    for _ in 0..cfg.multi_start.count {
        starts.push(perturbed(&base, cfg.multi_start.amplitude, &mut rng));
    }
    let results: Vec<Result<SolveResult>> = starts.into_par_iter().map(&solve).collect();
    let mut best: Option<(f64, SolveResult)> = None;
    let mut fallback: Option<SolveResult> = None;
    for r in results {
        let r = r?;
        if r.converged {
            let s = action_value(&r.path, model);
            if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                best = Some((s, r));
            }
        } else if fallback.as_ref().is_none_or(|f| r.residual < f.residual) {
            fallback = Some(r);
        }
    }
    Ok(best
        .map(|(_, r)| r)
        .or(fallback)
        .expect("at least one start"))
}

fn bump(lambda: f64, scale: f64) -> f64 {
    (10.0 * lambda).max(1e-8 * scale)
}

/// Newton iteration on the interior nodes at fixed duration.
fn newton_fixed(
    model: &PotentialModel,
    start: PathState,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    let ls = &cfg.line_search;
    let mut path = start;
    let mut grad = action_gradient(&path, model).x;
    let mut res = grad.amax();
    let mut best = (res, path.clone());
    let mut lambda = 0.0;
    for iter in 0..cfg.max_iter {
        if !res.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iter}")));
        }
        if res <= cfg.tol_grad {
            return Ok(SolveResult {
                path,
                converged: true,
                boundary_t: false,
                residual: res,
                iterations: iter,
            });
        }
        let h = action_hessian(&path, model, 0.0).a;
        let scale = h.norm_inf().max(1.0);
        let f0 = action_value(&path, model);
        let x0 = path.interior_vector();
        let mut accepted = None;
        for _ in 0..60 {
            let p = match h.solve(&(-&grad), lambda) {
                Ok(p) => p,
                Err(Error::Singular(_)) => {
                    lambda = bump(lambda, scale);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("Newton step at iteration {iter}")));
            }
            // full step shrinking the gradient: accept (reaches saddles)
            let cand = path.with_interior(&(&x0 + &p));
            let g1 = action_gradient(&cand, model).x;
            if g1.amax() <= 0.5 * res {
                accepted = Some((cand, g1));
                lambda = if lambda < 1e-10 * scale {
                    0.0
                } else {
                    lambda / 10.0
                };
                break;
            }
            let slope = grad.dot(&p);
            if slope >= 0.0 {
                lambda = bump(lambda, scale);
                continue;
            }
            let mut alpha = 1.0;
            while alpha >= ls.min_step {
                let c = path.with_interior(&(&x0 + &p * alpha));
                if action_value(&c, model) <= f0 + ls.c1 * alpha * slope {
                    let g = action_gradient(&c, model).x;
                    accepted = Some((c, g));
                    break;
                }
                alpha *= ls.backtrack;
            }
            if accepted.is_some() {
                lambda = if alpha == 1.0 {
                    lambda / 3.0
                } else {
                    bump(lambda, scale)
                };
                break;
            }
            lambda = bump(lambda, scale);
        }
        match accepted {
            Some((c, g)) => {
                path = c;
                grad = g;
                res = grad.amax();
                if res < best.0 {
                    best = (res, path.clone());
                }
            }
            None => {
                log::debug!("fixed-time Newton stalled at iteration {iter}, residual {res:.3e}");
                return Ok(SolveResult {
                    path: best.1,
                    converged: false,
                    boundary_t: false,
                    residual: best.0,
                    iterations: iter,
                });
            }
        }
    }
    let converged = res <= cfg.tol_grad;
    let (res, path) = if converged { (res, path) } else { best };
    Ok(SolveResult {
        path,
        converged,
        boundary_t: false,
        residual: res,
        iterations: cfg.max_iter,
    })
}

/// Critical point of the fixed-time action `x ↦ S(x, T)`.
pub fn minimize_fixed_t(
    model: &PotentialModel,
    sigma: f64,
    duration: f64,
    x_minus: &DVector<f64>,
    x_plus: &DVector<f64>,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    if !(duration > 0.0) {
        return Err(Error::config("tau", "duration must be positive"));
    }
    if cfg.intervals < 2 || !(cfg.tol_grad > 0.0) {
        return Err(Error::config("N", "need N ≥ 2 and tolGrad > 0"));
    }
    let k = match &cfg.initial {
        InitialGuess::Supplied(p) => p.energy_offset(),
        InitialGuess::StraightLine => 0.0,
    };
    let base = start_path(cfg, sigma, k, duration, x_minus, x_plus, false)?;
    with_multi_start(model, cfg, base, |p| newton_fixed(model, p, cfg))
}

struct TimeMap {
    t_min: f64,
    span: f64,
}

impl TimeMap {
    fn sig(theta: f64) -> f64 {
        1.0 / (1.0 + (-theta).exp())
    }
    fn t(&self, theta: f64) -> f64 {
        self.t_min + self.span * Self::sig(theta)
    }
    fn d1(&self, theta: f64) -> f64 {
        let s = Self::sig(theta);
        self.span * s * (1.0 - s)
    }
    fn d2(&self, theta: f64) -> f64 {
        let s = Self::sig(theta);
        self.span * s * (1.0 - s) * (1.0 - 2.0 * s)
    }
    fn theta(&self, t: f64) -> f64 {
        let s = ((t - self.t_min) / self.span).clamp(1e-12, 1.0 - 1e-12);
        (s / (1.0 - s)).ln()
    }
}

fn newton_free(model: &PotentialModel, start: PathState, cfg: &SolveConfig) -> Result<SolveResult> {
    let ls = &cfg.line_search;
    let map = TimeMap {
        t_min: cfg.t_min,
        span: cfg.tau - cfg.t_min,
    };
    let mut theta = map.theta(start.duration());
    let mut path = start.with_duration(map.t(theta));
    let residual = |p: &PathState| {
        let g = action_gradient(p, model);
        let r = g.x.amax().max(g.t.abs());
        (g, r)
    };
    let (mut grad, mut res) = residual(&path);
    let mut best = (res, path.clone());
    let mut lambda = 0.0;
    for iter in 0..cfg.max_iter {
        if !res.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iter}")));
        }
        if res <= cfg.tol_grad {
            return Ok(SolveResult {
                path,
                converged: true,
                boundary_t: false,
                residual: res,
                iterations: iter,
            });
        }
        if theta > THETA_CAP || (grad.t < 0.0 && cfg.tau - path.duration() <= 1e-12 * cfg.tau) {
            let fixed = newton_fixed(model, path.with_duration(cfg.tau), cfg)?;
            return Ok(SolveResult {
                boundary_t: true,
                iterations: iter + fixed.iterations,
                ..fixed
            });
        }
        if theta < -THETA_CAP {
            log::debug!("free-time solve drifted to the lower duration barrier");
            break;
        }
        let t1 = map.d1(theta);
        let hb = action_hessian(&path, model, 0.0);
        let k = Bordered {
            a: hb.a,
            b: hb.b * t1,
            c: hb.c * t1 * t1 + grad.t * map.d2(theta),
        };
        let gth = grad.t * t1;
        let scale = k.norm_inf().max(1.0);
        let f0 = action_value(&path, model);
        let x0 = path.interior_vector();
        let mut accepted = None;
        for _ in 0..60 {
            let (px, pt) = match k.solve(&(-&grad.x), -gth, lambda) {
                Ok(s) => s,
                Err(Error::Singular(_)) => {
                    lambda = bump(lambda, scale);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if px.iter().any(|v| !v.is_finite()) || !pt.is_finite() {
                return Err(Error::NonFinite(format!("Newton step at iteration {iter}")));
            }
            let trial = |alpha: f64| {
                let th = theta + alpha * pt;
                (
                    th,
                    path.with_interior(&(&x0 + &px * alpha))
                        .with_duration(map.t(th)),
                )
            };
            let (th1, c1) = trial(1.0);
            let (g1, r1) = residual(&c1);
            if r1 <= 0.5 * res {
                accepted = Some((th1, c1, g1, r1));
                lambda = if lambda < 1e-10 * scale {
                    0.0
                } else {
                    lambda / 10.0
                };
                break;
            }
            let slope = grad.x.dot(&px) + gth * pt;
            if slope >= 0.0 {
                lambda = bump(lambda, scale);
                continue;
            }
            let mut alpha = 1.0;
            while alpha >= ls.min_step {
                let (th, c) = trial(alpha);
                if action_value(&c, model) <= f0 + ls.c1 * alpha * slope {
                    let (g, r) = residual(&c);
                    accepted = Some((th, c, g, r));
                    break;
                }
                alpha *= ls.backtrack;
            }
            if accepted.is_some() {
                lambda = if alpha == 1.0 {
                    lambda / 3.0
                } else {
                    bump(lambda, scale)
                };
                break;
            }
            lambda = bump(lambda, scale);
        }
        match accepted {
            Some((th, c, g, r)) => {
                theta = th;
                path = c;
                grad = g;
                res = r;
                if res < best.0 {
                    best = (res, path.clone());
                }
            }
            None => break,
        }
    }
    Ok(SolveResult {
        path: best.1,
        converged: false,
        boundary_t: false,
        residual: best.0,
        iterations: cfg.max_iter,
    })
}

/// Critical point of the free-time action `(x, T) ↦ S(x, T)` with `T ∈ (Tmin, τ]`.
pub fn minimize_free_t(
    model: &PotentialModel,
    sigma: f64,
    k: f64,
    x_minus: &DVector<f64>,
    x_plus: &DVector<f64>,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let span = cfg.tau - cfg.t_min;
    let mut base = start_path(cfg, sigma, k, 0.5 * cfg.tau, x_minus, x_plus, true)?;
    let t0 = base
        .duration()
        .clamp(cfg.t_min + 1e-6 * span, cfg.tau - 1e-9 * span);
    base = base.with_duration(t0);
    with_multi_start(model, cfg, base, |p| newton_free(model, p, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyIdentityReport {
    pub boundary: bool,
    pub energy_offset: f64,
    pub mean: f64,
    pub dev: f64,
    pub grad_t: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub message: String,
}

/// Checks that interior critical points carry energy `k`, and that capped
/// solutions push towards longer durations.
pub fn check_energy_identity(
    result: &SolveResult,
    model: &PotentialModel,
    k: f64,
) -> EnergyIdentityReport {
    let path = result.path.with_energy_offset(k);
    let e = path_energy(&path, model);
    let grad_t = action_gradient(&path, model).t;
    let n = path.intervals() as f64;
    let tolerance = 10.0 * energy_scale(&path, model) / (n * n);
    let (pass, message) = if result.boundary_t {
        let ok = grad_t < 0.0;
        (
            ok,
            format!(
                "duration capped; dS/dT = {grad_t:.6e} ({})",
                if ok { "negative" } else { "NOT negative" }
            ),
        )
    } else {
        let gap = (e.mean - k).abs();
        let ok = gap <= tolerance && e.dev <= tolerance;
        (
            ok,
            format!(
                "|mean E - k| = {gap:.3e}, dev = {:.3e}, tolerance {tolerance:.3e}",
                e.dev
            ),
        )
    };
    EnergyIdentityReport {
        boundary: result.boundary_t,
        energy_offset: k,
        mean: e.mean,
        dev: e.dev,
        grad_t,
        tolerance,
        pass,
        message,
    }
}
