//! σ-families of critical paths: continuation, spectral flow in σ, bifurcation
//! detection, crossing curves `s(σ)` and one-sided stability verdicts.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::PathState;
use crate::error::{Error, Result};
use crate::hamiltonian::{
    coefficients_from_path, conjugate_scan, crossing_form_s, crossing_form_sigma,
    locate_crossing_near, spectral_flow_s, HamiltonianConfig, SigmaCoefficients, SturmCoefficients,
};
use crate::index::{
    correction_index, fixed_t_report, morse_index_fixed, morse_index_free, CaseLabel, IndexConfig,
    IndexReport,
};
use crate::potential::PotentialModel;
use crate::solver::{minimize_fixed_t, minimize_free_t, SolveConfig, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyMode {
    /// Duration held at `τ`.
    #[serde(rename = "fixed-T")]
    FixedT,
    /// Duration free in `(Tmin, τ]` at energy `k`.
    #[serde(rename = "free-T")]
    FreeT,
}

impl FamilyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyMode::FixedT => "fixed-T",
            FamilyMode::FreeT => "free-T",
        }
    }
}

/// Everything needed to solve and analyse one member of a σ-family.
#[derive(Debug, Clone)]
pub struct FamilySetup {
    pub model: PotentialModel,
    pub x_minus: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub mode: FamilyMode,
    pub energy: f64,
    /// Intervals, tolerances, and `τ` (the fixed duration or the duration cap).
    pub solve: SolveConfig,
    pub index: IndexConfig,
    pub hamiltonian: HamiltonianConfig,
    /// Largest accepted sup-norm change of the path between accepted σ values.
    pub continuity_tol: f64,
    /// Smallest σ step, relative to the σ range, before continuation gives up.
    pub min_step_rel: f64,
}

impl FamilySetup {
    pub fn new(
        model: PotentialModel,
        x_minus: DVector<f64>,
        x_plus: DVector<f64>,
        mode: FamilyMode,
        solve: SolveConfig,
    ) -> Self {
        FamilySetup {
            model,
            x_minus,
            x_plus,
            mode,
            energy: 0.0,
            solve,
            index: IndexConfig::default(),
            hamiltonian: HamiltonianConfig::default(),
            continuity_tol: 0.25,
            min_step_rel: 1e-4,
        }
    }

    pub fn tau(&self) -> f64 {
        self.solve.tau
    }

    /// Solve at `σ`, warm-started from `guess` when given; non-convergence is an error.
    pub fn solve_at(&self, sigma: f64, guess: Option<&PathState>) -> Result<SolveResult> {
        let cfg = match guess {
            Some(p) => self.solve.with_initial(p.clone()),
            None => self.solve.clone(),
        };
        let res = match self.mode {
            FamilyMode::FixedT => minimize_fixed_t(
                &self.model,
                sigma,
                self.tau(),
                &self.x_minus,
                &self.x_plus,
                &cfg,
            )?,
            FamilyMode::FreeT => minimize_free_t(
                &self.model,
                sigma,
                self.energy,
                &self.x_minus,
                &self.x_plus,
                &cfg,
            )?,
        };
        if !res.converged {
            return Err(Error::NotConverged(format!(
                "solve at σ = {sigma} stopped with residual {:.3e} after {} iterations",
                res.residual, res.iterations
            )));
        }
        Ok(res)
    }

    /// The index tracked for bifurcation detection.
    pub fn tracked_index(&self, path: &PathState) -> usize {
        match self.mode {
            FamilyMode::FixedT => {
                morse_index_fixed(path, &self.model, self.index.inertia_tol).index
            }
            FamilyMode::FreeT => morse_index_free(path, &self.model, self.index.inertia_tol).index,
        }
    }

    pub fn report(&self, res: &SolveResult) -> Result<IndexReport> {
        match (self.mode, res.boundary_t) {
            (FamilyMode::FixedT, _) => Ok(fixed_t_report(
                &res.path,
                &self.model,
                &self.index,
                CaseLabel::FixedT,
            )),
            (FamilyMode::FreeT, true) => Ok(fixed_t_report(
                &res.path,
                &self.model,
                &self.index,
                CaseLabel::BoundaryT,
            )),
            (FamilyMode::FreeT, false) => {
                let anchor = res.path.clone();
                let fam =
                    |s: f64| -> Result<PathState> { Ok(self.solve_at(s, Some(&anchor))?.path) };
                correction_index(&res.path, &self.model, Some(&fam), &self.index)
            }
        }
    }

    /// Sturm coefficients of the family near `anchor`, re-solving at each σ.
    pub fn sigma_coefficients<'a>(&'a self, anchor: &'a PathState) -> impl SigmaCoefficients + 'a {
        move |s: f64| -> Result<SturmCoefficients> {
            let p = self.solve_at(s, Some(anchor))?.path;
            Ok(coefficients_from_path(&p, &self.model))
        }
    }
}

/// One converged family member.
#[derive(Debug, Clone)]
pub struct FamilySample {
    pub sigma: f64,
    pub path: PathState,
    pub boundary_t: bool,
    pub residual: f64,
    pub iterations: usize,
    pub report: IndexReport,
    /// Interior conjugate instants with multiplicity.
    pub conjugate_count: usize,
    /// Kernel dimension at `s = 1`.
    pub end_nullity: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ContinuationMeta {
    /// Accepted σ steps, including sub-steps.
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub halvings: usize,
    /// Why the family stopped short of the grid, if it did.
    pub truncated: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SigmaFamily {
    pub mode: FamilyMode,
    pub samples: Vec<FamilySample>,
    pub meta: ContinuationMeta,
}

impl SigmaFamily {
    pub fn sigma_range(&self) -> (f64, f64) {
        (self.samples[0].sigma, self.samples.last().unwrap().sigma)
    }
}

/// Continue critical points along the σ grid by warm-started solves.
///
/// Steps are halved when the corrector fails, leaves the continuity tolerance or
/// switches between interior and capped durations. Below the minimum step the
/// family is truncated with a diagnostic.
pub fn continue_family(
    setup: &FamilySetup,
    grid: &[f64],
    seed: Option<&PathState>,
) -> Result<SigmaFamily> {
    if grid.is_empty() {
        return Err(Error::config("sigma", "σ grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("sigma", "σ grid must be strictly increasing"));
    }
    let first = setup.solve_at(grid[0], seed)?;
    let mut meta = ContinuationMeta::default();
    let mut accepted: Vec<(f64, SolveResult)> = vec![(grid[0], first)];
    let min_step = setup.min_step_rel * (grid[grid.len() - 1] - grid[0]).max(f64::EPSILON);

    'grid: for &target in &grid[1..] {
        let (mut sigma, mut last) = {
            let (s, r) = accepted.last().unwrap();
            (*s, r.clone())
        };
        let mut h = target - sigma;
        while sigma < target {
            let next = (sigma + h).min(target);
            let attempt = setup.solve_at(next, Some(&last.path));
            let ok = match &attempt {
                Ok(r) => {
                    let jump = r.path.sup_distance(&last.path);
                    let dt = (r.path.duration() - last.path.duration()).abs();
                    jump <= setup.continuity_tol
                        && dt <= setup.continuity_tol * last.path.duration().max(1.0)
                        && r.boundary_t == last.boundary_t
                }
                Err(_) => false,
            };
            if ok {
                let r = attempt.unwrap();
                meta.steps.push(next - sigma);
                meta.residuals.push(r.residual);
                sigma = next;
                last = r;
            } else {
                h *= 0.5;
                meta.halvings += 1;
                if h < min_step {
                    let why = match attempt {
                        Err(e) => e.to_string(),
                        Ok(r) if r.boundary_t != last.boundary_t => {
                            "duration switched between interior and cap".into()
                        }
                        Ok(_) => "continuity tolerance exceeded".into(),
                    };
                    meta.truncated = Some(format!(
                        "continuation stopped at σ = {sigma} before σ = {target}: {why} (possible fold)"
                    ));
                    log::warn!("{}", meta.truncated.as_ref().unwrap());
                    break 'grid;
                }
            }
        }
        accepted.push((target, last));
    }

    let samples = accepted
        .par_iter()
        .map(|(sigma, res)| build_sample(setup, *sigma, res))
        .collect::<Result<Vec<_>>>()?;
    Ok(SigmaFamily {
        mode: setup.mode,
        samples,
        meta,
    })
}

fn build_sample(setup: &FamilySetup, sigma: f64, res: &SolveResult) -> Result<FamilySample> {
    let report = setup.report(res)?;
    let sf = spectral_flow_s(
        &coefficients_from_path(&res.path, &setup.model),
        &setup.hamiltonian,
    )?;
    Ok(FamilySample {
        sigma,
        path: res.path.clone(),
        boundary_t: res.boundary_t,
        residual: res.residual,
        iterations: res.iterations,
        report,
        conjugate_count: sf.interior.iter().map(|c| c.kernel_dim).sum(),
        end_nullity: sf.end_nullity(),
    })
}

/// Spectral-flow bookkeeping over a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectralFlowSigma {
    /// Change of the free-duration index (the fixed index in fixed-T mode).
    pub sf_sigma: i64,
    /// Change of the fixed-duration index.
    pub sf_hamiltonian: i64,
    /// Same quantity from conjugate-point counts.
    pub sf_hamiltonian_conjugate: i64,
    /// Change of the correction index, when `m⁺(a) = n` holds at both ends.
    pub sf_a: Option<i64>,
    /// `sf_sigma = sf_hamiltonian + sf_a`, when `sf_a` applies.
    pub decomposition_holds: Option<bool>,
    pub first: usize,
    pub last: usize,
    pub warnings: Vec<String>,
}

impl SpectralFlowSigma {
    /// All integer identities that apply hold.
    pub fn consistent(&self) -> bool {
        self.sf_hamiltonian == self.sf_hamiltonian_conjugate
            && self.decomposition_holds != Some(false)
    }
}

fn endpoint_degenerate(s: &FamilySample, mode: FamilyMode) -> bool {
    match mode {
        FamilyMode::FixedT => s.report.kernel_dim_fixed > 0,
        FamilyMode::FreeT => s.report.kernel_dim_free > 0,
    }
}

pub fn spectral_flow_sigma(family: &SigmaFamily) -> Result<SpectralFlowSigma> {
    let samples = &family.samples;
    if samples.is_empty() {
        return Err(Error::Precondition("empty family".into()));
    }
    let mut warnings = Vec::new();
    let first = samples
        .iter()
        .position(|s| !endpoint_degenerate(s, family.mode))
        .ok_or_else(|| Error::Precondition("every sample is degenerate".into()))?;
    let last = samples.len()
        - 1
        - samples
            .iter()
            .rev()
            .position(|s| !endpoint_degenerate(s, family.mode))
            .unwrap();
    if first != 0 {
        warnings.push(format!(
            "start moved inward to σ = {} (degenerate endpoint)",
            samples[first].sigma
        ));
    }
    if last != samples.len() - 1 {
        warnings.push(format!(
            "end moved inward to σ = {} (degenerate endpoint)",
            samples[last].sigma
        ));
    }
    if first > last {
        return Err(Error::Precondition(
            "degenerate endpoints could not be resolved".into(),
        ));
    }
    let (a, b) = (&samples[first], &samples[last]);
    let d = |f: fn(&FamilySample) -> usize| f(b) as i64 - f(a) as i64;
    let sf_hamiltonian = d(|s| s.report.m_fixed);
    let sf_sigma = match family.mode {
        FamilyMode::FixedT => sf_hamiltonian,
        FamilyMode::FreeT => d(|s| s.report.m_free),
    };
    let sf_hamiltonian_conjugate = d(|s| s.conjugate_count);
    let sf_a = match family.mode {
        FamilyMode::FixedT => Some(0),
        FamilyMode::FreeT => {
            let ok = |s: &FamilySample| s.boundary_t || s.report.a_matches_correction();
            if ok(a) && ok(b) {
                Some(d(|s| s.report.n_correction))
            } else {
                warnings
                    .push("m⁺(a) = n fails at an endpoint; decomposition not applicable".into());
                None
            }
        }
    };
    let decomposition_holds = sf_a.map(|x| sf_sigma == sf_hamiltonian + x);
    if decomposition_holds == Some(false) {
        log::warn!(
            "σ-flow decomposition violated: {sf_sigma} ≠ {sf_hamiltonian} + {}",
            sf_a.unwrap()
        );
    }
    if sf_hamiltonian != sf_hamiltonian_conjugate {
        log::warn!("fixed index change {sf_hamiltonian} differs from conjugate-count change {sf_hamiltonian_conjugate}");
    }
    Ok(SpectralFlowSigma {
        sf_sigma,
        sf_hamiltonian,
        sf_hamiltonian_conjugate,
        sf_a,
        decomposition_holds,
        first,
        last,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    PositivelyStable,
    PositivelyUnstable,
    NoiseSensitive,
    Indeterminate,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::PositivelyStable => "positively-stable",
            Verdict::PositivelyUnstable => "positively-unstable",
            Verdict::NoiseSensitive => "noise-sensitive",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

/// A localized index change.
#[derive(Debug, Clone)]
pub struct BifurcationPoint {
    pub sigma_star: f64,
    /// Index jump magnitude across the final bracket.
    pub kernel_dim: usize,
    /// `+1` when the index grows with σ.
    pub sign: i64,
    pub mode: FamilyMode,
    /// Near-zero eigenvalues of the fixed block and of the bordered matrix at σ*.
    pub kernel_dim_fixed: usize,
    pub kernel_dim_free: usize,
    /// More eigenvalues changed sign than the near-zero count can explain.
    pub unresolved: bool,
    /// Converged path on the lower-index side of the bracket.
    pub path_before: PathState,
    pub path_after: PathState,
    pub index_before: usize,
    pub index_after: usize,
}

/// Serialized form of a bifurcation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BifurcationRecord {
    pub sigma_star: f64,
    pub kernel_dim: usize,
    pub sign: i64,
    pub mode: FamilyMode,
    pub verdict: Option<Verdict>,
}

fn near_zero_count(setup: &FamilySetup, path: &PathState, band_rel: f64) -> (usize, usize) {
    let h = crate::action::action_hessian(path, &setup.model, 0.0);
    let a = &h.a;
    let ea = band_rel * a.norm_inf();
    let bordered = h.bordered();
    let eb = band_rel * bordered.norm_inf();
    (a.inertia(ea).zero, bordered.inertia(eb).zero)
}

/// Locate index changes between consecutive samples by bisection in σ.
///
/// Each midpoint is re-solved from the bracket end the scan comes from. The σ
/// resolution is `1e-6` of the family's σ range.
pub fn detect_bifurcations(
    setup: &FamilySetup,
    family: &SigmaFamily,
    order: ScanOrder,
) -> Result<Vec<BifurcationPoint>> {
    let s = &family.samples;
    if s.len() < 2 {
        return Ok(Vec::new());
    }
    let (lo_sigma, hi_sigma) = family.sigma_range();
    let resolution = 1e-6 * (hi_sigma - lo_sigma);
    let idx: Vec<usize> = s.iter().map(|x| setup.tracked_index(&x.path)).collect();
    let mut pairs: Vec<usize> = (0..s.len() - 1).filter(|&i| idx[i] != idx[i + 1]).collect();
    if order == ScanOrder::Descending {
        pairs.reverse();
    }
    let found: Vec<Result<BifurcationPoint>> = pairs
        .par_iter()
        .map(|&i| {
            let (mut a, mut b) = (s[i].sigma, s[i + 1].sigma);
            let (mut pa, mut pb) = (s[i].path.clone(), s[i + 1].path.clone());
            let (ia, ib) = (idx[i], idx[i + 1]);
            while b - a > resolution {
                let mid = 0.5 * (a + b);
                let from = if order == ScanOrder::Ascending {
                    &pa
                } else {
                    &pb
                };
                let r = setup.solve_at(mid, Some(from))?;
                let im = setup.tracked_index(&r.path);
                if im == ia {
                    a = mid;
                    pa = r.path;
                } else {
                    b = mid;
                    pb = r.path;
                    if im != ib {
                        log::warn!(
                            "index {im} at σ = {mid} matches neither bracket end ({ia}, {ib})"
                        );
                    }
                }
            }
            let ib_now = setup.tracked_index(&pb);
            let jump = ib_now as i64 - ia as i64;
            let (kf, kb) = {
                let (f1, b1) = near_zero_count(setup, &pa, 1e-6);
                let (f2, b2) = near_zero_count(setup, &pb, 1e-6);
                (f1.max(f2), b1.max(b2))
            };
            let capacity = match setup.mode {
                FamilyMode::FixedT => kf,
                FamilyMode::FreeT => kb,
            };
            Ok(BifurcationPoint {
                sigma_star: 0.5 * (a + b),
                kernel_dim: jump.unsigned_abs() as usize,
                sign: jump.signum(),
                mode: setup.mode,
                kernel_dim_fixed: kf,
                kernel_dim_free: kb,
                unresolved: (jump.unsigned_abs() as usize) > capacity.max(1) || jump == 0,
                path_before: pa,
                path_after: pb,
                index_before: ia,
                index_after: ib_now,
            })
        })
        .collect();
    let mut out: Vec<BifurcationPoint> = found.into_iter().collect::<Result<_>>()?;
    out.sort_by(|x, y| x.sigma_star.total_cmp(&y.sigma_star));
    for p in out.iter().filter(|p| p.unresolved) {
        log::warn!("unresolved index cluster near σ = {}", p.sigma_star);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub sigma: f64,
    pub s: f64,
    pub slope: f64,
}

/// A tracked branch `s(σ)` of conjugate instants.
#[derive(Debug, Clone)]
pub struct CrossingCurve {
    pub sigma_star: f64,
    pub s_star: f64,
    /// `-Γσ / Γs` from the two crossing forms.
    pub slope_ratio: f64,
    /// Central secant through the nearest tracked samples.
    pub slope_secant: f64,
    pub form_sigma: f64,
    pub form_s: f64,
    pub points: Vec<BranchPoint>,
}

impl CrossingCurve {
    pub fn slopes_agree(&self, rel: f64) -> bool {
        (self.slope_ratio - self.slope_secant).abs() <= rel * self.slope_ratio.abs().max(1e-4)
    }
}

/// Track the conjugate instant through `(σ*, s*)` over `σ* ± window`.
///
/// `half_samples` points are placed on each side. The kernel at the crossing must be
/// one-dimensional.
pub fn crossing_curve(
    family: &dyn SigmaCoefficients,
    sigma_star: f64,
    s_star: f64,
    window: f64,
    half_samples: usize,
    cfg: &HamiltonianConfig,
) -> Result<CrossingCurve> {
    let coeffs = family.coefficients_at(sigma_star)?;
    let crossing = conjugate_scan(&coeffs, cfg)?
        .into_iter()
        .min_by(|a, b| (a.s - s_star).abs().total_cmp(&(b.s - s_star).abs()))
        .filter(|c| (c.s - s_star).abs() <= 1e-4)
        .ok_or_else(|| {
            Error::Precondition(format!(
                "no conjugate instant near s = {s_star} at σ = {sigma_star}"
            ))
        })?;
    if crossing.kernel_dim != 1 {
        return Err(Error::Precondition(format!(
            "kernel dimension {} at the crossing; the branch is only tracked for simple kernels",
            crossing.kernel_dim
        )));
    }
    let s0 = crossing.s;
    let gs = match &crossing.form_s {
        Some(f) => f.value(),
        None => crossing_form_s(&coeffs, s0, &crossing.kernel_basis, cfg)?.value(),
    };
    let gsig = crossing_form_sigma(family, sigma_star, s0, &crossing.kernel_basis, cfg)?.value();
    let slope_ratio = -gsig / gs;

    let n = half_samples.max(1);
    let offsets: Vec<f64> = (-(n as i64)..=n as i64)
        .map(|i| window * i as f64 / n as f64)
        .collect();
    let radius = (0.05f64).max(4.0 * window * slope_ratio.abs());
    let tracked: Vec<Result<(f64, f64)>> = offsets
        .par_iter()
        .map(|&d| {
            let sg = sigma_star + d;
            if d == 0.0 {
                return Ok((sg, s0));
            }
            let c = family.coefficients_at(sg)?;
            let guess = s0 + slope_ratio * d;
            let s = locate_crossing_near(&c, guess, radius, cfg)?
                .ok_or_else(|| Error::NotConverged(format!("branch lost at σ = {sg}")))?;
            Ok((sg, s))
        })
        .collect();
    let pts: Vec<(f64, f64)> = tracked.into_iter().collect::<Result<_>>()?;
    let m = pts.len();
    let slope_at = |i: usize| {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == m - 1 {
            (m - 2, m - 1)
        } else {
            (i - 1, i + 1)
        };
        (pts[b].1 - pts[a].1) / (pts[b].0 - pts[a].0)
    };
    let points: Vec<BranchPoint> = (0..m)
        .map(|i| BranchPoint {
            sigma: pts[i].0,
            s: pts[i].1,
            slope: slope_at(i),
        })
        .collect();
    Ok(CrossingCurve {
        sigma_star,
        s_star: s0,
        slope_ratio,
        slope_secant: slope_at(n),
        form_sigma: gsig,
        form_s: gs,
        points,
    })
}

/// Verdict with the evidence used.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub slope: Option<f64>,
    pub notes: Vec<String>,
}

/// Slopes closer to zero than this are not trusted for a verdict.
const SLOPE_BAND: f64 = 1e-4;
/// A conjugate instant within this distance of `s = 1` makes the end degenerate.
const END_BAND: f64 = 1e-5;

fn fixed_duration_verdict(
    setup: &FamilySetup,
    path: &PathState,
    notes: &mut Vec<String>,
) -> Result<(Verdict, Option<f64>)> {
    let coeffs = coefficients_from_path(path, &setup.model);
    let near = locate_crossing_near(&coeffs, 1.0, 0.05, &setup.hamiltonian)?;
    let end = spectral_flow_s(&coeffs, &setup.hamiltonian)?.end_nullity();
    // the discrete second variation can be singular while the propagated crossing
    // sits O(1/N²) away from s = 1
    let discrete_kernel = near_zero_count(setup, path, 1e-6).0;
    let degenerate =
        end > 0 || discrete_kernel > 0 || near.is_some_and(|s| (s - 1.0).abs() <= END_BAND);
    if !degenerate {
        notes.push("end of the Hamiltonian family is non-degenerate".into());
        return Ok((Verdict::PositivelyStable, None));
    }
    if end.max(discrete_kernel) > 1 {
        notes.push(format!(
            "kernel dimension {} at s = 1",
            end.max(discrete_kernel)
        ));
        return Ok((Verdict::Indeterminate, None));
    }
    let s_star = near.unwrap_or(1.0);
    let fam = setup.sigma_coefficients(path);
    let basis = conjugate_scan(&coeffs, &setup.hamiltonian)?
        .into_iter()
        .find(|c| (c.s - s_star).abs() <= 1e-4)
        .map(|c| c.kernel_basis);
    let basis = match basis {
        Some(b) => b,
        None => {
            // just past s = 1: use the kernel from the extended propagation
            let ext = crate::hamiltonian::propagate_to(
                &coeffs,
                1.0,
                setup.hamiltonian.steps_for(&coeffs),
                s_star,
                setup.hamiltonian.integrator,
            )?;
            let n = coeffs.dim();
            let c = ext.last().view((n, 0), (n, n)).into_owned();
            let svd = c.svd(false, true);
            let vt = svd.v_t.unwrap();
            let (i, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            vec![vt.row(i).transpose()]
        }
    };
    let gs = crossing_form_s(&coeffs, s_star, &basis, &setup.hamiltonian)?.value();
    let gsig = crossing_form_sigma(&fam, path.sigma(), s_star, &basis, &setup.hamiltonian)?.value();
    let slope = -gsig / gs;
    notes.push(format!(
        "degenerate end, conjugate instant s = {s_star:.10}, slope {slope:.6e}"
    ));
    let v = if slope > SLOPE_BAND {
        Verdict::PositivelyStable
    } else if slope < -SLOPE_BAND {
        Verdict::PositivelyUnstable
    } else {
        Verdict::Indeterminate
    };
    Ok((v, Some(slope)))
}

/// One-sided stability of the minimizer `path` for σ slightly above its σ.
///
/// `sigma_span` sets the probe offsets `{1, 2, 4} · 1e-3 · sigma_span`.
pub fn classify_stability(
    setup: &FamilySetup,
    path: &PathState,
    boundary_t: bool,
    sigma_span: f64,
) -> Result<StabilityReport> {
    let fixed = morse_index_fixed(path, &setup.model, setup.index.inertia_tol).index;
    let free = morse_index_free(path, &setup.model, setup.index.inertia_tol).index;
    let minimizer = match (setup.mode, boundary_t) {
        (FamilyMode::FreeT, false) => fixed == 0 && free == 0,
        _ => fixed == 0,
    };
    if !minimizer {
        return Err(Error::Precondition(format!(
            "σ = {} is not a minimizer (indices {fixed}, {free})",
            path.sigma()
        )));
    }
    let mut notes = Vec::new();
    if setup.mode == FamilyMode::FixedT || boundary_t {
        let (verdict, slope) = fixed_duration_verdict(setup, path, &mut notes)?;
        return Ok(StabilityReport {
            verdict,
            slope,
            notes,
        });
    }
    let sigma0 = path.sigma();
    let probes: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|k| sigma0 + k * 1e-3 * sigma_span)
        .collect();
    let corrections: Vec<Result<usize>> = probes
        .par_iter()
        .map(|&s| {
            let r = setup.solve_at(s, Some(path))?;
            if r.boundary_t {
                return Ok(0);
            }
            let f = morse_index_fixed(&r.path, &setup.model, setup.index.inertia_tol).index;
            let g = morse_index_free(&r.path, &setup.model, setup.index.inertia_tol).index;
            Ok(g.saturating_sub(f))
        })
        .collect();
    let mut ns = Vec::new();
    for (s, c) in probes.iter().zip(corrections) {
        match c {
            Ok(n) => ns.push(n),
            Err(e) => notes.push(format!("probe at σ = {s} failed: {e}")),
        }
    }
    if ns.contains(&1) {
        notes.push("correction index is 1 just above σ".into());
        return Ok(StabilityReport {
            verdict: Verdict::NoiseSensitive,
            slope: None,
            notes,
        });
    }
    if ns.len() == probes.len() {
        notes.push(
            "correction index vanishes on the probes; reduced to the fixed-duration verdict".into(),
        );
        let (verdict, slope) = fixed_duration_verdict(setup, path, &mut notes)?;
        return Ok(StabilityReport {
            verdict,
            slope,
            notes,
        });
    }
    Ok(StabilityReport {
        verdict: Verdict::Indeterminate,
        slope: None,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pt(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn quadratic_setup() -> FamilySetup {
        let mut s = FamilySetup::new(
            PotentialModel::quadratic(1),
            pt(1.0),
            pt(2.0),
            FamilyMode::FreeT,
            SolveConfig::new(100, 2.0),
        );
        s.energy = 0.0;
        s
    }

    #[test]
    fn single_point_grid() {
        let f = continue_family(&quadratic_setup(), &[0.35], None).unwrap();
        assert_eq!(f.samples.len(), 1);
        assert!(f.meta.steps.is_empty());
        let sf = spectral_flow_sigma(&f).unwrap();
        assert_eq!((sf.sf_sigma, sf.sf_hamiltonian, sf.sf_a), (0, 0, Some(0)));
    }

    #[test]
    fn quadratic_family_is_flat() {
        let setup = quadratic_setup();
        let grid: Vec<f64> = (0..4).map(|i| 0.3 + 0.05 * i as f64).collect();
        let f = continue_family(&setup, &grid, None).unwrap();
        assert_eq!(f.samples.len(), 4);
        assert!(f.meta.truncated.is_none());
        for s in &f.samples {
            assert_eq!(
                (s.report.m_fixed, s.report.m_free, s.report.n_correction),
                (0, 0, 0)
            );
            assert!(!s.boundary_t);
        }
        // duration grows along this branch
        assert!(f
            .samples
            .windows(2)
            .all(|w| w[1].path.duration() > w[0].path.duration()));
        let sf = spectral_flow_sigma(&f).unwrap();
        assert!(sf.consistent());
        assert_eq!(sf.sf_sigma, 0);
        assert!(detect_bifurcations(&setup, &f, ScanOrder::Ascending)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn quadratic_family_truncates_at_fold() {
        let setup = quadratic_setup();
        let f = continue_family(&setup, &[0.4, 0.55, 0.7], None).unwrap();
        assert!(f.meta.truncated.is_some());
        assert_eq!(f.samples.len(), 1);
    }

    #[test]
    fn flat_crossing_curve() {
        let fam = |_s: f64| SturmCoefficients::scalar(-(2.5 * PI).powi(2), 1.0);
        let c = crossing_curve(&fam, 1.0, 0.4, 0.02, 2, &HamiltonianConfig::default()).unwrap();
        assert!(c.slope_ratio.abs() < 1e-9);
        assert!(c.points.iter().all(|p| (p.s - 0.4).abs() < 1e-8));
    }

    #[test]
    fn scaled_crossing_curve() {
        let fam = |s: f64| SturmCoefficients::scalar(-s * PI * PI * 1.5625, 1.0);
        let cfg = HamiltonianConfig::default();
        let c = crossing_curve(&fam, 1.0, 0.8, 0.02, 2, &cfg).unwrap();
        assert!((c.slope_ratio + 0.4).abs() < 0.04);
        assert!(c.slopes_agree(0.1));
        for p in &c.points {
            assert!((p.s - 0.8 / p.sigma.sqrt()).abs() < 1e-6, "{p:?}");
        }
    }

    fn table_family(rows: &[(usize, usize, usize, CaseLabel, Option<f64>)]) -> SigmaFamily {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, &(mf, mfree, conj, case, a))| {
                let p =
                    PathState::straight_line(&pt(0.0), &pt(1.0), 4, 1.0, i as f64, 0.0).unwrap();
                FamilySample {
                    sigma: i as f64,
                    path: p,
                    boundary_t: false,
                    residual: 0.0,
                    iterations: 0,
                    report: IndexReport {
                        sigma: i as f64,
                        duration: 1.0,
                        action: 0.0,
                        m_fixed: mf,
                        m_free: mfree,
                        n_correction: mfree - mf,
                        a_sigma: a,
                        dl2_norm: 1.0,
                        kernel_dim_fixed: 0,
                        kernel_dim_free: 0,
                        case,
                    },
                    conjugate_count: conj,
                    end_nullity: 0,
                }
            })
            .collect();
        SigmaFamily {
            mode: FamilyMode::FreeT,
            samples,
            meta: ContinuationMeta::default(),
        }
    }

    #[test]
    fn correction_flip_moves_sigma_flow_only() {
        let f = table_family(&[
            (0, 0, 0, CaseLabel::ANegative, Some(-0.2)),
            (0, 0, 0, CaseLabel::ANegative, Some(-0.05)),
            (0, 1, 0, CaseLabel::APositive, Some(0.1)),
        ]);
        let sf = spectral_flow_sigma(&f).unwrap();
        assert_eq!((sf.sf_sigma, sf.sf_hamiltonian, sf.sf_a), (1, 0, Some(1)));
        assert_eq!(sf.decomposition_holds, Some(true));
    }

    #[test]
    fn hypothesis_failure_disables_decomposition() {
        let f = table_family(&[
            (0, 0, 0, CaseLabel::APositive, Some(0.2)),
            (1, 1, 1, CaseLabel::ANegative, Some(-0.1)),
        ]);
        let sf = spectral_flow_sigma(&f).unwrap();
        assert_eq!(sf.sf_a, None);
        assert_eq!(sf.decomposition_holds, None);
        assert_eq!(sf.sf_hamiltonian, 1);
    }
}
