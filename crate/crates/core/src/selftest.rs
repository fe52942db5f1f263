//! Built-in oracle suite behind `mptp selftest`, plus the finite-difference
//! helpers it shares with the test suites.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{
    action_gradient, action_hessian, action_value, k0_value, path_energy, PathState,
};
use crate::bifurcation::{continue_family, spectral_flow_sigma, FamilyMode, FamilySetup};
use crate::config::{apply_overrides, env_overrides, normalize, SolverOptions, Tolerances};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    coefficients_from_path, discretized_form, propagate, spectral_flow_s, HamiltonianConfig,
    SturmCoefficients,
};
use crate::index::{morse_index_fixed, morse_index_free};
use crate::polynomial::{Monomial, Polynomial};
use crate::potential::{CosineWells, PotentialModel, SearchBox};
use crate::solver::{minimize_fixed_t, minimize_free_t, SolveConfig};

/// Tolerances and solver options the suite runs under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SelftestConfig {
    pub tolerances: Tolerances,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            tolerances: Tolerances::default(),
            solver: SolverOptions::default(),
            seed: 20240611,
        }
    }
}

impl SelftestConfig {
    /// Defaults with `MPTP_*` overrides for `tolerances`, `solver` and `seed`.
    /// Overrides aimed at other run-config fields are ignored here.
    pub fn from_env() -> Result<Self> {
        Self::default().with_overrides(&env_overrides())
    }

    pub fn with_overrides(&self, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let relevant: BTreeMap<String, String> = overrides
            .iter()
            .filter(|(k, _)| {
                let head = normalize(k.split('.').next().unwrap_or(""));
                matches!(head.as_str(), "tolerances" | "solver" | "seed")
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let cfg: SelftestConfig = apply_overrides(self, &relevant)?;
        let t = &cfg.tolerances;
        for v in [
            t.tol_grad,
            t.kernel_tol,
            t.inertia_tol,
            t.delta_sigma,
            t.continuity_tol,
        ] {
            if !(v > 0.0) {
                return Err(Error::config(
                    "tolerances",
                    "all tolerances must be positive",
                ));
            }
        }
        Ok(cfg)
    }

    fn hamiltonian(&self, steps: Option<usize>) -> HamiltonianConfig {
        HamiltonianConfig {
            steps,
            kernel_tol: self.tolerances.kernel_tol,
            integrator: self.solver.integrator,
            ..HamiltonianConfig::default()
        }
    }

    fn solve(&self, intervals: usize, tau: f64) -> SolveConfig {
        let mut s = SolveConfig::new(intervals, tau);
        s.tol_grad = self.tolerances.tol_grad;
        s.max_iter = self.solver.max_iter;
        s.t_min = self.solver.t_min;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<4}  {:<width$}  {:>7.3}s  {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.seconds,
                c.detail
            );
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), failed);
        out
    }
}

type Check = fn(&SelftestConfig) -> Result<(bool, String)>;

pub fn run_selftest(cfg: &SelftestConfig) -> SelftestReport {
    let checks: [(&'static str, Check); 8] = [
        ("quadratic fixed-T closed form", check_quadratic_fixed),
        ("quadratic free-T oracle", check_quadratic_free),
        ("Sturm fixture conjugate points", check_sturm),
        ("finite-difference derivatives", check_derivatives),
        ("symplecticity", check_symplectic),
        (
            "double-well integer identities",
            check_double_well_identities,
        ),
        ("quadratic family identities", check_quadratic_family),
        ("critical values", check_critical_values),
    ];
    let checks = checks
        .iter()
        .map(|(name, f)| {
            let t0 = Instant::now();
            let (pass, detail) = f(cfg).unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckOutcome {
                name,
                pass,
                detail,
                seconds: t0.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SelftestReport { checks }
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn check_quadratic_fixed(cfg: &SelftestConfig) -> Result<(bool, String)> {
    // x'' = x with x(0) = 1, x(1) = 2
    let r = minimize_fixed_t(
        &PotentialModel::quadratic(1),
        0.5,
        1.0,
        &v1(1.0),
        &v1(2.0),
        &cfg.solve(400, 1.0),
    )?;
    let beta = (2.0 - 1f64.cosh()) / 1f64.sinh();
    let err = r
        .path
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let t = i as f64 / 400.0;
            (x[0] - (t.cosh() + beta * t.sinh())).abs()
        })
        .fold(0.0, f64::max);
    Ok((
        r.converged && err <= 1e-5,
        format!("max node error {err:.2e} (limit 1e-5)"),
    ))
}

/// Closed form of the quadratic oracle: `T = arccosh 2`, `S = √3 − ½ arccosh 2`.
pub fn quadratic_oracle() -> (f64, f64) {
    let t = 2f64.acosh();
    (t, 3f64.sqrt() - 0.5 * t)
}

fn check_quadratic_free(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let m = PotentialModel::quadratic(1);
    let r = minimize_free_t(&m, 0.5, 0.0, &v1(1.0), &v1(2.0), &cfg.solve(400, 2.0))?;
    let (t_exact, s_exact) = quadratic_oracle();
    let ds = (action_value(&r.path, &m) - s_exact).abs();
    let dt = (r.path.duration() - t_exact).abs();
    let e = path_energy(&r.path, &m);
    let it = cfg.tolerances.inertia_tol;
    let mf = morse_index_fixed(&r.path, &m, it).index;
    let mfree = morse_index_free(&r.path, &m, it).index;
    // the duration sits at a degenerate inflection of the action, so its grid error is
    // far larger than the action error; checked here at the measured O(h) level
    let pass = r.converged
        && !r.boundary_t
        && ds <= 5e-4
        && dt <= 2e-3
        && e.dev <= 1e-4
        && mf == 0
        && mfree == 0;
    Ok((
        pass,
        format!(
            "|ΔS| = {ds:.2e}, |ΔT| = {dt:.2e}, energy dev {:.2e}, indices ({mf}, {mfree})",
            e.dev
        ),
    ))
}

/// Scalar fixture `P = 1, Q = 0, R = −(2.5π)², T = 1`.
pub fn sturm_fixture() -> SturmCoefficients {
    SturmCoefficients::scalar(-(2.5 * PI).powi(2), 1.0).expect("valid fixture")
}

fn check_sturm(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let sf = spectral_flow_s(&sturm_fixture(), &cfg.hamiltonian(Some(1600)))?;
    let s: Vec<f64> = sf.interior.iter().map(|c| c.s).collect();
    let located = s.len() == 2 && (s[0] - 0.4).abs() <= 1e-6 && (s[1] - 0.8).abs() <= 1e-6;
    let simple = sf.interior.iter().all(|c| c.kernel_dim == 1);
    let positive = sf
        .interior
        .iter()
        .all(|c| c.form_s.as_ref().is_some_and(|f| f.value() > 0.0));
    let clean = sf.at_start.is_empty() && sf.at_end.is_empty();
    let inertia = discretized_form(&sturm_fixture(), 400)
        .inertia(0.0)
        .negative;
    let pass = located && simple && positive && clean && sf.value == 3 && inertia == 2;
    Ok((
        pass,
        format!(
            "crossings {s:?}, start/end flags {}/{}, sf {}, discrete index {inertia}",
            sf.at_start.len(),
            sf.at_end.len(),
            sf.value
        ),
    ))
}

/// Largest relative gradient and Hessian errors against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeErrors {
    pub gradient: f64,
    pub hessian: f64,
}

fn full_gradient(path: &PathState, model: &PotentialModel) -> DVector<f64> {
    let g = action_gradient(path, model);
    let mut v = g.x.clone().resize_vertically(g.x.len() + 1, 0.0);
    v[g.x.len()] = g.t;
    v
}

fn perturb(path: &PathState, j: usize, h: f64) -> PathState {
    let m = path.dim() * (path.intervals() - 1);
    if j < m {
        let mut v = path.interior_vector();
        v[j] += h;
        path.with_interior(&v)
    } else {
        path.with_duration(path.duration() + h)
    }
}

/// Compare the analytic gradient and Hessian in (interior nodes, T) with central
/// differences of the action and of the gradient.
pub fn derivative_errors(path: &PathState, model: &PotentialModel) -> DerivativeErrors {
    let g = full_gradient(path, model);
    let hess = action_hessian(path, model, 0.0).to_dense();
    let m = g.len();
    let mut fd_g = DVector::zeros(m);
    let mut fd_h = DMatrix::zeros(m, m);
    let interior = path.interior_vector();
    for j in 0..m {
        let scale = if j + 1 < m {
            interior[j].abs()
        } else {
            path.duration()
        };
        let h = 1e-5 * scale.max(1.0);
        let (p, q) = (perturb(path, j, h), perturb(path, j, -h));
        fd_g[j] = (action_value(&p, model) - action_value(&q, model)) / (2.0 * h);
        let col = (full_gradient(&p, model) - full_gradient(&q, model)) / (2.0 * h);
        fd_h.set_column(j, &col);
    }
    let fd_h = 0.5 * (&fd_h + fd_h.transpose());
    DerivativeErrors {
        gradient: (&g - &fd_g).amax() / g.amax().max(1.0),
        hessian: (&hess - &fd_h).amax() / hess.amax().max(1.0),
    }
}

/// Potentials exercised by the derivative checks, with endpoints for each.
pub fn derivative_corpus() -> Vec<(&'static str, PotentialModel, DVector<f64>, DVector<f64>)> {
    let poly = Polynomial::new(
        2,
        vec![
            Monomial {
                coef: 0.25,
                pow: vec![4, 0],
            },
            Monomial {
                coef: -0.5,
                pow: vec![2, 0],
            },
            Monomial {
                coef: 0.3,
                pow: vec![1, 1],
            },
            Monomial {
                coef: 0.75,
                pow: vec![0, 2],
            },
            Monomial {
                coef: 0.1,
                pow: vec![2, 1],
            },
        ],
    );
    let two = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    vec![
        ("quadratic", PotentialModel::quadratic(1), v1(1.0), v1(2.0)),
        (
            "quadratic-2d",
            PotentialModel::quadratic_with(&[1.0, 3.0]).expect("valid stiffness"),
            two(1.0, 0.5),
            two(2.0, -0.5),
        ),
        (
            "double-well-1d",
            PotentialModel::double_well_1d(),
            v1(-1.0),
            v1(1.0),
        ),
        (
            "double-well-nd",
            PotentialModel::double_well_nd(&[2.0]),
            two(-1.0, 0.0),
            two(1.0, 0.0),
        ),
        (
            "polynomial",
            PotentialModel::polynomial(poly, 8).expect("valid polynomial"),
            two(-1.0, 0.2),
            two(1.0, -0.2),
        ),
        (
            "cosine-wells",
            PotentialModel::plugin(std::sync::Arc::new(CosineWells { dim: 1 })),
            v1(-1.0),
            v1(1.0),
        ),
    ]
}

/// Straight line between the endpoints with random interior noise, duration, σ and k.
pub fn random_path(
    rng: &mut impl Rng,
    x_minus: &DVector<f64>,
    x_plus: &DVector<f64>,
    intervals: usize,
) -> PathState {
    let duration = rng.random_range(0.5..4.0);
    let sigma = rng.random_range(0.0..0.5);
    let k = rng.random_range(-0.5..0.5);
    let base = PathState::straight_line(x_minus, x_plus, intervals, duration, sigma, k)
        .expect("valid line");
    let v = base
        .interior_vector()
        .map(|x| x + rng.random_range(-0.3..0.3));
    base.with_interior(&v)
}

fn check_derivatives(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut eg, mut eh) = (0.0f64, 0.0f64);
    for (_, model, xm, xp) in derivative_corpus() {
        for _ in 0..5 {
            let e = derivative_errors(&random_path(&mut rng, &xm, &xp, 12), &model);
            eg = eg.max(e.gradient);
            eh = eh.max(e.hessian);
        }
    }
    Ok((
        eg <= 1e-6 && eh <= 1e-5,
        format!("gradient {eg:.2e} (limit 1e-6), Hessian {eh:.2e} (limit 1e-5)"),
    ))
}

fn check_symplectic(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut worst = 0.0f64;
    let fixture = propagate(&sturm_fixture(), 1.0, 1600, cfg.solver.integrator)?;
    worst = worst.max(fixture.max_symplectic_defect());
    for (_, model, xm, xp) in derivative_corpus() {
        let path = random_path(&mut rng, &xm, &xp, 50);
        let coeffs = coefficients_from_path(&path, &model);
        let phi = propagate(&coeffs, 1.0, coeffs.default_steps(), cfg.solver.integrator)?;
        worst = worst.max(phi.max_symplectic_defect());
    }
    Ok((
        worst <= 1e-8,
        format!("max defect {worst:.2e} (limit 1e-8)"),
    ))
}

fn family_setup(
    cfg: &SelftestConfig,
    model: PotentialModel,
    xm: f64,
    xp: f64,
    mode: FamilyMode,
    intervals: usize,
    tau: f64,
) -> FamilySetup {
    let mut s = FamilySetup::new(model, v1(xm), v1(xp), mode, cfg.solve(intervals, tau));
    s.index.inertia_tol = cfg.tolerances.inertia_tol;
    s.index.delta_sigma = cfg.tolerances.delta_sigma;
    s.hamiltonian = cfg.hamiltonian(None);
    s.continuity_tol = cfg.tolerances.continuity_tol;
    s
}

fn check_double_well_identities(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let setup = family_setup(
        cfg,
        PotentialModel::double_well_1d(),
        -1.0,
        1.0,
        FamilyMode::FixedT,
        100,
        4.0,
    );
    let grid: Vec<f64> = (0..6).map(|i| 0.05 + 0.05 * i as f64).collect();
    let fam = continue_family(&setup, &grid, None)?;
    let violations = fam
        .samples
        .iter()
        .filter(|s| s.conjugate_count != s.report.m_fixed || s.end_nullity != 0)
        .count();
    let sf = spectral_flow_sigma(&fam)?;
    let pass =
        fam.meta.truncated.is_none() && violations == 0 && sf.consistent() && sf.sf_sigma == 1;
    Ok((
        pass,
        format!(
            "{} samples, {violations} index/conjugate mismatches, sf (σ, H, conj) = ({}, {}, {})",
            fam.samples.len(),
            sf.sf_sigma,
            sf.sf_hamiltonian,
            sf.sf_hamiltonian_conjugate
        ),
    ))
}

fn check_quadratic_family(cfg: &SelftestConfig) -> Result<(bool, String)> {
    let setup = family_setup(
        cfg,
        PotentialModel::quadratic(1),
        1.0,
        2.0,
        FamilyMode::FreeT,
        100,
        2.0,
    );
    let fam = continue_family(&setup, &[0.3, 0.35, 0.4, 0.45], None)?;
    let bad = fam
        .samples
        .iter()
        .filter(|s| s.report.n_correction > 1 || s.report.mismatch())
        .count();
    let sf = spectral_flow_sigma(&fam)?;
    let pass = fam.meta.truncated.is_none()
        && bad == 0
        && sf.consistent()
        && sf.decomposition_holds == Some(true);
    Ok((
        pass,
        format!(
            "{bad} classification mismatches, sf (σ, H, a) = ({}, {}, {:?})",
            sf.sf_sigma, sf.sf_hamiltonian, sf.sf_a
        ),
    ))
}

fn check_critical_values(_cfg: &SelftestConfig) -> Result<(bool, String)> {
    let bx = SearchBox::cube(1, -2.0, 2.0);
    let dw = PotentialModel::double_well_1d();
    let mut worst = 0.0f64;
    for sigma in [0.1, 0.2, 0.5] {
        let cv = k0_value(&dw, sigma, &v1(-1.0), &v1(1.0), &bx)?;
        worst = worst.max((cv.k0 - 2.0 * sigma).abs());
        if cv.k0 > cv.c_u {
            return Ok((
                false,
                format!("k0 {} above c_u {} at σ = {sigma}", cv.k0, cv.c_u),
            ));
        }
    }
    let q = k0_value(
        &PotentialModel::quadratic(1),
        0.5,
        &v1(1.0),
        &v1(2.0),
        &SearchBox::cube(1, -3.0, 3.0),
    )?;
    Ok((
        worst <= 1e-9 && q.k0.abs() <= 1e-6,
        format!(
            "double-well |k0 − 2σ| ≤ {worst:.1e}, quadratic k0 = {:.1e}",
            q.k0
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_tolerances_only() {
        let mut o = BTreeMap::new();
        o.insert("TOLERANCES.KERNEL_TOL".into(), "0.1".into());
        o.insert("N".into(), "50".into());
        let c = SelftestConfig::default().with_overrides(&o).unwrap();
        assert_eq!(c.tolerances.kernel_tol, 0.1);
    }

    #[test]
    fn corpus_derivatives_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (name, m, xm, xp) in derivative_corpus() {
            let e = derivative_errors(&random_path(&mut rng, &xm, &xp, 8), &m);
            assert!(e.gradient < 1e-6 && e.hessian < 1e-5, "{name}: {e:?}");
        }
    }

    #[test]
    fn loose_kernel_tolerance_breaks_the_sturm_check() {
        let mut cfg = SelftestConfig::default();
        assert!(check_sturm(&cfg).unwrap().0);
        cfg.tolerances.kernel_tol = 0.1;
        assert!(!check_sturm(&cfg).unwrap().0);
    }
}
