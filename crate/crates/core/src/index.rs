//! Morse indices of critical paths and the free-time correction index.
//!
//! The fixed-time index counts negative eigenvalues of the interior block `A(0)` of
//! the discrete second variation; the free-time index counts them for the bordered
//! matrix that also varies `T`. Their difference is the correction index, which is
//! cross-checked against the sign of `a(σ)`, the σ-derivative of the noise action
//! along a family of critical points.

use serde::{Deserialize, Serialize};

use crate::action::{action_hessian, action_value, noise_action, noise_action_gradient, PathState};
use crate::error::{Error, Result};
use crate::potential::PotentialModel;

#[derive(Debug, Clone)]
pub struct IndexConfig {
    /// Eigenvalues with `|λ| ≤ inertia_tol · ‖H‖∞` count as kernel.
    pub inertia_tol: f64,
    /// σ step for the `a(σ)` finite difference.
    pub delta_sigma: f64,
    /// `a(σ)` is zero when `|a| ≤ a_zero · (1 + |noise action|)`.
    pub a_zero: f64,
    /// The noise-action differential is zero when its norm is `≤ dl2_zero · (1 + ‖path‖)`.
    pub dl2_zero: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            inertia_tol: 1e-10,
            delta_sigma: 1e-4,
            a_zero: 1e-6,
            dl2_zero: 1e-8,
        }
    }
}

/// Negative count and kernel dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorseIndex {
    pub index: usize,
    pub kernel_dim: usize,
}

pub fn morse_index_fixed(path: &PathState, model: &PotentialModel, inertia_tol: f64) -> MorseIndex {
    let a = action_hessian(path, model, 0.0).a;
    let inertia = a.inertia(inertia_tol * a.norm_inf());
    MorseIndex {
        index: inertia.negative,
        kernel_dim: inertia.zero,
    }
}

pub fn morse_index_free(path: &PathState, model: &PotentialModel, inertia_tol: f64) -> MorseIndex {
    let h = action_hessian(path, model, 0.0).bordered();
    let inertia = h.inertia(inertia_tol * h.norm_inf());
    MorseIndex {
        index: inertia.negative,
        kernel_dim: inertia.zero,
    }
}

/// Which clause of the correction-index classification applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseLabel {
    /// `a(σ) > 0` outside the zero band: correction index 1.
    APositive,
    /// `a(σ) < 0` outside the zero band: correction index 0.
    ANegative,
    /// `a(σ)` in the zero band with non-zero noise-action differential: correction index 1.
    AZeroDl2Nonzero,
    /// Both in their zero bands: no prediction.
    Degenerate,
    /// The neighbouring re-solves needed for `a(σ)` failed.
    AUnavailable,
    /// Fixed duration; the correction index is not defined.
    #[serde(rename = "fixed-T")]
    FixedT,
    /// Free-duration solve stopped at the duration cap; analysed as fixed duration.
    #[serde(rename = "boundary-T")]
    BoundaryT,
}

impl CaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseLabel::APositive => "a-positive",
            CaseLabel::ANegative => "a-negative",
            CaseLabel::AZeroDl2Nonzero => "a-zero-dl2-nonzero",
            CaseLabel::Degenerate => "degenerate",
            CaseLabel::AUnavailable => "a-unavailable",
            CaseLabel::FixedT => "fixed-T",
            CaseLabel::BoundaryT => "boundary-T",
        }
    }

    pub fn parse(s: &str) -> Option<CaseLabel> {
        [
            CaseLabel::APositive,
            CaseLabel::ANegative,
            CaseLabel::AZeroDl2Nonzero,
            CaseLabel::Degenerate,
            CaseLabel::AUnavailable,
            CaseLabel::FixedT,
            CaseLabel::BoundaryT,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }

    /// Correction index predicted by the clause, if any.
    pub fn predicted(&self) -> Option<usize> {
        match self {
            CaseLabel::APositive | CaseLabel::AZeroDl2Nonzero => Some(1),
            CaseLabel::ANegative => Some(0),
            _ => None,
        }
    }
}

/// Indices and diagnostics at one critical point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IndexReport {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub action: f64,
    pub m_fixed: usize,
    pub m_free: usize,
    pub n_correction: usize,
    pub a_sigma: Option<f64>,
    pub dl2_norm: f64,
    pub kernel_dim_fixed: usize,
    pub kernel_dim_free: usize,
    pub case: CaseLabel,
}

impl IndexReport {
    /// The index difference disagrees with the clause prediction.
    pub fn mismatch(&self) -> bool {
        self.case
            .predicted()
            .is_some_and(|p| p != self.n_correction)
    }

    /// Lemma-style hypothesis `m⁺(a) = n` used by the decomposition of the σ-flow.
    pub fn a_matches_correction(&self) -> bool {
        match (self.case, self.a_sigma) {
            (CaseLabel::APositive, _) => self.n_correction == 1,
            (CaseLabel::ANegative, _) => self.n_correction == 0,
            (CaseLabel::AZeroDl2Nonzero | CaseLabel::Degenerate, Some(_)) => self.n_correction == 0,
            _ => false,
        }
    }
}

/// Critical points along a σ-family, re-solved on demand.
pub trait CriticalFamily: Sync {
    fn solve_at(&self, sigma: f64) -> Result<PathState>;
}

impl<F> CriticalFamily for F
where
    F: Fn(f64) -> Result<PathState> + Sync,
{
    fn solve_at(&self, sigma: f64) -> Result<PathState> {
        self(sigma)
    }
}

/// `a(σ)` with its Richardson check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ASigma {
    /// Central difference with step `δ/2`.
    pub value: f64,
    /// Central difference with step `δ`.
    pub coarse: f64,
    pub extrapolated: f64,
    /// `|value - coarse| / max(|value|, tiny)`.
    pub halving_change: f64,
}

pub fn a_sigma(
    family: &dyn CriticalFamily,
    model: &PotentialModel,
    sigma: f64,
    delta: f64,
) -> Result<ASigma> {
    if !(delta > 0.0) {
        return Err(Error::config("deltaSigma", "must be positive"));
    }
    let l2 = |s: f64| -> Result<f64> { Ok(noise_action(&family.solve_at(s)?, model)) };
    let coarse = (l2(sigma + delta)? - l2(sigma - delta)?) / (2.0 * delta);
    let h = 0.5 * delta;
    let value = (l2(sigma + h)? - l2(sigma - h)?) / (2.0 * h);
    let change = (value - coarse).abs() / value.abs().max(1e-300);
    if change > 1e-2 && value.abs() > 1e-8 {
        log::warn!(
            "a(σ) at σ = {sigma}: halving the step changed the estimate by {:.2}%",
            100.0 * change
        );
    }
    Ok(ASigma {
        value,
        coarse,
        extrapolated: (4.0 * value - coarse) / 3.0,
        halving_change: change,
    })
}

pub fn dl2_norm(path: &PathState, model: &PotentialModel) -> f64 {
    let g = noise_action_gradient(path, model);
    (g.x.norm_squared() + g.t * g.t).sqrt()
}

/// Report at a fixed-duration critical point (no free-time analysis).
pub fn fixed_t_report(
    path: &PathState,
    model: &PotentialModel,
    cfg: &IndexConfig,
    case: CaseLabel,
) -> IndexReport {
    let fixed = morse_index_fixed(path, model, cfg.inertia_tol);
    IndexReport {
        sigma: path.sigma(),
        duration: path.duration(),
        action: action_value(path, model),
        m_fixed: fixed.index,
        m_free: fixed.index,
        n_correction: 0,
        a_sigma: None,
        dl2_norm: dl2_norm(path, model),
        kernel_dim_fixed: fixed.kernel_dim,
        kernel_dim_free: fixed.kernel_dim,
        case,
    }
}

/// Classify by `a(σ)` and the noise-action differential.
pub fn classify(a: Option<f64>, l2: f64, dl2: f64, path_norm: f64, cfg: &IndexConfig) -> CaseLabel {
    let Some(a) = a else {
        return CaseLabel::AUnavailable;
    };
    if a.abs() > cfg.a_zero * (1.0 + l2.abs()) {
        if a > 0.0 {
            CaseLabel::APositive
        } else {
            CaseLabel::ANegative
        }
    } else if dl2 > cfg.dl2_zero * (1.0 + path_norm) {
        CaseLabel::AZeroDl2Nonzero
    } else {
        CaseLabel::Degenerate
    }
}

/// Free-duration report at an interior critical point.
///
/// The correction index is the index difference; it must be 0 or 1. The
/// classification by `a(σ)` is recorded independently, and a disagreement is only
/// logged.
pub fn correction_index(
    path: &PathState,
    model: &PotentialModel,
    family: Option<&dyn CriticalFamily>,
    cfg: &IndexConfig,
) -> Result<IndexReport> {
    let fixed = morse_index_fixed(path, model, cfg.inertia_tol);
    let free = morse_index_free(path, model, cfg.inertia_tol);
    let diff = free.index as i64 - fixed.index as i64;
    if !(0..=1).contains(&diff) {
        return Err(Error::IndexIdentity(format!(
            "free index {} minus fixed index {} at σ = {} is outside {{0, 1}}",
            free.index,
            fixed.index,
            path.sigma()
        )));
    }
    let a = match family {
        Some(f) => match a_sigma(f, model, path.sigma(), cfg.delta_sigma) {
            Ok(a) => Some(a.value),
            Err(e) => {
                log::warn!("a(σ) unavailable at σ = {}: {e}", path.sigma());
                None
            }
        },
        None => None,
    };
    let l2 = noise_action(path, model);
    let dl2 = dl2_norm(path, model);
    let case = classify(a, l2, dl2, path.sup_norm(), cfg);
    let report = IndexReport {
        sigma: path.sigma(),
        duration: path.duration(),
        action: action_value(path, model),
        m_fixed: fixed.index,
        m_free: free.index,
        n_correction: diff as usize,
        a_sigma: a,
        dl2_norm: dl2,
        kernel_dim_fixed: fixed.kernel_dim,
        kernel_dim_free: free.kernel_dim,
        case,
    };
    if report.mismatch() {
        log::warn!(
            "correction index {} disagrees with clause {} at σ = {}",
            report.n_correction,
            case.as_str(),
            path.sigma()
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{discretized_form, SturmCoefficients};
    use crate::linalg::dense_inertia;
    use crate::solver::{minimize_fixed_t, minimize_free_t, SolveConfig};
    use nalgebra::DVector;

    fn pt(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn quadratic_fixed_t_index_is_zero() {
        let m = PotentialModel::quadratic(1);
        let r = minimize_fixed_t(
            &m,
            0.5,
            1.5,
            &pt(1.0),
            &pt(2.0),
            &SolveConfig::new(100, 2.0),
        )
        .unwrap();
        let idx = morse_index_fixed(&r.path, &m, 1e-10);
        assert_eq!(
            idx,
            MorseIndex {
                index: 0,
                kernel_dim: 0
            }
        );
    }

    #[test]
    fn sturm_fixture_through_inertia() {
        let c = SturmCoefficients::scalar(-(2.5 * std::f64::consts::PI).powi(2), 1.0).unwrap();
        let form = discretized_form(&c, 400);
        let fast = form.inertia(1e-10 * form.norm_inf());
        let dense = dense_inertia(&form.to_dense(), 1e-10 * form.norm_inf());
        assert_eq!(fast.negative, 2);
        assert_eq!(fast, dense);
    }

    #[test]
    fn regularized_block_is_positive() {
        let m = PotentialModel::double_well_1d();
        let r = minimize_fixed_t(
            &m,
            0.3,
            4.0,
            &pt(-1.0),
            &pt(1.0),
            &SolveConfig::new(100, 5.0),
        )
        .unwrap();
        let r0 = crate::action::r0_select(&r.path, &m);
        let h = action_hessian(&r.path, &m, r0);
        assert_eq!(h.a.count_below(0.0), 0);
        assert_eq!(h.bordered().count_below(0.0), 0);
    }

    #[test]
    fn quadratic_free_t_minimizer() {
        let m = PotentialModel::quadratic(1);
        let cfg = SolveConfig::new(200, 2.0);
        let r = minimize_free_t(&m, 0.4, 0.0, &pt(1.0), &pt(2.0), &cfg).unwrap();
        assert!(!r.boundary_t);
        let fam = |s: f64| -> Result<PathState> {
            let cfg = SolveConfig::new(200, 2.0).with_initial(r.path.clone());
            Ok(minimize_free_t(&m, s, 0.0, &pt(1.0), &pt(2.0), &cfg)?.path)
        };
        let rep = correction_index(&r.path, &m, Some(&fam), &IndexConfig::default()).unwrap();
        assert_eq!((rep.m_fixed, rep.m_free, rep.n_correction), (0, 0, 0));
        // T grows with σ on this branch and the noise action is -T
        assert_eq!(rep.case, CaseLabel::ANegative);
        assert!(!rep.mismatch());
        assert!(rep.a_matches_correction());
    }

    #[test]
    fn constant_family_has_zero_a() {
        let m = PotentialModel::quadratic(1);
        let p = PathState::straight_line(&pt(0.0), &pt(0.0), 20, 1.0, 0.3, 0.0).unwrap();
        let fam = |s: f64| -> Result<PathState> { Ok(p.with_sigma(s)) };
        let a = a_sigma(&fam, &m, 0.3, 1e-3).unwrap();
        assert_eq!(a.value, 0.0);
    }

    #[test]
    fn classification_bands() {
        let cfg = IndexConfig::default();
        assert_eq!(
            classify(Some(0.1), 1.0, 0.0, 1.0, &cfg),
            CaseLabel::APositive
        );
        assert_eq!(
            classify(Some(-0.1), 1.0, 0.0, 1.0, &cfg),
            CaseLabel::ANegative
        );
        assert_eq!(
            classify(Some(1e-9), 1.0, 1.0, 1.0, &cfg),
            CaseLabel::AZeroDl2Nonzero
        );
        assert_eq!(
            classify(Some(1e-9), 1.0, 1e-12, 1.0, &cfg),
            CaseLabel::Degenerate
        );
        assert_eq!(classify(None, 1.0, 1.0, 1.0, &cfg), CaseLabel::AUnavailable);
        for c in ["a-positive", "fixed-T", "boundary-T", "degenerate"] {
            assert_eq!(CaseLabel::parse(c).unwrap().as_str(), c);
        }
    }
}
