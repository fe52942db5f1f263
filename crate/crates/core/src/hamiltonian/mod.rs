//! Linearized Hamiltonian (Jacobi/Sturm) system along a path.
//!
//! For Sturm coefficients `(P, Q, R)` and duration `T`, the rescaled system on
//! `[0, 1]` is `u' = J B_s(t) u` with `u = (y, ξ)`, `J = [[0, -I], [I, 0]]` and
//!
//! ```text
//! B_s(t) = s T [[P⁻¹, -P⁻¹Q], [-QᵀP⁻¹, QᵀP⁻¹Q - R]](s t)
//! ```
//!
//! Conjugate instants are the `s` where the lower-left block of the fundamental
//! solution is singular, i.e. where some solution starting with `ξ(0) = 0` returns
//! to `ξ = 0`.

mod propagate;
mod scan;

pub use propagate::{propagate, propagate_to, FundamentalSolution, Integrator};
pub use scan::{
    conjugate_scan, crossing_form_s, crossing_form_sigma, discretized_form, locate_crossing_near,
    spectral_flow_s, Crossing, CrossingForm, Endpoint, HamiltonianConfig, SigmaCoefficients,
    SpectralFlowS,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::action::PathState;
use crate::error::{Error, Result};
use crate::potential::PotentialModel;

#[derive(Clone, Debug)]
enum Source {
    Constant {
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
    Sampled {
        p: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
    },
    // P = I, Q = 0, R = -Hess U along the piecewise-linear path
    Path {
        path: PathState,
        model: PotentialModel,
    },
}

/// `(P, Q, R)` at one time.
pub type CoefficientTriple = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Coefficients `P(t), Q(t), R(t)` on `[0, 1]` together with the duration `T`.
#[derive(Clone, Debug)]
pub struct SturmCoefficients {
    dim: usize,
    duration: f64,
    source: Source,
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::config(what, format!("expected a {n}x{n} matrix")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(what, "non-finite entry"));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::config(what, "matrix must be symmetric"));
    }
    Ok(())
}

fn check_positive(p: &DMatrix<f64>) -> Result<()> {
    if p.clone().cholesky().is_none() {
        return Err(Error::config("P", "P must be positive definite"));
    }
    Ok(())
}

impl SturmCoefficients {
    pub fn constant(
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        duration: f64,
    ) -> Result<Self> {
        let n = p.nrows();
        check_square(&p, n, "P")?;
        check_square(&q, n, "Q")?;
        check_square(&r, n, "R")?;
        check_symmetric(&p, "P")?;
        check_symmetric(&r, "R")?;
        check_positive(&p)?;
        if !(duration > 0.0) {
            return Err(Error::config("T", "duration must be positive"));
        }
        Ok(SturmCoefficients {
            dim: n,
            duration,
            source: Source::Constant { p, q, r },
        })
    }

    /// Scalar fixture `P = 1, Q = 0, R = r`.
    pub fn scalar(r: f64, duration: f64) -> Result<Self> {
        Self::constant(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, r),
            duration,
        )
    }

    /// Tables sampled on a uniform grid of `[0, 1]`, linearly interpolated.
    pub fn sampled(
        p: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        duration: f64,
    ) -> Result<Self> {
        if p.len() < 2 || p.len() != q.len() || p.len() != r.len() {
            return Err(Error::config(
                "samples",
                "P, Q, R need the same number (≥ 2) of samples",
            ));
        }
        let n = p[0].nrows();
        for i in 0..p.len() {
            check_square(&p[i], n, "P")?;
            check_square(&q[i], n, "Q")?;
            check_square(&r[i], n, "R")?;
            check_symmetric(&p[i], "P")?;
            check_symmetric(&r[i], "R")?;
            check_positive(&p[i])?;
        }
        if !(duration > 0.0) {
            return Err(Error::config("T", "duration must be positive"));
        }
        Ok(SturmCoefficients {
            dim: n,
            duration,
            source: Source::Sampled { p, q, r },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Default propagation steps: `4N` for path-derived coefficients, 1600 otherwise.
    pub fn default_steps(&self) -> usize {
        match &self.source {
            Source::Path { path, .. } => 4 * path.intervals(),
            _ => 1600,
        }
    }

    /// True when `P = I` and `Q = 0` identically.
    pub fn is_standard(&self) -> bool {
        matches!(self.source, Source::Path { .. })
    }

    /// `(P, Q, R)` at `t`, clamped to `[0, 1]`.
    pub fn at(&self, t: f64) -> CoefficientTriple {
        let t = t.clamp(0.0, 1.0);
        match &self.source {
            Source::Constant { p, q, r } => (p.clone(), q.clone(), r.clone()),
            Source::Sampled { p, q, r } => {
                let m = p.len() - 1;
                let u = t * m as f64;
                let i = (u.floor() as usize).min(m - 1);
                let w = u - i as f64;
                let lerp = |v: &[DMatrix<f64>]| &v[i] * (1.0 - w) + &v[i + 1] * w;
                (lerp(p), lerp(q), lerp(r))
            }
            Source::Path { path, model } => {
                let n = self.dim;
                let x = path.position_at(t);
                let r = -model.effective(path.sigma(), &x).hessian;
                (DMatrix::identity(n, n), DMatrix::zeros(n, n), r)
            }
        }
    }

    pub fn r_at(&self, t: f64) -> DMatrix<f64> {
        match &self.source {
            Source::Path { path, model } => {
                -model
                    .effective(path.sigma(), &path.position_at(t.clamp(0.0, 1.0)))
                    .hessian
            }
            _ => self.at(t).2,
        }
    }

    /// Tables on `m + 1` uniform samples.
    pub fn samples(&self, m: usize) -> Vec<CoefficientTriple> {
        (0..=m).map(|j| self.at(j as f64 / m as f64)).collect()
    }

    pub fn to_fixture(&self, m: usize) -> FixtureFile {
        let table = |pick: &dyn Fn(&CoefficientTriple) -> DMatrix<f64>| -> Table {
            match &self.source {
                Source::Constant { p, q, r } => {
                    Table::Constant(to_rows(&pick(&(p.clone(), q.clone(), r.clone()))))
                }
                _ => Table::Samples(self.samples(m).iter().map(|s| to_rows(&pick(s))).collect()),
            }
        };
        FixtureFile {
            n: self.dim,
            duration: self.duration,
            p: table(&|s| s.0.clone()),
            q: table(&|s| s.1.clone()),
            r: table(&|s| s.2.clone()),
        }
    }
}

/// `P = I`, `Q = 0`, `R = -Hess U(σ, x(t))` along the linearly interpolated path.
pub fn coefficients_from_path(path: &PathState, model: &PotentialModel) -> SturmCoefficients {
    SturmCoefficients {
        dim: path.dim(),
        duration: path.duration(),
        source: Source::Path {
            path: path.clone(),
            model: model.clone(),
        },
    }
}

pub(crate) fn j_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

/// `B_s(t) = s T [[P⁻¹, -P⁻¹Q], [-QᵀP⁻¹, QᵀP⁻¹Q - R]](s t)`.
pub fn assemble_b(coeffs: &SturmCoefficients, s: f64, t: f64) -> DMatrix<f64> {
    let n = coeffs.dim;
    let scale = s * coeffs.duration;
    let mut b = DMatrix::zeros(2 * n, 2 * n);
    if coeffs.is_standard() {
        let r = coeffs.r_at(s * t);
        for i in 0..n {
            b[(i, i)] = scale;
        }
        b.view_mut((n, n), (n, n)).copy_from(&(-r * scale));
        return b;
    }
    let (p, q, r) = coeffs.at(s * t);
    let pinv = p
        .cholesky()
        .expect("P validated positive definite")
        .inverse();
    let pinv_q = &pinv * &q;
    b.view_mut((0, 0), (n, n)).copy_from(&(&pinv * scale));
    b.view_mut((0, n), (n, n)).copy_from(&(-&pinv_q * scale));
    b.view_mut((n, 0), (n, n))
        .copy_from(&(-pinv_q.transpose() * scale));
    let lower = q.transpose() * &pinv_q - r;
    b.view_mut((n, n), (n, n))
        .copy_from(&(((&lower + lower.transpose()) * 0.5) * scale));
    b
}

/// Coefficient path `B_s(t_j)` on `m + 1` uniform samples.
pub fn assemble_b_path(coeffs: &SturmCoefficients, s: f64, m: usize) -> Vec<DMatrix<f64>> {
    (0..=m)
        .map(|j| assemble_b(coeffs, s, j as f64 / m as f64))
        .collect()
}

/// Either a constant matrix or one matrix per uniform sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Constant(Vec<Vec<f64>>),
    Samples(Vec<Vec<Vec<f64>>>),
}

/// JSON fixture for direct `(P, Q, R, T)` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub n: usize,
    #[serde(rename = "T")]
    pub duration: f64,
    #[serde(rename = "P")]
    pub p: Table,
    #[serde(rename = "Q")]
    pub q: Table,
    #[serde(rename = "R")]
    pub r: Table,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(what, format!("expected a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl FixtureFile {
    pub fn build(&self) -> Result<SturmCoefficients> {
        let n = self.n;
        let len = |t: &Table| match t {
            Table::Constant(_) => None,
            Table::Samples(s) => Some(s.len()),
        };
        let lens: Vec<usize> = [&self.p, &self.q, &self.r]
            .iter()
            .filter_map(|t| len(t))
            .collect();
        if lens.is_empty() {
            let get = |t: &Table, w: &str| match t {
                Table::Constant(m) => from_rows(m, n, w),
                Table::Samples(_) => unreachable!(),
            };
            return SturmCoefficients::constant(
                get(&self.p, "P")?,
                get(&self.q, "Q")?,
                get(&self.r, "R")?,
                self.duration,
            );
        }
        let m = lens[0];
        if lens.iter().any(|&l| l != m) {
            return Err(Error::config(
                "samples",
                "sampled tables must have equal length",
            ));
        }
        let expand = |t: &Table, w: &str| -> Result<Vec<DMatrix<f64>>> {
            match t {
                Table::Constant(rows) => Ok(vec![from_rows(rows, n, w)?; m]),
                Table::Samples(s) => s.iter().map(|rows| from_rows(rows, n, w)).collect(),
            }
        };
        SturmCoefficients::sampled(
            expand(&self.p, "P")?,
            expand(&self.q, "Q")?,
            expand(&self.r, "R")?,
            self.duration,
        )
    }
}
