//! Scalar potentials `V`, their derivatives, and the noise-dependent effective
//! potential `U(σ, x) = σ ΔV(x) - ½ |∇V(x)|²`.
//!
//! Polynomial and builtin potentials are differentiated symbolically. Plugins only
//! supply `V`, `∇V` and `Hess V`; the higher contractions are filled in by central
//! differences of the supplied Hessian.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomial::{Monomial, Polynomial};

pub const DEFAULT_MAX_DEGREE: u32 = 8;

/// User-supplied potential. Only value, gradient and Hessian are required.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    #[serde(rename = "quadratic")]
    Quadratic,
    #[serde(rename = "double-well-1d")]
    DoubleWell1d,
    #[serde(rename = "double-well-nd")]
    DoubleWellNd,
    #[serde(rename = "polynomial")]
    Polynomial,
    #[serde(rename = "user-plugin")]
    UserPlugin,
}

/// Everything `eval_potential` returns.
#[derive(Debug, Clone)]
pub struct PotentialDerivs {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub laplacian: f64,
    pub grad_laplacian: DVector<f64>,
    pub hess_laplacian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EffectivePotentialEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

struct PolyTables {
    v: Polynomial,
    grad: Vec<Polynomial>,
    // hess[i][j] for all i, j (symmetric copies share nothing, cheap at small n)
    hess: Vec<Vec<Polynomial>>,
    // third[i][j][k] = d^3 V / dx_i dx_j dx_k
    third: Vec<Vec<Vec<Polynomial>>>,
    lap: Polynomial,
    grad_lap: Vec<Polynomial>,
    hess_lap: Vec<Vec<Polynomial>>,
}

impl PolyTables {
    fn new(v: Polynomial) -> Self {
        let n = v.dim();
        let grad: Vec<Polynomial> = (0..n).map(|i| v.derivative(i)).collect();
        let hess: Vec<Vec<Polynomial>> = (0..n)
            .map(|i| (0..n).map(|j| grad[i].derivative(j)).collect())
            .collect();
        let third = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| hess[i][j].derivative(k)).collect())
                    .collect()
            })
            .collect();
        let lap = (0..n).fold(Polynomial::zero(n), |acc, i| acc.add(&hess[i][i]));
        let grad_lap: Vec<Polynomial> = (0..n).map(|i| lap.derivative(i)).collect();
        let hess_lap = (0..n)
            .map(|i| (0..n).map(|j| grad_lap[i].derivative(j)).collect())
            .collect();
        PolyTables {
            v,
            grad,
            hess,
            third,
            lap,
            grad_lap,
            hess_lap,
        }
    }
}

#[derive(Clone)]
enum Backend {
    Exact(Arc<PolyTables>),
    Plugin(Arc<dyn Potential>),
}

/// Immutable potential evaluator; cheap to clone.
#[derive(Clone)]
pub struct PotentialModel {
    dim: usize,
    kind: PotentialKind,
    backend: Backend,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialModel")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .finish()
    }
}

fn mono(coef: f64, pow: Vec<u32>) -> Monomial {
    Monomial { coef, pow }
}

fn unit_pow(n: usize, axis: usize, e: u32) -> Vec<u32> {
    let mut p = vec![0; n];
    p[axis] = e;
    p
}

impl PotentialModel {
    /// `V = ½ Σ κ_i x_i²`, with unit stiffness by default.
    pub fn quadratic(n: usize) -> Self {
        Self::quadratic_with(&vec![1.0; n]).expect("unit stiffness is valid")
    }

    pub fn quadratic_with(stiffness: &[f64]) -> Result<Self> {
        let n = stiffness.len();
        if n == 0 {
            return Err(Error::config("potential.n", "dimension must be positive"));
        }
        let terms = stiffness
            .iter()
            .enumerate()
            .map(|(i, &k)| mono(0.5 * k, unit_pow(n, i, 2)))
            .collect();
        Ok(Self::exact(
            PotentialKind::Quadratic,
            Polynomial::new(n, terms),
        ))
    }

    /// `V = (x² - 1)² / 4`.
    pub fn double_well_1d() -> Self {
        let terms = vec![
            mono(0.25, vec![4]),
            mono(-0.5, vec![2]),
            mono(0.25, vec![0]),
        ];
        Self::exact(PotentialKind::DoubleWell1d, Polynomial::new(1, terms))
    }

    /// `V = (x_1² - 1)² / 4 + ½ Σ_{i≥2} κ_i x_i²`; minima at `(±1, 0, ..., 0)`.
    pub fn double_well_nd(transverse: &[f64]) -> Self {
        let n = transverse.len() + 1;
        let mut terms = vec![
            mono(0.25, unit_pow(n, 0, 4)),
            mono(-0.5, unit_pow(n, 0, 2)),
            mono(0.25, vec![0; n]),
        ];
        for (i, &k) in transverse.iter().enumerate() {
            terms.push(mono(0.5 * k, unit_pow(n, i + 1, 2)));
        }
        Self::exact(PotentialKind::DoubleWellNd, Polynomial::new(n, terms))
    }

    pub fn polynomial(poly: Polynomial, max_degree: u32) -> Result<Self> {
        if poly.dim() == 0 {
            return Err(Error::config("potential.n", "dimension must be positive"));
        }
        if poly.degree() > max_degree {
            return Err(Error::config(
                "potential.coeffs",
                format!("degree {} exceeds the cap {}", poly.degree(), max_degree),
            ));
        }
        for t in poly.terms() {
            if !t.coef.is_finite() {
                return Err(Error::config("potential.coeffs", "non-finite coefficient"));
            }
        }
        Ok(Self::exact(PotentialKind::Polynomial, poly))
    }

    pub fn plugin(p: Arc<dyn Potential>) -> Self {
        PotentialModel {
            dim: p.dim(),
            kind: PotentialKind::UserPlugin,
            backend: Backend::Plugin(p),
        }
    }

    fn exact(kind: PotentialKind, poly: Polynomial) -> Self {
        PotentialModel {
            dim: poly.dim(),
            kind,
            backend: Backend::Exact(Arc::new(PolyTables::new(poly))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!(
                "point has dimension {}, potential has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite evaluation point".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.backend {
            Backend::Exact(t) => t.v.eval(x.as_slice()),
            Backend::Plugin(p) => p.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Exact(t) => {
                DVector::from_iterator(self.dim, t.grad.iter().map(|g| g.eval(x.as_slice())))
            }
            Backend::Plugin(p) => p.gradient(x),
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.backend {
            Backend::Exact(t) => eval_matrix(&t.hess, x),
            Backend::Plugin(p) => p.hessian(x),
        }
    }

    pub fn laplacian(&self, x: &DVector<f64>) -> f64 {
        match &self.backend {
            Backend::Exact(t) => t.lap.eval(x.as_slice()),
            Backend::Plugin(p) => p.hessian(x).trace(),
        }
    }

    pub fn grad_laplacian(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Exact(t) => {
                DVector::from_iterator(self.dim, t.grad_lap.iter().map(|g| g.eval(x.as_slice())))
            }
            Backend::Plugin(p) => fd_grad_laplacian(p.as_ref(), x),
        }
    }

    pub fn hess_laplacian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.backend {
            Backend::Exact(t) => eval_matrix(&t.hess_lap, x),
            Backend::Plugin(p) => fd_hess_laplacian(p.as_ref(), x),
        }
    }

    /// Third-derivative tensor contracted with `w` in its last slot.
    pub fn third_contract(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        match &self.backend {
            Backend::Exact(t) => {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let mut s = 0.0;
                        for k in 0..n {
                            if w[k] != 0.0 {
                                s += w[k] * t.third[i][j][k].eval(x.as_slice());
                            }
                        }
                        m[(i, j)] = s;
                        m[(j, i)] = s;
                    }
                }
                m
            }
            Backend::Plugin(p) => {
                let norm = w.norm();
                if norm == 0.0 {
                    return DMatrix::zeros(n, n);
                }
                let h = fd_step(x);
                let dir = w / norm;
                let hp = p.hessian(&(x + &dir * h));
                let hm = p.hessian(&(x - &dir * h));
                symmetrize((hp - hm) * (norm / (2.0 * h)))
            }
        }
    }

    pub fn eval_potential(&self, x: &DVector<f64>) -> Result<PotentialDerivs> {
        self.check(x)?;
        let hessian = self.hessian(x);
        Ok(PotentialDerivs {
            value: self.value(x),
            gradient: self.gradient(x),
            laplacian: hessian.trace(),
            hessian,
            grad_laplacian: self.grad_laplacian(x),
            hess_laplacian: self.hess_laplacian(x),
        })
    }

    pub fn eval_effective(&self, sigma: f64, x: &DVector<f64>) -> Result<EffectivePotentialEval> {
        self.check(x)?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "noise intensity must be finite and ≥ 0, got {sigma}"
            )));
        }
        let e = self.effective(sigma, x);
        if !e.value.is_finite() || e.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "effective potential at {:?}",
                x.as_slice()
            )));
        }
        Ok(e)
    }

    /// Unchecked effective potential with gradient and Hessian.
    pub(crate) fn effective(&self, sigma: f64, x: &DVector<f64>) -> EffectivePotentialEval {
        let g = self.gradient(x);
        let h = self.hessian(x);
        let value = sigma * h.trace() - 0.5 * g.norm_squared();
        let gradient = self.grad_laplacian(x) * sigma - &h * &g;
        let hessian = self.hess_laplacian(x) * sigma - &h * &h - self.third_contract(x, &g);
        EffectivePotentialEval {
            value,
            gradient,
            hessian: symmetrize(hessian),
        }
    }

    /// Unchecked effective potential value and gradient (no Hessian).
    pub(crate) fn effective_grad(&self, sigma: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let g = self.gradient(x);
        let h = self.hessian(x);
        let value = sigma * h.trace() - 0.5 * g.norm_squared();
        let gradient = self.grad_laplacian(x) * sigma - &h * &g;
        (value, gradient)
    }

    pub(crate) fn effective_value(&self, sigma: f64, x: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        sigma * self.laplacian(x) - 0.5 * g.norm_squared()
    }
}

pub fn eval_potential(model: &PotentialModel, x: &DVector<f64>) -> Result<PotentialDerivs> {
    model.eval_potential(x)
}

pub fn eval_effective(
    model: &PotentialModel,
    sigma: f64,
    x: &DVector<f64>,
) -> Result<EffectivePotentialEval> {
    model.eval_effective(sigma, x)
}

fn eval_matrix(table: &[Vec<Polynomial>], x: &DVector<f64>) -> DMatrix<f64> {
    let n = table.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = table[i][j].eval(x.as_slice());
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn fd_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

fn fd_grad_laplacian(p: &dyn Potential, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let h = fd_step(x);
    DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (p.hessian(&xp).trace() - p.hessian(&xm).trace()) / (2.0 * h)
        }),
    )
}

// Second differences of the Laplacian need a larger step than first differences to
// keep roundoff below truncation error.
fn fd_hess_laplacian(p: &dyn Potential, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let h = 1e-4 * (1.0 + x.norm());
    let lap = |dx: &[(usize, f64)]| {
        let mut y = x.clone();
        for &(i, d) in dx {
            y[i] += d;
        }
        p.hessian(&y).trace()
    };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                (lap(&[(i, h)]) - 2.0 * lap(&[]) + lap(&[(i, -h)])) / (h * h)
            } else {
                (lap(&[(i, h), (j, h)]) - lap(&[(i, h), (j, -h)]) - lap(&[(i, -h), (j, h)])
                    + lap(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Axis-aligned box used for every sup/connectivity computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "potential.box",
                "one [lo, hi] pair per axis is required",
            ));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(
                    "potential.box",
                    format!("invalid interval [{a}, {b}]"),
                ));
            }
        }
        Ok(SearchBox { lo, hi })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        SearchBox::new(vec![lo; n], vec![hi; n]).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i])
    }

    pub fn clamp(&self, x: &mut DVector<f64>) {
        for i in 0..self.dim() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// True if `x` lies within `rel` of a face, relative to the box width.
    pub fn on_boundary(&self, x: &DVector<f64>, rel: f64) -> bool {
        (0..self.dim()).any(|i| {
            let w = self.hi[i] - self.lo[i];
            (x[i] - self.lo[i]).abs() <= rel * w || (self.hi[i] - x[i]).abs() <= rel * w
        })
    }
}

/// Coefficient table of the config block. Builtins take per-axis stiffness scalars,
/// polynomials take monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeffs {
    Scalars(Vec<f64>),
    Terms(Vec<Monomial>),
}

impl Default for Coeffs {
    fn default() -> Self {
        Coeffs::Scalars(Vec::new())
    }
}

/// Potential block of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub n: usize,
    #[serde(default)]
    pub coeffs: Coeffs,
    #[serde(rename = "box")]
    pub search_box: Vec<[f64; 2]>,
    #[serde(default = "default_max_degree")]
    pub max_degree: u32,
    /// Registry name, for `user-plugin` only.
    #[serde(default)]
    pub plugin: Option<String>,
}

fn default_max_degree() -> u32 {
    DEFAULT_MAX_DEGREE
}

impl PotentialSpec {
    pub fn search_box(&self) -> Result<SearchBox> {
        if self.search_box.len() != self.n {
            return Err(Error::config(
                "potential.box",
                format!(
                    "expected {} intervals, got {}",
                    self.n,
                    self.search_box.len()
                ),
            ));
        }
        SearchBox::new(
            self.search_box.iter().map(|p| p[0]).collect(),
            self.search_box.iter().map(|p| p[1]).collect(),
        )
    }

    pub fn build(&self, registry: &PluginRegistry) -> Result<PotentialModel> {
        if self.n == 0 {
            return Err(Error::config("potential.n", "dimension must be positive"));
        }
        let scalars = |expected: usize, default: f64| -> Result<Vec<f64>> {
            match &self.coeffs {
                Coeffs::Scalars(v) if v.is_empty() => Ok(vec![default; expected]),
                Coeffs::Scalars(v) if v.len() == expected && v.iter().all(|c| c.is_finite()) => {
                    Ok(v.clone())
                }
                _ => Err(Error::config(
                    "potential.coeffs",
                    format!("expected {expected} finite stiffness values or an empty list"),
                )),
            }
        };
        match self.kind {
            PotentialKind::Quadratic => PotentialModel::quadratic_with(&scalars(self.n, 1.0)?),
            PotentialKind::DoubleWell1d => {
                if self.n != 1 {
                    return Err(Error::config(
                        "potential.n",
                        "double-well-1d requires n = 1",
                    ));
                }
                scalars(0, 1.0)?;
                Ok(PotentialModel::double_well_1d())
            }
            PotentialKind::DoubleWellNd => {
                Ok(PotentialModel::double_well_nd(&scalars(self.n - 1, 1.0)?))
            }
            PotentialKind::Polynomial => {
                let terms = match &self.coeffs {
                    Coeffs::Terms(t) => t.clone(),
                    Coeffs::Scalars(v) if v.is_empty() => Vec::new(),
                    Coeffs::Scalars(_) => {
                        return Err(Error::config(
                            "potential.coeffs",
                            "polynomial needs {coef, pow} terms",
                        ))
                    }
                };
                if let Some(t) = terms.iter().find(|t| t.pow.len() != self.n) {
                    return Err(Error::config(
                        "potential.coeffs",
                        format!("monomial power {:?} does not have length {}", t.pow, self.n),
                    ));
                }
                PotentialModel::polynomial(Polynomial::new(self.n, terms), self.max_degree)
            }
            PotentialKind::UserPlugin => {
                let name = self.plugin.as_deref().ok_or_else(|| {
                    Error::config("potential.plugin", "user-plugin requires a registry name")
                })?;
                let p = registry.get(name, self.n).ok_or_else(|| {
                    Error::config("potential.plugin", format!("no plugin named `{name}`"))
                })?;
                if p.dim() != self.n {
                    return Err(Error::config("potential.n", "plugin dimension mismatch"));
                }
                Ok(PotentialModel::plugin(p))
            }
        }
    }
}

type PluginFactory = Box<dyn Fn(usize) -> Arc<dyn Potential> + Send + Sync>;

/// Named plugin constructors, keyed by name and parametrized by dimension.
pub struct PluginRegistry {
    factories: BTreeMap<String, PluginFactory>,
}

impl Default for PluginRegistry {
    fn default() -> Self {
        let mut r = PluginRegistry {
            factories: BTreeMap::new(),
        };
        r.register("cosine-wells", |n| Arc::new(CosineWells { dim: n }));
        r
    }
}

impl PluginRegistry {
    pub fn empty() -> Self {
        PluginRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(usize) -> Arc<dyn Potential> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(f));
    }

    pub fn get(&self, name: &str, n: usize) -> Option<Arc<dyn Potential>> {
        self.factories.get(name).map(|f| f(n))
    }
}

/// `V(x) = Σ (1 + cos(π x_i))`; wells at odd integers. Non-polynomial example plugin.
#[derive(Debug, Clone)]
pub struct CosineWells {
    pub dim: usize,
}

impl Potential for CosineWells {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .map(|&v| 1.0 + (std::f64::consts::PI * v).cos())
            .sum()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let pi = std::f64::consts::PI;
        x.map(|v| -pi * (pi * v).sin())
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let pi = std::f64::consts::PI;
        DMatrix::from_diagonal(&x.map(|v| -pi * pi * (pi * v).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn quadratic_at_two() {
        let d = PotentialModel::quadratic(1)
            .eval_potential(&v1(2.0))
            .unwrap();
        assert_eq!(d.value, 2.0);
        assert_eq!(d.gradient[0], 2.0);
        assert_eq!(d.hessian[(0, 0)], 1.0);
        assert_eq!(d.grad_laplacian[0], 0.0);
        assert_eq!(d.hess_laplacian[(0, 0)], 0.0);
    }

    #[test]
    fn double_well_at_one() {
        let d = PotentialModel::double_well_1d()
            .eval_potential(&v1(1.0))
            .unwrap();
        assert_eq!(
            (
                d.value,
                d.gradient[0],
                d.hessian[(0, 0)],
                d.grad_laplacian[0],
                d.hess_laplacian[(0, 0)]
            ),
            (0.0, 0.0, 2.0, 6.0, 6.0)
        );
    }

    #[test]
    fn double_well_at_one_and_a_half() {
        let d = PotentialModel::double_well_1d()
            .eval_potential(&v1(1.5))
            .unwrap();
        assert!((d.value - 0.390625).abs() < 1e-15);
        assert!((d.gradient[0] - 1.875).abs() < 1e-15);
    }

    #[test]
    fn effective_examples() {
        let q = PotentialModel::quadratic(1)
            .eval_effective(0.5, &v1(1.0))
            .unwrap();
        assert_eq!(q.value, 0.0);
        assert_eq!(q.hessian[(0, 0)], -1.0);
        let dw = PotentialModel::double_well_1d();
        assert!((dw.eval_effective(0.2, &v1(1.0)).unwrap().value - 0.4).abs() < 1e-15);
        assert!((dw.eval_effective(0.2, &v1(1.5)).unwrap().value + 0.6078125).abs() < 1e-14);
        // R = -HessU = 2.8 at the well
        assert!((dw.eval_effective(0.2, &v1(1.0)).unwrap().hessian[(0, 0)] + 2.8).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let m = PotentialModel::quadratic(1);
        assert!(matches!(
            m.eval_potential(&v1(f64::NAN)),
            Err(Error::Domain(_))
        ));
        assert!(m.eval_effective(-1.0, &v1(0.0)).is_err());
        let p = Polynomial::new(
            1,
            vec![Monomial {
                coef: 1.0,
                pow: vec![10],
            }],
        );
        assert!(matches!(
            PotentialModel::polynomial(p, 8),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn plugin_matches_polynomial_contractions() {
        // The cosine plugin has closed-form higher derivatives to compare against.
        let m = PotentialModel::plugin(Arc::new(CosineWells { dim: 2 }));
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let pi = std::f64::consts::PI;
        let gl = m.grad_laplacian(&x);
        let hl = m.hess_laplacian(&x);
        for i in 0..2 {
            let exact_g = pi.powi(3) * (pi * x[i]).sin();
            let exact_h = pi.powi(4) * (pi * x[i]).cos();
            assert!((gl[i] - exact_g).abs() < 1e-6 * exact_g.abs().max(1.0));
            assert!((hl[(i, i)] - exact_h).abs() < 1e-5 * exact_h.abs().max(1.0));
        }
        assert!(hl[(0, 1)].abs() < 1e-5);
    }

    #[test]
    fn spec_block_parses_and_builds() {
        let js = r#"{"kind":"polynomial","n":2,"coeffs":[{"coef":1.0,"pow":[2,0]},{"coef":0.5,"pow":[0,2]}],"box":[[-2,2],[-2,2]]}"#;
        let spec: PotentialSpec = serde_json::from_str(js).unwrap();
        let m = spec.build(&PluginRegistry::default()).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.value(&DVector::from_vec(vec![1.0, 2.0])), 3.0);
        let bad = r#"{"kind":"quadratic","n":1,"box":[[-2,2]],"extra":1}"#;
        assert!(serde_json::from_str::<PotentialSpec>(bad).is_err());
    }
}
