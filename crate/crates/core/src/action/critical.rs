//! Critical energy levels: the sup of the effective potential over the search box,
//! and the least energy at which both endpoints can be joined.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{PotentialModel, SearchBox};

#[derive(Debug, Clone, PartialEq)]
pub struct ManeValue {
    pub value: f64,
    pub argmax: DVector<f64>,
    pub on_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum K0Method {
    #[serde(rename = "critical-endpoints")]
    CriticalEndpoints,
    #[serde(rename = "sublevel-connectivity")]
    SublevelConnectivity,
}

impl K0Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            K0Method::CriticalEndpoints => "critical-endpoints",
            K0Method::SublevelConnectivity => "sublevel-connectivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValues {
    pub c_u: f64,
    pub k0: f64,
    pub k0_method: K0Method,
    pub c_u_argmax: DVector<f64>,
    pub warnings: Vec<String>,
}

/// Uniform lattice over the box with cached effective-potential values.
struct Lattice {
    points_per_axis: usize,
    bx: SearchBox,
    values: Vec<f64>,
}

impl Lattice {
    fn new(model: &PotentialModel, sigma: f64, bx: &SearchBox) -> Self {
        let n = bx.dim();
        let g = ((2.0e5f64).powf(1.0 / n as f64).floor() as usize).clamp(5, 2001);
        let total = g.pow(n as u32);
        let mut lat = Lattice {
            points_per_axis: g,
            bx: bx.clone(),
            values: Vec::with_capacity(total),
        };
        for idx in 0..total {
            let x = lat.point(idx);
            lat.values.push(model.effective_value(sigma, &x));
        }
        lat
    }

    fn dim(&self) -> usize {
        self.bx.dim()
    }

    fn spacing(&self, axis: usize) -> f64 {
        (self.bx.hi[axis] - self.bx.lo[axis]) / (self.points_per_axis - 1) as f64
    }

    fn multi(&self, mut idx: usize) -> Vec<usize> {
        let g = self.points_per_axis;
        (0..self.dim())
            .map(|_| {
                let r = idx % g;
                idx /= g;
                r
            })
            .collect()
    }

    fn flat(&self, m: &[usize]) -> usize {
        m.iter()
            .rev()
            .fold(0, |acc, &v| acc * self.points_per_axis + v)
    }

    fn point(&self, idx: usize) -> DVector<f64> {
        let m = self.multi(idx);
        DVector::from_iterator(
            self.dim(),
            m.iter()
                .enumerate()
                .map(|(a, &v)| self.bx.lo[a] + v as f64 * self.spacing(a)),
        )
    }

    fn neighbours(&self, idx: usize) -> Vec<usize> {
        let m = self.multi(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            if m[a] > 0 {
                let mut q = m.clone();
                q[a] -= 1;
                out.push(self.flat(&q));
            }
            if m[a] + 1 < self.points_per_axis {
                let mut q = m.clone();
                q[a] += 1;
                out.push(self.flat(&q));
            }
        }
        out
    }

    /// Corners of the lattice cell containing `x`.
    fn cell_corners(&self, x: &DVector<f64>) -> Vec<usize> {
        let g = self.points_per_axis;
        let base: Vec<usize> = (0..self.dim())
            .map(|a| {
                let u = (x[a] - self.bx.lo[a]) / self.spacing(a);
                (u.floor().max(0.0) as usize).min(g - 2)
            })
            .collect();
        (0..(1usize << self.dim()))
            .map(|mask| {
                let m: Vec<usize> = base
                    .iter()
                    .enumerate()
                    .map(|(a, &b)| b + ((mask >> a) & 1))
                    .collect();
                self.flat(&m)
            })
            .collect()
    }
}

fn segment_below(
    model: &PotentialModel,
    sigma: f64,
    a: &DVector<f64>,
    b: &DVector<f64>,
    k: f64,
) -> bool {
    const SAMPLES: usize = 16;
    (0..=SAMPLES).all(|i| {
        let t = i as f64 / SAMPLES as f64;
        model.effective_value(sigma, &(a * (1.0 - t) + b * t)) <= k
    })
}

/// Projected ascent on `U(σ, ·)` inside the box: Newton where the Hessian is
/// negative definite, gradient steps otherwise.
fn ascend(
    model: &PotentialModel,
    sigma: f64,
    bx: &SearchBox,
    start: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let mut x = start.clone();
    let mut u = model.effective_value(sigma, &x);
    for _ in 0..200 {
        let e = model.effective(sigma, &x);
        // drop gradient components pushing out of the box
        let mut g = e.gradient.clone();
        for i in 0..x.len() {
            if (x[i] <= bx.lo[i] && g[i] < 0.0) || (x[i] >= bx.hi[i] && g[i] > 0.0) {
                g[i] = 0.0;
            }
        }
        if g.amax() <= 1e-13 * (1.0 + u.abs()) {
            break;
        }
        let step = match (-&e.hessian).cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone() / (1.0 + e.hessian.amax()),
        };
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut cand = &x + &step * alpha;
            bx.clamp(&mut cand);
            let uc = model.effective_value(sigma, &cand);
            if uc > u {
                x = cand;
                u = uc;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (x, u)
}

/// Maximum of `U(σ, ·)` over the box: coarse lattice, then ascent from the best
/// lattice local maxima.
pub fn mane_value(model: &PotentialModel, sigma: f64, bx: &SearchBox) -> Result<ManeValue> {
    if bx.dim() != model.dim() {
        return Err(Error::config(
            "potential.box",
            "box dimension does not match the potential",
        ));
    }
    let lat = Lattice::new(model, sigma, bx);
    let mut maxima: Vec<usize> = (0..lat.values.len())
        .filter(|&i| {
            lat.neighbours(i)
                .iter()
                .all(|&j| lat.values[j] <= lat.values[i])
        })
        .collect();
    maxima.sort_by(|&a, &b| lat.values[b].total_cmp(&lat.values[a]).then(a.cmp(&b)));
    maxima.truncate(16);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for idx in maxima {
        let (x, u) = ascend(model, sigma, bx, &lat.point(idx));
        if best.as_ref().is_none_or(|(_, bu)| u > *bu) {
            best = Some((x, u));
        }
    }
    let (argmax, value) = best.ok_or_else(|| Error::Domain("empty lattice".into()))?;
    if !value.is_finite() {
        return Err(Error::NonFinite("effective potential maximum".into()));
    }
    let on_boundary = bx.on_boundary(&argmax, 1e-9);
    if on_boundary {
        log::warn!("sup of the effective potential sits on the search box boundary; U may be unbounded above or the box too small");
    }
    Ok(ManeValue {
        value,
        argmax,
        on_boundary,
    })
}

/// Least energy level `k` at which the endpoints can be joined.
///
/// With both endpoints critical for `V`, this is `max U(x±)`. Otherwise it is the
/// least `k` for which `x-` and `x+` share a connected component of the sublevel set
/// `{U ≤ k}` in the box, found by bisection over `k` with lattice flood fill.
pub fn k0_value(
    model: &PotentialModel,
    sigma: f64,
    x_minus: &DVector<f64>,
    x_plus: &DVector<f64>,
    bx: &SearchBox,
) -> Result<CriticalValues> {
    if !bx.contains(x_minus) || !bx.contains(x_plus) {
        return Err(Error::config(
            "endpoints",
            "endpoints must lie inside the search box",
        ));
    }
    let mane = mane_value(model, sigma, bx)?;
    let u_minus = model.effective_value(sigma, x_minus);
    let u_plus = model.effective_value(sigma, x_plus);
    let lower = u_minus.max(u_plus);
    let mut warnings = Vec::new();
    if mane.on_boundary {
        warnings.push("effective potential maximum lies on the search box boundary".to_string());
    }
    let mut c_u = mane.value;
    let mut c_u_argmax = mane.argmax.clone();
    for (x, u) in [(x_minus, u_minus), (x_plus, u_plus)] {
        if u > c_u {
            c_u = u;
            c_u_argmax = x.clone();
        }
    }

    let critical =
        |x: &DVector<f64>| model.gradient(x).amax() <= 1e-9 * (1.0 + model.value(x).abs());
    if critical(x_minus) && critical(x_plus) {
        return Ok(CriticalValues {
            c_u,
            k0: lower,
            k0_method: K0Method::CriticalEndpoints,
            c_u_argmax,
            warnings,
        });
    }

    let lat = Lattice::new(model, sigma, bx);
    let connected = |k: f64| -> bool {
        if u_minus > k || u_plus > k {
            return false;
        }
        if segment_below(model, sigma, x_minus, x_plus, k)
            && (x_minus - x_plus).amax() <= lat.spacing(0)
        {
            return true;
        }
        let attach = |x: &DVector<f64>| -> Vec<usize> {
            lat.cell_corners(x)
                .into_iter()
                .filter(|&c| lat.values[c] <= k && segment_below(model, sigma, x, &lat.point(c), k))
                .collect()
        };
        let start = attach(x_minus);
        let goal = attach(x_plus);
        if start.is_empty() || goal.is_empty() {
            return false;
        }
        let mut seen = vec![false; lat.values.len()];
        let mut queue = VecDeque::new();
        for s in start {
            seen[s] = true;
            queue.push_back(s);
        }
        while let Some(i) = queue.pop_front() {
            for j in lat.neighbours(i) {
                if !seen[j] && lat.values[j] <= k {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        goal.iter().any(|&g| seen[g])
    };

    let k0 = if connected(lower) {
        lower
    } else {
        if !connected(c_u) {
            return Err(Error::config(
                "potential.box",
                "endpoints are not connected in the sublevel set at the sup level; the box is too small",
            ));
        }
        let (mut lo, mut hi) = (lower, c_u);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if connected(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(CriticalValues {
        c_u,
        k0,
        k0_method: K0Method::SublevelConnectivity,
        c_u_argmax,
        warnings,
    })
}
