//! Run configuration: one JSON document plus `MPTP_*` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bifurcation::{FamilyMode, FamilySetup};
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianConfig, Integrator};
use crate::index::IndexConfig;
use crate::potential::{PluginRegistry, PotentialModel, PotentialSpec};
use crate::solver::{MultiStart, SolveConfig};

pub const ENV_PREFIX: &str = "MPTP_";

/// σ as a single value or an inclusive uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Value(f64),
    Grid {
        start: f64,
        end: f64,
        samples: usize,
    },
}

impl SigmaSpec {
    pub fn grid(&self) -> Vec<f64> {
        match *self {
            SigmaSpec::Value(v) => vec![v],
            SigmaSpec::Grid {
                start,
                end,
                samples,
            } => {
                if samples <= 1 {
                    return vec![start];
                }
                (0..samples)
                    .map(|i| {
                        if i + 1 == samples {
                            end
                        } else {
                            start + (end - start) * i as f64 / (samples - 1) as f64
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn first(&self) -> f64 {
        self.grid()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_grad: f64,
    pub kernel_tol: f64,
    pub inertia_tol: f64,
    pub delta_sigma: f64,
    pub continuity_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_grad: 1e-10,
            kernel_tol: 1e-8,
            inertia_tol: 1e-10,
            delta_sigma: 1e-4,
            continuity_tol: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub t_min: f64,
    pub multi_start: usize,
    pub multi_start_amplitude: f64,
    pub integrator: Integrator,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 200,
            t_min: 1e-3,
            multi_start: 0,
            multi_start_amplitude: 0.25,
            integrator: Integrator::Gauss4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EmitFlags {
    pub paths: bool,
    pub sweep: bool,
    pub bifurcations: bool,
    pub branches: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            paths: true,
            sweep: true,
            bifurcations: true,
            branches: true,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub mode: FamilyMode,
    #[serde(default)]
    pub k: f64,
    pub sigma: SigmaSpec,
    /// Fixed duration in fixed-T mode, duration cap in free-T mode.
    pub tau: f64,
    #[serde(rename = "N")]
    pub intervals: usize,
    /// Propagation steps; defaults to `4N`.
    #[serde(rename = "M", default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Load and apply overrides from the process environment.
    pub fn load_with_env(path: &Path) -> Result<Self> {
        Self::load(path)?.with_overrides(&env_overrides())
    }

    /// Apply `(dotted.key, value)` overrides to the fully defaulted document.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = apply_overrides(self, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.potential.n;
        if self.x_minus.len() != n || self.x_plus.len() != n {
            return Err(Error::config(
                "xMinus/xPlus",
                format!("endpoints must have {n} coordinates"),
            ));
        }
        if self
            .x_minus
            .iter()
            .chain(&self.x_plus)
            .any(|v| !v.is_finite())
            || !self.k.is_finite()
        {
            return Err(Error::config("xMinus/xPlus", "non-finite value"));
        }
        if self.intervals < 2 {
            return Err(Error::config("N", "need at least 2 intervals"));
        }
        if self.steps == Some(0) {
            return Err(Error::config("M", "must be positive"));
        }
        if !(self.solver.t_min > 0.0) {
            return Err(Error::config("solver.tMin", "must be positive"));
        }
        if !(self.tau > self.solver.t_min) || !self.tau.is_finite() {
            return Err(Error::config(
                "tau",
                format!("τ = {} must exceed tMin = {}", self.tau, self.solver.t_min),
            ));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.tolGrad", t.tol_grad),
            ("tolerances.kernelTol", t.kernel_tol),
            ("tolerances.inertiaTol", t.inertia_tol),
            ("tolerances.deltaSigma", t.delta_sigma),
            ("tolerances.continuityTol", t.continuity_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        match self.sigma {
            SigmaSpec::Value(v) if !(v >= 0.0) || !v.is_finite() => {
                return Err(Error::config("sigma", "σ must be finite and non-negative"))
            }
            SigmaSpec::Grid {
                start,
                end,
                samples,
            } if samples == 0
                || !(start >= 0.0)
                || !end.is_finite()
                || (samples > 1 && !(end > start)) =>
            {
                return Err(Error::config(
                    "sigma",
                    "need 0 ≤ start < end and samples ≥ 1",
                ));
            }
            _ => {}
        }
        if self.solver.max_iter == 0 {
            return Err(Error::config("solver.maxIter", "must be positive"));
        }
        self.potential.search_box()?;
        Ok(())
    }

    pub fn model(&self, registry: &PluginRegistry) -> Result<PotentialModel> {
        self.potential.build(registry)
    }

    pub fn endpoints(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_vec(self.x_minus.clone()),
            DVector::from_vec(self.x_plus.clone()),
        )
    }

    pub fn solve_config(&self) -> SolveConfig {
        let mut s = SolveConfig::new(self.intervals, self.tau);
        s.tol_grad = self.tolerances.tol_grad;
        s.max_iter = self.solver.max_iter;
        s.t_min = self.solver.t_min;
        s.multi_start = MultiStart {
            count: self.solver.multi_start,
            amplitude: self.solver.multi_start_amplitude,
            seed: self.seed,
        };
        s
    }

    pub fn hamiltonian_config(&self) -> HamiltonianConfig {
        HamiltonianConfig {
            steps: self.steps,
            kernel_tol: self.tolerances.kernel_tol,
            integrator: self.solver.integrator,
            ..HamiltonianConfig::default()
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            inertia_tol: self.tolerances.inertia_tol,
            delta_sigma: self.tolerances.delta_sigma,
            ..IndexConfig::default()
        }
    }

    pub fn family_setup(&self, registry: &PluginRegistry) -> Result<FamilySetup> {
        let (xm, xp) = self.endpoints();
        let mut s = FamilySetup::new(
            self.model(registry)?,
            xm,
            xp,
            self.mode,
            self.solve_config(),
        );
        s.energy = self.k;
        s.index = self.index_config();
        s.hamiltonian = self.hamiltonian_config();
        s.continuity_tol = self.tolerances.continuity_tol;
        Ok(s)
    }
}

/// `MPTP_A__B=v` from the environment as `("A.B", "v")`.
pub fn env_overrides() -> BTreeMap<String, String> {
    std::env::vars()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.replace("__", "."), v))
        })
        .collect()
}

/// Apply `(dotted.key, value)` overrides to any serializable document. Keys match
/// field names ignoring case, `_` and `-`; values are parsed as JSON, falling back
/// to a plain string.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(
    value: &T,
    overrides: &BTreeMap<String, String>,
) -> Result<T> {
    if overrides.is_empty() {
        return serde_json::from_value(serde_json::to_value(value)?)
            .map_err(|e| Error::config("override", e.to_string()));
    }
    let mut doc = serde_json::to_value(value)?;
    for (key, raw) in overrides {
        apply_override(&mut doc, key, raw)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::config("override", e.to_string()))
}

pub(crate) fn normalize(key: &str) -> String {
    key.chars()
        .filter(|c| *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::config(key, "empty override key"));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not inside an object")))?;
        let wanted = normalize(part);
        let actual = obj
            .keys()
            .find(|k| normalize(k) == wanted)
            .cloned()
            .ok_or_else(|| Error::config(key, format!("unknown key `{part}`")))?;
        let slot = obj.get_mut(&actual).unwrap();
        if i + 1 == parts.len() {
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            return Ok(());
        }
        node = slot;
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DOUBLE_WELL: &str = r#"{
        "potential": {"kind": "double-well-1d", "n": 1, "box": [[-2, 2]]},
        "xMinus": [-1.0], "xPlus": [1.0],
        "mode": "fixed-T",
        "sigma": {"start": 0.05, "end": 0.5, "samples": 20},
        "tau": 4.0, "N": 200
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(DOUBLE_WELL).unwrap();
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.sigma.grid().len(), 20);
        assert_eq!(*c.sigma.grid().last().unwrap(), 0.5);
        assert_eq!(c.hamiltonian_config().steps, None);
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = DOUBLE_WELL.replace("\"tau\"", "\"tauu\": 1, \"tau\"");
        let e = RunConfig::from_json(&bad).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn tau_below_tmin_names_field() {
        let bad = DOUBLE_WELL.replace("\"tau\": 4.0", "\"tau\": 0.0001");
        match RunConfig::from_json(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "tau"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn overrides_match_loosely() {
        let c = RunConfig::from_json(DOUBLE_WELL).unwrap();
        let mut o = BTreeMap::new();
        o.insert("TOLERANCES.KERNEL_TOL".to_string(), "0.1".to_string());
        o.insert("n".to_string(), "100".to_string());
        o.insert("MODE".to_string(), "free-T".to_string());
        let c2 = c.with_overrides(&o).unwrap();
        assert_eq!(c2.tolerances.kernel_tol, 0.1);
        assert_eq!(c2.intervals, 100);
        assert_eq!(c2.mode, FamilyMode::FreeT);
        let mut bad = BTreeMap::new();
        bad.insert("tolerances.nope".to_string(), "1".to_string());
        assert!(c.with_overrides(&bad).unwrap_err().is_config());
        let mut neg = BTreeMap::new();
        neg.insert("tolerances.kernelTol".to_string(), "-1".to_string());
        assert!(c.with_overrides(&neg).unwrap_err().is_config());
    }
}
