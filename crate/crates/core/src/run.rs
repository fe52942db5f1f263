//! `solve` and `sweep` drivers: compute everything, then write all artifacts
//! and the manifest from one place.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{action_value, k0_value, noise_action, om_value, path_energy, PathState};
use crate::bifurcation::{
    classify_stability, continue_family, crossing_curve, detect_bifurcations, spectral_flow_sigma,
    BifurcationPoint, BifurcationRecord, FamilyMode, FamilySetup, ScanOrder, SpectralFlowSigma,
    Verdict,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hamiltonian::{coefficients_from_path, locate_crossing_near, spectral_flow_s};
use crate::index::IndexReport;
use crate::io::{branch_csv, path_csv, sweep_csv, sweep_rows, to_json, write_text};
use crate::potential::PluginRegistry;
use crate::solver::check_energy_identity;

pub const TOOL_VERSION: &str = concat!("mptp ", env!("CARGO_PKG_VERSION"));

/// Two detection orders may disagree by this much in σ* before a diagnostic.
const ORDER_AGREEMENT: f64 = 1e-5;
/// Branch window as a fraction of the σ range.
const BRANCH_WINDOW_REL: f64 = 0.02;
/// Search radius in s for the conjugate instant behind a fixed-duration kernel.
const CROSSING_SEARCH: f64 = 0.02;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the resolved configuration, independent of the output directory.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output = PathBuf::new();
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CriticalRecord {
    pub sigma: f64,
    pub k0: f64,
    pub k0_method: String,
    pub c_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Wall-clock seconds per stage; the only non-reproducible field.
    pub stages: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
    pub critical_values: Vec<CriticalRecord>,
    pub spectral_flow: Option<SpectralFlowSigma>,
    pub diagnostics: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// The manifest with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> RunManifest {
        let mut m = self.clone();
        for s in &mut m.stages {
            s.seconds = 0.0;
        }
        m
    }
}

struct Recorder {
    stages: Vec<StageTiming>,
    files: Vec<(String, String)>,
    diagnostics: Vec<String>,
    warnings: Vec<String>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            stages: Vec::new(),
            files: Vec::new(),
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            name: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    fn file(&mut self, rel: impl Into<String>, text: String) {
        self.files.push((rel.into(), text));
    }

    fn finish(
        mut self,
        command: &str,
        cfg: &RunConfig,
        critical_values: Vec<CriticalRecord>,
        spectral_flow: Option<SpectralFlowSigma>,
    ) -> Result<RunManifest> {
        let dir = cfg.output.clone();
        let t0 = Instant::now();
        let mut files = Vec::new();
        for (rel, text) in &self.files {
            write_text(&dir.join(rel), text)?;
            files.push(FileEntry {
                path: rel.clone(),
                bytes: text.len(),
                sha256: sha256_hex(text.as_bytes()),
            });
        }
        self.stages.push(StageTiming {
            name: "write".into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        let manifest = RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash(cfg)?,
            config: cfg.clone(),
            stages: self.stages,
            files,
            critical_values,
            spectral_flow,
            diagnostics: self.diagnostics,
            warnings: self.warnings,
        };
        write_text(&dir.join("manifest.json"), &to_json(&manifest)?)?;
        Ok(manifest)
    }
}

fn critical_values(
    cfg: &RunConfig,
    setup: &FamilySetup,
    sigmas: &[f64],
    rec: &mut Recorder,
) -> Result<Vec<CriticalRecord>> {
    let bx = cfg.potential.search_box()?;
    let mut out = Vec::new();
    for &sigma in sigmas {
        let cv = k0_value(&setup.model, sigma, &setup.x_minus, &setup.x_plus, &bx)?;
        rec.warnings
            .extend(cv.warnings.iter().map(|w| format!("σ = {sigma}: {w}")));
        if cfg.mode == FamilyMode::FreeT && cfg.k < cv.k0 {
            rec.warnings.push(format!(
                "σ = {sigma}: energy k = {} is below k0 = {}; no connection at this energy is expected",
                cfg.k, cv.k0
            ));
        }
        out.push(CriticalRecord {
            sigma,
            k0: cv.k0,
            k0_method: cv.k0_method.as_str().to_string(),
            c_u: cv.c_u,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnergySummary {
    pub mean: f64,
    pub dev: f64,
    pub min: f64,
    pub max: f64,
    pub identity_holds: bool,
    pub check: String,
}

/// JSON companion of a solved path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathHeader {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub k: f64,
    #[serde(rename = "N")]
    pub intervals: usize,
    pub dim: usize,
    pub mode: FamilyMode,
    pub boundary_t: bool,
    pub residual: f64,
    pub iterations: usize,
    pub action: f64,
    pub om_value: f64,
    pub noise_action: f64,
    pub energy: EnergySummary,
    pub indices: IndexReport,
    pub conjugate_count: usize,
    pub end_nullity: usize,
}

pub fn cmd_solve(cfg: &RunConfig, registry: &PluginRegistry) -> Result<RunManifest> {
    cfg.validate()?;
    let mut rec = Recorder::new();
    let setup = rec.stage("setup", || cfg.family_setup(registry))?;
    let grid = cfg.sigma.grid();
    if grid.len() > 1 {
        rec.warnings.push(format!(
            "solve uses the first σ of the grid, σ = {}",
            grid[0]
        ));
    }
    let sigma = grid[0];
    let mut cv_rec = Recorder::new();
    let cv = rec.stage("critical-values", || {
        critical_values(cfg, &setup, &[sigma], &mut cv_rec)
    })?;
    rec.warnings.append(&mut cv_rec.warnings);
    let res = rec.stage("solve", || setup.solve_at(sigma, None))?;
    let report = rec.stage("index", || setup.report(&res))?;
    let sf = rec.stage("conjugate-scan", || {
        spectral_flow_s(
            &coefficients_from_path(&res.path, &setup.model),
            &setup.hamiltonian,
        )
    })?;
    let path = res.path.with_energy_offset(cfg.k);
    let e = path_energy(&path, &setup.model);
    let check = check_energy_identity(&res, &setup.model, cfg.k);
    if !check.pass {
        rec.warnings
            .push(format!("energy identity: {}", check.message));
    }
    if report.mismatch() {
        rec.warnings.push(format!(
            "index difference {} disagrees with the {} prediction",
            report.n_correction,
            report.case.as_str()
        ));
    }
    let header = PathHeader {
        sigma,
        duration: path.duration(),
        k: cfg.k,
        intervals: path.intervals(),
        dim: path.dim(),
        mode: cfg.mode,
        boundary_t: res.boundary_t,
        residual: res.residual,
        iterations: res.iterations,
        action: action_value(&path, &setup.model),
        om_value: om_value(&path, &setup.model),
        noise_action: noise_action(&path, &setup.model),
        energy: EnergySummary {
            mean: e.mean,
            dev: e.dev,
            min: e.samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: e.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            identity_holds: check.pass,
            check: check.message,
        },
        indices: report,
        conjugate_count: sf.interior.iter().map(|c| c.kernel_dim).sum(),
        end_nullity: sf.end_nullity(),
    };
    rec.file("path.csv", path_csv(&path)?);
    rec.file("path.json", to_json(&header)?);
    rec.finish("solve", cfg, cv, None)
}

fn at_cap(path: &PathState, tau: f64) -> bool {
    tau - path.duration() <= 1e-9 * tau
}

/// Stability verdict at a bifurcation: the minimizing side of the bracket.
fn verdict_for(
    setup: &FamilySetup,
    p: &BifurcationPoint,
    span: f64,
    rec: &mut Recorder,
) -> Option<Verdict> {
    let tau = setup.tau();
    let mut last_err = None;
    for path in [&p.path_before, &p.path_after] {
        let boundary = setup.mode == FamilyMode::FreeT && at_cap(path, tau);
        match classify_stability(setup, path, boundary, span) {
            Ok(r) => {
                rec.diagnostics.extend(
                    r.notes
                        .iter()
                        .map(|n| format!("σ* = {}: {n}", p.sigma_star)),
                );
                return Some(r.verdict);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if let Some(e) = last_err {
        rec.diagnostics
            .push(format!("σ* = {}: no verdict ({e})", p.sigma_star));
    }
    None
}

pub fn cmd_sweep(cfg: &RunConfig, registry: &PluginRegistry) -> Result<RunManifest> {
    cfg.validate()?;
    let mut rec = Recorder::new();
    let setup = rec.stage("setup", || cfg.family_setup(registry))?;
    let grid = cfg.sigma.grid();
    let ends = if grid.len() > 1 {
        vec![grid[0], *grid.last().unwrap()]
    } else {
        vec![grid[0]]
    };
    let mut cv_rec = Recorder::new();
    let cv = rec.stage("critical-values", || {
        critical_values(cfg, &setup, &ends, &mut cv_rec)
    })?;
    rec.warnings.append(&mut cv_rec.warnings);

    let family = rec.stage("continuation", || continue_family(&setup, &grid, None))?;
    if let Some(t) = &family.meta.truncated {
        rec.diagnostics.push(format!("family truncated: {t}"));
    }
    for s in family.samples.iter().filter(|s| s.report.mismatch()) {
        rec.warnings.push(format!(
            "σ = {}: index difference {} disagrees with the {} prediction",
            s.sigma,
            s.report.n_correction,
            s.report.case.as_str()
        ));
    }

    let sf = rec.stage("spectral-flow", || spectral_flow_sigma(&family));
    let sf = match sf {
        Ok(sf) => {
            rec.diagnostics.extend(sf.warnings.iter().cloned());
            if !sf.consistent() {
                rec.warnings
                    .push("spectral-flow identities violated".into());
            }
            Some(sf)
        }
        Err(e) => {
            rec.diagnostics
                .push(format!("spectral flow unavailable: {e}"));
            None
        }
    };

    let (up, down) = rec.stage("detection", || -> Result<_> {
        Ok((
            detect_bifurcations(&setup, &family, ScanOrder::Ascending)?,
            detect_bifurcations(&setup, &family, ScanOrder::Descending)?,
        ))
    })?;
    if up.len() != down.len() {
        rec.diagnostics.push(format!(
            "ascending scan found {} bifurcations, descending {}",
            up.len(),
            down.len()
        ));
    } else {
        for (a, b) in up.iter().zip(&down) {
            if (a.sigma_star - b.sigma_star).abs() > ORDER_AGREEMENT {
                rec.diagnostics.push(format!(
                    "σ* differs between scan orders: {} vs {}",
                    a.sigma_star, b.sigma_star
                ));
            }
        }
    }
    for p in up.iter().filter(|p| p.unresolved) {
        rec.diagnostics.push(format!(
            "unresolved index cluster near σ = {}",
            p.sigma_star
        ));
    }

    let (lo, hi) = family.sigma_range();
    let span = (hi - lo).max(f64::EPSILON);
    let mut notes = Recorder::new();
    let verdicts: Vec<Option<Verdict>> = rec.stage("stability", || {
        up.iter()
            .map(|p| verdict_for(&setup, p, span, &mut notes))
            .collect()
    });
    rec.diagnostics.append(&mut notes.diagnostics);

    let mut branches = Vec::new();
    if cfg.emit.branches {
        let window = BRANCH_WINDOW_REL * span;
        let curves = rec.stage("branches", || {
            up.iter()
                .map(|p| {
                    let fixed_duration = setup.mode == FamilyMode::FixedT || at_cap(&p.path_before, setup.tau());
                    if !fixed_duration {
                        return Err(format!(
                            "σ* = {}: branch not tracked; the index change is in the free-duration index",
                            p.sigma_star
                        ));
                    }
                    if p.kernel_dim != 1 {
                        return Err(format!("σ* = {}: branch not tracked for kernel dimension {}", p.sigma_star, p.kernel_dim));
                    }
                    let not_tracked = |e: Error| format!("σ* = {}: branch not tracked ({e})", p.sigma_star);
                    // the discrete kernel sits O(1/N²) away from the continuous crossing at s = 1
                    let coeffs = coefficients_from_path(&p.path_before, &setup.model);
                    let s_star = locate_crossing_near(&coeffs, 1.0, CROSSING_SEARCH, &setup.hamiltonian)
                        .map_err(not_tracked)?
                        .ok_or_else(|| format!("σ* = {}: no conjugate instant near s = 1", p.sigma_star))?;
                    let fam = setup.sigma_coefficients(&p.path_before);
                    crossing_curve(&fam, p.path_before.sigma(), s_star, window, 2, &setup.hamiltonian).map_err(not_tracked)
                })
                .collect::<Vec<_>>()
        });
        for c in curves {
            match c {
                Ok(c) => {
                    if !c.slopes_agree(0.1) {
                        rec.warnings.push(format!(
                            "σ* = {}: slope ratio {} and secant {} differ by more than 10%",
                            c.sigma_star, c.slope_ratio, c.slope_secant
                        ));
                    }
                    branches.push(c);
                }
                Err(msg) => rec.diagnostics.push(msg),
            }
        }
    }

    if cfg.emit.sweep {
        rec.file("sweep.csv", sweep_csv(&sweep_rows(&family.samples))?);
    }
    if cfg.emit.bifurcations {
        let records: Vec<BifurcationRecord> = up
            .iter()
            .zip(&verdicts)
            .map(|(p, v)| BifurcationRecord {
                sigma_star: p.sigma_star,
                kernel_dim: p.kernel_dim,
                sign: p.sign,
                mode: p.mode,
                verdict: *v,
            })
            .collect();
        rec.file("bifurcations.json", to_json(&records)?);
    }
    for (i, c) in branches.iter().enumerate() {
        rec.file(format!("branch_{i:02}.csv"), branch_csv(&c.points)?);
    }
    if cfg.emit.paths {
        for (i, s) in family.samples.iter().enumerate() {
            rec.file(
                format!("paths/sample_{i:03}.csv"),
                path_csv(&s.path.with_energy_offset(cfg.k))?,
            );
        }
    }
    rec.finish("sweep", cfg, cv, sf)
}

/// Read a manifest back from an output directory.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        dir.join("manifest.json"),
    )?)?)
}
