//! Plain-text artifacts: path, sweep and branch CSVs plus JSON helpers.
//!
//! Floats in CSV are written with 17 significant digits so that every value
//! parses back to the same bits.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::action::PathState;
use crate::bifurcation::{BranchPoint, FamilySample};
use crate::error::{Error, Result};
use crate::index::{CaseLabel, IndexReport};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_opt_i(v: Option<i64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// `t, x_1, …, x_n` with `t = T·i/N`.
pub fn path_csv(path: &PathState) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    let n = path.intervals() as f64;
    for (i, x) in path.nodes().iter().enumerate() {
        // i/N is exactly 1 at the last node, so T survives the round trip
        let mut row = vec![fmt_f64(path.duration() * (i as f64 / n))];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Parsed path CSV: sample times and nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    pub times: Vec<f64>,
    pub nodes: Vec<DVector<f64>>,
}

impl PathTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("t") || headers.len() < 2 {
            return Err(Error::Parse(
                "path CSV must start with columns t, x_1".into(),
            ));
        }
        let mut times = Vec::new();
        let mut nodes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            times.push(vals[0]);
            nodes.push(DVector::from_vec(vals[1..].to_vec()));
        }
        Ok(PathTable { times, nodes })
    }

    /// Rebuild the path; the duration is the last sample time.
    pub fn to_path(&self, sigma: f64, energy_offset: f64) -> Result<PathState> {
        let duration = *self
            .times
            .last()
            .ok_or_else(|| Error::Parse("empty path CSV".into()))?;
        PathState::new(self.nodes.clone(), duration, sigma, energy_offset)
    }
}

/// One sweep CSV row: the index report plus running spectral-flow partials
/// measured from the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub action: f64,
    pub m_fixed: usize,
    pub m_free: usize,
    pub n: usize,
    pub a_sigma: Option<f64>,
    #[serde(rename = "dL2Norm")]
    pub dl2_norm: f64,
    pub case: CaseLabel,
    pub kernel_dim_fixed: usize,
    pub kernel_dim_free: usize,
    pub boundary_t: bool,
    pub conjugate_count: usize,
    pub sf_sigma: i64,
    pub sf_hamiltonian: i64,
    pub sf_a: Option<i64>,
}

const SWEEP_HEADER: [&str; 16] = [
    "sigma",
    "T",
    "action",
    "mFixed",
    "mFree",
    "n",
    "aSigma",
    "dL2Norm",
    "case",
    "kernelDimFixed",
    "kernelDimFree",
    "boundaryT",
    "conjugateCount",
    "sfSigma",
    "sfHamiltonian",
    "sfA",
];

impl SweepRow {
    pub fn report(&self) -> IndexReport {
        IndexReport {
            sigma: self.sigma,
            duration: self.duration,
            action: self.action,
            m_fixed: self.m_fixed,
            m_free: self.m_free,
            n_correction: self.n,
            a_sigma: self.a_sigma,
            dl2_norm: self.dl2_norm,
            kernel_dim_fixed: self.kernel_dim_fixed,
            kernel_dim_free: self.kernel_dim_free,
            case: self.case,
        }
    }
}

/// Rows for a family. The σ-flow partial follows the free index, the Hamiltonian
/// partial follows conjugate counts, and the correction partial is present when
/// `m⁺(a) = n` holds at both the first sample and this one.
pub fn sweep_rows(samples: &[FamilySample]) -> Vec<SweepRow> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let fixed_mode = samples.iter().all(|s| s.report.case == CaseLabel::FixedT);
    let applies = |s: &FamilySample| s.boundary_t || s.report.a_matches_correction();
    samples
        .iter()
        .map(|s| {
            let r = &s.report;
            let sf_a = if fixed_mode {
                Some(0)
            } else if applies(first) && applies(s) {
                Some(r.n_correction as i64 - first.report.n_correction as i64)
            } else {
                None
            };
            SweepRow {
                sigma: r.sigma,
                duration: r.duration,
                action: r.action,
                m_fixed: r.m_fixed,
                m_free: r.m_free,
                n: r.n_correction,
                a_sigma: r.a_sigma,
                dl2_norm: r.dl2_norm,
                case: r.case,
                kernel_dim_fixed: r.kernel_dim_fixed,
                kernel_dim_free: r.kernel_dim_free,
                boundary_t: s.boundary_t,
                conjugate_count: s.conjugate_count,
                sf_sigma: r.m_free as i64 - first.report.m_free as i64,
                sf_hamiltonian: s.conjugate_count as i64 - first.conjugate_count as i64,
                sf_a,
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.sigma),
            fmt_f64(r.duration),
            fmt_f64(r.action),
            r.m_fixed.to_string(),
            r.m_free.to_string(),
            r.n.to_string(),
            fmt_opt(r.a_sigma),
            fmt_f64(r.dl2_norm),
            r.case.as_str().to_string(),
            r.kernel_dim_fixed.to_string(),
            r.kernel_dim_free.to_string(),
            r.boundary_t.to_string(),
            r.conjugate_count.to_string(),
            r.sf_sigma.to_string(),
            r.sf_hamiltonian.to_string(),
            fmt_opt_i(r.sf_a),
        ])?;
    }
    finish(w)
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn branch_csv(points: &[BranchPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sigma", "s", "slope"])?;
    for p in points {
        w.write_record([fmt_f64(p.sigma), fmt_f64(p.s), fmt_f64(p.slope)])?;
    }
    finish(w)
}

pub fn parse_branch_csv(text: &str) -> Result<Vec<BranchPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_round_trip_is_exact() {
        let xm = DVector::from_vec(vec![-1.0, 0.1]);
        let xp = DVector::from_vec(vec![1.0 / 3.0, 2.0]);
        let p = PathState::straight_line(&xm, &xp, 7, std::f64::consts::PI, 0.3, 0.0).unwrap();
        let text = path_csv(&p).unwrap();
        assert!(text.starts_with("t,x_1,x_2\n"));
        let back = PathTable::parse(&text).unwrap().to_path(0.3, 0.0).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn sweep_row_round_trip() {
        let row = SweepRow {
            sigma: 0.1,
            duration: 2.0 / 3.0,
            action: -1e-300,
            m_fixed: 1,
            m_free: 2,
            n: 1,
            a_sigma: None,
            dl2_norm: 0.5,
            case: CaseLabel::AZeroDl2Nonzero,
            kernel_dim_fixed: 0,
            kernel_dim_free: 0,
            boundary_t: false,
            conjugate_count: 1,
            sf_sigma: -1,
            sf_hamiltonian: 0,
            sf_a: None,
        };
        let mut r2 = row.clone();
        r2.a_sigma = Some(-3.25e-7);
        r2.sf_a = Some(2);
        r2.case = CaseLabel::FixedT;
        let text = sweep_csv(&[row.clone(), r2.clone()]).unwrap();
        assert_eq!(parse_sweep_csv(&text).unwrap(), vec![row, r2]);
    }

    #[test]
    fn branch_round_trip() {
        let pts = vec![
            BranchPoint {
                sigma: 0.99,
                s: 0.402,
                slope: -0.4,
            },
            BranchPoint {
                sigma: 1.01,
                s: 0.398,
                slope: f64::MIN_POSITIVE,
            },
        ];
        assert_eq!(parse_branch_csv(&branch_csv(&pts).unwrap()).unwrap(), pts);
    }
}
