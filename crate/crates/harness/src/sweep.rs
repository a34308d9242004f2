//! Parameter sweeps with a normalised summary table.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use bem_core::operators::{assemble_S, Medium};
use bem_core::spaces::build_rwg;
use bem_core::C64;
use serde::{Deserialize, Serialize};

use crate::config::{Cutoff, ScenarioConfig, Storage, SweepConfig, SweepTarget};
use crate::error::{HarnessError, Result};
use crate::run::run_scenario;

/// One grid point; `None` keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k_e: Option<f64>,
    pub variant: Option<String>,
    pub nu_p: Option<f64>,
    pub chi_p: Option<Cutoff>,
    pub q_p: Option<[usize; 4]>,
}

fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().cloned().map(Some).collect()
    }
}

/// Cartesian product of the non-empty lists (one point if all are empty).
pub fn expand(grid: &SweepConfig) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for k_e in axis(&grid.k_e) {
        for variant in axis(&grid.variant) {
            for nu_p in axis(&grid.nu_p) {
                for chi_p in axis(&grid.chi_p) {
                    for q_p in axis(&grid.q_p) {
                        out.push(SweepPoint { k_e, variant: variant.clone(), nu_p, chi_p, q_p });
                    }
                }
            }
        }
    }
    out
}

impl SweepPoint {
    pub fn apply(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.sweep = None;
        if let Some(k) = self.k_e {
            cfg.wave.k_e = Some(k);
            cfg.wave.frequency_ghz = None;
        }
        if let Some(v) = &self.variant {
            cfg.solver.variant = v.clone();
        }
        let p = &mut cfg.solver.preconditioner;
        if let Some(nu) = self.nu_p {
            p.nu = nu;
            p.storage = Storage::Hmatrix;
        }
        if let Some(chi) = self.chi_p {
            p.chi = chi;
            p.storage = Storage::Hmatrix;
        }
        if let Some(q) = self.q_p {
            p.quadrature = q;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub k_e: f64,
    pub variant: String,
    pub nu_p: f64,
    pub chi_p: Cutoff,
    pub q_p: [usize; 4],
    /// `ok`, `not_converged` or `error`.
    pub status: String,
    pub iterations: usize,
    pub matvecs: u64,
    pub predicted: u64,
    pub stored_a: usize,
    pub stored_p: usize,
    pub compression_a: f64,
    pub compression_p: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reference: usize,
}

fn blank_row(index: usize, cfg: &ScenarioConfig) -> SweepRow {
    let p = &cfg.solver.preconditioner;
    SweepRow {
        index,
        k_e: cfg.wave.wavenumber().unwrap_or(f64::NAN),
        variant: cfg.solver.variant.clone(),
        nu_p: p.nu,
        chi_p: p.chi,
        q_p: p.quadrature,
        status: "error".into(),
        iterations: 0,
        matvecs: 0,
        predicted: 0,
        stored_a: 0,
        stored_p: 0,
        compression_a: 0.0,
        compression_p: 0.0,
        seconds: 0.0,
        error: None,
    }
}

fn solve_point(index: usize, cfg: &ScenarioConfig, base: &Path, out: Option<&Path>) -> Result<SweepRow> {
    let outcome = run_scenario(cfg, base)?;
    let r = &outcome.report;
    if let Some(dir) = out {
        r.write(dir)?;
    }
    let mut row = blank_row(index, cfg);
    row.status = if r.converged { "ok" } else { "not_converged" }.into();
    row.iterations = r.iterations;
    row.matvecs = r.matvecs.instrumented;
    row.predicted = r.matvecs.predicted;
    if let Some(a) = r.memory_of("A") {
        row.stored_a = a.stored_entries;
        row.compression_a = a.compression_ratio;
    }
    if let Some(p) = r.memory_of("P") {
        row.stored_p = p.stored_entries;
        row.compression_p = p.compression_ratio;
    }
    row.seconds = r.total_seconds();
    Ok(row)
}

/// Assembles the electric operator of the whole geometry with the
/// preconditioner's parameters.
fn operator_point(index: usize, cfg: &ScenarioConfig, base: &Path, out: Option<&Path>) -> Result<SweepRow> {
    let params = cfg.solver.preconditioner.params()?;
    let k = cfg.wave.wavenumber()?;
    let mesh = Arc::new(cfg.build_mesh(base)?);
    let rwg = build_rwg(&mesh)?;
    let medium = Medium::new(C64::new(k, 0.0), cfg.material.exterior_mu.value())?;
    let start = Instant::now();
    let op = assemble_S(&rwg, &rwg, &medium, params.q, params.mode)?;
    let mut row = blank_row(index, cfg);
    row.status = "ok".into();
    row.seconds = start.elapsed().as_secs_f64();
    row.stored_p = op.stored_entries();
    row.compression_p = op.stored_entries() as f64 / (op.rows() * op.cols()) as f64;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("operator.json");
        let mut json = serde_json::to_value(&row).map_err(|e| HarnessError::config(e.to_string()))?;
        if let (Some(stats), Some(obj)) = (op.hmatrix_stats(), json.as_object_mut()) {
            obj.insert("dense_leaves".into(), stats.dense_leaves.into());
            obj.insert("low_rank_leaves".into(), stats.low_rank_leaves.into());
            obj.insert("zero_leaves".into(), stats.zero_leaves.into());
        }
        std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap_or_default())
            .map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(row)
}

/// Runs every grid point; failures are recorded and the sweep continues.
/// Per-point outputs go to `out/point_NNN/` when `out` is given.
pub fn run_sweep(config: &ScenarioConfig, base: &Path, out: Option<&Path>) -> Result<SweepResult> {
    let grid = config.sweep.clone().unwrap_or_default();
    let points = expand(&grid);
    if grid.reference >= points.len() {
        return Err(HarnessError::config(format!(
            "sweep.reference = {} but the grid has {} points",
            grid.reference,
            points.len()
        )));
    }
    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut cfg = point.apply(config);
        if grid.target == SweepTarget::SOperator {
            cfg.solver.preconditioner.storage = Storage::Hmatrix;
        }
        let dir = out.map(|o| o.join(format!("point_{i:03}")));
        let result = match grid.target {
            SweepTarget::Solve => solve_point(i, &cfg, base, dir.as_deref()),
            SweepTarget::SOperator => operator_point(i, &cfg, base, dir.as_deref()),
        };
        rows.push(result.unwrap_or_else(|e| {
            let mut row = blank_row(i, &cfg);
            row.error = Some(e.to_string());
            row
        }));
    }
    Ok(SweepResult { rows, reference: grid.reference })
}

fn normalised(value: f64, reference: f64) -> String {
    if reference == 0.0 || !reference.is_finite() {
        String::new()
    } else {
        format!("{:.6}", value / reference)
    }
}

pub const SUMMARY_HEADER: &str = "index,k_e,variant,nu_p,chi_p,q_p,status,iterations,matvecs,predicted,stored_a,stored_p,\
compression_a,compression_p,seconds,iterations_rel,matvecs_rel,stored_p_rel,seconds_rel,error";

impl SweepResult {
    pub fn summary_csv(&self) -> String {
        let r = &self.rows[self.reference];
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for row in &self.rows {
            let q = row.q_p.map(|v| v.to_string()).join(" ");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.3},{},{},{},{},{}\n",
                row.index,
                row.k_e,
                row.variant,
                row.nu_p,
                row.chi_p,
                q,
                row.status,
                row.iterations,
                row.matvecs,
                row.predicted,
                row.stored_a,
                row.stored_p,
                row.compression_a,
                row.compression_p,
                row.seconds,
                normalised(row.iterations as f64, r.iterations as f64),
                normalised(row.matvecs as f64, r.matvecs as f64),
                normalised(row.stored_p as f64, r.stored_p as f64),
                normalised(row.seconds, r.seconds),
                row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }

    pub fn write_summary(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("summary.csv");
        std::fs::write(&path, self.summary_csv()).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_is_the_reference_alone() {
        assert_eq!(expand(&SweepConfig::default()), vec![SweepPoint::default()]);
    }

    #[test]
    fn product_order_and_overrides() {
        let grid = SweepConfig {
            variant: vec!["D".into(), "Si".into()],
            chi_p: vec![Cutoff(f64::INFINITY), Cutoff(0.1), Cutoff(0.0)],
            ..Default::default()
        };
        let pts = expand(&grid);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].variant.as_deref(), Some("D"));
        assert_eq!(pts[1].chi_p, Some(Cutoff(0.1)));
        let cfg = pts[4].apply(&ScenarioConfig::three_cubes(2.1));
        assert_eq!(cfg.solver.variant, "Si");
        assert_eq!(cfg.solver.preconditioner.storage, Storage::Hmatrix);
        assert_eq!(cfg.solver.preconditioner.chi, Cutoff(0.1));
        assert_eq!(cfg.solver.operator.storage, Storage::Dense);
    }

    #[test]
    fn failures_are_recorded() {
        let mut cfg = ScenarioConfig::three_cubes(2.1);
        cfg.sweep = Some(SweepConfig { variant: vec!["nonsense".into()], ..Default::default() });
        let res = run_sweep(&cfg, Path::new("."), None).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].status, "error");
        assert!(res.rows[0].error.as_deref().unwrap().contains("nonsense"));
        let csv = res.summary_csv();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn reference_out_of_range() {
        let mut cfg = ScenarioConfig::three_cubes(2.1);
        cfg.sweep = Some(SweepConfig { reference: 3, ..Default::default() });
        assert!(matches!(run_sweep(&cfg, Path::new("."), None), Err(HarnessError::Config(_))));
    }
}
