//! Versioned JSON run reports.

use std::path::{Path, PathBuf};

use bem_core::pmchwt::{PmchwtSolution, TransmissionProblem};
use bem_core::C64;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};

pub const REPORT_FORMAT: &str = "bem-run-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub label: String,
    pub seconds: f64,
    pub stored_entries: usize,
    pub dense_entries: usize,
    pub bytes: usize,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub name: String,
    pub operators: usize,
    pub stored_entries: usize,
    pub dense_entries: usize,
    pub bytes: usize,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatvecCheck {
    pub predicted: u64,
    pub instrumented: u64,
    pub matches: bool,
    /// Spent on the right-hand side, outside the solve-phase count.
    pub rhs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub config: ScenarioConfig,
    pub k_e: f64,
    pub mesh_size: f64,
    pub variant: String,
    pub scatterers: usize,
    pub dofs: usize,
    pub dofs_per_scatterer: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub map_applications: u64,
    pub matvecs: MatvecCheck,
    pub operator_assemblies: usize,
    pub preconditioner_assemblies: usize,
    pub timings: Vec<PhaseEntry>,
    pub memory: Vec<MemoryEntry>,
    pub operators: Vec<OperatorEntry>,
    pub residual_history: Vec<f64>,
    /// `[re, im]` per coefficient, Dirichlet block first for each scatterer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<Vec<[f64; 2]>>,
}

fn ratio(stored: usize, dense: usize) -> f64 {
    if dense == 0 {
        0.0
    } else {
        stored as f64 / dense as f64
    }
}

impl RunReport {
    pub fn new(config: &ScenarioConfig, problem: &TransmissionProblem, mesh_size: f64, sol: &PmchwtSolution) -> Self {
        let r = &sol.report;
        let instrumented = r.bio_matvecs.unwrap_or(0);
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config: config.clone(),
            k_e: problem.exterior().k.re,
            mesh_size,
            variant: sol.variant.name().into(),
            scatterers: sol.scatterers,
            dofs: sol.dofs,
            dofs_per_scatterer: (0..problem.num_scatterers()).map(|m| problem.dofs(m)).collect(),
            converged: r.converged,
            iterations: r.iterations,
            final_residual: r.final_residual(),
            map_applications: r.map_applications,
            matvecs: MatvecCheck {
                predicted: sol.predicted_matvecs,
                instrumented,
                matches: sol.matvec_identity_holds(),
                rhs: sol.rhs_matvecs,
            },
            operator_assemblies: sol.operator_assemblies,
            preconditioner_assemblies: sol.preconditioner_assemblies,
            timings: r.timings.iter().map(|t| PhaseEntry { phase: t.phase.clone(), seconds: t.seconds }).collect(),
            memory: r
                .memory
                .iter()
                .map(|m| MemoryEntry {
                    name: m.name.clone(),
                    operators: m.operators,
                    stored_entries: m.stored_entries,
                    dense_entries: m.dense_entries,
                    bytes: m.bytes(),
                    compression_ratio: m.compression_ratio(),
                })
                .collect(),
            operators: sol
                .operators
                .iter()
                .map(|o| OperatorEntry {
                    label: o.label.clone(),
                    seconds: o.seconds,
                    stored_entries: o.stored_entries,
                    dense_entries: o.dense_entries,
                    bytes: 16 * o.stored_entries,
                    compression_ratio: ratio(o.stored_entries, o.dense_entries),
                })
                .collect(),
            residual_history: r.history.clone(),
            solution: config.output.solution.then(|| r.solution.iter().map(|z| [z.re, z.im]).collect()),
        }
    }

    pub fn solution(&self) -> Option<Vec<C64>> {
        self.solution.as_ref().map(|s| s.iter().map(|[re, im]| C64::new(*re, *im)).collect())
    }

    pub fn memory_of(&self, name: &str) -> Option<&MemoryEntry> {
        self.memory.iter().find(|m| m.name == name)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }

    pub fn residual_csv(&self) -> String {
        let mut out = String::from("iteration,relative_residual\n");
        for (i, r) in self.residual_history.iter().enumerate() {
            out.push_str(&format!("{i},{r:e}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Report { path: PathBuf::new(), message: e.to_string() })
    }

    /// Parses a report, rejecting other formats and newer versions.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let err = |message: String| HarnessError::Report { path: path.to_path_buf(), message };
        let report: Self = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(err(format!("unknown format {:?}", report.format)));
        }
        if report.version > REPORT_VERSION {
            return Err(err(format!("version {} is newer than supported {REPORT_VERSION}", report.version)));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Writes `report.json` and `residuals.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()?).map_err(|e| HarnessError::io(&path, e))?;
        let csv = dir.join("residuals.csv");
        std::fs::write(&csv, self.residual_csv()).map_err(|e| HarnessError::io(&csv, e))?;
        Ok(path)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "variant {} | M = {} | N = {} | k_e = {} | h = {:.4}\n",
            self.variant, self.scatterers, self.dofs, self.k_e, self.mesh_size
        );
        s += &format!(
            "{} after {} iterations, residual {:.3e}\n",
            if self.converged { "converged" } else { "NOT converged" },
            self.iterations,
            self.final_residual
        );
        s += &format!(
            "matvecs: {} instrumented, {} predicted ({}), {} for the rhs\n",
            self.matvecs.instrumented,
            self.matvecs.predicted,
            if self.matvecs.matches { "match" } else { "MISMATCH" },
            self.matvecs.rhs
        );
        for m in &self.memory {
            s += &format!(
                "memory {}: {} operators, {} entries ({} bytes), compression {:.3}\n",
                m.name, m.operators, m.stored_entries, m.bytes, m.compression_ratio
            );
        }
        for t in &self.timings {
            s += &format!("time {}: {:.3} s\n", t.phase, t.seconds);
        }
        s
    }
}
