use std::path::Path;

use bem_core::pmchwt::{solve, PmchwtSolution, TransmissionProblem};

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};
use crate::report::RunReport;

pub struct Outcome {
    pub problem: TransmissionProblem,
    pub solution: PmchwtSolution,
    pub report: RunReport,
}

/// Builds the problem described by `config` (paths relative to `base`),
/// solves it and packages the report.
pub fn run_scenario(config: &ScenarioConfig, base: &Path) -> Result<Outcome> {
    let variant = config.solver.variant()?;
    let params = config.solver.params()?;
    let gmres = config.solver.gmres.params()?;
    let k = config.wave.wavenumber()?;
    let h = config.mesh.mesh_size(k)?;
    let problem = config.build_problem(base)?;
    let solution = solve(&problem, variant, &params, &gmres)?;
    let report = RunReport::new(config, &problem, h, &solution);
    if report.converged && !report.matvecs.matches {
        return Err(HarnessError::Report {
            path: config.output.dir.clone(),
            message: format!(
                "matvec accounting violated: {} instrumented vs {} predicted",
                report.matvecs.instrumented, report.matvecs.predicted
            ),
        });
    }
    Ok(Outcome { problem, solution, report })
}

/// 0 on convergence, 2 otherwise.
pub fn exit_code(report: &RunReport) -> u8 {
    if report.converged {
        0
    } else {
        2
    }
}
