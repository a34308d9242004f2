//! Verification suites behind `bem verify`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use bem_core::geometry::{generate_cube, generate_sphere, Point3, SurfaceMesh};
use bem_core::hmatrix::HParams;
use bem_core::operators::{
    assemble_S, verify_calderon, AssemblyMode, CalderonCheck, GalerkinEvaluator, Medium, OperatorKind, OperatorStorage,
};
use bem_core::pmchwt::{predicted_matvecs, PreconditionerVariant, SyntheticSystem};
use bem_core::quadrature::{triangle_rule, PairClass, QuadOrders};
use bem_core::spaces::{assemble_mass, build_bc_with_refinement, build_rwg};
use bem_core::C64;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Calderon,
    Aca,
    Mass,
    Quadrature,
    Counts,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Calderon, Suite::Aca, Suite::Mass, Suite::Quadrature, Suite::Counts];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Calderon => "calderon",
            Suite::Aca => "aca",
            Suite::Mass => "mass",
            Suite::Quadrature => "quadrature",
            Suite::Counts => "counts",
        }
    }

    pub fn run(self) -> Result<VerifyReport> {
        match self {
            Suite::Calderon => calderon_suite(3),
            Suite::Aca => aca_suite(),
            Suite::Mass => mass_suite(),
            Suite::Quadrature => Ok(quadrature_suite()),
            Suite::Counts => counts_suite(&[1, 2, 3], &[0, 1, 6, 9, 250], &[1, 200]),
        }
    }
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::config(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub tolerance: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: impl fmt::Display, tolerance: impl fmt::Display, passed: bool) -> Self {
        Self { name: name.into(), measured: measured.to_string(), tolerance: tolerance.to_string(), passed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}: {} (tolerance {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance
            )?;
        }
        write!(f, "{}: {}", self.suite, if self.passed() { "passed" } else { "FAILED" })
    }
}

/// Smooth-sample Calderón residuals on the unit sphere at `k = 2` for
/// subdivisions `1..=max`.
pub fn calderon_study(max_subdivisions: usize) -> Result<Vec<(usize, usize, CalderonCheck)>> {
    let medium = Medium::real(2.0)?;
    (1..=max_subdivisions)
        .map(|s| {
            let mesh = Arc::new(generate_sphere(1.0, s)?);
            let dofs = mesh.num_edges();
            Ok((s, dofs, verify_calderon(&mesh, &medium, QuadOrders::default())?))
        })
        .collect()
}

pub fn calderon_suite(max_subdivisions: usize) -> Result<VerifyReport> {
    let study = calderon_study(max_subdivisions)?;
    let mut checks = Vec::new();
    for (s, dofs, c) in &study {
        checks.push(Check::new(
            format!("sphere subdivisions {s} ({dofs} dofs): r1 smooth [white noise {:.4}]", c.white_noise.r1),
            format!("{:.5}", c.smooth.r1),
            if *s == 2 { "<= 0.1" } else { "reported" },
            *s != 2 || c.smooth.r1 <= 0.1,
        ));
    }
    let r1: Vec<f64> = study.iter().map(|(_, _, c)| c.smooth.r1).collect();
    let decreasing = r1.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check::new("r1 strictly decreasing under refinement", format!("{r1:.5?}"), "strict", decreasing));
    Ok(VerifyReport { suite: "calderon".into(), checks })
}

/// The unit cube meshed at ten elements per wavelength for `k`.
pub fn unit_cube(k: f64) -> Result<SurfaceMesh> {
    Ok(generate_cube(1.0, Point3::new(0.0, 0.0, 0.0), 2.0 * std::f64::consts::PI / (10.0 * k))?)
}

/// True relative errors of up to `max_blocks` evenly spaced low-rank
/// blocks of the unit-cube electric operator at `k = 5`.
pub fn aca_block_errors(nu: f64, max_blocks: usize) -> Result<Vec<f64>> {
    let mesh = Arc::new(unit_cube(5.0)?);
    let rwg = build_rwg(&mesh)?;
    let medium = Medium::real(5.0)?;
    let q = QuadOrders::default();
    let params = HParams { nu, ..HParams::default() };
    let op = assemble_S(&rwg, &rwg, &medium, q, AssemblyMode::HMatrix(params))?;
    let OperatorStorage::HMatrix(h) = op.storage() else {
        return Err(HarnessError::config("expected hierarchical storage"));
    };
    let evaluator = GalerkinEvaluator::new(OperatorKind::S, &rwg, &rwg, &medium, q)?;
    let mut errors = h.low_rank_errors(&evaluator);
    if errors.len() > max_blocks {
        let stride = errors.len() as f64 / max_blocks as f64;
        errors = (0..max_blocks).map(|i| errors[(i as f64 * stride) as usize]).collect();
    }
    Ok(errors)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn aca_suite() -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for nu in [1e-3, 1e-1] {
        let errors = aca_block_errors(nu, 40)?;
        let med = median(&errors);
        let max = errors.iter().copied().fold(0.0, f64::max);
        checks.push(Check::new(format!("nu = {nu:e}: sampled low-rank blocks"), errors.len(), ">= 20", errors.len() >= 20));
        checks.push(Check::new(format!("nu = {nu:e}: median relative error"), format!("{med:.3e}"), format!("<= {nu:e}"), med <= nu));
        checks.push(Check::new(
            format!("nu = {nu:e}: max relative error"),
            format!("{max:.3e}"),
            format!("<= {:e}", 10.0 * nu),
            max <= 10.0 * nu,
        ));
    }
    Ok(VerifyReport { suite: "aca".into(), checks })
}

pub fn mass_suite() -> Result<VerifyReport> {
    let meshes = [
        ("sphere subdivisions 1", generate_sphere(1.0, 1)?),
        ("sphere subdivisions 2", generate_sphere(1.0, 2)?),
        ("cube h = 0.25", generate_cube(1.0, Point3::zeros(), 0.25)?),
    ];
    let mut checks = Vec::new();
    for (label, mesh) in meshes {
        let mesh = Arc::new(mesh);
        let rwg = build_rwg(&mesh)?;
        let bc = build_bc_with_refinement(&mesh)?;
        let mut m_a = assemble_mass(&rwg, &bc)?;
        let m_p = assemble_mass(&bc, &rwg)?;
        let (da, dp) = (m_a.to_dense(), m_p.to_dense());
        let asym = (&dp + da.transpose()).amax() / da.amax();
        checks.push(Check::new(format!("{label}: |M_P + M_A^T| / |M_A|"), format!("{asym:.2e}"), "<= 1e-12", asym <= 1e-12));
        let sv = da.singular_values();
        let cond = sv.max() / sv.min();
        checks.push(Check::new(format!("{label}: cond(M_A)"), format!("{cond:.2}"), "<= 100", cond <= 100.0));
        m_a.factorize()?;
        let n = da.nrows();
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let x = m_a.solve(&b)?;
        let ax = m_a.apply(&x)?;
        let res = ax.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
            / b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        checks.push(Check::new(format!("{label}: M_A solve residual"), format!("{res:.2e}"), "<= 1e-10", res <= 1e-10));
    }
    Ok(VerifyReport { suite: "mass".into(), checks })
}

pub fn quadrature_suite() -> VerifyReport {
    let mut checks = Vec::new();
    let q = QuadOrders::default();
    let regular = [(PairClass::Near, 36), (PairClass::Medium, 16), (PairClass::Far, 9)];
    for (class, expected) in regular {
        let n = q.evaluations(class);
        checks.push(Check::new(format!("{class:?} pair evaluations at orders (4,3,2)"), n, expected, n == expected));
    }
    let n = QuadOrders::MINIMAL.evaluations(PairClass::Far);
    checks.push(Check::new("regular pair evaluations at order 1", n, 1, n == 1));
    let touching = [PairClass::SharedVertex, PairClass::SharedEdge, PairClass::Identical];
    for (orders, expected) in [(q, [512, 1280, 1536]), (QuadOrders::MINIMAL, [2, 5, 6])] {
        for (class, e) in touching.iter().zip(expected) {
            let n = orders.evaluations(*class);
            checks.push(Check::new(
                format!("{class:?} evaluations at singular order {}", orders.singular),
                n,
                e,
                n == e,
            ));
        }
    }
    for order in 1..=6 {
        match triangle_rule(order) {
            Ok(rule) => {
                let sum: f64 = rule.weights.iter().sum();
                let ok = (sum - 0.5).abs() <= 1e-14;
                checks.push(Check::new(format!("order {order} weights sum"), format!("{sum:.16}"), "0.5 +- 1e-14", ok));
            }
            Err(e) => checks.push(Check::new(format!("order {order} rule"), e, "available", false)),
        }
    }
    VerifyReport { suite: "quadrature".into(), checks }
}

/// Instrumented vs closed-form matvec counts on synthetic systems for every
/// variant over the given grid.
pub fn counts_suite(ms: &[usize], rs: &[usize], rhos: &[usize]) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for variant in PreconditionerVariant::ALL {
        for &m in ms {
            // Two trace blocks of 130 dofs keep every Krylov space below full
            // dimension, so no run ends early.
            let system = SyntheticSystem::new(variant, m, 130, 7 + m as u64)?;
            let mut failures = Vec::new();
            let mut runs = 0;
            for &r in rs {
                for &rho in rhos {
                    let (instrumented, iterations) = system.run(r, rho)?;
                    let predicted = predicted_matvecs(variant, m, r, rho);
                    runs += 1;
                    if iterations != r || instrumented != predicted {
                        failures.push(format!("R={r} rho={rho}: {iterations} its, {instrumented} vs {predicted}"));
                    }
                }
            }
            checks.push(Check::new(
                format!("variant {variant}, M = {m}: {runs} runs"),
                if failures.is_empty() { "all exact".to_string() } else { failures.join("; ") },
                "exact",
                failures.is_empty(),
            ));
        }
    }
    Ok(VerifyReport { suite: "counts".into(), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("eigen".parse::<Suite>().is_err());
    }

    #[test]
    fn quadrature_suite_passes() {
        let r = quadrature_suite();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn small_counts_grid_passes() {
        let r = counts_suite(&[1, 2], &[0, 3], &[1, 2]).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checks.len(), 14);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn report_rendering() {
        let r = VerifyReport { suite: "x".into(), checks: vec![Check::new("a", 1, 2, false)] };
        assert!(!r.passed());
        assert!(r.to_string().contains("[FAIL] a: 1 (tolerance 2)"));
        assert!(!VerifyReport { suite: "y".into(), checks: vec![] }.passed());
    }
}
