//! Restarted GMRES over abstract linear maps.
//!
//! Application accounting: one map application per Arnoldi step plus one
//! true-residual recomputation at the end of every completed restart cycle,
//! so a run of `R` iterations with restart `ρ` applies the map exactly
//! `R + ⌊R/ρ⌋` times. The initial guess is zero, so the initial residual is
//! `b` and costs nothing.

use std::fmt::Write as _;

use crate::error::{BemError, Result};
use crate::C64;

/// A square linear operator on complex vectors.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>>;
}

impl LinearMap for nalgebra::DMatrix<C64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.ncols() {
            return Err(BemError::DimensionMismatch { expected: self.ncols(), actual: x.len() });
        }
        Ok((self * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresParams {
    pub tol: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for GmresParams {
    fn default() -> Self {
        Self { tol: 1e-5, restart: 200, max_iterations: 2000 }
    }
}

impl GmresParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(BemError::InvalidArgument(format!("GMRES tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.restart == 0 {
            return Err(BemError::InvalidArgument("GMRES restart must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall time of one solve phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Storage of one assembled operator group.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMemory {
    pub name: String,
    pub operators: usize,
    pub stored_entries: usize,
    pub dense_entries: usize,
}

impl OperatorMemory {
    pub fn bytes(&self) -> usize {
        16 * self.stored_entries
    }

    pub fn compression_ratio(&self) -> f64 {
        if self.dense_entries == 0 {
            1.0
        } else {
            self.stored_entries as f64 / self.dense_entries as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<C64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residuals, starting with the initial one (length `R + 1`).
    pub history: Vec<f64>,
    /// Applications of the map made by GMRES (`R + ⌊R/ρ⌋`).
    pub map_applications: u64,
    /// Boundary-operator matvecs attributed to the solve (set by callers
    /// that own a counter).
    pub bio_matvecs: Option<u64>,
    pub timings: Vec<PhaseTiming>,
    pub memory: Vec<OperatorMemory>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }

    /// `iteration,relative_residual` lines with a header.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,relative_residual\n");
        for (i, r) in self.history.iter().enumerate() {
            let _ = writeln!(out, "{i},{r:e}");
        }
        out
    }
}

fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Complex Givens rotation zeroing `b` in `(a, b)`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    if b.norm() == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if a.norm() == 0.0 {
        return (0.0, b.conj() / b.norm());
    }
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let c = a.norm() / r;
    let s = (a / a.norm()) * b.conj() / r;
    (c, s)
}

/// Restarted GMRES with modified Gram–Schmidt, zero initial guess.
pub fn gmres(map: &dyn LinearMap, b: &[C64], params: &GmresParams) -> Result<SolveReport> {
    params.validate()?;
    let n = map.dim();
    if b.len() != n {
        return Err(BemError::DimensionMismatch { expected: n, actual: b.len() });
    }
    if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(BemError::InvalidArgument("right-hand side contains non-finite entries".into()));
    }
    let zero = C64::new(0.0, 0.0);
    let bnorm = norm(b);
    let mut report = SolveReport {
        solution: vec![zero; n],
        iterations: 0,
        converged: true,
        history: vec![0.0],
        map_applications: 0,
        bio_matvecs: None,
        timings: Vec::new(),
        memory: Vec::new(),
    };
    if bnorm == 0.0 {
        return Ok(report);
    }
    report.history[0] = 1.0;
    report.converged = false;
    let mut x = vec![zero; n];
    let mut r = b.to_vec();
    let mut rnorm = bnorm;
    let m = params.restart;

    while report.iterations < params.max_iterations {
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / rnorm).collect()];
        let mut h: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut cs: Vec<(f64, C64)> = Vec::with_capacity(m);
        let mut g = vec![zero; m + 1];
        g[0] = C64::new(rnorm, 0.0);
        let mut steps = 0;
        let mut done = false;
        while steps < m && report.iterations < params.max_iterations {
            let mut w = map.apply(&v[steps])?;
            report.map_applications += 1;
            let mut col = vec![zero; steps + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dotc(vi, &w);
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
                col[i] = hij;
            }
            let wn = norm(&w);
            if !wn.is_finite() {
                return Err(BemError::Factorization("GMRES breakdown: non-finite Krylov vector".into()));
            }
            col[steps + 1] = C64::new(wn, 0.0);
            let colnorm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = a * c + s * bb;
                col[i + 1] = -s.conj() * a + bb * c;
            }
            let (c, s) = givens(col[steps], col[steps + 1]);
            col[steps] = col[steps] * c + s * col[steps + 1];
            col[steps + 1] = zero;
            g[steps + 1] = -s.conj() * g[steps];
            g[steps] *= c;
            cs.push((c, s));
            h.push(col);
            steps += 1;
            report.iterations += 1;
            let est = g[steps].norm() / bnorm;
            report.history.push(est);
            // Happy breakdown: the Krylov space contains the solution.
            let breakdown = wn <= 1e-14 * colnorm;
            if est <= params.tol || breakdown {
                done = true;
                break;
            }
            v.push(w.iter().map(|z| z / wn).collect());
        }
        // Back substitution for the cycle's correction.
        let mut y = vec![zero; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for j in i + 1..steps {
                s -= h[j][i] * y[j];
            }
            if h[i][i].norm() == 0.0 {
                return Err(BemError::Factorization("GMRES breakdown: singular Hessenberg matrix".into()));
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&v[j]) {
                *xk += yj * vk;
            }
        }
        if steps == m {
            // Completed cycle: recompute the true residual.
            let ax = map.apply(&x)?;
            report.map_applications += 1;
            r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            rnorm = norm(&r);
            let rel = rnorm / bnorm;
            if let Some(last) = report.history.last_mut() {
                *last = rel;
            }
            done = rel <= params.tol;
        }
        if done {
            report.converged = report.final_residual() <= params.tol;
            break;
        }
    }
    report.solution = x;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64, shift: f64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |i, j| {
            let z = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) / (n as f64).sqrt();
            if i == j {
                z + shift
            } else {
                z
            }
        })
    }

    fn random_vector(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random(), rng.random())).collect()
    }

    #[test]
    fn identity_converges_in_one_step() {
        let id = DMatrix::<C64>::identity(7, 7);
        let b = random_vector(7, 1);
        let rep = gmres(&id, &b, &GmresParams::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.map_applications, 1);
        for (x, y) in rep.solution.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_rhs() {
        let a = random_matrix(5, 2, 2.0);
        let rep = gmres(&a, &[C64::new(0.0, 0.0); 5], &GmresParams::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.history.len(), 1);
        assert!(rep.solution.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn matches_direct_solve() {
        let a = random_matrix(50, 3, 2.0);
        let b = random_vector(50, 4);
        let params = GmresParams { tol: 1e-8, ..GmresParams::default() };
        let rep = gmres(&a, &b, &params).unwrap();
        assert!(rep.converged);
        let direct = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let x = DVector::from_vec(rep.solution.clone());
        assert!((x - &direct).norm() <= 10.0 * params.tol * direct.norm());
        // Final history entry equals the true residual.
        let r = DVector::from_vec(b.clone()) - &a * DVector::from_vec(rep.solution.clone());
        let true_rel = r.norm() / DVector::from_vec(b).norm();
        assert!((true_rel - rep.final_residual()).abs() < 1e-10);
    }

    #[test]
    fn invalid_parameters() {
        let a = random_matrix(3, 5, 1.0);
        let b = random_vector(3, 6);
        assert!(gmres(&a, &b, &GmresParams { tol: 0.0, ..GmresParams::default() }).is_err());
        assert!(gmres(&a, &b, &GmresParams { restart: 0, ..GmresParams::default() }).is_err());
        assert!(gmres(&a, &b[..2], &GmresParams::default()).is_err());
    }

    #[test]
    fn csv_has_one_line_per_entry() {
        let a = random_matrix(20, 7, 1.5);
        let rep = gmres(&a, &random_vector(20, 8), &GmresParams::default()).unwrap();
        assert_eq!(rep.history_csv().lines().count(), rep.history.len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn application_count_identity(n in 5usize..40, restart in 1usize..12, max_it in 0usize..60, seed in 0u64..500, tol_exp in 1i32..12) {
            // Weakly shifted matrices need many iterations and restarts.
            let a = random_matrix(n, seed, 0.6);
            let b = random_vector(n, seed + 1);
            let params = GmresParams { tol: 10f64.powi(-tol_exp), restart, max_iterations: max_it };
            let rep = gmres(&a, &b, &params).unwrap();
            let r = rep.iterations as u64;
            prop_assert_eq!(rep.map_applications, r + r / restart as u64);
            prop_assert_eq!(rep.history.len(), rep.iterations + 1);
            prop_assert!(rep.iterations <= max_it);
            prop_assert_eq!(rep.converged, rep.final_residual() <= params.tol);
        }
    }
}
