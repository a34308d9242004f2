//! Lowest-order div-conforming spaces and their dual-pairing mass matrices.
//!
//! Every basis function is stored as a list of supporting triangles on its
//! *evaluation mesh* (the primal mesh for RWG, the barycentric refinement for
//! Buffa–Christiansen), each with three coefficients `c_a`. On a supporting
//! triangle with vertices `p_a` and area `A` the field is
//!
//! ```text
//! φ(x) = Σ_a c_a (x − p_a) / (2A),      div φ = Σ_a c_a / A.
//! ```
//!
//! The local shape `(x − p_a)/(2A)` carries unit flux out through the edge
//! opposite `p_a`, so `c_a` is exactly the outward flux of `φ` through that
//! edge.
//!
//! RWG convention: dof `e` lives on primal edge `(lo, hi)`; its flux is the
//! edge length `l_e`, crossing from the triangle that traverses the edge as
//! `lo → hi` into the other one (divergence `±l_e / A±`).
//!
//! Buffa–Christiansen convention: dof `e` is a combination of unit-flux RWG
//! functions on the barycentric refinement, scaled by `l_e`:
//! - the two half dual edges `[m_e, g_T±]` carry flux ½ from the dual cell
//!   of `lo` to the dual cell of `hi`;
//! - around a vertex of valence `n` (a ring of `2n` barycentric triangles,
//!   starting at the radial edge `[v, m_e]`, which carries no flux), radial
//!   edge `i` carries `(i − n)/(2n)` in the walking direction for the source
//!   cell and the negative for the sink cell.
//!
//! Every barycentric triangle of the source cell therefore holds charge
//! `+1/(2n)` and every triangle of the sink cell `−1/(2n')`.
//!
//! Worked example (cube corner, valence `n = 3`, so 6 ring triangles): the
//! radial fluxes walking away from the dual edge are `0, −2/6, −1/6, 0, 1/6,
//! 2/6`; each ring triangle has outflow `1/6`, and the two triangles touching
//! the dual edge add ½ each through it.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;

use crate::error::{BemError, Result};
use crate::geometry::{barycentric_refine, BarycentricRefinement, BoundingBox, Point3, SurfaceMesh};
use crate::quadrature::triangle_rule;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Rwg,
    Bc,
}

/// One supporting triangle of a basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub triangle: usize,
    pub coeffs: [f64; 3],
}

/// A div-conforming lowest-order space on a closed surface.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    kind: SpaceKind,
    primal: Arc<SurfaceMesh>,
    refinement: Option<Arc<BarycentricRefinement>>,
    supports: Vec<Vec<Support>>,
    /// For BC: unit-flux barycentric RWG combination per dof (refined edge, coefficient).
    combinations: Vec<Vec<(usize, f64)>>,
}

impl FunctionSpace {
    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dof_count(&self) -> usize {
        self.supports.len()
    }

    pub fn primal_mesh(&self) -> &Arc<SurfaceMesh> {
        &self.primal
    }

    pub fn refinement(&self) -> Option<&Arc<BarycentricRefinement>> {
        self.refinement.as_ref()
    }

    /// Mesh whose triangles the supports refer to.
    pub fn evaluation_mesh(&self) -> &SurfaceMesh {
        match &self.refinement {
            Some(r) => &r.refined,
            None => &self.primal,
        }
    }

    pub fn support(&self, dof: usize) -> &[Support] {
        &self.supports[dof]
    }

    pub fn supports(&self) -> &[Vec<Support>] {
        &self.supports
    }

    /// Barycentric RWG combination of a BC dof (empty for RWG spaces).
    pub fn combination(&self, dof: usize) -> &[(usize, f64)] {
        self.combinations.get(dof).map_or(&[], Vec::as_slice)
    }

    /// Midpoint of the primal edge a dof belongs to.
    pub fn dof_center(&self, dof: usize) -> Point3 {
        let [a, b] = self.primal.edges()[dof].vertices;
        0.5 * (self.primal.vertices()[a] + self.primal.vertices()[b])
    }

    /// Bounding box of the support of a dof.
    pub fn dof_bounding_box(&self, dof: usize) -> BoundingBox {
        let mesh = self.evaluation_mesh();
        let mut bbox = BoundingBox::empty();
        for s in &self.supports[dof] {
            for p in mesh.triangle_vertices(s.triangle) {
                bbox.include_point(&p);
            }
        }
        bbox
    }

    /// Same scatterer/mesh and dof numbering.
    pub fn same_primal(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.primal, &other.primal)
            || (self.primal.num_triangles() == other.primal.num_triangles()
                && self.primal.vertices() == other.primal.vertices()
                && self.primal.triangles() == other.primal.triangles())
    }

    /// Field value of dof `dof` at point `x` of its supporting evaluation triangle `t`.
    pub fn evaluate(&self, dof: usize, t: usize, x: &Point3) -> Option<Point3> {
        let s = self.supports[dof].iter().find(|s| s.triangle == t)?;
        Some(local_field(&self.evaluation_mesh().triangle_vertices(t), self.evaluation_mesh().area(t), &s.coeffs, x))
    }

    /// Surface divergence of `dof` on evaluation triangle `t` (zero off-support).
    pub fn divergence(&self, dof: usize, t: usize) -> f64 {
        self.supports[dof]
            .iter()
            .find(|s| s.triangle == t)
            .map_or(0.0, |s| s.coeffs.iter().sum::<f64>() / self.evaluation_mesh().area(t))
    }

    /// Re-expresses an RWG space on the barycentric refinement of its mesh.
    /// BC spaces are returned unchanged.
    pub fn on_refinement(&self, refinement: &Arc<BarycentricRefinement>) -> Result<FunctionSpace> {
        if self.refinement.is_some() {
            return Ok(self.clone());
        }
        if !refinement.matches(&self.primal) {
            return Err(BemError::InvalidArgument("refinement does not belong to this mesh".into()));
        }
        let fine = &refinement.refined;
        let supports = self
            .supports
            .iter()
            .map(|dof| {
                dof.iter()
                    .flat_map(|s| {
                        let parent = self.primal.triangle_vertices(s.triangle);
                        let area = self.primal.area(s.triangle);
                        (0..6).map(move |c| (s, parent, area, refinement.child(s.triangle, c)))
                    })
                    .map(|(s, parent, area, child)| {
                        let field = |x: &Point3| local_field(&parent, area, &s.coeffs, x);
                        Support {
                            triangle: child,
                            coeffs: flux_coefficients(&fine.triangle_vertices(child), &fine.normal(child), field),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(FunctionSpace {
            kind: self.kind,
            primal: self.primal.clone(),
            refinement: Some(refinement.clone()),
            supports,
            combinations: Vec::new(),
        })
    }
}

/// `Σ_a c_a (x − p_a)/(2A)`.
#[inline]
pub fn local_field(p: &[Point3; 3], area: f64, c: &[f64; 3], x: &Point3) -> Point3 {
    let s: f64 = c.iter().sum();
    (x * s - p[0] * c[0] - p[1] * c[1] - p[2] * c[2]) / (2.0 * area)
}

/// Coefficients of an RT0 field on a triangle, obtained from its outward
/// edge fluxes (exact for fields that are linear on the triangle).
fn flux_coefficients(p: &[Point3; 3], normal: &Point3, field: impl Fn(&Point3) -> Point3) -> [f64; 3] {
    std::array::from_fn(|a| {
        let (q1, q2) = (p[(a + 1) % 3], p[(a + 2) % 3]);
        field(&(0.5 * (q1 + q2))).dot(&(q2 - q1).cross(normal))
    })
}

fn check_closed(mesh: &SurfaceMesh) -> Result<()> {
    if let Some(e) = mesh.edges().iter().find(|e| e.triangles.len() != 2) {
        return Err(BemError::UnsupportedInput(format!(
            "edge ({}, {}) has {} adjacent triangles; spaces need a closed surface",
            e.vertices[0],
            e.vertices[1],
            e.triangles.len()
        )));
    }
    Ok(())
}

/// Orders the two triangles of an edge as (+, −): `+` traverses the edge `lo → hi`.
fn oriented_pair(mesh: &SurfaceMesh, e: usize) -> [(usize, usize); 2] {
    let edge = &mesh.edges()[e];
    let (t0, a0) = edge.triangles[0];
    let tri = mesh.triangles()[t0];
    if tri[(a0 + 1) % 3] == edge.vertices[0] {
        [edge.triangles[0], edge.triangles[1]]
    } else {
        [edge.triangles[1], edge.triangles[0]]
    }
}

/// Unit-flux RWG supports of every edge of `mesh`.
fn unit_rwg(mesh: &SurfaceMesh, e: usize, scale: f64) -> [Support; 2] {
    let [(tp, ap), (tm, am)] = oriented_pair(mesh, e);
    let mut cp = [0.0; 3];
    let mut cm = [0.0; 3];
    cp[ap] = scale;
    cm[am] = -scale;
    [Support { triangle: tp, coeffs: cp }, Support { triangle: tm, coeffs: cm }]
}

pub fn build_rwg(mesh: &Arc<SurfaceMesh>) -> Result<FunctionSpace> {
    check_closed(mesh)?;
    let supports = (0..mesh.num_edges())
        .map(|e| {
            let [a, b] = mesh.edges()[e].vertices;
            let length = (mesh.vertices()[a] - mesh.vertices()[b]).norm();
            unit_rwg(mesh, e, length).to_vec()
        })
        .collect();
    Ok(FunctionSpace {
        kind: SpaceKind::Rwg,
        primal: mesh.clone(),
        refinement: None,
        supports,
        combinations: Vec::new(),
    })
}

/// Builds the refinement and the BC space in one go.
pub fn build_bc_with_refinement(mesh: &Arc<SurfaceMesh>) -> Result<FunctionSpace> {
    let bary = Arc::new(barycentric_refine(mesh));
    build_bc(mesh, &bary)
}

pub fn build_bc(mesh: &Arc<SurfaceMesh>, bary: &Arc<BarycentricRefinement>) -> Result<FunctionSpace> {
    check_closed(mesh)?;
    if !bary.matches(mesh) {
        return Err(BemError::InvalidArgument(
            "barycentric refinement was not derived from this mesh".into(),
        ));
    }
    let fine = &bary.refined;
    let fine_edge: BTreeMap<[usize; 2], usize> = fine
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| (e.vertices, i))
        .collect();
    let edge_index = |a: usize, b: usize| fine_edge[&[a.min(b), a.max(b)]];
    // Refined triangles incident to each refined edge, for ring walks.
    let mut combinations = Vec::with_capacity(mesh.num_edges());
    for (e, edge) in mesh.edges().iter().enumerate() {
        let [v1, v2] = edge.vertices;
        let m = bary.edge_midpoint(e);
        // Oriented flux (from `from` triangle into the other) per refined edge.
        let mut fluxes: BTreeMap<usize, f64> = BTreeMap::new();
        let mut add_flux = |fe: usize, from: usize, value: f64| {
            let [(tp, _), _] = oriented_pair(fine, fe);
            let signed = if tp == from { value } else { -value };
            *fluxes.entry(fe).or_insert(0.0) += signed;
        };
        for (v, sign) in [(v1, 1.0), (v2, -1.0)] {
            let ring = vertex_ring(fine, v, edge_index(v, m))?;
            let n2 = ring.len() as f64;
            let charge = sign / n2;
            // ring[i] = (triangle τ_i, radial edge r_i entering τ_i).
            let mut flow = 0.0; // flux across r_i from τ_{i-1} into τ_i
            for (i, &(tau, radial)) in ring.iter().enumerate() {
                if i > 0 && flow != 0.0 {
                    add_flux(radial, ring[i - 1].0, flow);
                }
                let boundary = if i == 0 || i + 1 == ring.len() { 0.5 * sign } else { 0.0 };
                if boundary != 0.0 {
                    // Outer edge of τ is the one opposite the cell vertex.
                    let tri = fine.triangles()[tau];
                    let local = tri.iter().position(|&w| w == v).expect("ring triangle contains its vertex");
                    let outer = fine.triangle_edges()[tau][local];
                    if sign > 0.0 {
                        add_flux(outer, tau, boundary);
                    }
                }
                flow += charge - boundary;
            }
        }
        let [a, b] = edge.vertices;
        let length = (mesh.vertices()[a] - mesh.vertices()[b]).norm();
        combinations.push(
            fluxes
                .into_iter()
                .filter(|(_, f)| f.abs() > 1e-15)
                .map(|(fe, f)| (fe, f * length))
                .collect::<Vec<_>>(),
        );
    }
    let supports = combinations
        .iter()
        .map(|combo| {
            let mut per_triangle: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
            for &(fe, c) in combo {
                for s in unit_rwg(fine, fe, c) {
                    let entry = per_triangle.entry(s.triangle).or_insert([0.0; 3]);
                    for k in 0..3 {
                        entry[k] += s.coeffs[k];
                    }
                }
            }
            per_triangle
                .into_iter()
                .map(|(triangle, coeffs)| Support { triangle, coeffs })
                .collect()
        })
        .collect();
    Ok(FunctionSpace {
        kind: SpaceKind::Bc,
        primal: mesh.clone(),
        refinement: Some(bary.clone()),
        supports,
        combinations,
    })
}

/// Barycentric triangles around refined vertex `v`, walking from the radial
/// edge `start`: returns `(τ_i, r_i)` where `r_i` is the radial edge shared
/// by `τ_{i−1}` and `τ_i` (`r_0 = start`).
fn vertex_ring(fine: &SurfaceMesh, v: usize, start: usize) -> Result<Vec<(usize, usize)>> {
    let mut ring = Vec::new();
    let mut radial = start;
    let mut tau = fine.edges()[start].triangles[0].0;
    loop {
        ring.push((tau, radial));
        let tri = fine.triangles()[tau];
        let local_v = tri.iter().position(|&w| w == v).ok_or_else(|| {
            BemError::Validation(format!("refined triangle {tau} does not contain vertex {v}"))
        })?;
        // The two edges through v are the local edges not opposite v.
        let next_radial = (0..3)
            .filter(|&a| a != local_v)
            .map(|a| fine.triangle_edges()[tau][a])
            .find(|&fe| fe != radial)
            .expect("triangle has two edges through each vertex");
        let edge = &fine.edges()[next_radial];
        let next_tau = edge
            .triangles
            .iter()
            .map(|&(t, _)| t)
            .find(|&t| t != tau)
            .ok_or_else(|| BemError::Validation(format!("refined edge {next_radial} is a boundary edge")))?;
        if next_radial == start {
            break;
        }
        if ring.len() > fine.num_triangles() {
            return Err(BemError::Validation(format!("vertex {v} has a non-manifold neighbourhood")));
        }
        radial = next_radial;
        tau = next_tau;
    }
    Ok(ring)
}

/// Sparse matrix of the anti-symmetric pairing `⟨a, b⟩ = ∫ a · (n × b)`,
/// entry `(i, j) = ⟨φ_j^trial, ψ_i^test⟩`, with a cached sparse LU.
pub struct MassMatrix {
    rows: usize,
    cols: usize,
    triplets: Vec<(usize, usize, f64)>,
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
    test_kind: SpaceKind,
    trial_kind: SpaceKind,
}

impl std::fmt::Debug for MassMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MassMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("nnz", &self.triplets.len())
            .field("test", &self.test_kind)
            .field("trial", &self.trial_kind)
            .field("factorized", &self.lu.is_some())
            .finish()
    }
}

pub fn assemble_mass(test: &FunctionSpace, trial: &FunctionSpace) -> Result<MassMatrix> {
    if !test.same_primal(trial) {
        return Err(BemError::InvalidArgument("mass matrix spaces live on different meshes".into()));
    }
    let (test_eval, trial_eval) = match (test.refinement(), trial.refinement()) {
        (None, None) => (test.clone(), trial.clone()),
        (Some(r), _) | (None, Some(r)) => (test.on_refinement(r)?, trial.on_refinement(r)?),
    };
    let mesh = test_eval.evaluation_mesh();
    let mut by_triangle_test: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new(); mesh.num_triangles()];
    let mut by_triangle_trial: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new(); mesh.num_triangles()];
    for (i, dof) in test_eval.supports().iter().enumerate() {
        for s in dof {
            by_triangle_test[s.triangle].push((i, s.coeffs));
        }
    }
    for (j, dof) in trial_eval.supports().iter().enumerate() {
        for s in dof {
            by_triangle_trial[s.triangle].push((j, s.coeffs));
        }
    }
    let rule = triangle_rule(2)?;
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for t in 0..mesh.num_triangles() {
        if by_triangle_test[t].is_empty() || by_triangle_trial[t].is_empty() {
            continue;
        }
        let p = mesh.triangle_vertices(t);
        let area = mesh.area(t);
        let n = mesh.normal(t);
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let x = crate::quadrature::map_reference(&p, *xi);
            let wt = w * 2.0 * area;
            for &(i, ci) in &by_triangle_test[t] {
                let rotated = n.cross(&local_field(&p, area, &ci, &x));
                for &(j, cj) in &by_triangle_trial[t] {
                    let v = local_field(&p, area, &cj, &x).dot(&rotated) * wt;
                    *entries.entry((i, j)).or_insert(0.0) += v;
                }
            }
        }
    }
    let scale = entries.values().fold(0.0f64, |m, v| m.max(v.abs()));
    let triplets: Vec<(usize, usize, f64)> = entries
        .into_iter()
        .filter(|(_, v)| v.abs() > 1e-15 * scale)
        .map(|((i, j), v)| (i, j, v))
        .collect();
    Ok(MassMatrix {
        rows: test.dof_count(),
        cols: trial.dof_count(),
        triplets,
        lu: None,
        test_kind: test.kind(),
        trial_kind: trial.kind(),
    })
}

impl MassMatrix {
    /// Builds a mass matrix from explicit entries; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: Vec<(usize, usize, f64)>,
        test_kind: SpaceKind,
        trial_kind: SpaceKind,
    ) -> Result<MassMatrix> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(BemError::InvalidArgument(format!("entry ({i}, {j}) outside a {rows}×{cols} matrix")));
        }
        Ok(MassMatrix { rows, cols, triplets, lu: None, test_kind, trial_kind })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn kinds(&self) -> (SpaceKind, SpaceKind) {
        (self.test_kind, self.trial_kind)
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] += v;
        }
        m
    }

    /// Scales test row `i` and trial column `j` (bilinearity checks).
    pub fn scaled(&self, row_scale: &[f64], col_scale: &[f64]) -> MassMatrix {
        MassMatrix {
            rows: self.rows,
            cols: self.cols,
            triplets: self
                .triplets
                .iter()
                .map(|&(i, j, v)| (i, j, v * row_scale[i] * col_scale[j]))
                .collect(),
            lu: None,
            test_kind: self.test_kind,
            trial_kind: self.trial_kind,
        }
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(BemError::DimensionMismatch { expected: self.cols, actual: x.len() });
        }
        let mut y = vec![C64::new(0.0, 0.0); self.rows];
        for &(i, j, v) in &self.triplets {
            y[i] += x[j] * v;
        }
        Ok(y)
    }

    /// Computes the sparse LU factorization (idempotent).
    pub fn factorize(&mut self) -> Result<()> {
        if self.lu.is_some() {
            return Ok(());
        }
        if self.rows != self.cols {
            return Err(BemError::Factorization(format!(
                "mass matrix is {}×{}, not square",
                self.rows, self.cols
            )));
        }
        let triplets: Vec<Triplet<usize, usize, f64>> =
            self.triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.rows, self.cols, &triplets)
            .map_err(|e| BemError::Factorization(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| BemError::Factorization(format!("{e:?}")))?;
        self.lu = Some(lu);
        // A singular matrix may factor without error but yields non-finite
        // or inaccurate solves; probe with a fixed vector.
        let probe: Vec<C64> = (0..self.rows)
            .map(|i| C64::new(1.0 + (i % 7) as f64, -((i % 5) as f64)))
            .collect();
        match self.solve(&probe) {
            Ok(_) => Ok(()),
            Err(e) => {
                self.lu = None;
                Err(e)
            }
        }
    }

    pub fn is_factorized(&self) -> bool {
        self.lu.is_some()
    }

    /// Solves `M x = rhs` with one step of iterative refinement.
    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let lu = self
            .lu
            .as_ref()
            .ok_or_else(|| BemError::Factorization("mass matrix not factorized".into()))?;
        if rhs.len() != self.rows {
            return Err(BemError::DimensionMismatch { expected: self.rows, actual: rhs.len() });
        }
        let n = self.rows;
        let solve_raw = |b: &[C64]| -> Vec<C64> {
            let mut m = Mat::<f64>::from_fn(n, 2, |i, j| if j == 0 { b[i].re } else { b[i].im });
            lu.solve_in_place(m.as_mut());
            (0..n).map(|i| C64::new(m[(i, 0)], m[(i, 1)])).collect()
        };
        let mut x = solve_raw(rhs);
        let ax = self.apply(&x)?;
        let r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = solve_raw(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        let ax = self.apply(&x)?;
        let rnorm = rhs.iter().zip(&ax).map(|(b, a)| (b - a).norm_sqr()).sum::<f64>().sqrt();
        let bnorm = rhs.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        if !x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) || rnorm > 1e-8 * bnorm.max(f64::MIN_POSITIVE) {
            return Err(BemError::Factorization(format!(
                "mass matrix is numerically singular (relative residual {:e})",
                rnorm / bnorm.max(f64::MIN_POSITIVE)
            )));
        }
        Ok(x)
    }
}

/// `M⁻¹ rhs` for a factorized mass matrix.
pub fn mass_solve(m: &MassMatrix, rhs: &[C64]) -> Result<Vec<C64>> {
    m.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_cube, generate_sphere};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tetrahedron() -> Arc<SurfaceMesh> {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        Arc::new(SurfaceMesh::new(v, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], vec![0; 4]).unwrap())
    }

    fn small_cube() -> Arc<SurfaceMesh> {
        Arc::new(generate_cube(0.4, Point3::new(-1.0, 0.0, 0.0), 0.4).unwrap())
    }

    /// Normal flux of a dof through each supporting edge, evaluated from both sides.
    fn assert_div_conforming(space: &FunctionSpace) {
        let mesh = space.evaluation_mesh();
        for dof in 0..space.dof_count() {
            let mut flux: BTreeMap<usize, f64> = BTreeMap::new();
            for s in space.support(dof) {
                let p = mesh.triangle_vertices(s.triangle);
                let n = mesh.normal(s.triangle);
                for a in 0..3 {
                    let (q1, q2) = (p[(a + 1) % 3], p[(a + 2) % 3]);
                    let mid = 0.5 * (q1 + q2);
                    let out = local_field(&p, mesh.area(s.triangle), &s.coeffs, &mid).dot(&(q2 - q1).cross(&n));
                    *flux.entry(mesh.triangle_edges()[s.triangle][a]).or_insert(0.0) += out;
                }
            }
            for (e, f) in flux {
                assert!(f.abs() < 1e-12, "dof {dof}: line charge {f:e} on edge {e}");
            }
        }
    }

    #[test]
    fn rwg_dof_counts() {
        assert_eq!(build_rwg(&tetrahedron()).unwrap().dof_count(), 6);
        assert_eq!(build_rwg(&small_cube()).unwrap().dof_count(), 18);
        let sphere = Arc::new(generate_sphere(1.0, 1).unwrap());
        assert_eq!(build_rwg(&sphere).unwrap().dof_count(), 120);
    }

    #[test]
    fn rwg_divergence_is_edge_length_over_area() {
        let mesh = small_cube();
        let space = build_rwg(&mesh).unwrap();
        for e in 0..space.dof_count() {
            let [a, b] = mesh.edges()[e].vertices;
            let l = (mesh.vertices()[a] - mesh.vertices()[b]).norm();
            let [plus, minus] = [space.support(e)[0], space.support(e)[1]];
            assert!((space.divergence(e, plus.triangle) - l / mesh.area(plus.triangle)).abs() < 1e-12);
            assert!((space.divergence(e, minus.triangle) + l / mesh.area(minus.triangle)).abs() < 1e-12);
            // `+` traverses the edge low → high.
            let tri = mesh.triangles()[plus.triangle];
            let pos = tri.iter().position(|&v| v == a).unwrap();
            assert_eq!(tri[(pos + 1) % 3], b);
        }
        assert_div_conforming(&space);
    }

    #[test]
    fn bc_is_div_conforming_with_zero_total_charge() {
        for mesh in [small_cube(), Arc::new(generate_sphere(1.0, 1).unwrap()), tetrahedron()] {
            let rwg = build_rwg(&mesh).unwrap();
            let bc = build_bc_with_refinement(&mesh).unwrap();
            assert_eq!(bc.dof_count(), rwg.dof_count());
            assert_div_conforming(&bc);
            let fine = bc.evaluation_mesh();
            for dof in 0..bc.dof_count() {
                let total: f64 = bc.support(dof).iter().map(|s| s.coeffs.iter().sum::<f64>()).sum();
                assert!(total.abs() < 1e-10, "dof {dof}: total charge {total}");
                // Equal charge per barycentric triangle within each cell.
                let [v1, v2] = mesh.edges()[dof].vertices;
                for (v, sign) in [(v1, 1.0), (v2, -1.0)] {
                    let cell: Vec<_> = bc
                        .support(dof)
                        .iter()
                        .filter(|s| fine.triangles()[s.triangle].contains(&v))
                        .collect();
                    let l = (mesh.vertices()[v1] - mesh.vertices()[v2]).norm();
                    let q0: f64 = cell[0].coeffs.iter().sum();
                    for s in &cell {
                        let q: f64 = s.coeffs.iter().sum();
                        assert!((q - q0).abs() < 1e-12 * l);
                        assert!(q * sign > 0.0);
                    }
                    assert!((q0 * cell.len() as f64 - sign * l).abs() < 1e-12 * l);
                }
            }
        }
    }

    #[test]
    fn bc_matches_its_barycentric_rwg_combination() {
        let mesh = small_cube();
        let bc = build_bc_with_refinement(&mesh).unwrap();
        let fine = bc.evaluation_mesh();
        for dof in 0..bc.dof_count() {
            for s in bc.support(dof) {
                let x = fine.centroid(s.triangle);
                let direct = bc.evaluate(dof, s.triangle, &x).unwrap();
                let mut summed = Point3::zeros();
                for &(fe, c) in bc.combination(dof) {
                    for u in unit_rwg(fine, fe, c) {
                        if u.triangle == s.triangle {
                            summed += local_field(&fine.triangle_vertices(u.triangle), fine.area(u.triangle), &u.coeffs, &x);
                        }
                    }
                }
                assert!((direct - summed).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn lifted_rwg_agrees_with_primal_rwg() {
        let mesh = small_cube();
        let rwg = build_rwg(&mesh).unwrap();
        let bary = Arc::new(barycentric_refine(&mesh));
        let lifted = rwg.on_refinement(&bary).unwrap();
        let fine = &bary.refined;
        for dof in 0..rwg.dof_count() {
            assert_eq!(lifted.support(dof).len(), 12);
            for s in lifted.support(dof) {
                let x = 0.2 * fine.triangle_vertices(s.triangle)[0] + 0.8 * fine.centroid(s.triangle);
                let parent = bary.parent[s.triangle].0;
                let coarse = rwg.evaluate(dof, parent, &x).unwrap();
                let fine_value = lifted.evaluate(dof, s.triangle, &x).unwrap();
                assert!((coarse - fine_value).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn rwg_self_pairing_is_antisymmetric() {
        let mesh = small_cube();
        let rwg = build_rwg(&mesh).unwrap();
        let m = assemble_mass(&rwg, &rwg).unwrap().to_dense();
        assert!((&m + m.transpose()).amax() < 1e-14);
        for i in 0..m.nrows() {
            assert_eq!(m[(i, i)], 0.0);
        }
    }

    fn condition(m: &DMatrix<f64>) -> f64 {
        let sv = m.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    }

    #[test]
    fn dual_mass_matrices_are_well_conditioned() {
        let meshes = [
            small_cube(),
            Arc::new(generate_cube(1.0, Point3::zeros(), 0.3).unwrap()),
            Arc::new(generate_sphere(1.0, 1).unwrap()),
            Arc::new(generate_sphere(1.0, 2).unwrap()),
            tetrahedron(),
        ];
        for mesh in meshes {
            let rwg = build_rwg(&mesh).unwrap();
            let bc = build_bc_with_refinement(&mesh).unwrap();
            let mp = assemble_mass(&bc, &rwg).unwrap().to_dense();
            let ma = assemble_mass(&rwg, &bc).unwrap().to_dense();
            let (cp, ca) = (condition(&mp), condition(&ma));
            assert!(cp.is_finite() && cp <= 100.0, "cond(M_P) = {cp}");
            assert!(ca.is_finite() && ca <= 100.0, "cond(M_A) = {ca}");
            // Swapping the spaces transposes and negates the anti-symmetric pairing.
            assert!((&mp + ma.transpose()).amax() < 1e-13);
        }
    }

    #[test]
    fn mass_solve_inverts() {
        let mesh = Arc::new(generate_sphere(1.0, 1).unwrap());
        let rwg = build_rwg(&mesh).unwrap();
        let bc = build_bc_with_refinement(&mesh).unwrap();
        let mut m = assemble_mass(&bc, &rwg).unwrap();
        assert!(m.solve(&vec![C64::new(1.0, 0.0); m.rows()]).is_err());
        m.factorize().unwrap();
        let n = m.rows();
        let zero = mass_solve(&m, &vec![C64::new(0.0, 0.0); n]).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
        for j in [0, n / 2, n - 1] {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            let x = mass_solve(&m, &m.apply(&e).unwrap()).unwrap();
            let err: f64 = x.iter().zip(&e).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let x = mass_solve(&m, &b).unwrap();
        let r = m.apply(&x).unwrap();
        let res = r.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let bn = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(res / bn <= 1e-12, "{}", res / bn);
    }

    #[test]
    fn singular_mass_matrix_is_reported() {
        let rwg = build_rwg(&small_cube()).unwrap();
        let mut m = assemble_mass(&rwg, &rwg).unwrap();
        // An 18×18 anti-symmetric matrix of a closed-surface RWG pairing has a
        // kernel (gradient fields); factorization or solve must fail.
        let res = m.factorize();
        assert!(matches!(res, Err(BemError::Factorization(_))), "{res:?}");
    }

    #[test]
    fn dof_numbering_is_deterministic() {
        let a = build_bc_with_refinement(&small_cube()).unwrap();
        let b = build_bc_with_refinement(&small_cube()).unwrap();
        assert_eq!(a.supports(), b.supports());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn pairing_is_bilinear(scales in proptest::collection::vec(0.1f64..3.0, 36)) {
            let mesh = small_cube();
            let rwg = build_rwg(&mesh).unwrap();
            let bc = build_bc_with_refinement(&mesh).unwrap();
            let m = assemble_mass(&bc, &rwg).unwrap();
            let (rs, cs) = scales.split_at(18);
            let scaled_spaces = {
                let mut test = bc.clone();
                for (dof, s) in test.supports.iter_mut().zip(rs) {
                    for sup in dof { sup.coeffs = sup.coeffs.map(|c| c * s); }
                }
                let mut trial = rwg.clone();
                for (dof, s) in trial.supports.iter_mut().zip(cs) {
                    for sup in dof { sup.coeffs = sup.coeffs.map(|c| c * s); }
                }
                assemble_mass(&test, &trial).unwrap().to_dense()
            };
            let expected = m.scaled(rs, cs).to_dense();
            prop_assert!((scaled_spaces - expected).amax() < 1e-13);
        }

        #[test]
        fn rwg_divergence_integrals_cancel(sub in 0usize..3) {
            let mesh = Arc::new(generate_sphere(1.3, sub).unwrap());
            let rwg = build_rwg(&mesh).unwrap();
            let total: f64 = (0..rwg.dof_count())
                .flat_map(|d| rwg.support(d).iter().map(|s| s.coeffs.iter().sum::<f64>()).collect::<Vec<_>>())
                .sum();
            prop_assert!(total.abs() < 1e-10);
        }
    }
}
