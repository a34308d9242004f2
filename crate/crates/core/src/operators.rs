//! Galerkin discretisation of the electric (`S`) and magnetic (`C`)
//! boundary integral operators, plane-wave trace data and the
//! Stratton–Chu potentials.
//!
//! All weak forms use the anti-symmetric pairing `⟨a, b⟩ = ∫ a · (n × b)`
//! with the test function in the second slot. Since
//! `(a × n) · (n × ψ) = −a · ψ` for tangential `ψ`, the Galerkin entries are
//!
//! ```text
//! S(i, j) = −ik ∬ G ψ_i(x)·φ_j(y) − (1/ik) ∬ G div ψ_i div φ_j
//! C(i, j) = −∬ ψ_i(x) · (∇_x G(x, y) × φ_j(y))        (principal value)
//! ```
//!
//! with `G = e^{ikr}/(4πr)`, `∇_x G = (x − y)(ikr − 1)e^{ikr}/(4πr³)`.
//! The `C` integrand vanishes identically for coplanar triangle pairs.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::geometry::{Point3, SurfaceMesh};
use crate::hmatrix::{BlockEvaluator, DofGeometry, HMatrix, HParams, HStats};
use crate::quadrature::{
    build_singular_rule, map_reference, map_singular, sauter_schwab_rule, touching_order, triangle_rule, PairClass,
    QuadOrders, SingularRule,
};
use crate::spaces::{assemble_mass, build_bc_with_refinement, build_rwg, local_field, FunctionSpace, SpaceKind, Support};
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

/// `e^{ik|x−y|} / (4π|x−y|)`.
pub fn green(k: C64, x: &Point3, y: &Point3) -> Result<C64> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(BemError::Domain("Green's function evaluated at x = y".into()));
    }
    Ok((I * k * r).exp() / (4.0 * PI * r))
}

/// `∇_x G(x, y)` as a complex 3-vector.
pub fn green_gradient(k: C64, x: &Point3, y: &Point3) -> Result<[C64; 3]> {
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(BemError::Domain("Green's function gradient evaluated at x = y".into()));
    }
    let f = (I * k * r - 1.0) * (I * k * r).exp() / (4.0 * PI * r * r * r);
    Ok([f * d.x, f * d.y, f * d.z])
}

/// Homogeneous medium described by its wavenumber and relative permeability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub k: C64,
    pub mu: C64,
}

impl Medium {
    pub fn new(k: C64, mu: C64) -> Result<Self> {
        if k.norm() == 0.0 || !k.re.is_finite() || !k.im.is_finite() {
            return Err(BemError::InvalidArgument(format!("wavenumber must be finite and non-zero, got {k}")));
        }
        if k.im < 0.0 {
            return Err(BemError::InvalidArgument(format!("wavenumber must have Im(k) >= 0, got {k}")));
        }
        if mu.norm() == 0.0 {
            return Err(BemError::InvalidArgument("permeability must be non-zero".into()));
        }
        Ok(Self { k, mu })
    }

    /// Real wavenumber, unit permeability.
    pub fn real(k: f64) -> Result<Self> {
        Self::new(C64::new(k, 0.0), C64::new(1.0, 0.0))
    }

    /// Medium with refractive index `n` relative to `exterior`.
    pub fn with_index(exterior: &Medium, n: C64, mu: C64) -> Result<Self> {
        Self::new(exterior.k * n, mu)
    }
}

/// Shared tally of boundary-operator applications.
#[derive(Debug, Clone, Default)]
pub struct MatvecCounter(Arc<AtomicU64>);

impl MatvecCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::SeqCst);
    }

    pub fn same_as(&self, other: &MatvecCounter) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    /// Electric operator `S`.
    S,
    /// Magnetic operator `C`.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssemblyMode {
    Dense,
    HMatrix(HParams),
}

/// Parameters an operator was assembled with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub nu: Option<f64>,
    pub chi: Option<f64>,
    pub q: QuadOrders,
}

#[derive(Debug, Clone)]
pub enum OperatorStorage {
    Dense(DMatrix<C64>),
    HMatrix(HMatrix),
}

/// An assembled Galerkin matrix of `S` or `C`; every [`apply`](Self::apply)
/// counts as one boundary-operator matvec.
#[derive(Debug, Clone)]
pub struct BoundaryOperatorMatrix {
    kind: OperatorKind,
    k: C64,
    test: SpaceKind,
    trial: SpaceKind,
    storage: OperatorStorage,
    counter: MatvecCounter,
    provenance: Provenance,
}

impl BoundaryOperatorMatrix {
    /// Wraps an explicitly given dense matrix (synthetic operators, tests).
    pub fn from_dense(kind: OperatorKind, k: C64, test: SpaceKind, trial: SpaceKind, matrix: DMatrix<C64>) -> Self {
        Self {
            kind,
            k,
            test,
            trial,
            storage: OperatorStorage::Dense(matrix),
            counter: MatvecCounter::new(),
            provenance: Provenance { nu: None, chi: None, q: QuadOrders::default() },
        }
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn wavenumber(&self) -> C64 {
        self.k
    }

    pub fn spaces(&self) -> (SpaceKind, SpaceKind) {
        (self.test, self.trial)
    }

    pub fn rows(&self) -> usize {
        match &self.storage {
            OperatorStorage::Dense(d) => d.nrows(),
            OperatorStorage::HMatrix(h) => h.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.storage {
            OperatorStorage::Dense(d) => d.ncols(),
            OperatorStorage::HMatrix(h) => h.ncols(),
        }
    }

    pub fn storage(&self) -> &OperatorStorage {
        &self.storage
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn counter(&self) -> &MatvecCounter {
        &self.counter
    }

    /// Redirects the matvec tally to a shared counter.
    pub fn set_counter(&mut self, counter: MatvecCounter) {
        self.counter = counter;
    }

    /// Stored complex scalars (dense: rows × cols).
    pub fn stored_entries(&self) -> usize {
        match &self.storage {
            OperatorStorage::Dense(d) => d.len(),
            OperatorStorage::HMatrix(h) => h.stored_entries(),
        }
    }

    pub fn hmatrix_stats(&self) -> Option<HStats> {
        match &self.storage {
            OperatorStorage::HMatrix(h) => Some(h.stats()),
            OperatorStorage::Dense(_) => None,
        }
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols() {
            return Err(BemError::DimensionMismatch { expected: self.cols(), actual: x.len() });
        }
        self.counter.add(1);
        match &self.storage {
            OperatorStorage::Dense(d) => Ok((d * DVector::from_column_slice(x)).as_slice().to_vec()),
            OperatorStorage::HMatrix(h) => h.matvec(x),
        }
    }

    /// Dense copy (not counted as a matvec).
    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.storage {
            OperatorStorage::Dense(d) => d.clone(),
            OperatorStorage::HMatrix(h) => h.to_dense(),
        }
    }
}

#[derive(Debug, Clone)]
struct TriData {
    v: [Point3; 3],
    c: Point3,
    area: f64,
    normal: Point3,
    diam: f64,
    /// Centroid-shifted quadrature points and physical weights, by order.
    pts: Vec<Vec<(Point3, f64)>>,
}

fn triangle_data(mesh: &SurfaceMesh, orders: &[usize]) -> Result<Vec<TriData>> {
    let mut rules = vec![None; crate::quadrature::MAX_ORDER + 1];
    for &o in orders {
        rules[o] = Some(triangle_rule(o)?);
    }
    Ok((0..mesh.num_triangles())
        .map(|t| {
            let v = mesh.triangle_vertices(t);
            let c = mesh.centroid(t);
            let area = mesh.area(t);
            let pts = rules
                .iter()
                .map(|r| match r {
                    Some(rule) => rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| (map_reference(&v, *p) - c, w * 2.0 * area))
                        .collect(),
                    None => Vec::new(),
                })
                .collect();
            TriData { v, c, area, normal: mesh.normal(t), diam: mesh.diameter(t), pts }
        })
        .collect())
}

type Local = [[C64; 3]; 3];
type CVec = [C64; 3];

const ZERO: C64 = C64::new(0.0, 0.0);
const ZERO_LOCAL: Local = [[ZERO; 3]; 3];

#[inline]
fn rdot(a: &Point3, b: &CVec) -> C64 {
    b[0] * a.x + b[1] * a.y + b[2] * a.z
}

#[inline]
fn axpy(acc: &mut CVec, s: C64, v: &Point3) {
    acc[0] += s * v.x;
    acc[1] += s * v.y;
    acc[2] += s * v.z;
}

/// `a × b` for complex `a` and real `b`.
#[inline]
fn cross_cr(a: &CVec, b: &Point3) -> CVec {
    [a[1] * b.z - a[2] * b.y, a[2] * b.x - a[0] * b.z, a[0] * b.y - a[1] * b.x]
}

/// Integrates the 3×3 interaction of the local shapes `(x − p_a)/(2A)` of
/// two triangles.
#[derive(Debug, Clone)]
struct PairIntegrator {
    kind: OperatorKind,
    k: C64,
    q: QuadOrders,
    /// Identical, shared edge, shared vertex.
    singular: [SingularRule; 3],
}

#[derive(Default)]
struct Moments {
    // S: ∬G, ∬G x', ∬G y', ∬G x'·y'.
    i0: C64,
    ix: CVec,
    iy: CVec,
    ixy: C64,
    // C: ∬ x'·(g × y'), ∬ x' × g, ∬ g × y', ∬ g.
    j1: C64,
    jxg: CVec,
    jgy: CVec,
    jg: CVec,
}

impl PairIntegrator {
    fn new(kind: OperatorKind, k: C64, q: QuadOrders, singular_points: Option<usize>) -> Result<Self> {
        q.validate()?;
        let rule = |class| -> Result<SingularRule> {
            Ok(match singular_points {
                Some(m) => build_singular_rule(class, m, q.singular),
                None => sauter_schwab_rule(class, q.singular)?.clone(),
            })
        };
        Ok(Self {
            kind,
            k,
            q,
            singular: [rule(PairClass::Identical)?, rule(PairClass::SharedEdge)?, rule(PairClass::SharedVertex)?],
        })
    }

    #[inline]
    fn accumulate(&self, m: &mut Moments, xs: &Point3, ys: &Point3, d: &Point3, w: f64) {
        let r = d.norm();
        let e = (I * self.k * r).exp();
        match self.kind {
            OperatorKind::S => {
                let g = e * (w / (4.0 * PI * r));
                m.i0 += g;
                axpy(&mut m.ix, g, xs);
                axpy(&mut m.iy, g, ys);
                m.ixy += g * xs.dot(ys);
            }
            OperatorKind::C => {
                let f = (I * self.k * r - 1.0) * e * (w / (4.0 * PI * r * r * r));
                let dy = d.cross(ys);
                m.j1 += f * xs.dot(&dy);
                axpy(&mut m.jxg, f, &xs.cross(d));
                axpy(&mut m.jgy, f, &dy);
                axpy(&mut m.jg, f, d);
            }
        }
    }

    fn coplanar(t: &TriData, s: &TriData) -> bool {
        let tol = 1e-12;
        t.normal.dot(&s.normal).abs() > 1.0 - tol && t.normal.dot(&(s.c - t.c)).abs() <= tol * t.diam.max(s.diam)
    }

    fn local(&self, t: &TriData, s: &TriData) -> Local {
        if self.kind == OperatorKind::C && Self::coplanar(t, s) {
            return ZERO_LOCAL;
        }
        let mut m = Moments::default();
        let shift = t.c - s.c;
        let touching = t.v.iter().any(|p| s.v.contains(p));
        if touching {
            let (class, p1, p2) = touching_order(&t.v, &s.v);
            let rule = &self.singular[match class {
                PairClass::Identical => 0,
                PairClass::SharedEdge => 1,
                _ => 2,
            }];
            let a = p1.map(|i| t.v[i]);
            let b = p2.map(|i| s.v[i]);
            let scale = 4.0 * t.area * s.area;
            for p in &rule.points {
                let x = map_singular(&a, p.x);
                let y = map_singular(&b, p.y);
                self.accumulate(&mut m, &(x - t.c), &(y - s.c), &(x - y), p.weight * scale);
            }
        } else {
            let order = self.q.order_for(regular_class(t, s));
            for (xs, wx) in &t.pts[order] {
                for (ys, wy) in &s.pts[order] {
                    let d = xs - ys + shift;
                    self.accumulate(&mut m, xs, ys, &d, wx * wy);
                }
            }
        }
        self.finish(&m, t, s)
    }

    fn finish(&self, m: &Moments, t: &TriData, s: &TriData) -> Local {
        let mut out = ZERO_LOCAL;
        let p: [Point3; 3] = t.v.map(|v| v - t.c);
        let q: [Point3; 3] = s.v.map(|v| v - s.c);
        match self.kind {
            OperatorKind::S => {
                let vec_factor = -I * self.k / (4.0 * t.area * s.area);
                let div_term = m.i0 / (I * self.k * t.area * s.area);
                for a in 0..3 {
                    let pa_iy = rdot(&p[a], &m.iy);
                    for b in 0..3 {
                        let moment = m.ixy - pa_iy - rdot(&q[b], &m.ix) + m.i0 * p[a].dot(&q[b]);
                        out[a][b] = vec_factor * moment - div_term;
                    }
                }
            }
            OperatorKind::C => {
                let factor = -1.0 / (4.0 * t.area * s.area);
                for a in 0..3 {
                    let pa_jgy = rdot(&p[a], &m.jgy);
                    for b in 0..3 {
                        let jq = cross_cr(&m.jg, &q[b]);
                        let moment = m.j1 - pa_jgy - rdot(&q[b], &m.jxg) + rdot(&p[a], &jq);
                        out[a][b] = moment * factor;
                    }
                }
            }
        }
        out
    }
}

/// Same thresholds as [`crate::quadrature::classify_pair`] for pairs
/// without common vertices, using cached diameters.
fn regular_class(t: &TriData, s: &TriData) -> PairClass {
    let d = t.diam.max(s.diam);
    let delta_sq = t
        .v
        .iter()
        .flat_map(|p| s.v.iter().map(move |q| (p - q).norm_squared()))
        .fold(f64::INFINITY, f64::min);
    let delta = delta_sq.sqrt();
    if delta < d {
        PairClass::Near
    } else if delta < 3.0 * d {
        PairClass::Medium
    } else {
        PairClass::Far
    }
}

/// Entry evaluator for the Galerkin matrix of one operator between two
/// spaces (addressed by dof indices).
pub struct GalerkinEvaluator {
    integrator: PairIntegrator,
    test_tris: Arc<Vec<TriData>>,
    trial_tris: Arc<Vec<TriData>>,
    test_supports: Vec<Vec<Support>>,
    trial_supports: Vec<Vec<Support>>,
}

impl GalerkinEvaluator {
    pub fn new(kind: OperatorKind, test: &FunctionSpace, trial: &FunctionSpace, medium: &Medium, q: QuadOrders) -> Result<Self> {
        Self::with_singular_points(kind, test, trial, medium, q, None)
    }

    /// As [`new`](Self::new), but with `m` Gauss points per dimension in the
    /// singular rules instead of the ones implied by `q.singular`.
    pub fn with_singular_points(
        kind: OperatorKind,
        test: &FunctionSpace,
        trial: &FunctionSpace,
        medium: &Medium,
        q: QuadOrders,
        singular_points: Option<usize>,
    ) -> Result<Self> {
        let integrator = PairIntegrator::new(kind, medium.k, q, singular_points)?;
        let same = test.same_primal(trial);
        // Mixed RWG/BC pairs are evaluated on the common barycentric mesh.
        let (test, trial) = match (same, test.refinement(), trial.refinement()) {
            (true, Some(r), None) | (true, None, Some(r)) => (test.on_refinement(r)?, trial.on_refinement(r)?),
            _ => (test.clone(), trial.clone()),
        };
        if !same {
            check_no_shared_vertices(test.evaluation_mesh(), trial.evaluation_mesh())?;
        } else if test.kind() != trial.kind() && test.refinement().is_none() {
            return Err(BemError::InvalidArgument("inconsistent evaluation meshes".into()));
        }
        let orders = [q.near, q.medium, q.far];
        let test_tris = Arc::new(triangle_data(test.evaluation_mesh(), &orders)?);
        let shared_mesh = same
            && match (test.refinement(), trial.refinement()) {
                (None, None) => true,
                (Some(a), Some(b)) => Arc::ptr_eq(a, b),
                _ => false,
            };
        let trial_tris = if shared_mesh { test_tris.clone() } else { Arc::new(triangle_data(trial.evaluation_mesh(), &orders)?) };
        Ok(Self {
            integrator,
            test_tris,
            trial_tris,
            test_supports: test.supports().to_vec(),
            trial_supports: trial.supports().to_vec(),
        })
    }
}

/// Operators between different scatterers must never see a touching pair.
fn check_no_shared_vertices(a: &SurfaceMesh, b: &SurfaceMesh) -> Result<()> {
    let key = |p: &Point3| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
    let set: HashSet<[u64; 3]> = a.vertices().iter().map(key).collect();
    if b.vertices().iter().any(|p| set.contains(&key(p))) {
        return Err(BemError::InvalidArgument(
            "test and trial meshes differ but share vertices; touching pairs across meshes are not supported".into(),
        ));
    }
    Ok(())
}

type TriangleDofs = Vec<(usize, Vec<(usize, [f64; 3])>)>;

fn group_by_triangle(dofs: &[usize], supports: &[Vec<Support>]) -> TriangleDofs {
    let mut map: BTreeMap<usize, Vec<(usize, [f64; 3])>> = BTreeMap::new();
    for (local, &dof) in dofs.iter().enumerate() {
        for s in &supports[dof] {
            map.entry(s.triangle).or_default().push((local, s.coeffs));
        }
    }
    map.into_iter().collect()
}

impl BlockEvaluator for GalerkinEvaluator {
    fn nrows(&self) -> usize {
        self.test_supports.len()
    }

    fn ncols(&self) -> usize {
        self.trial_supports.len()
    }

    fn evaluate(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        let test = group_by_triangle(rows, &self.test_supports);
        let trial = group_by_triangle(cols, &self.trial_supports);
        for chunk in test.chunks(16) {
            let locals: Vec<Vec<Local>> = chunk
                .par_iter()
                .map(|(t, _)| {
                    trial
                        .iter()
                        .map(|(s, _)| self.integrator.local(&self.test_tris[*t], &self.trial_tris[*s]))
                        .collect()
                })
                .collect();
            for ((_, test_dofs), row) in chunk.iter().zip(&locals) {
                for ((_, trial_dofs), l) in trial.iter().zip(row) {
                    for &(i, c) in test_dofs {
                        let cl: [C64; 3] =
                            std::array::from_fn(|b| l[0][b] * c[0] + l[1][b] * c[1] + l[2][b] * c[2]);
                        for &(j, d) in trial_dofs {
                            out[(i, j)] += cl[0] * d[0] + cl[1] * d[1] + cl[2] * d[2];
                        }
                    }
                }
            }
        }
        out
    }
}

fn dof_geometry(space: &FunctionSpace) -> Vec<DofGeometry> {
    (0..space.dof_count())
        .map(|i| DofGeometry { center: space.dof_center(i), bbox: space.dof_bounding_box(i) })
        .collect()
}

pub fn assemble_operator(
    kind: OperatorKind,
    test: &FunctionSpace,
    trial: &FunctionSpace,
    medium: &Medium,
    q: QuadOrders,
    mode: AssemblyMode,
) -> Result<BoundaryOperatorMatrix> {
    let evaluator = GalerkinEvaluator::new(kind, test, trial, medium, q)?;
    let (storage, provenance) = match mode {
        AssemblyMode::Dense => {
            let rows: Vec<usize> = (0..test.dof_count()).collect();
            let cols: Vec<usize> = (0..trial.dof_count()).collect();
            (OperatorStorage::Dense(evaluator.evaluate(&rows, &cols)), Provenance { nu: None, chi: None, q })
        }
        AssemblyMode::HMatrix(params) => {
            let h = HMatrix::assemble(&evaluator, &dof_geometry(test), &dof_geometry(trial), params)?;
            (OperatorStorage::HMatrix(h), Provenance { nu: Some(params.nu), chi: Some(params.chi), q })
        }
    };
    Ok(BoundaryOperatorMatrix {
        kind,
        k: medium.k,
        test: test.kind(),
        trial: trial.kind(),
        storage,
        counter: MatvecCounter::new(),
        provenance,
    })
}

#[allow(non_snake_case)]
pub fn assemble_S(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    medium: &Medium,
    q: QuadOrders,
    mode: AssemblyMode,
) -> Result<BoundaryOperatorMatrix> {
    assemble_operator(OperatorKind::S, test, trial, medium, q, mode)
}

#[allow(non_snake_case)]
pub fn assemble_C(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    medium: &Medium,
    q: QuadOrders,
    mode: AssemblyMode,
) -> Result<BoundaryOperatorMatrix> {
    assemble_operator(OperatorKind::C, test, trial, medium, q, mode)
}

/// `E(x) = p e^{ik d·x}` with unit direction `d ⟂ p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    direction: Point3,
    polarization: Point3,
}

impl PlaneWave {
    pub fn new(direction: Point3, polarization: Point3) -> Result<Self> {
        if !((direction.norm() - 1.0).abs() <= 1e-9) {
            return Err(BemError::InvalidArgument(format!(
                "plane-wave direction must be a unit vector, |d| = {}",
                direction.norm()
            )));
        }
        if direction.dot(&polarization).abs() > 1e-9 * polarization.norm().max(1.0) {
            return Err(BemError::InvalidArgument("polarization must be orthogonal to the direction".into()));
        }
        Ok(Self { direction, polarization })
    }

    /// The benchmark wave `(0, 0, e^{ikx})`.
    pub fn benchmark() -> Self {
        Self { direction: Point3::x(), polarization: Point3::z() }
    }

    pub fn direction(&self) -> Point3 {
        self.direction
    }

    pub fn polarization(&self) -> Point3 {
        self.polarization
    }

    pub fn electric(&self, k: C64, x: &Point3) -> CVec {
        let e = (I * k * self.direction.dot(x)).exp();
        [e * self.polarization.x, e * self.polarization.y, e * self.polarization.z]
    }

    /// `(1/ik) ∇ × E = (d × p) e^{ik d·x}`.
    pub fn scaled_curl(&self, k: C64, x: &Point3) -> CVec {
        let e = (I * k * self.direction.dot(x)).exp();
        let dp = self.direction.cross(&self.polarization);
        [e * dp.x, e * dp.y, e * dp.z]
    }
}

/// Trace pair `(γ_D E, (k/μ) γ_N E)`, either as expansion coefficients in
/// `space` or tested against it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub space: SpaceKind,
    pub tested: bool,
    pub dirichlet: Vec<C64>,
    pub neumann: Vec<C64>,
}

impl TraceData {
    pub fn zeros(space: SpaceKind, tested: bool, n: usize) -> Self {
        Self { space, tested, dirichlet: vec![ZERO; n], neumann: vec![ZERO; n] }
    }

    pub fn len(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirichlet.is_empty()
    }
}

/// Tests the plane-wave traces against every function of `space` through
/// the anti-symmetric pairing: `⟨a × n, ψ⟩ = −∫ a · ψ`.
pub fn plane_wave_traces(wave: &PlaneWave, medium: &Medium, space: &FunctionSpace, q: &QuadOrders) -> Result<TraceData> {
    q.validate()?;
    let rule = triangle_rule(q.far)?;
    let mesh = space.evaluation_mesh();
    let scale = medium.k / medium.mu;
    let mut out = TraceData::zeros(space.kind(), true, space.dof_count());
    for (i, dof) in space.supports().iter().enumerate() {
        for s in dof {
            let p = mesh.triangle_vertices(s.triangle);
            let area = mesh.area(s.triangle);
            for (xi, w) in rule.points.iter().zip(&rule.weights) {
                let x = map_reference(&p, *xi);
                let psi = local_field(&p, area, &s.coeffs, &x);
                let wt = w * 2.0 * area;
                out.dirichlet[i] -= rdot(&psi, &wave.electric(medium.k, &x)) * wt;
                out.neumann[i] -= scale * rdot(&psi, &wave.scaled_curl(medium.k, &x)) * wt;
            }
        }
    }
    Ok(out)
}

/// One field evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Point3,
    pub value: CVec,
    /// Closer to the surface than 1% of the local mesh size: quadrature
    /// accuracy is not guaranteed.
    pub near_surface: bool,
}

/// `ℋ(Σ m_j φ_j)(x) + ℰ(Σ e_j φ_j)(x)` at every point, with
/// `ℰv = ik∫vG − (1/ik)∫ div v ∇_x G` and `ℋv = ∫ ∇_x G × v`.
pub fn evaluate_potentials(
    space: &FunctionSpace,
    k: C64,
    magnetic: &[C64],
    electric: &[C64],
    points: &[Point3],
    order: usize,
) -> Result<Vec<FieldSample>> {
    let n = space.dof_count();
    if magnetic.len() != n || electric.len() != n {
        return Err(BemError::DimensionMismatch { expected: n, actual: magnetic.len().min(electric.len()) });
    }
    let rule = triangle_rule(order)?;
    let mesh = space.evaluation_mesh();
    // Per-triangle combined coefficients.
    let mut cm = vec![[ZERO; 3]; mesh.num_triangles()];
    let mut ce = vec![[ZERO; 3]; mesh.num_triangles()];
    for (j, dof) in space.supports().iter().enumerate() {
        for s in dof {
            for a in 0..3 {
                cm[s.triangle][a] += magnetic[j] * s.coeffs[a];
                ce[s.triangle][a] += electric[j] * s.coeffs[a];
            }
        }
    }
    struct Q {
        y: Point3,
        w: f64,
        vm: CVec,
        ve: CVec,
        div_e: C64,
    }
    let mut quad = Vec::new();
    for t in 0..mesh.num_triangles() {
        if cm[t].iter().chain(&ce[t]).all(|c| c.norm() == 0.0) {
            continue;
        }
        let p = mesh.triangle_vertices(t);
        let area = mesh.area(t);
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let y = map_reference(&p, *xi);
            let field = |c: &CVec| -> CVec {
                let mut v = [ZERO; 3];
                for a in 0..3 {
                    axpy(&mut v, c[a] / (2.0 * area), &(y - p[a]));
                }
                v
            };
            quad.push(Q {
                y,
                w: w * 2.0 * area,
                vm: field(&cm[t]),
                ve: field(&ce[t]),
                div_e: (ce[t][0] + ce[t][1] + ce[t][2]) / area,
            });
        }
    }
    let primal = space.primal_mesh();
    points
        .iter()
        .map(|x| {
            let (dist, t) = primal.closest_triangle(x);
            let near_surface = dist < 0.01 * primal.diameter(t);
            let mut value = [ZERO; 3];
            for qp in &quad {
                let d = x - qp.y;
                let r = d.norm();
                if r == 0.0 {
                    return Err(BemError::Domain("field evaluated on a quadrature point of the surface".into()));
                }
                let e = (I * k * r).exp();
                let g = e / (4.0 * PI * r);
                let f = (I * k * r - 1.0) * e / (4.0 * PI * r * r * r);
                let grad = [f * d.x, f * d.y, f * d.z];
                // ∇G × v_m
                let h = [
                    grad[1] * qp.vm[2] - grad[2] * qp.vm[1],
                    grad[2] * qp.vm[0] - grad[0] * qp.vm[2],
                    grad[0] * qp.vm[1] - grad[1] * qp.vm[0],
                ];
                for c in 0..3 {
                    value[c] += qp.w * (h[c] + I * k * g * qp.ve[c] - qp.div_e * grad[c] / (I * k));
                }
            }
            Ok(FieldSample { point: *x, value, near_surface })
        })
        .collect()
}

/// Residuals of the discrete Calderón identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalderonReport {
    pub dofs: usize,
    pub samples: usize,
    /// Mean of `‖(S̃² + ¼I − C̃²)x‖ / ‖x‖`.
    pub r1: f64,
    /// Mean of `‖(C̃S̃ + S̃C̃)x‖ / ‖x‖`.
    pub r2: f64,
}

/// Dense operators and mass matrices for strong-form operator products on
/// one closed surface: RWG×RWG Galerkin matrices map to BC coefficients via
/// `M_A⁻¹` (RWG test, BC trial); BC×BC matrices map back to RWG via `M_P⁻¹`
/// (BC test, RWG trial).
pub struct CalderonSystem {
    pub medium: Medium,
    pub rwg: FunctionSpace,
    pub bc: FunctionSpace,
    pub s_rwg: BoundaryOperatorMatrix,
    pub c_rwg: BoundaryOperatorMatrix,
    pub s_bc: BoundaryOperatorMatrix,
    pub c_bc: BoundaryOperatorMatrix,
    pub m_a: crate::spaces::MassMatrix,
    pub m_p: crate::spaces::MassMatrix,
}

impl CalderonSystem {
    pub fn assemble(mesh: &Arc<SurfaceMesh>, medium: &Medium, q: QuadOrders) -> Result<Self> {
        let rwg = build_rwg(mesh)?;
        let bc = build_bc_with_refinement(mesh)?;
        let mut m_a = assemble_mass(&rwg, &bc)?;
        let mut m_p = assemble_mass(&bc, &rwg)?;
        m_a.factorize()?;
        m_p.factorize()?;
        Ok(Self {
            s_rwg: assemble_S(&rwg, &rwg, medium, q, AssemblyMode::Dense)?,
            c_rwg: assemble_C(&rwg, &rwg, medium, q, AssemblyMode::Dense)?,
            s_bc: assemble_S(&bc, &bc, medium, q, AssemblyMode::Dense)?,
            c_bc: assemble_C(&bc, &bc, medium, q, AssemblyMode::Dense)?,
            medium: *medium,
            rwg,
            bc,
            m_a,
            m_p,
        })
    }

    /// `M_P⁻¹ Y_bc M_A⁻¹ X_rwg x`; `None` stands for the zero operator.
    fn product(
        &self,
        outer: Option<&BoundaryOperatorMatrix>,
        inner: Option<&BoundaryOperatorMatrix>,
        x: &[C64],
    ) -> Result<Vec<C64>> {
        let (Some(outer), Some(inner)) = (outer, inner) else {
            return Ok(vec![ZERO; x.len()]);
        };
        let y = self.m_a.solve(&inner.apply(x)?)?;
        self.m_p.solve(&outer.apply(&y)?)
    }

    /// `(‖(S̃² + ¼I − C̃²)x‖, ‖(C̃S̃ + S̃C̃)x‖) / ‖x‖` for one vector.
    pub fn residuals_for(&self, x: &[C64]) -> Result<(f64, f64)> {
        self.residual_pair(x, false)
    }

    fn residual_pair(&self, x: &[C64], zero_s: bool) -> Result<(f64, f64)> {
        let n = x.len();
        let (s_rwg, s_bc) = if zero_s { (None, None) } else { (Some(&self.s_rwg), Some(&self.s_bc)) };
        let xn = norm(x);
        let ss = self.product(s_bc, s_rwg, x)?;
        let cc = self.product(Some(&self.c_bc), Some(&self.c_rwg), x)?;
        let cs = self.product(Some(&self.c_bc), s_rwg, x)?;
        let sc = self.product(s_bc, Some(&self.c_rwg), x)?;
        let res1: Vec<C64> = (0..n).map(|i| ss[i] + 0.25 * x[i] - cc[i]).collect();
        let res2: Vec<C64> = (0..n).map(|i| cs[i] + sc[i]).collect();
        Ok((norm(&res1) / xn, norm(&res2) / xn))
    }

    /// Residuals averaged over `samples` seeded random vectors. With
    /// `zero_s` the electric operator is replaced by zero.
    pub fn residuals(&self, samples: usize, seed: u64, zero_s: bool) -> Result<CalderonReport> {
        let n = self.s_rwg.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut r1, mut r2) = (0.0, 0.0);
        for _ in 0..samples {
            let x: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let (a, b) = self.residual_pair(&x, zero_s)?;
            r1 += a;
            r2 += b;
        }
        Ok(CalderonReport { dofs: n, samples, r1: r1 / samples as f64, r2: r2 / samples as f64 })
    }

    /// RWG coefficients of the tangential trace of a sum of four random
    /// plane waves (tested on BC, solved with `M_P`): a smooth sample.
    pub fn smooth_sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<C64>> {
        let mut tested = vec![ZERO; self.bc.dof_count()];
        for _ in 0..4 {
            let d = loop {
                let v = Point3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if v.norm() > 0.1 {
                    break v.normalize();
                }
            };
            let a = Point3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let p = a - d * d.dot(&a);
            let amplitude = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let t = plane_wave_traces(&PlaneWave::new(d, p)?, &self.medium, &self.bc, &QuadOrders::default())?;
            for (acc, v) in tested.iter_mut().zip(&t.dirichlet) {
                *acc += amplitude * v;
            }
        }
        self.m_p.solve(&tested)
    }

    /// Residuals averaged over `samples` smooth random fields.
    pub fn smooth_residuals(&self, samples: usize, seed: u64) -> Result<CalderonReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut r1, mut r2) = (0.0, 0.0);
        for _ in 0..samples {
            let x = self.smooth_sample(&mut rng)?;
            let (a, b) = self.residual_pair(&x, false)?;
            r1 += a;
            r2 += b;
        }
        Ok(CalderonReport { dofs: self.s_rwg.cols(), samples, r1: r1 / samples as f64, r2: r2 / samples as f64 })
    }
}

/// Calderón residuals for smooth fields (the discretisation-error measure)
/// and for white-noise coefficient vectors (dominated by the highest
/// discrete modes, which do not converge under refinement).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalderonCheck {
    pub smooth: CalderonReport,
    pub white_noise: CalderonReport,
}

fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Calderón identity residuals `r₁`, `r₂` on a closed mesh, 10 samples of
/// each kind.
pub fn verify_calderon(mesh: &Arc<SurfaceMesh>, medium: &Medium, q: QuadOrders) -> Result<CalderonCheck> {
    let system = CalderonSystem::assemble(mesh, medium, q)?;
    Ok(CalderonCheck { smooth: system.smooth_residuals(10, 0)?, white_noise: system.residuals(10, 0, false)? })
}
