//! Multi-scatterer PMCHWT system `𝒜 u = (½ℐ − 𝒟ⁱ) u^inc`, its block-diagonal
//! Calderón preconditioners and the preconditioned map
//! `x ↦ M_P⁻¹ P M_A⁻¹ A x` with exact boundary-operator matvec accounting.
//!
//! Unknowns are the scattered-field traces `(γ_D u, γ_N u)` per scatterer,
//! laid out scatterer by scatterer, Dirichlet component first. Every 2×2
//! block has the structure
//!
//! ```text
//! [  C        (μ/k) S ]
//! [ −(k/μ) S   C      ]
//! ```
//!
//! and shares a single `S` and a single `C` matrix between its entries.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::geometry::{generate_cube, Point3, SurfaceMesh};
use crate::hmatrix::HStats;
use crate::operators::{
    assemble_operator, evaluate_potentials, plane_wave_traces, AssemblyMode, BoundaryOperatorMatrix, MatvecCounter,
    Medium, OperatorKind, PlaneWave,
};
use crate::quadrature::QuadOrders;
use crate::solver::{gmres, GmresParams, LinearMap, OperatorMemory, PhaseTiming, SolveReport};
use crate::spaces::{assemble_mass, build_bc_with_refinement, build_rwg, FunctionSpace, MassMatrix, SpaceKind};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Refractive index of the benchmark cubes.
pub const BENCHMARK_INDEX: C64 = C64::new(1.311, 2.289e-9);

/// Mesh size giving ten elements per exterior wavelength.
pub fn wavelength_mesh_size(k_e: f64) -> f64 {
    2.0 * std::f64::consts::PI / (10.0 * k_e)
}

/// Three disjoint cubes of side 0.4 at x-origins −1, 0, 1.
pub fn three_cube_mesh(h: f64) -> Result<SurfaceMesh> {
    let cubes = [-1.0, 0.0, 1.0]
        .iter()
        .map(|&x| generate_cube(0.4, Point3::new(x, 0.0, 0.0), h))
        .collect::<Result<Vec<_>>>()?;
    SurfaceMesh::merge(&cubes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreconditionerVariant {
    None,
    FullA,
    D,
    Di,
    De,
    Si,
    Se,
}

impl PreconditionerVariant {
    pub const ALL: [PreconditionerVariant; 7] = [Self::None, Self::FullA, Self::D, Self::Di, Self::De, Self::Si, Self::Se];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "None",
            Self::FullA => "FullA",
            Self::D => "D",
            Self::Di => "Di",
            Self::De => "De",
            Self::Si => "Si",
            Self::Se => "Se",
        }
    }

    /// Distinct boundary operators assembled for `P`.
    pub fn distinct_operators(self, m: usize) -> usize {
        match self {
            Self::None => 0,
            Self::FullA => 4 * m + 2 * m * (m - 1),
            Self::D => 4 * m,
            Self::Di | Self::De => 2 * m,
            Self::Si | Self::Se => m,
        }
    }

    /// Boundary-operator matvecs per application of `P`.
    pub fn application_cost(self, m: usize) -> u64 {
        let m = m as u64;
        match self {
            Self::None => 0,
            Self::FullA => operator_cost(m as usize),
            Self::D => 8 * m,
            Self::Di | Self::De => 4 * m,
            Self::Si | Self::Se => 2 * m,
        }
    }
}

impl fmt::Display for PreconditionerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconditionerVariant {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                BemError::Configuration(format!("unknown preconditioner variant '{s}' (expected None, FullA, D, Di, De, Si or Se)"))
            })
    }
}

/// Boundary-operator matvecs per application of `A`: `4M² + 4M`.
pub fn operator_cost(m: usize) -> u64 {
    let m = m as u64;
    4 * m * m + 4 * m
}

/// Closed-form solve cost in boundary-operator matvecs for `R` iterations
/// with restart `ρ`.
pub fn predicted_matvecs(variant: PreconditionerVariant, m: usize, r: usize, rho: usize) -> u64 {
    let (m, apps) = (m as u64, (r + r / rho.max(1)) as u64);
    match variant {
        PreconditionerVariant::None => (4 * m * m + 4 * m) * apps,
        PreconditionerVariant::FullA => (8 * m * m + 8 * m) * apps + 4 * m * m + 4 * m,
        PreconditionerVariant::D => (4 * m * m + 12 * m) * apps + 8 * m,
        PreconditionerVariant::Di | PreconditionerVariant::De => (4 * m * m + 8 * m) * apps + 4 * m,
        PreconditionerVariant::Si | PreconditionerVariant::Se => (4 * m * m + 6 * m) * apps + 2 * m,
    }
}

/// Quadrature orders and storage used for one side of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyParams {
    pub q: QuadOrders,
    pub mode: AssemblyMode,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        Self { q: QuadOrders::default(), mode: AssemblyMode::Dense }
    }
}

impl AssemblyParams {
    pub fn validate(&self) -> Result<()> {
        self.q.validate()?;
        if let AssemblyMode::HMatrix(p) = &self.mode {
            p.validate()?;
        }
        Ok(())
    }
}

/// Separate parameters for the operator and the preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiparametricParams {
    pub operator: AssemblyParams,
    pub preconditioner: AssemblyParams,
}

impl BiparametricParams {
    pub fn uniform(params: AssemblyParams) -> Self {
        Self { operator: params, preconditioner: params }
    }

    pub fn validate(&self) -> Result<()> {
        self.operator.validate()?;
        self.preconditioner.validate()
    }
}

/// One scatterer surface with its medium and discrete spaces.
#[derive(Debug, Clone)]
pub struct Scatterer {
    pub mesh: Arc<SurfaceMesh>,
    pub medium: Medium,
    pub rwg: FunctionSpace,
    pub bc: FunctionSpace,
}

#[derive(Debug, Clone)]
pub struct TransmissionProblem {
    mesh: Arc<SurfaceMesh>,
    scatterers: Vec<Scatterer>,
    exterior: Medium,
    wave: PlaneWave,
}

impl TransmissionProblem {
    /// `interiors` holds one medium per scatterer, or a single medium shared
    /// by all of them.
    pub fn new(mesh: SurfaceMesh, exterior: Medium, interiors: &[Medium], wave: PlaneWave) -> Result<Self> {
        let m = mesh.num_scatterers();
        if m == 0 {
            return Err(BemError::Configuration("problem needs at least one scatterer".into()));
        }
        if interiors.len() != 1 && interiors.len() != m {
            return Err(BemError::Configuration(format!(
                "{} interior media given for {m} scatterers",
                interiors.len()
            )));
        }
        let scatterers = (0..m)
            .into_par_iter()
            .map(|i| {
                let medium = interiors[if interiors.len() == 1 { 0 } else { i }];
                let n = medium.k / exterior.k;
                if !(n.re.is_finite() && n.im.is_finite()) {
                    return Err(BemError::Configuration(format!("scatterer {i}: refractive index {n} is not finite")));
                }
                let sub = Arc::new(mesh.scatterer(i)?);
                Ok(Scatterer { rwg: build_rwg(&sub)?, bc: build_bc_with_refinement(&sub)?, mesh: sub, medium })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mesh: Arc::new(mesh), scatterers, exterior, wave })
    }

    /// Three cubes at `k_e` with refractive index `n`, meshed with
    /// `h = 2π/(10 k_e)` unless `h` is given.
    pub fn three_cubes(k_e: f64, n: C64, h: Option<f64>) -> Result<Self> {
        let exterior = Medium::real(k_e)?;
        let interior = Medium::with_index(&exterior, n, ONE)?;
        let mesh = three_cube_mesh(h.unwrap_or_else(|| wavelength_mesh_size(k_e)))?;
        Self::new(mesh, exterior, &[interior], PlaneWave::benchmark())
    }

    pub fn mesh(&self) -> &Arc<SurfaceMesh> {
        &self.mesh
    }

    pub fn scatterers(&self) -> &[Scatterer] {
        &self.scatterers
    }

    pub fn num_scatterers(&self) -> usize {
        self.scatterers.len()
    }

    pub fn exterior(&self) -> &Medium {
        &self.exterior
    }

    pub fn wave(&self) -> &PlaneWave {
        &self.wave
    }

    pub fn with_wave(mut self, wave: PlaneWave) -> Self {
        self.wave = wave;
        self
    }

    /// RWG dofs per scatterer (equal to its BC dofs).
    pub fn dofs(&self, m: usize) -> usize {
        self.scatterers[m].rwg.dof_count()
    }

    /// Length of the global coefficient vector.
    pub fn total_dofs(&self) -> usize {
        (0..self.num_scatterers()).map(|m| 2 * self.dofs(m)).sum()
    }

    /// Index ranges of the `2M` component blocks.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(2 * self.num_scatterers());
        let mut start = 0;
        for m in 0..self.num_scatterers() {
            for _ in 0..2 {
                out.push(start..start + self.dofs(m));
                start += self.dofs(m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

/// What a distinct operator in a [`BlockedOperator`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorRole {
    pub kind: OperatorKind,
    pub side: Side,
    pub test: usize,
    pub trial: usize,
}

impl fmt::Display for OperatorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            OperatorKind::S => "S",
            OperatorKind::C => "C",
        };
        let s = match self.side {
            Side::Interior => "i",
            Side::Exterior => "e",
        };
        if self.test == self.trial {
            write!(f, "{k}{s}[{}]", self.test)
        } else {
            write!(f, "{k}{s}[{},{}]", self.test, self.trial)
        }
    }
}

/// One weighted reference to a shared operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTerm {
    pub weight: C64,
    pub operator: usize,
}

/// A `2M × 2M` grid of sums of weighted, shared boundary operators.
#[derive(Debug, Clone)]
pub struct BlockedOperator {
    operators: Vec<Arc<BoundaryOperatorMatrix>>,
    roles: Vec<OperatorRole>,
    terms: Vec<Vec<Vec<BlockTerm>>>,
    ranges: Vec<Range<usize>>,
    space: SpaceKind,
    counter: MatvecCounter,
    assembly_seconds: Vec<f64>,
}

/// Per-operator assembly summary.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSummary {
    pub label: String,
    pub seconds: f64,
    pub stored_entries: usize,
    pub dense_entries: usize,
}

impl BlockedOperator {
    /// Builds from explicit parts; every operator is re-attached to `counter`.
    pub fn from_parts(
        operators: Vec<BoundaryOperatorMatrix>,
        roles: Vec<OperatorRole>,
        terms: Vec<Vec<Vec<BlockTerm>>>,
        ranges: Vec<Range<usize>>,
        space: SpaceKind,
        counter: MatvecCounter,
    ) -> Result<Self> {
        let nb = ranges.len();
        if roles.len() != operators.len() || terms.len() != nb || terms.iter().any(|row| row.len() != nb) {
            return Err(BemError::Configuration("inconsistent blocked-operator layout".into()));
        }
        for (r, row) in terms.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                for t in cell {
                    let op = operators.get(t.operator).ok_or_else(|| BemError::Block {
                        row: r,
                        col: c,
                        source: Box::new(BemError::Configuration(format!("operator index {} out of range", t.operator))),
                    })?;
                    if op.rows() != ranges[r].len() || op.cols() != ranges[c].len() {
                        return Err(BemError::Block {
                            row: r,
                            col: c,
                            source: Box::new(BemError::Configuration(format!(
                                "operator {} is {}×{}, block is {}×{}",
                                roles[t.operator],
                                op.rows(),
                                op.cols(),
                                ranges[r].len(),
                                ranges[c].len()
                            ))),
                        });
                    }
                }
            }
        }
        let operators = operators
            .into_iter()
            .map(|mut op| {
                op.set_counter(counter.clone());
                Arc::new(op)
            })
            .collect();
        let assembly_seconds = vec![0.0; roles.len()];
        Ok(Self { operators, roles, terms, ranges, space, counter, assembly_seconds })
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn space(&self) -> SpaceKind {
        self.space
    }

    pub fn distinct_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn operators(&self) -> &[Arc<BoundaryOperatorMatrix>] {
        &self.operators
    }

    pub fn roles(&self) -> &[OperatorRole] {
        &self.roles
    }

    pub fn find(&self, role: OperatorRole) -> Option<usize> {
        self.roles.iter().position(|r| *r == role)
    }

    pub fn terms(&self, row: usize, col: usize) -> &[BlockTerm] {
        &self.terms[row][col]
    }

    pub fn counter(&self) -> &MatvecCounter {
        &self.counter
    }

    /// Boundary-operator matvecs per [`apply`](Self::apply).
    pub fn application_cost(&self) -> u64 {
        self.terms.iter().flatten().map(|cell| cell.len() as u64).sum()
    }

    pub fn stored_entries(&self) -> usize {
        self.operators.iter().map(|op| op.stored_entries()).sum()
    }

    pub fn dense_entries(&self) -> usize {
        self.operators.iter().map(|op| op.rows() * op.cols()).sum()
    }

    pub fn memory(&self, name: &str) -> OperatorMemory {
        OperatorMemory {
            name: name.to_string(),
            operators: self.distinct_operators(),
            stored_entries: self.stored_entries(),
            dense_entries: self.dense_entries(),
        }
    }

    pub fn summaries(&self, prefix: &str) -> Vec<OperatorSummary> {
        self.operators
            .iter()
            .zip(&self.roles)
            .zip(&self.assembly_seconds)
            .map(|((op, role), &seconds)| OperatorSummary {
                label: format!("{prefix}:{role}"),
                seconds,
                stored_entries: op.stored_entries(),
                dense_entries: op.rows() * op.cols(),
            })
            .collect()
    }

    pub fn hmatrix_stats(&self) -> Vec<(String, HStats)> {
        self.operators
            .iter()
            .zip(&self.roles)
            .filter_map(|(op, role)| op.hmatrix_stats().map(|s| (role.to_string(), s)))
            .collect()
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.dim() {
            return Err(BemError::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        let mut y = vec![ZERO; x.len()];
        for (r, row) in self.terms.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                for t in cell {
                    let v = self.operators[t.operator]
                        .apply(&x[self.ranges[c].clone()])
                        .map_err(|e| BemError::Block { row: r, col: c, source: Box::new(e) })?;
                    for (yi, vi) in y[self.ranges[r].clone()].iter_mut().zip(&v) {
                        *yi += t.weight * vi;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Dense copy of the whole block matrix (not counted).
    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let n = self.dim();
        let mut out = nalgebra::DMatrix::zeros(n, n);
        let dense: Vec<_> = self.operators.iter().map(|op| op.to_dense()).collect();
        for (r, row) in self.terms.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                for t in cell {
                    let mut view = out.view_mut((self.ranges[r].start, self.ranges[c].start), (self.ranges[r].len(), self.ranges[c].len()));
                    view += &dense[t.operator] * t.weight;
                }
            }
        }
        out
    }
}

/// Incremental builder that deduplicates operators by role.
struct Builder {
    interior: Vec<Medium>,
    exterior: Medium,
    space: SpaceKind,
    roles: Vec<OperatorRole>,
    terms: Vec<Vec<Vec<BlockTerm>>>,
}

impl Builder {
    fn new(problem: &TransmissionProblem, space: SpaceKind) -> Self {
        Self::from_media(problem.scatterers.iter().map(|s| s.medium).collect(), problem.exterior, space)
    }

    fn from_media(interior: Vec<Medium>, exterior: Medium, space: SpaceKind) -> Self {
        let nb = 2 * interior.len();
        Self { interior, exterior, space, roles: Vec::new(), terms: vec![vec![Vec::new(); nb]; nb] }
    }

    fn role(&mut self, role: OperatorRole) -> usize {
        self.roles.iter().position(|r| *r == role).unwrap_or_else(|| {
            self.roles.push(role);
            self.roles.len() - 1
        })
    }

    fn medium(&self, side: Side, m: usize) -> Medium {
        match side {
            Side::Interior => self.interior[m],
            Side::Exterior => self.exterior,
        }
    }

    /// Adds `[[C, μ/k S], [−k/μ S, C]]` (or only its `S` part) for the pair.
    fn add_block(&mut self, side: Side, test: usize, trial: usize, with_c: bool) {
        let medium = self.medium(side, test);
        let s = self.role(OperatorRole { kind: OperatorKind::S, side, test, trial });
        let (r, c) = (2 * test, 2 * trial);
        if with_c {
            let cc = self.role(OperatorRole { kind: OperatorKind::C, side, test, trial });
            self.terms[r][c].push(BlockTerm { weight: ONE, operator: cc });
            self.terms[r + 1][c + 1].push(BlockTerm { weight: ONE, operator: cc });
        }
        self.terms[r][c + 1].push(BlockTerm { weight: medium.mu / medium.k, operator: s });
        self.terms[r + 1][c].push(BlockTerm { weight: -medium.k / medium.mu, operator: s });
    }

    fn finish(self, problem: &TransmissionProblem, params: &AssemblyParams, counter: MatvecCounter) -> Result<BlockedOperator> {
        params.validate()?;
        let space_of = |m: usize| match self.space {
            SpaceKind::Rwg => &problem.scatterers[m].rwg,
            SpaceKind::Bc => &problem.scatterers[m].bc,
        };
        let assembled = self
            .roles
            .par_iter()
            .map(|role| {
                let medium = self.medium(role.side, role.test);
                let start = Instant::now();
                let op = assemble_operator(role.kind, space_of(role.test), space_of(role.trial), &medium, params.q, params.mode)
                    .map_err(|e| BemError::Block { row: 2 * role.test, col: 2 * role.trial, source: Box::new(e) })?;
                Ok((op, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (operators, seconds): (Vec<_>, Vec<_>) = assembled.into_iter().unzip();
        let mut out = BlockedOperator::from_parts(operators, self.roles, self.terms, problem.block_ranges(), self.space, counter)?;
        out.assembly_seconds = seconds;
        Ok(out)
    }
}

fn full_structure(builder: &mut Builder, m: usize) {
    for i in 0..m {
        builder.add_block(Side::Exterior, i, i, true);
        builder.add_block(Side::Interior, i, i, true);
    }
    for i in 0..m {
        for l in 0..m {
            if i != l {
                builder.add_block(Side::Exterior, i, l, true);
            }
        }
    }
}

/// The PMCHWT operator on RWG × RWG.
#[allow(non_snake_case)]
pub fn assemble_A(problem: &TransmissionProblem, params: &AssemblyParams, counter: &MatvecCounter) -> Result<BlockedOperator> {
    let m = problem.num_scatterers();
    let mut builder = Builder::new(problem, SpaceKind::Rwg);
    full_structure(&mut builder, m);
    let a = builder.finish(problem, params, counter.clone())?;
    assert_eq!(a.distinct_operators(), 4 * m + 2 * m * (m - 1), "operator sharing broken");
    Ok(a)
}

/// The preconditioner on BC × BC; `None` for the identity variant.
#[allow(non_snake_case)]
pub fn assemble_P(
    variant: PreconditionerVariant,
    problem: &TransmissionProblem,
    params: &AssemblyParams,
    counter: &MatvecCounter,
) -> Result<Option<BlockedOperator>> {
    let m = problem.num_scatterers();
    let mut builder = Builder::new(problem, SpaceKind::Bc);
    match variant {
        PreconditionerVariant::None => return Ok(None),
        PreconditionerVariant::FullA => full_structure(&mut builder, m),
        _ => {
            for i in 0..m {
                match variant {
                    PreconditionerVariant::D => {
                        builder.add_block(Side::Exterior, i, i, true);
                        builder.add_block(Side::Interior, i, i, true);
                    }
                    PreconditionerVariant::Di => builder.add_block(Side::Interior, i, i, true),
                    PreconditionerVariant::De => builder.add_block(Side::Exterior, i, i, true),
                    PreconditionerVariant::Si => builder.add_block(Side::Interior, i, i, false),
                    PreconditionerVariant::Se => builder.add_block(Side::Exterior, i, i, false),
                    PreconditionerVariant::None | PreconditionerVariant::FullA => unreachable!(),
                }
            }
        }
    }
    let p = builder.finish(problem, params, counter.clone())?;
    debug_assert_eq!(p.distinct_operators(), variant.distinct_operators(m));
    Ok(Some(p))
}

/// Block-diagonal mass matrix: one factorized matrix per scatterer, used for
/// both trace components.
#[derive(Debug)]
pub struct BlockMass {
    blocks: Vec<MassMatrix>,
    ranges: Vec<Range<usize>>,
}

impl BlockMass {
    /// `blocks[m]` is applied to components `2m` and `2m + 1`.
    pub fn new(mut blocks: Vec<MassMatrix>, ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.len() != 2 * blocks.len() {
            return Err(BemError::Configuration(format!(
                "{} mass blocks for {} component ranges",
                blocks.len(),
                ranges.len()
            )));
        }
        for (m, b) in blocks.iter_mut().enumerate() {
            if b.rows() != ranges[2 * m].len() || b.cols() != ranges[2 * m].len() {
                return Err(BemError::Block {
                    row: 2 * m,
                    col: 2 * m,
                    source: Box::new(BemError::Configuration(format!(
                        "mass block is {}×{}, component has {} dofs",
                        b.rows(),
                        b.cols(),
                        ranges[2 * m].len()
                    ))),
                });
            }
            b.factorize().map_err(|e| BemError::Block { row: 2 * m, col: 2 * m, source: Box::new(e) })?;
        }
        Ok(Self { blocks, ranges })
    }

    /// `M_A`: RWG test, BC trial (maps BC coefficients to RWG-tested data).
    pub fn operator_side(problem: &TransmissionProblem) -> Result<Self> {
        let blocks = problem
            .scatterers
            .par_iter()
            .map(|s| assemble_mass(&s.rwg, &s.bc))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, problem.block_ranges())
    }

    /// `M_P`: BC test, RWG trial (maps RWG coefficients to BC-tested data).
    pub fn preconditioner_side(problem: &TransmissionProblem) -> Result<Self> {
        let blocks = problem
            .scatterers
            .par_iter()
            .map(|s| assemble_mass(&s.bc, &s.rwg))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, problem.block_ranges())
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn blocks(&self) -> &[MassMatrix] {
        &self.blocks
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.blockwise(x, |m, v| self.blocks[m].apply(v))
    }

    pub fn solve(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.blockwise(x, |m, v| self.blocks[m].solve(v))
    }

    fn blockwise(&self, x: &[C64], f: impl Fn(usize, &[C64]) -> Result<Vec<C64>>) -> Result<Vec<C64>> {
        if x.len() != self.dim() {
            return Err(BemError::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        let mut out = Vec::with_capacity(x.len());
        for (b, range) in self.ranges.iter().enumerate() {
            out.extend(f(b / 2, &x[range.clone()]).map_err(|e| BemError::Block { row: b, col: b, source: Box::new(e) })?);
        }
        Ok(out)
    }
}

/// `x ↦ M_P⁻¹ P M_A⁻¹ A x`, or `M_A⁻¹ A x` without a preconditioner.
pub struct PreconditionedMap<'a> {
    a: &'a BlockedOperator,
    p: Option<(&'a BlockedOperator, &'a BlockMass)>,
    m_a: &'a BlockMass,
}

pub fn preconditioned_map<'a>(
    p: Option<&'a BlockedOperator>,
    a: &'a BlockedOperator,
    m_p: &'a BlockMass,
    m_a: &'a BlockMass,
) -> Result<PreconditionedMap<'a>> {
    let check = |name: &str, ranges: &[Range<usize>], expected: &[Range<usize>]| -> Result<()> {
        if ranges.len() != expected.len() {
            return Err(BemError::Configuration(format!(
                "{name} has {} blocks, A has {}",
                ranges.len(),
                expected.len()
            )));
        }
        match ranges.iter().zip(expected).position(|(r, e)| r != e) {
            Some(b) => Err(BemError::Configuration(format!("{name} block {b} does not match A's layout"))),
            None => Ok(()),
        }
    };
    if a.space() != SpaceKind::Rwg {
        return Err(BemError::Configuration("A must be assembled on RWG spaces".into()));
    }
    check("M_A", &m_a.ranges, a.block_ranges())?;
    if let Some(p) = p {
        if p.space() != SpaceKind::Bc {
            return Err(BemError::Configuration("P must be assembled on BC spaces".into()));
        }
        check("P", p.block_ranges(), a.block_ranges())?;
        check("M_P", &m_p.ranges, a.block_ranges())?;
    }
    Ok(PreconditionedMap { a, p: p.map(|p| (p, m_p)), m_a })
}

impl PreconditionedMap<'_> {
    /// The same composition without `A`, applied to a right-hand side.
    pub fn precondition_rhs(&self, b: &[C64]) -> Result<Vec<C64>> {
        let y = self.m_a.solve(b)?;
        match self.p {
            Some((p, m_p)) => m_p.solve(&p.apply(&y)?),
            None => Ok(y),
        }
    }
}

impl LinearMap for PreconditionedMap<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.precondition_rhs(&self.a.apply(x)?)
    }
}

/// Incident traces expanded in RWG coefficients (tested on BC, solved with
/// `M_P`), in the global layout.
pub fn incident_coefficients(problem: &TransmissionProblem, m_p: &BlockMass, q: &QuadOrders) -> Result<Vec<C64>> {
    let mut tested = Vec::with_capacity(problem.total_dofs());
    for s in &problem.scatterers {
        let t = plane_wave_traces(&problem.wave, &problem.exterior, &s.bc, q)?;
        tested.extend(t.dirichlet);
        tested.extend(t.neumann);
    }
    m_p.solve(&tested)
}

/// `b = ½⟨u^inc, φ⟩ − 𝒟ⁱ u^inc_h`, reusing the interior operators of `A`
/// (costs `4M` boundary-operator matvecs).
pub fn assemble_rhs(problem: &TransmissionProblem, a: &BlockedOperator, m_p: &BlockMass, q: &QuadOrders) -> Result<Vec<C64>> {
    let m = problem.num_scatterers();
    let u_inc = incident_coefficients(problem, m_p, q)?;
    let mut b = Vec::with_capacity(problem.total_dofs());
    for s in &problem.scatterers {
        let t = plane_wave_traces(&problem.wave, &problem.exterior, &s.rwg, q)?;
        b.extend(t.dirichlet.iter().map(|v| 0.5 * v));
        b.extend(t.neumann.iter().map(|v| 0.5 * v));
    }
    let ranges = a.block_ranges();
    for i in 0..m {
        let medium = problem.scatterers[i].medium;
        let lookup = |kind| {
            a.find(OperatorRole { kind, side: Side::Interior, test: i, trial: i })
                .ok_or_else(|| BemError::Configuration(format!("A lacks the interior operators of scatterer {i}")))
        };
        let (s, c) = (&a.operators[lookup(OperatorKind::S)?], &a.operators[lookup(OperatorKind::C)?]);
        let (rd, rn) = (ranges[2 * i].clone(), ranges[2 * i + 1].clone());
        let (xd, xn) = (&u_inc[rd.clone()], &u_inc[rn.clone()]);
        let (cd, sn, sd, cn) = (c.apply(xd)?, s.apply(xn)?, s.apply(xd)?, c.apply(xn)?);
        let (w_up, w_down) = (medium.mu / medium.k, -medium.k / medium.mu);
        for (j, idx) in rd.enumerate() {
            b[idx] -= cd[j] + w_up * sn[j];
        }
        for (j, idx) in rn.enumerate() {
            b[idx] -= w_down * sd[j] + cn[j];
        }
    }
    Ok(b)
}

/// Outcome of a full PMCHWT solve.
#[derive(Debug, Clone)]
pub struct PmchwtSolution {
    pub variant: PreconditionerVariant,
    pub scatterers: usize,
    pub dofs: usize,
    pub report: SolveReport,
    /// Matvecs spent on `𝒟ⁱ u^inc` while forming `b`.
    pub rhs_matvecs: u64,
    /// Closed-form prediction for the solve-phase matvecs.
    pub predicted_matvecs: u64,
    pub operator_assemblies: usize,
    pub preconditioner_assemblies: usize,
    pub operators: Vec<OperatorSummary>,
}

impl PmchwtSolution {
    pub fn coefficients(&self) -> &[C64] {
        &self.report.solution
    }

    pub fn matvec_identity_holds(&self) -> bool {
        self.report.bio_matvecs == Some(self.predicted_matvecs)
    }
}

/// Assembles everything, forms the right-hand side and runs GMRES.
pub fn solve(
    problem: &TransmissionProblem,
    variant: PreconditionerVariant,
    params: &BiparametricParams,
    gmres_params: &GmresParams,
) -> Result<PmchwtSolution> {
    params.validate()?;
    gmres_params.validate()?;
    let m = problem.num_scatterers();
    let counter = MatvecCounter::new();
    let mut timings = Vec::new();
    let mut timed = |phase: &str, start: Instant| timings.push(PhaseTiming { phase: phase.into(), seconds: start.elapsed().as_secs_f64() });

    let t = Instant::now();
    let a = assemble_A(problem, &params.operator, &counter)?;
    timed("assemble_operator", t);
    let t = Instant::now();
    let p = assemble_P(variant, problem, &params.preconditioner, &counter)?;
    timed("assemble_preconditioner", t);
    let t = Instant::now();
    let m_a = BlockMass::operator_side(problem)?;
    let m_p = BlockMass::preconditioner_side(problem)?;
    timed("mass_matrices", t);

    let t = Instant::now();
    let before = counter.get();
    let b = assemble_rhs(problem, &a, &m_p, &params.operator.q)?;
    let rhs_matvecs = counter.get() - before;
    timed("rhs", t);

    let t = Instant::now();
    let start = counter.get();
    let map = preconditioned_map(p.as_ref(), &a, &m_p, &m_a)?;
    let c = map.precondition_rhs(&b)?;
    let mut report = gmres(&map, &c, gmres_params)?;
    report.bio_matvecs = Some(counter.get() - start);
    timed("gmres", t);

    report.timings = timings;
    report.memory.push(a.memory("A"));
    if let Some(p) = &p {
        report.memory.push(p.memory("P"));
    }
    let mut operators = a.summaries("A");
    if let Some(p) = &p {
        operators.extend(p.summaries("P"));
    }
    let predicted = predicted_matvecs(variant, m, report.iterations, gmres_params.restart);
    Ok(PmchwtSolution {
        variant,
        scatterers: m,
        dofs: problem.total_dofs(),
        rhs_matvecs,
        predicted_matvecs: predicted,
        operator_assemblies: a.distinct_operators(),
        preconditioner_assemblies: p.as_ref().map_or(0, |p| p.distinct_operators()),
        operators,
        report,
    })
}

/// Random dense stand-ins for every operator of `A` and `P`, with identity
/// mass matrices. Exercises the exact matvec accounting of the solve path
/// without any discretisation.
pub struct SyntheticSystem {
    pub variant: PreconditionerVariant,
    pub scatterers: usize,
    pub a: BlockedOperator,
    pub p: Option<BlockedOperator>,
    pub m_a: BlockMass,
    pub m_p: BlockMass,
    pub rhs: Vec<C64>,
}

impl SyntheticSystem {
    /// `n` dofs per trace component and scatterer.
    pub fn new(variant: PreconditionerVariant, scatterers: usize, n: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if scatterers == 0 || n == 0 {
            return Err(BemError::InvalidArgument("synthetic system needs M >= 1 and n >= 1".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let medium = Medium::real(1.0)?;
        let ranges: Vec<Range<usize>> = (0..2 * scatterers).map(|b| b * n..(b + 1) * n).collect();
        let counter = MatvecCounter::new();
        let mut random_op = |role: &OperatorRole, space| {
            let scale = 1.0 / (n as f64).sqrt();
            let matrix = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                let z = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale;
                if i == j { z + 1.0 } else { z }
            });
            BoundaryOperatorMatrix::from_dense(role.kind, medium.k, space, space, matrix)
        };
        let mut build = |builder: Builder| -> Result<BlockedOperator> {
            let ops = builder.roles.iter().map(|r| random_op(r, builder.space)).collect();
            BlockedOperator::from_parts(ops, builder.roles, builder.terms, ranges.clone(), builder.space, counter.clone())
        };
        let mut a_builder = Builder::from_media(vec![medium; scatterers], medium, SpaceKind::Rwg);
        full_structure(&mut a_builder, scatterers);
        let a = build(a_builder)?;
        let mut p_builder = Builder::from_media(vec![medium; scatterers], medium, SpaceKind::Bc);
        let p = match variant {
            PreconditionerVariant::None => None,
            PreconditionerVariant::FullA => {
                full_structure(&mut p_builder, scatterers);
                Some(build(p_builder)?)
            }
            v => {
                for i in 0..scatterers {
                    match v {
                        PreconditionerVariant::D => {
                            p_builder.add_block(Side::Exterior, i, i, true);
                            p_builder.add_block(Side::Interior, i, i, true);
                        }
                        PreconditionerVariant::Di => p_builder.add_block(Side::Interior, i, i, true),
                        PreconditionerVariant::De => p_builder.add_block(Side::Exterior, i, i, true),
                        PreconditionerVariant::Si => p_builder.add_block(Side::Interior, i, i, false),
                        _ => p_builder.add_block(Side::Exterior, i, i, false),
                    }
                }
                Some(build(p_builder)?)
            }
        };
        let identity = |test, trial| {
            (0..scatterers)
                .map(|_| MassMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect(), test, trial))
                .collect::<Result<Vec<_>>>()
        };
        let m_a = BlockMass::new(identity(SpaceKind::Rwg, SpaceKind::Bc)?, ranges.clone())?;
        let m_p = BlockMass::new(identity(SpaceKind::Bc, SpaceKind::Rwg)?, ranges.clone())?;
        let rhs = (0..2 * scatterers * n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        Ok(Self { variant, scatterers, a, p, m_a, m_p, rhs })
    }

    /// Runs exactly `iterations` GMRES steps (the tolerance is unreachable)
    /// with restart `rho`; returns the instrumented matvec total and the
    /// iteration count reported by the solver.
    pub fn run(&self, iterations: usize, rho: usize) -> Result<(u64, usize)> {
        let counter = self.a.counter();
        let start = counter.get();
        let map = preconditioned_map(self.p.as_ref(), &self.a, &self.m_p, &self.m_a)?;
        let c = map.precondition_rhs(&self.rhs)?;
        let params = GmresParams { tol: f64::MIN_POSITIVE, restart: rho, max_iterations: iterations };
        let report = gmres(&map, &c, &params)?;
        Ok((counter.get() - start, report.iterations))
    }
}

/// Where a field point lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Exterior,
    Interior(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub point: Point3,
    pub region: Region,
    /// Total electric field.
    pub value: [C64; 3],
    pub near_surface: bool,
}

/// Evaluates one representation formula: the exterior one (scattered field
/// plus incident wave) or the interior one of scatterer `m` (total field).
/// The region is taken as given, so evaluating a representation outside its
/// own domain yields the (ideally vanishing) null field.
pub fn represent_field(
    problem: &TransmissionProblem,
    solution: &[C64],
    incident: &[C64],
    points: &[Point3],
    region: Region,
    order: usize,
) -> Result<Vec<FieldPoint>> {
    let n = problem.total_dofs();
    if solution.len() != n || incident.len() != n {
        return Err(BemError::DimensionMismatch { expected: n, actual: solution.len().min(incident.len()) });
    }
    let ranges = problem.block_ranges();
    let mut values = vec![[ZERO; 3]; points.len()];
    let mut near = vec![false; points.len()];
    let mut accumulate = |samples: Vec<crate::operators::FieldSample>| {
        for (i, s) in samples.into_iter().enumerate() {
            for c in 0..3 {
                values[i][c] += s.value[c];
            }
            near[i] |= s.near_surface;
        }
    };
    match region {
        Region::Exterior => {
            let ext = problem.exterior;
            for (m, s) in problem.scatterers.iter().enumerate() {
                let mag: Vec<C64> = solution[ranges[2 * m].clone()].iter().map(|v| -v).collect();
                let ele: Vec<C64> = solution[ranges[2 * m + 1].clone()].iter().map(|v| -v * ext.mu / ext.k).collect();
                accumulate(evaluate_potentials(&s.rwg, ext.k, &mag, &ele, points, order)?);
            }
            for (i, x) in points.iter().enumerate() {
                let e = problem.wave.electric(ext.k, x);
                for c in 0..3 {
                    values[i][c] += e[c];
                }
            }
        }
        Region::Interior(m) => {
            let s = problem
                .scatterers
                .get(m)
                .ok_or_else(|| BemError::InvalidArgument(format!("scatterer {m} out of range")))?;
            let (rd, rn) = (ranges[2 * m].clone(), ranges[2 * m + 1].clone());
            let mag: Vec<C64> = rd.map(|j| solution[j] + incident[j]).collect();
            let ele: Vec<C64> = rn.map(|j| (solution[j] + incident[j]) * s.medium.mu / s.medium.k).collect();
            accumulate(evaluate_potentials(&s.rwg, s.medium.k, &mag, &ele, points, order)?);
        }
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| FieldPoint { point: *p, region, value: values[i], near_surface: near[i] })
        .collect())
}

/// Total electric field at arbitrary points, choosing the representation by
/// the region each point lies in.
pub fn evaluate_fields(
    problem: &TransmissionProblem,
    solution: &[C64],
    points: &[Point3],
    q: &QuadOrders,
    order: usize,
) -> Result<Vec<FieldPoint>> {
    let m_p = BlockMass::preconditioner_side(problem)?;
    let incident = incident_coefficients(problem, &m_p, q)?;
    let regions: Vec<Region> = points
        .par_iter()
        .map(|x| problem.mesh.containing_scatterer(x).map_or(Region::Exterior, Region::Interior))
        .collect();
    let mut out: Vec<Option<FieldPoint>> = vec![None; points.len()];
    let mut groups = vec![Region::Exterior];
    groups.extend((0..problem.num_scatterers()).map(Region::Interior));
    for region in groups {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| regions[i] == region).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Point3> = idx.iter().map(|&i| points[i]).collect();
        for (i, f) in idx.into_iter().zip(represent_field(problem, solution, &incident, &pts, region, order)?) {
            out[i] = Some(f);
        }
    }
    Ok(out.into_iter().map(|f| f.expect("every point is assigned a region")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_cube;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_problem(m: usize) -> TransmissionProblem {
        let cubes: Vec<_> = (0..m)
            .map(|i| generate_cube(0.4, Point3::new(i as f64, 0.0, 0.0), 0.4).unwrap())
            .collect();
        let ext = Medium::real(2.1).unwrap();
        let int = Medium::with_index(&ext, BENCHMARK_INDEX, ONE).unwrap();
        TransmissionProblem::new(SurfaceMesh::merge(&cubes).unwrap(), ext, &[int], PlaneWave::benchmark()).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn predicted_examples() {
        use PreconditionerVariant::*;
        assert_eq!(predicted_matvecs(D, 3, 6, 200), 456);
        assert_eq!(predicted_matvecs(D, 3, 9, 200), 672);
        assert_eq!(predicted_matvecs(None, 1, 0, 1), 0);
    }

    #[test]
    fn predicted_is_cost_times_applications_plus_rhs() {
        for v in PreconditionerVariant::ALL {
            for m in 1..5 {
                for (r, rho) in [(0, 1), (7, 3), (250, 200), (13, 1)] {
                    let apps = (r + r / rho) as u64;
                    let expected = (operator_cost(m) + v.application_cost(m)) * apps + v.application_cost(m);
                    assert_eq!(predicted_matvecs(v, m, r, rho), expected, "{v} M={m} R={r} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn variant_parsing() {
        for v in PreconditionerVariant::ALL {
            assert_eq!(v.name().to_lowercase().parse::<PreconditionerVariant>().unwrap(), v);
        }
        assert!("Dx".parse::<PreconditionerVariant>().is_err());
    }

    #[test]
    fn sharing_and_per_application_costs() {
        let problem = small_problem(3);
        let counter = MatvecCounter::new();
        let q = AssemblyParams { q: QuadOrders::MINIMAL, mode: AssemblyMode::Dense };
        let a = assemble_A(&problem, &q, &counter).unwrap();
        assert_eq!(a.distinct_operators(), 24);
        assert_eq!(a.application_cost(), 48);
        let x = random(a.dim(), 1);
        a.apply(&x).unwrap();
        assert_eq!(counter.get(), 48);
        let expected = [(PreconditionerVariant::D, 12, 72), (PreconditionerVariant::Di, 6, 60), (PreconditionerVariant::Si, 3, 54)];
        for (v, ops, per_app) in expected {
            let p = assemble_P(v, &problem, &q, &counter).unwrap().unwrap();
            assert_eq!(p.distinct_operators(), ops);
            assert_eq!(a.application_cost() + p.application_cost(), per_app);
            // Within every 2×2 block the two C entries and the two S entries
            // reference one operator each.
            for i in 0..3 {
                let diag = |r: usize, c: usize| p.terms(2 * i + r, 2 * i + c).iter().map(|t| t.operator).collect::<Vec<_>>();
                assert_eq!(diag(0, 0), diag(1, 1));
                assert_eq!(diag(0, 1), diag(1, 0));
            }
        }
        assert!(assemble_P(PreconditionerVariant::None, &problem, &q, &counter).unwrap().is_none());
    }

    #[test]
    fn single_scatterer_has_no_coupling() {
        let problem = small_problem(1);
        let q = AssemblyParams { q: QuadOrders::MINIMAL, mode: AssemblyMode::Dense };
        let a = assemble_A(&problem, &q, &MatvecCounter::new()).unwrap();
        assert_eq!(a.distinct_operators(), 4);
        assert_eq!(a.application_cost(), 8);
    }

    #[test]
    fn map_columns_match_dense_composition() {
        let problem = small_problem(2);
        let counter = MatvecCounter::new();
        let q = AssemblyParams { q: QuadOrders::MINIMAL, mode: AssemblyMode::Dense };
        let a = assemble_A(&problem, &q, &counter).unwrap();
        let p = assemble_P(PreconditionerVariant::Di, &problem, &q, &counter).unwrap().unwrap();
        let m_a = BlockMass::operator_side(&problem).unwrap();
        let m_p = BlockMass::preconditioner_side(&problem).unwrap();
        let map = preconditioned_map(Some(&p), &a, &m_p, &m_a).unwrap();
        let n = a.dim();
        let dense_mass = |bm: &BlockMass| {
            let mut out = DMatrix::<C64>::zeros(n, n);
            for (b, r) in bm.ranges.iter().enumerate() {
                let d = bm.blocks[b / 2].to_dense().map(|v| C64::new(v, 0.0));
                out.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&d);
            }
            out
        };
        let ma_inv = dense_mass(&m_a).try_inverse().unwrap();
        let mp_inv = dense_mass(&m_p).try_inverse().unwrap();
        let full = &mp_inv * p.to_dense() * &ma_inv * a.to_dense();
        for j in [0, n / 3, n - 1] {
            let mut e = vec![ZERO; n];
            e[j] = ONE;
            let col = map.apply(&e).unwrap();
            let diff: f64 = col.iter().enumerate().map(|(i, v)| (v - full[(i, j)]).norm_sqr()).sum::<f64>().sqrt();
            let scale: f64 = full.column(j).norm();
            assert!(diff <= 1e-9 * scale, "column {j}: {diff:e} vs {scale:e}");
        }
    }

    #[test]
    fn rhs_costs_four_m_and_vanishes_without_incident_field() {
        let problem = small_problem(2);
        let counter = MatvecCounter::new();
        let q = AssemblyParams { q: QuadOrders::MINIMAL, mode: AssemblyMode::Dense };
        let a = assemble_A(&problem, &q, &counter).unwrap();
        let m_p = BlockMass::preconditioner_side(&problem).unwrap();
        let b = assemble_rhs(&problem, &a, &m_p, &q.q).unwrap();
        assert_eq!(counter.get(), 8);
        assert!(b.iter().any(|v| v.norm() > 0.0));
        let silent = problem.clone().with_wave(PlaneWave::new(Point3::x(), Point3::zeros()).unwrap());
        let b = assemble_rhs(&silent, &a, &m_p, &q.q).unwrap();
        assert!(b.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn layout_errors_name_the_block() {
        let problem = small_problem(2);
        let q = AssemblyParams { q: QuadOrders::MINIMAL, mode: AssemblyMode::Dense };
        let a = assemble_A(&problem, &q, &MatvecCounter::new()).unwrap();
        let other = small_problem(1);
        let m_a = BlockMass::operator_side(&other).unwrap();
        let m_p = BlockMass::preconditioner_side(&other).unwrap();
        let err = preconditioned_map(None, &a, &m_p, &m_a).err().unwrap();
        assert!(matches!(err, BemError::Configuration(_)), "{err}");
        let bad = BoundaryOperatorMatrix::from_dense(OperatorKind::S, ONE, SpaceKind::Rwg, SpaceKind::Rwg, DMatrix::zeros(3, 3));
        let role = OperatorRole { kind: OperatorKind::S, side: Side::Interior, test: 0, trial: 0 };
        let terms = vec![vec![vec![BlockTerm { weight: ONE, operator: 0 }], vec![]], vec![vec![], vec![]]];
        let err = BlockedOperator::from_parts(vec![bad], vec![role], terms, vec![0..4, 4..8], SpaceKind::Rwg, MatvecCounter::new())
            .err()
            .unwrap();
        assert!(matches!(err, BemError::Block { row: 0, col: 0, .. }), "{err}");
    }

    #[test]
    fn synthetic_counts_match_prediction() {
        for v in PreconditionerVariant::ALL {
            for m in 1..=2 {
                let sys = SyntheticSystem::new(v, m, 12, 3).unwrap();
                for (r, rho) in [(0, 1), (5, 2), (9, 200), (7, 1)] {
                    let (count, iters) = sys.run(r, rho).unwrap();
                    assert_eq!(iters, r);
                    assert_eq!(count, predicted_matvecs(v, m, r, rho), "{v} M={m} R={r} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn invalid_problem_configurations() {
        let ext = Medium::real(1.0).unwrap();
        let mesh = SurfaceMesh::merge(&[
            generate_cube(0.4, Point3::zeros(), 0.4).unwrap(),
            generate_cube(0.4, Point3::new(1.0, 0.0, 0.0), 0.4).unwrap(),
        ])
        .unwrap();
        let err = TransmissionProblem::new(mesh, ext, &[ext, ext, ext], PlaneWave::benchmark());
        assert!(matches!(err, Err(BemError::Configuration(_))));
    }
}
