//! Scenario files.
//!
//! A scenario is a TOML (or JSON, chosen by the `.json` extension) document:
//!
//! ```toml
//! name = "three cubes"
//!
//! [[geometry.cubes]]
//! side = 0.4
//! origin = [-1.0, 0.0, 0.0]
//!
//! [[geometry.spheres]]
//! radius = 0.5
//! center = [3.0, 0.0, 0.0]
//! subdivisions = 2            # optional, derived from the mesh size
//!
//! [[geometry.meshes]]
//! path = "particle.mesh"      # relative to the scenario file
//! scatterers = [0]            # optional subset of the file's scatterer ids
//!
//! [wave]
//! k_e = 2.1                   # or: frequency_ghz + length_unit_m
//! direction = [1.0, 0.0, 0.0]
//! polarization = [0.0, 0.0, 1.0]
//! amplitude = 1.0
//!
//! [material]
//! index = [1.311, 2.289e-9]   # one value, or a list with one per scatterer
//! mu = 1.0
//! exterior_mu = 1.0
//!
//! [mesh]
//! elements_per_wavelength = 10.0   # h = 2π / (epw · k_e) unless `h` is set
//!
//! [solver]
//! variant = "D"
//! gmres = { tol = 1e-5, restart = 200, max_iterations = 2000 }
//! operator = { quadrature = [4, 3, 2, 6], storage = "dense" }
//! preconditioner = { storage = "hmatrix", nu = 0.1, chi = "inf", quadrature = [1, 1, 1, 1] }
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Complex values are written as a real number or a `[re, im]` pair. A list
//! of per-scatterer values therefore needs explicit pairs:
//! `index = [[1.3, 0.0], [1.5, 0.01]]`.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bem_core::geometry::{generate_cube, generate_sphere, load_mesh, Point3, SurfaceMesh};
use bem_core::hmatrix::HParams;
use bem_core::operators::{AssemblyMode, Medium, PlaneWave};
use bem_core::pmchwt::{AssemblyParams, BiparametricParams, PreconditionerVariant, TransmissionProblem, BENCHMARK_INDEX};
use bem_core::quadrature::QuadOrders;
use bem_core::solver::GmresParams;
use bem_core::C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub geometry: GeometryConfig,
    pub wave: WaveConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default)]
    pub cubes: Vec<CubeSpec>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub meshes: Vec<MeshFileSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeSpec {
    pub side: f64,
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub radius: f64,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivisions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFileSpec {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scatterers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_ghz: Option<f64>,
    /// Length of one model unit in metres; required with `frequency_ghz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_unit_m: Option<f64>,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default = "default_polarization")]
    pub polarization: [f64; 3],
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_polarization() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn one() -> f64 {
    1.0
}

impl WaveConfig {
    pub fn with_wavenumber(k_e: f64) -> Self {
        Self {
            k_e: Some(k_e),
            frequency_ghz: None,
            length_unit_m: None,
            direction: default_direction(),
            polarization: default_polarization(),
            amplitude: 1.0,
        }
    }

    /// Exterior wavenumber in inverse model units.
    pub fn wavenumber(&self) -> Result<f64> {
        let k = match (self.k_e, self.frequency_ghz) {
            (Some(k), None) => k,
            (None, Some(f)) => {
                let unit = self.length_unit_m.ok_or_else(|| {
                    HarnessError::config("wave.frequency_ghz requires wave.length_unit_m (metres per model unit)")
                })?;
                if !(unit > 0.0 && unit.is_finite()) {
                    return Err(HarnessError::config(format!("wave.length_unit_m must be positive, got {unit}")));
                }
                2.0 * PI * f * 1e9 / SPEED_OF_LIGHT * unit
            }
            (Some(_), Some(_)) => {
                return Err(HarnessError::config("give either wave.k_e or wave.frequency_ghz, not both"))
            }
            (None, None) => return Err(HarnessError::config("wave.k_e or wave.frequency_ghz is required")),
        };
        if !(k > 0.0 && k.is_finite()) {
            return Err(HarnessError::config(format!("exterior wavenumber must be positive, got {k}")));
        }
        Ok(k)
    }

    pub fn plane_wave(&self) -> Result<PlaneWave> {
        let d = Point3::from(self.direction);
        if d.norm() == 0.0 {
            return Err(HarnessError::config("wave.direction must be non-zero"));
        }
        let p = Point3::from(self.polarization);
        if p.norm() == 0.0 {
            return Err(HarnessError::config("wave.polarization must be non-zero"));
        }
        Ok(PlaneWave::new(d.normalize(), p.normalize() * self.amplitude)?)
    }
}

/// A complex number given as `x` or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexValue {
    pub fn value(self) -> C64 {
        match self {
            Self::Real(x) => C64::new(x, 0.0),
            Self::Pair([re, im]) => C64::new(re, im),
        }
    }
}

impl From<C64> for ComplexValue {
    fn from(z: C64) -> Self {
        if z.im == 0.0 {
            Self::Real(z.re)
        } else {
            Self::Pair([z.re, z.im])
        }
    }
}

/// One value shared by all scatterers, or one per scatterer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerScatterer {
    Shared(ComplexValue),
    Each(Vec<ComplexValue>),
}

impl PerScatterer {
    fn resolve(&self, m: usize, what: &str) -> Result<Vec<C64>> {
        match self {
            Self::Shared(v) => Ok(vec![v.value(); m]),
            Self::Each(v) if v.len() == m => Ok(v.iter().map(|z| z.value()).collect()),
            Self::Each(v) => Err(HarnessError::config(format!(
                "material.{what} lists {} values for {m} scatterers",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(default = "benchmark_index")]
    pub index: PerScatterer,
    #[serde(default = "unit_mu")]
    pub mu: PerScatterer,
    #[serde(default = "unit_value")]
    pub exterior_mu: ComplexValue,
}

fn benchmark_index() -> PerScatterer {
    PerScatterer::Shared(BENCHMARK_INDEX.into())
}

fn unit_mu() -> PerScatterer {
    PerScatterer::Shared(ComplexValue::Real(1.0))
}

fn unit_value() -> ComplexValue {
    ComplexValue::Real(1.0)
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { index: benchmark_index(), mu: unit_mu(), exterior_mu: unit_value() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "ten")]
    pub elements_per_wavelength: f64,
}

fn ten() -> f64 {
    10.0
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { h: None, elements_per_wavelength: 10.0 }
    }
}

impl MeshConfig {
    pub fn mesh_size(&self, k_e: f64) -> Result<f64> {
        let h = match self.h {
            Some(h) => h,
            None => {
                if !(self.elements_per_wavelength > 0.0) {
                    return Err(HarnessError::config("mesh.elements_per_wavelength must be positive"));
                }
                2.0 * PI / (self.elements_per_wavelength * k_e)
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(HarnessError::config(format!("mesh size must be positive, got {h}")));
        }
        Ok(h)
    }
}

/// Near-field cutoff: a non-negative number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff(pub f64);

impl Default for Cutoff {
    fn default() -> Self {
        Self(f64::INFINITY)
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Cutoff {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Self(f64::INFINITY)),
            t => t
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0)
                .map(Self)
                .ok_or_else(|| HarnessError::config(format!("invalid near-field cutoff {s:?}"))),
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 0.0 => Ok(Self(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("near-field cutoff must be >= 0, got {v}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    #[default]
    Dense,
    Hmatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyConfig {
    /// Orders for near, medium, far and touching pairs.
    #[serde(default = "default_quadrature")]
    pub quadrature: [usize; 4],
    #[serde(default)]
    pub storage: Storage,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default)]
    pub chi: Cutoff,
    #[serde(default = "default_leaf_size")]
    pub leaf_size: usize,
}

fn default_quadrature() -> [usize; 4] {
    [4, 3, 2, 6]
}

fn default_nu() -> f64 {
    1e-3
}

fn default_leaf_size() -> usize {
    HParams::default().leaf_size
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            quadrature: default_quadrature(),
            storage: Storage::Dense,
            nu: default_nu(),
            chi: Cutoff::default(),
            leaf_size: default_leaf_size(),
        }
    }
}

impl AssemblyConfig {
    pub fn params(&self) -> Result<AssemblyParams> {
        let [near, medium, far, singular] = self.quadrature;
        let q = QuadOrders::new(near, medium, far, singular)?;
        let mode = match self.storage {
            Storage::Dense => AssemblyMode::Dense,
            Storage::Hmatrix => {
                AssemblyMode::HMatrix(HParams { nu: self.nu, chi: self.chi.0, leaf_size: self.leaf_size, max_rank: None })
            }
        };
        let params = AssemblyParams { q, mode };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmresConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tol() -> f64 {
    GmresParams::default().tol
}

fn default_restart() -> usize {
    GmresParams::default().restart
}

fn default_max_iterations() -> usize {
    GmresParams::default().max_iterations
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { tol: default_tol(), restart: default_restart(), max_iterations: default_max_iterations() }
    }
}

impl GmresConfig {
    pub fn params(&self) -> Result<GmresParams> {
        let p = GmresParams { tol: self.tol, restart: self.restart, max_iterations: self.max_iterations };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub gmres: GmresConfig,
    #[serde(default)]
    pub operator: AssemblyConfig,
    #[serde(default)]
    pub preconditioner: AssemblyConfig,
}

fn default_variant() -> String {
    "D".into()
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            gmres: GmresConfig::default(),
            operator: AssemblyConfig::default(),
            preconditioner: AssemblyConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn variant(&self) -> Result<PreconditionerVariant> {
        self.variant.parse().map_err(|e: bem_core::BemError| HarnessError::config(e.to_string()))
    }

    pub fn params(&self) -> Result<BiparametricParams> {
        Ok(BiparametricParams { operator: self.operator.params()?, preconditioner: self.preconditioner.params()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Include the solution coefficients in the report.
    #[serde(default = "yes")]
    pub solution: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("bem-output")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), solution: true }
    }
}

/// What each sweep point computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    /// A full scattering solve.
    #[default]
    Solve,
    /// Only the hierarchical electric operator on the whole geometry,
    /// assembled with the preconditioner parameters.
    SOperator,
}

/// Parameter grid: the Cartesian product of all non-empty lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub target: SweepTarget,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_e: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variant: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nu_p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chi_p: Vec<Cutoff>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q_p: Vec<[usize; 4]>,
    /// Index of the grid point used for normalisation.
    #[serde(default)]
    pub reference: usize,
}

/// Field grid on an axis-aligned plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// `"x=0.5"`, `"y=0.2"` or `"z=-1"`.
    pub plane: String,
    /// Range of the first in-plane axis (y for x-planes, x otherwise).
    pub u: [f64; 2],
    /// Range of the second in-plane axis.
    pub v: [f64; 2],
    pub resolution: [usize; 2],
    #[serde(default = "default_field_order")]
    pub order: usize,
}

fn default_field_order() -> usize {
    4
}

impl ScenarioConfig {
    /// Parses TOML, or JSON when `json` is set.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let cfg: Self = if json {
            serde_json::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::config(e.to_string()))
    }

    /// The benchmark: three cubes of side 0.4 one unit apart.
    pub fn three_cubes(k_e: f64) -> Self {
        Self {
            name: Some("three cubes".into()),
            geometry: GeometryConfig {
                cubes: [-1.0, 0.0, 1.0].iter().map(|&x| CubeSpec { side: 0.4, origin: [x, 0.0, 0.0] }).collect(),
                ..Default::default()
            },
            wave: WaveConfig::with_wavenumber(k_e),
            material: MaterialConfig::default(),
            mesh: MeshConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            sweep: None,
            field: None,
        }
    }

    pub fn scatterer_count_hint(&self) -> usize {
        self.geometry.cubes.len() + self.geometry.spheres.len() + self.geometry.meshes.len()
    }

    /// Builds the merged surface mesh; paths are resolved against `base`.
    pub fn build_mesh(&self, base: &Path) -> Result<SurfaceMesh> {
        let g = &self.geometry;
        if g.cubes.is_empty() && g.spheres.is_empty() && g.meshes.is_empty() {
            return Err(HarnessError::config("geometry lists no scatterers"));
        }
        let k = self.wave.wavenumber()?;
        let h = self.mesh.mesh_size(k)?;
        let mut parts = Vec::new();
        for c in &g.cubes {
            if !(c.side > 0.0) {
                return Err(HarnessError::config(format!("cube side must be positive, got {}", c.side)));
            }
            parts.push(generate_cube(c.side, Point3::from(c.origin), h)?);
        }
        for s in &g.spheres {
            if !(s.radius > 0.0) {
                return Err(HarnessError::config(format!("sphere radius must be positive, got {}", s.radius)));
            }
            let subdivisions = match s.subdivisions {
                Some(n) => n,
                None => sphere_subdivisions(s.radius, h)?,
            };
            parts.push(generate_sphere(s.radius, subdivisions)?.translated(Point3::from(s.center)));
        }
        for spec in &g.meshes {
            let path = if spec.path.is_absolute() { spec.path.clone() } else { base.join(&spec.path) };
            let mesh = load_mesh(&path).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
            match &spec.scatterers {
                None => parts.push(mesh),
                Some(ids) => {
                    for &id in ids {
                        if id >= mesh.num_scatterers() {
                            return Err(HarnessError::config(format!(
                                "{} has {} scatterers, id {id} requested",
                                path.display(),
                                mesh.num_scatterers()
                            )));
                        }
                        parts.push(mesh.scatterer(id)?);
                    }
                }
            }
        }
        SurfaceMesh::merge(&parts).map_err(|e| HarnessError::config(format!("invalid geometry: {e}")))
    }

    pub fn build_problem(&self, base: &Path) -> Result<TransmissionProblem> {
        let k = self.wave.wavenumber()?;
        let mesh = self.build_mesh(base)?;
        let m = mesh.num_scatterers();
        let exterior = Medium::new(C64::new(k, 0.0), self.material.exterior_mu.value())?;
        let index = self.material.index.resolve(m, "index")?;
        let mu = self.material.mu.resolve(m, "mu")?;
        let interiors = index
            .iter()
            .zip(&mu)
            .map(|(n, mu)| Medium::with_index(&exterior, *n, *mu))
            .collect::<bem_core::Result<Vec<_>>>()?;
        Ok(TransmissionProblem::new(mesh, exterior, &interiors, self.wave.plane_wave()?)?)
    }
}

/// Smallest subdivision level whose longest edge is at most `h`.
fn sphere_subdivisions(radius: f64, h: f64) -> Result<usize> {
    for n in 0..=6 {
        if generate_sphere(radius, n)?.max_diameter() <= h {
            return Ok(n);
        }
    }
    Err(HarnessError::config(format!("sphere of radius {radius} needs more than 6 subdivisions for h = {h}")))
}
