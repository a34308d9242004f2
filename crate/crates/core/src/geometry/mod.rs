//! Triangulated scatterer surfaces.
//!
//! A [`SurfaceMesh`] holds one or more closed, outward-oriented triangle
//! surfaces, each tagged with a scatterer id. Meshes are immutable once
//! built; every constructor that accepts external data validates the
//! manifold, orientation, positivity and disjointness invariants.

mod generate;
mod intersect;
mod io;
mod refine;

pub use generate::{generate_cube, generate_sphere};
pub use io::{load_mesh, parse_gmsh_v2, parse_mesh, save_mesh, write_mesh};
pub use refine::{barycentric_refine, BarycentricRefinement};

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{BemError, Result};

pub type Point3 = Vector3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn empty() -> Self {
        Self {
            min: Point3::repeat(f64::INFINITY),
            max: Point3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut bbox = Self::empty();
        for p in points {
            bbox.include_point(p);
        }
        bbox
    }

    pub fn include_point(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn include_box(&mut self, other: &BoundingBox) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn center(&self) -> Point3 {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Index of the longest axis.
    pub fn longest_axis(&self) -> usize {
        self.extent().imax()
    }

    /// Euclidean distance between two boxes; zero when they overlap or touch.
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        let mut sq = 0.0;
        for d in 0..3 {
            let gap = (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]);
            if gap > 0.0 {
                sq += gap * gap;
            }
        }
        sq.sqrt()
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        (0..3).all(|d| self.min[d] <= other.max[d] && other.min[d] <= self.max[d])
    }
}

/// An edge of the triangulation with its (ordered) incident triangles.
///
/// `vertices` is stored lowest index first. Each incident triangle is
/// recorded together with the local index of the edge, where local edge `a`
/// is the edge opposite local vertex `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: Vec<(usize, usize)>,
}

/// Oriented, closed surface triangulation of `M` scatterers.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
    scatterer_ids: Vec<usize>,
    num_scatterers: usize,
    areas: Vec<f64>,
    normals: Vec<Point3>,
    centroids: Vec<Point3>,
    diameters: Vec<f64>,
    edges: Vec<Edge>,
    triangle_edges: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    /// Builds a mesh and checks every mesh invariant.
    pub fn new(
        vertices: Vec<Point3>,
        triangles: Vec<[usize; 3]>,
        scatterer_ids: Vec<usize>,
    ) -> Result<Self> {
        if triangles.len() != scatterer_ids.len() {
            return Err(BemError::InvalidArgument(format!(
                "{} triangles but {} scatterer ids",
                triangles.len(),
                scatterer_ids.len()
            )));
        }
        if triangles.is_empty() {
            return Err(BemError::Validation("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(BemError::Validation(format!(
                    "triangle {t} references vertex {bad}, but only {} vertices exist",
                    vertices.len()
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(BemError::Validation(format!("triangle {t} repeats a vertex")));
            }
        }
        let mesh = Self::new_unchecked(vertices, triangles, scatterer_ids);
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh without checking topology. Callers guarantee validity.
    pub(crate) fn new_unchecked(
        vertices: Vec<Point3>,
        triangles: Vec<[usize; 3]>,
        scatterer_ids: Vec<usize>,
    ) -> Self {
        let n = triangles.len();
        let mut areas = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        let mut diameters = Vec::with_capacity(n);
        for tri in &triangles {
            let [a, b, c] = tri.map(|v| vertices[v]);
            let cross = (b - a).cross(&(c - a));
            let norm = cross.norm();
            areas.push(0.5 * norm);
            normals.push(if norm > 0.0 { cross / norm } else { Point3::zeros() });
            centroids.push((a + b + c) / 3.0);
            diameters.push((b - a).norm().max((c - b).norm()).max((a - c).norm()));
        }
        let num_scatterers = scatterer_ids.iter().copied().max().map_or(0, |m| m + 1);
        let (edges, triangle_edges) = build_edges(&triangles);
        Self {
            vertices,
            triangles,
            scatterer_ids,
            num_scatterers,
            areas,
            normals,
            centroids,
            diameters,
            edges,
            triangle_edges,
        }
    }

    /// Checks positivity, closed-manifold orientation and scatterer disjointness.
    pub fn validate(&self) -> Result<()> {
        for (t, &area) in self.areas.iter().enumerate() {
            let scale = self.diameters[t];
            if !(area > 1e-14 * scale * scale) {
                return Err(BemError::Validation(format!(
                    "triangle {t} has non-positive area {area:e}"
                )));
            }
        }
        let mut present = vec![false; self.num_scatterers];
        for &s in &self.scatterer_ids {
            present[s] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(BemError::Validation(format!(
                "scatterer id {missing} has no triangles (ids must be contiguous from 0)"
            )));
        }

        let mut offending = Vec::new();
        for edge in &self.edges {
            let ok = match edge.triangles.as_slice() {
                [(t1, a1), (t2, a2)] => {
                    let d1 = self.directed_edge(*t1, *a1);
                    let d2 = self.directed_edge(*t2, *a2);
                    d1.0 == d2.1
                        && d1.1 == d2.0
                        && self.scatterer_ids[*t1] == self.scatterer_ids[*t2]
                }
                _ => false,
            };
            if !ok {
                offending.push(edge);
            }
        }
        if !offending.is_empty() {
            let listed: Vec<String> = offending
                .iter()
                .take(20)
                .map(|e| {
                    format!(
                        "({}, {}) used by {} triangle(s)",
                        e.vertices[0],
                        e.vertices[1],
                        e.triangles.len()
                    )
                })
                .collect();
            return Err(BemError::Validation(format!(
                "{} non-manifold or inconsistently oriented edge(s): {}",
                offending.len(),
                listed.join("; ")
            )));
        }

        self.check_disjoint()
    }

    fn directed_edge(&self, t: usize, local: usize) -> (usize, usize) {
        let tri = self.triangles[t];
        (tri[(local + 1) % 3], tri[(local + 2) % 3])
    }

    fn check_disjoint(&self) -> Result<()> {
        if self.num_scatterers < 2 {
            return Ok(());
        }
        let boxes: Vec<BoundingBox> = (0..self.num_scatterers)
            .map(|m| self.scatterer_bounding_box(m))
            .collect();
        let tri_boxes: Vec<BoundingBox> = (0..self.num_triangles())
            .map(|t| BoundingBox::from_points(self.triangle_vertices(t).iter()))
            .collect();
        for m in 0..self.num_scatterers {
            for l in (m + 1)..self.num_scatterers {
                if !boxes[m].intersects(&boxes[l]) {
                    continue;
                }
                let tm: Vec<usize> = self.scatterer_triangles(m).collect();
                let tl: Vec<usize> = self.scatterer_triangles(l).collect();
                for &a in &tm {
                    if !tri_boxes[a].intersects(&boxes[l]) {
                        continue;
                    }
                    for &b in &tl {
                        if tri_boxes[a].intersects(&tri_boxes[b])
                            && intersect::triangles_intersect(
                                &self.triangle_vertices(a),
                                &self.triangle_vertices(b),
                            )
                        {
                            return Err(BemError::Validation(format!(
                                "scatterers {m} and {l} intersect (triangles {a} and {b})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn scatterer_ids(&self) -> &[usize] {
        &self.scatterer_ids
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_scatterers(&self) -> usize {
        self.num_scatterers
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn normal(&self, t: usize) -> Point3 {
        self.normals[t]
    }

    pub fn centroid(&self, t: usize) -> Point3 {
        self.centroids[t]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.diameters[t]
    }

    pub fn triangle_vertices(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    /// Edges sorted by their (low, high) vertex pair.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Global edge index of local edge `a` (opposite local vertex `a`) of each triangle.
    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().copied().fold(0.0, f64::max)
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::from_points(self.vertices.iter())
    }

    pub fn scatterer_triangles(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.scatterer_ids
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == m)
            .map(|(t, _)| t)
    }

    pub fn scatterer_bounding_box(&self, m: usize) -> BoundingBox {
        let mut bbox = BoundingBox::empty();
        for t in self.scatterer_triangles(m) {
            for p in self.triangle_vertices(t) {
                bbox.include_point(&p);
            }
        }
        bbox
    }

    /// Extracts the surface of scatterer `m` as a standalone mesh with id 0.
    pub fn scatterer(&self, m: usize) -> Result<SurfaceMesh> {
        if m >= self.num_scatterers {
            return Err(BemError::InvalidArgument(format!(
                "scatterer {m} out of range (mesh has {})",
                self.num_scatterers
            )));
        }
        let mut remap = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for t in self.scatterer_triangles(m) {
            let tri = self.triangles[t].map(|v| {
                *remap.entry(v).or_insert_with(|| {
                    vertices.push(self.vertices[v]);
                    vertices.len() - 1
                })
            });
            triangles.push(tri);
        }
        let ids = vec![0; triangles.len()];
        Ok(Self::new_unchecked(vertices, triangles, ids))
    }

    /// Concatenates meshes; scatterer ids are offset so that each input keeps
    /// its own scatterers. The result is validated (including disjointness).
    pub fn merge(meshes: &[SurfaceMesh]) -> Result<SurfaceMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut ids = Vec::new();
        let mut id_offset = 0;
        for mesh in meshes {
            let v_offset = vertices.len();
            vertices.extend_from_slice(&mesh.vertices);
            triangles.extend(mesh.triangles.iter().map(|t| t.map(|v| v + v_offset)));
            ids.extend(mesh.scatterer_ids.iter().map(|s| s + id_offset));
            id_offset += mesh.num_scatterers;
        }
        Self::new(vertices, triangles, ids)
    }

    pub fn translated(&self, offset: Point3) -> SurfaceMesh {
        let vertices = self.vertices.iter().map(|v| v + offset).collect();
        Self::new_unchecked(vertices, self.triangles.clone(), self.scatterer_ids.clone())
    }

    /// Applies a rotation matrix about the origin.
    pub fn rotated(&self, rotation: &nalgebra::Matrix3<f64>) -> SurfaceMesh {
        let vertices = self.vertices.iter().map(|v| rotation * v).collect();
        Self::new_unchecked(vertices, self.triangles.clone(), self.scatterer_ids.clone())
    }

    /// Winding number of the closed surface of scatterer `m` around `x`
    /// (1 inside, 0 outside).
    pub fn winding_number(&self, m: usize, x: &Point3) -> f64 {
        let mut total = 0.0;
        for t in self.scatterer_triangles(m) {
            let [a, b, c] = self.triangle_vertices(t).map(|p| p - x);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let numer = a.dot(&b.cross(&c));
            let denom = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * numer.atan2(denom);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Scatterer containing `x`, if any.
    pub fn containing_scatterer(&self, x: &Point3) -> Option<usize> {
        (0..self.num_scatterers).find(|&m| self.winding_number(m, x) > 0.5)
    }

    /// Distance from `x` to the closest triangle, and that triangle.
    pub fn closest_triangle(&self, x: &Point3) -> (f64, usize) {
        (0..self.num_triangles())
            .map(|t| (intersect::point_triangle_distance(x, &self.triangle_vertices(t)), t))
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }
}

fn build_edges(triangles: &[[usize; 3]]) -> (Vec<Edge>, Vec<[usize; 3]>) {
    let mut map: BTreeMap<[usize; 2], Vec<(usize, usize)>> = BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for a in 0..3 {
            let (p, q) = (tri[(a + 1) % 3], tri[(a + 2) % 3]);
            map.entry([p.min(q), p.max(q)]).or_default().push((t, a));
        }
    }
    let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
    let edges: Vec<Edge> = map
        .into_iter()
        .enumerate()
        .map(|(e, (vertices, tris))| {
            for &(t, a) in &tris {
                triangle_edges[t][a] = e;
            }
            Edge { vertices, triangles: tris }
        })
        .collect();
    (edges, triangle_edges)
}
