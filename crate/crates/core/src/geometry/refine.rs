//! Barycentric refinement: each triangle split into six around its centroid.

use super::{Point3, SurfaceMesh};

/// A barycentrically refined mesh together with its link to the primal mesh.
///
/// Vertex numbering of `refined`: primal vertices first (same indices), then
/// one midpoint per primal edge (in edge order), then one centroid per primal
/// triangle. For a primal triangle `(a, b, c)` with midpoints `m_ab, m_bc,
/// m_ca` and centroid `g`, the children are, in order,
/// `(a, m_ab, g), (m_ab, b, g), (b, m_bc, g), (m_bc, c, g), (c, m_ca, g), (m_ca, a, g)`.
#[derive(Debug, Clone)]
pub struct BarycentricRefinement {
    pub refined: SurfaceMesh,
    /// `(primal triangle, child index 0..6)` per refined triangle.
    pub parent: Vec<(usize, usize)>,
    primal_vertices: usize,
    primal_edges: usize,
    primal_triangles: usize,
}

impl BarycentricRefinement {
    /// Refined-mesh vertex index of the midpoint of primal edge `e`.
    pub fn edge_midpoint(&self, e: usize) -> usize {
        self.primal_vertices + e
    }

    /// Refined-mesh vertex index of the centroid of primal triangle `t`.
    pub fn centroid_vertex(&self, t: usize) -> usize {
        self.primal_vertices + self.primal_edges + t
    }

    /// Refined triangle index of child `c` of primal triangle `t`.
    pub fn child(&self, t: usize, c: usize) -> usize {
        6 * t + c
    }

    /// Whether this refinement was derived from a mesh of the given shape.
    pub fn matches(&self, mesh: &SurfaceMesh) -> bool {
        self.primal_vertices == mesh.num_vertices()
            && self.primal_edges == mesh.num_edges()
            && self.primal_triangles == mesh.num_triangles()
            && mesh
                .vertices()
                .iter()
                .zip(self.refined.vertices())
                .all(|(a, b)| a == b)
    }
}

pub fn barycentric_refine(mesh: &SurfaceMesh) -> BarycentricRefinement {
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();
    let nt = mesh.num_triangles();
    let mut vertices: Vec<Point3> = Vec::with_capacity(nv + ne + nt);
    vertices.extend_from_slice(mesh.vertices());
    for edge in mesh.edges() {
        let [p, q] = edge.vertices;
        vertices.push(0.5 * (mesh.vertices()[p] + mesh.vertices()[q]));
    }
    for t in 0..nt {
        vertices.push(mesh.centroid(t));
    }

    let mut triangles = Vec::with_capacity(6 * nt);
    let mut ids = Vec::with_capacity(6 * nt);
    let mut parent = Vec::with_capacity(6 * nt);
    for (t, &[a, b, c]) in mesh.triangles().iter().enumerate() {
        let edges = mesh.triangle_edges()[t];
        // Local edge k is opposite local vertex k.
        let m_bc = nv + edges[0];
        let m_ca = nv + edges[1];
        let m_ab = nv + edges[2];
        let g = nv + ne + t;
        let children = [
            [a, m_ab, g],
            [m_ab, b, g],
            [b, m_bc, g],
            [m_bc, c, g],
            [c, m_ca, g],
            [m_ca, a, g],
        ];
        for (k, child) in children.into_iter().enumerate() {
            triangles.push(child);
            ids.push(mesh.scatterer_ids()[t]);
            parent.push((t, k));
        }
    }
    BarycentricRefinement {
        refined: SurfaceMesh::new_unchecked(vertices, triangles, ids),
        parent,
        primal_vertices: nv,
        primal_edges: ne,
        primal_triangles: nt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_cube, generate_sphere};

    #[test]
    fn cube_refinement_counts() {
        let cube = generate_cube(0.4, Point3::new(-1.0, 0.0, 0.0), 0.4).unwrap();
        let bary = barycentric_refine(&cube);
        assert_eq!(bary.refined.num_triangles(), 72);
        assert_eq!(bary.refined.num_vertices(), 8 + 18 + 12);
        bary.refined.validate().unwrap();
        assert!(bary.matches(&cube));
    }

    #[test]
    fn children_tile_parent_with_same_orientation() {
        let sphere = generate_sphere(1.0, 1).unwrap();
        let bary = barycentric_refine(&sphere);
        for t in 0..sphere.num_triangles() {
            let sum: f64 = (0..6).map(|c| bary.refined.area(bary.child(t, c))).sum();
            assert!((sum - sphere.area(t)).abs() <= 1e-12 * sphere.area(t));
            for c in 0..6 {
                let child = bary.child(t, c);
                assert!(bary.refined.normal(child).dot(&sphere.normal(t)) > 1.0 - 1e-12);
                assert_eq!(bary.parent[child], (t, c));
                assert_eq!(bary.refined.triangles()[child][2], bary.centroid_vertex(t));
            }
        }
    }
}
