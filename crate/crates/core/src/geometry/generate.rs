//! Structured surface meshes: subdivided cubes and icospheres.

use std::collections::HashMap;

use super::{Point3, SurfaceMesh};
use crate::error::{BemError, Result};

/// Axis-aligned cube `[origin, origin + side]^3`. Each face is split into an
/// `n × n` grid of squares, `n = ceil(side / h)`, and each square into two
/// triangles, giving `12 n²` triangles and `6 n² + 2` vertices.
pub fn generate_cube(side: f64, origin: Point3, h: f64) -> Result<SurfaceMesh> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(BemError::InvalidArgument(format!("cube side must be positive, got {side}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(BemError::InvalidArgument(format!("mesh size must be positive, got {h}")));
    }
    // Guard against 1/h round-off turning 2.0000000001 into 3.
    let n = ((side / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    cube_with_subdivisions(side, origin, n)
}

pub(crate) fn cube_with_subdivisions(side: f64, origin: Point3, n: usize) -> Result<SurfaceMesh> {
    let step = side / n as f64;
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vertex = |ijk: [usize; 3], vertices: &mut Vec<Point3>| -> usize {
        *index.entry(ijk).or_insert_with(|| {
            vertices.push(origin + Point3::new(ijk[0] as f64, ijk[1] as f64, ijk[2] as f64) * step);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(12 * n * n);
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for level in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let mut corner = |di: usize, dj: usize| {
                        let mut ijk = [0; 3];
                        ijk[axis] = level;
                        ijk[b] = i + di;
                        ijk[c] = j + dj;
                        vertex(ijk, &mut vertices)
                    };
                    let (p00, p10, p11, p01) = (corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1));
                    // e_b × e_c = e_axis: counter-clockwise in (b, c) is outward on the far face.
                    if level == n {
                        triangles.push([p00, p10, p11]);
                        triangles.push([p00, p11, p01]);
                    } else {
                        triangles.push([p00, p11, p10]);
                        triangles.push([p00, p01, p11]);
                    }
                }
            }
        }
    }
    let ids = vec![0; triangles.len()];
    SurfaceMesh::new(vertices, triangles, ids)
}

/// Icosphere of the given radius centred at the origin: the regular
/// icosahedron refined `subdivisions` times by edge midpoints projected onto
/// the sphere (`20 · 4^s` triangles).
pub fn generate_sphere(radius: f64, subdivisions: usize) -> Result<SurfaceMesh> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(BemError::InvalidArgument(format!("sphere radius must be positive, got {radius}")));
    }
    if subdivisions > 8 {
        return Err(BemError::InvalidArgument(format!(
            "{subdivisions} subdivisions would produce {} triangles",
            20usize << (2 * subdivisions)
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = [
        [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
        [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
        [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3>| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push((vertices[a] + vertices[b]).normalize());
                vertices.len() - 1
            })
        };
        let mut refined = Vec::with_capacity(4 * triangles.len());
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            refined.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = refined;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    let ids = vec![0; triangles.len()];
    SurfaceMesh::new(vertices, triangles, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_counts_follow_subdivision() {
        for (h, n) in [(1.0, 1), (0.5, 2), (0.3, 4), (2.0 * std::f64::consts::PI / 21.0, 4)] {
            let mesh = generate_cube(1.0, Point3::zeros(), h).unwrap();
            assert_eq!(mesh.num_triangles(), 12 * n * n, "h = {h}");
            assert_eq!(mesh.num_vertices(), 6 * n * n + 2);
            assert_eq!(mesh.num_edges(), 18 * n * n);
            assert!((mesh.total_area() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_normals_point_outward() {
        let mesh = generate_cube(2.0, Point3::new(1.0, -1.0, 0.5), 0.7).unwrap();
        let center = Point3::new(2.0, 0.0, 1.5);
        for t in 0..mesh.num_triangles() {
            assert!(mesh.normal(t).dot(&(mesh.centroid(t) - center)) > 0.0);
        }
        assert!((mesh.winding_number(0, &center) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_counts_and_orientation() {
        for s in 0..4 {
            let mesh = generate_sphere(1.5, s).unwrap();
            assert_eq!(mesh.num_triangles(), 20 << (2 * s));
            assert_eq!(mesh.num_vertices(), 10 * (1 << (2 * s)) + 2);
            for v in mesh.vertices() {
                assert!((v.norm() - 1.5).abs() < 1e-12);
            }
            for t in 0..mesh.num_triangles() {
                assert!(mesh.normal(t).dot(&mesh.centroid(t)) > 0.0);
            }
        }
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(generate_cube(0.0, Point3::zeros(), 0.1).is_err());
        assert!(generate_cube(1.0, Point3::zeros(), -0.1).is_err());
        assert!(generate_sphere(-1.0, 2).is_err());
    }
}
