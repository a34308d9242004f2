//! Exact-ish triangle/triangle intersection and point/triangle distance.

use super::Point3;

const EPS: f64 = 1e-12;

/// Closed-set intersection test for two triangles.
pub(crate) fn triangles_intersect(a: &[Point3; 3], b: &[Point3; 3]) -> bool {
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|p| p.amax())
        .fold(1.0, f64::max);
    let tol = EPS * scale;
    let na = (a[1] - a[0]).cross(&(a[2] - a[0]));
    let nb = (b[1] - b[0]).cross(&(b[2] - b[0]));
    let coplanar = {
        let unit = na.normalize();
        b.iter().all(|p| unit.dot(&(p - a[0])).abs() <= tol)
    };
    if coplanar {
        return coplanar_intersect(a, b, &na, tol);
    }
    // Two non-coplanar triangles meet iff an edge of one meets the other.
    (0..3).any(|i| segment_hits_triangle(&a[i], &a[(i + 1) % 3], b, &nb, tol))
        || (0..3).any(|i| segment_hits_triangle(&b[i], &b[(i + 1) % 3], a, &na, tol))
}

fn segment_hits_triangle(p: &Point3, q: &Point3, tri: &[Point3; 3], n: &Point3, tol: f64) -> bool {
    let unit = n.normalize();
    let dp = unit.dot(&(p - tri[0]));
    let dq = unit.dot(&(q - tri[0]));
    if (dp > tol && dq > tol) || (dp < -tol && dq < -tol) {
        return false;
    }
    if (dp - dq).abs() <= tol {
        // Segment lies (nearly) in the plane; handled by the other direction
        // or by the coplanar branch.
        return false;
    }
    let s = dp / (dp - dq);
    let x = p + s * (q - p);
    point_in_triangle(&x, tri, &unit, tol)
}

fn point_in_triangle(x: &Point3, tri: &[Point3; 3], unit_normal: &Point3, tol: f64) -> bool {
    (0..3).all(|i| {
        let e = tri[(i + 1) % 3] - tri[i];
        unit_normal.dot(&e.cross(&(x - tri[i]))) >= -tol * e.norm()
    })
}

fn coplanar_intersect(a: &[Point3; 3], b: &[Point3; 3], n: &Point3, tol: f64) -> bool {
    let unit = n.normalize();
    if a.iter().any(|p| point_in_triangle(p, b, &unit, tol))
        || b.iter().any(|p| point_in_triangle(p, a, &unit, tol))
    {
        return true;
    }
    for i in 0..3 {
        for j in 0..3 {
            if segments_intersect_2d(&a[i], &a[(i + 1) % 3], &b[j], &b[(j + 1) % 3], &unit) {
                return true;
            }
        }
    }
    false
}

// Proper crossings only; touching configurations put a vertex on the other
// triangle and are caught by the point-in-triangle test.
fn segments_intersect_2d(p1: &Point3, p2: &Point3, q1: &Point3, q2: &Point3, n: &Point3) -> bool {
    let orient = |a: &Point3, b: &Point3, c: &Point3| n.dot(&(b - a).cross(&(c - a)));
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Euclidean distance from `x` to the closed triangle.
pub(crate) fn point_triangle_distance(x: &Point3, tri: &[Point3; 3]) -> f64 {
    (closest_point_on_triangle(x, tri) - x).norm()
}

/// Closest point on a triangle (Voronoi-region walk).
pub(crate) fn closest_point_on_triangle(p: &Point3, tri: &[Point3; 3]) -> Point3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}
