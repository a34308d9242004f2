//! Singular quadrature checked against independent reference integrators.

use bem_core::geometry::Point3;
use bem_core::quadrature::{
    build_singular_rule, map_reference, map_singular, sauter_schwab_rule, touching_order,
    triangle_rule, PairClass,
};
use num_complex::Complex64;

fn area(t: &[Point3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

fn subdivide(t: &[Point3; 3], levels: usize) -> Vec<[Point3; 3]> {
    let mut tris = vec![*t];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(4 * tris.len());
        for [a, b, c] in tris {
            let (ab, bc, ca) = ((a + b) / 2.0, (b + c) / 2.0, (c + a) / 2.0);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        tris = next;
    }
    tris
}

/// Composite order-6 rule on a subdivided triangle: (points, physical weights).
fn composite(t: &[Point3; 3], levels: usize) -> Vec<(Point3, f64)> {
    let rule = triangle_rule(6).unwrap();
    let mut out = Vec::new();
    for s in subdivide(t, levels) {
        let a2 = 2.0 * area(&s);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            out.push((map_reference(&s, *p), w * a2));
        }
    }
    out
}

/// Closed-form `∫_T 1/|x − y| dy` for an arbitrary point `x`.
fn triangle_potential(x: &Point3, t: &[Point3; 3]) -> f64 {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
    let d = n.dot(&(x - t[0]));
    let rho = x - n * d;
    let ad = d.abs();
    let mut sum = 0.0;
    for i in 0..3 {
        let (p, q) = (t[i], t[(i + 1) % 3]);
        let lhat = (q - p).normalize();
        let uhat = lhat.cross(&n);
        let p0 = (p - rho).dot(&uhat);
        let lm = (p - rho).dot(&lhat);
        let lp = (q - rho).dot(&lhat);
        let rm = (p - x).norm();
        let rp = (q - x).norm();
        let r0sq = p0 * p0 + d * d;
        if p0.abs() > 1e-14 {
            sum += p0 * ((rp + lp) / (rm + lm)).ln();
        }
        if ad > 1e-14 {
            sum -= ad * ((p0 * lp / (r0sq + ad * rp)).atan() - (p0 * lm / (r0sq + ad * rm)).atan());
        }
    }
    sum
}

fn composite_inverse_distance(t1: &[Point3; 3], t2: &[Point3; 3], levels: usize) -> f64 {
    composite(t1, levels)
        .iter()
        .map(|(x, w)| w * triangle_potential(x, t2))
        .sum()
}

/// Outer composite integration of the closed-form inner potential. The outer
/// integrand is only C⁰ at the triangle boundary, so the composite error
/// decays like h²; one Richardson step removes the leading term.
fn reference_inverse_distance(t1: &[Point3; 3], t2: &[Point3; 3]) -> f64 {
    let coarse = composite_inverse_distance(t1, t2, 7);
    let fine = composite_inverse_distance(t1, t2, 8);
    fine + (fine - coarse) / 3.0
}

fn inverse_distance(x: &Point3, y: &Point3) -> Complex64 {
    Complex64::new(1.0 / (x - y).norm(), 0.0)
}

fn singular_integral(
    t1: &[Point3; 3],
    t2: &[Point3; 3],
    rule_points: &[bem_core::quadrature::SingularPoint],
    f: impl Fn(&Point3, &Point3) -> Complex64,
) -> Complex64 {
    let (_, p1, p2) = touching_order(t1, t2);
    let a = p1.map(|i| t1[i]);
    let b = p2.map(|i| t2[i]);
    let scale = 4.0 * area(t1) * area(t2);
    rule_points
        .iter()
        .map(|p| f(&map_singular(&a, p.x), &map_singular(&b, p.y)) * p.weight)
        .sum::<Complex64>()
        * scale
}

fn tri(p: [[f64; 3]; 3]) -> [Point3; 3] {
    p.map(|q| Point3::new(q[0], q[1], q[2]))
}

fn unit_right() -> [Point3; 3] {
    tri([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
}

#[test]
fn potential_formula_matches_brute_force_off_surface() {
    let t = tri([[0.1, -0.2, 0.3], [1.2, 0.1, 0.0], [0.3, 0.9, 0.4]]);
    let x = Point3::new(0.4, 0.3, 1.1);
    let brute: f64 = composite(&t, 5).iter().map(|(y, w)| w / (x - y).norm()).sum();
    assert!((brute - triangle_potential(&x, &t)).abs() < 1e-12 * brute);
}

/// Fully converged value for the coincident unit right triangle.
const UNIT_RIGHT_SELF: f64 = 1.003_065_884_773;

#[test]
fn oracle_reproduces_converged_self_integral() {
    let t = unit_right();
    let reference = reference_inverse_distance(&t, &t);
    assert!((reference - UNIT_RIGHT_SELF).abs() < 1e-9, "{reference}");
}

#[test]
fn identical_inverse_distance_matches_reference() {
    let t = unit_right();
    // The production order-6 rule has 4 points per dimension (1536 points).
    let rule = sauter_schwab_rule(PairClass::Identical, 6).unwrap();
    let value = singular_integral(&t, &t, &rule.points, inverse_distance);
    let rel = (value.re - UNIT_RIGHT_SELF).abs() / UNIT_RIGHT_SELF;
    assert!(rel < 2e-4, "order 6: relative error {rel:e}");
    // The same decomposition with 8 points per dimension reaches 1e-6.
    let rule = build_singular_rule(PairClass::Identical, 8, 0);
    let value = singular_integral(&t, &t, &rule.points, inverse_distance);
    let rel = (value.re - UNIT_RIGHT_SELF).abs() / UNIT_RIGHT_SELF;
    assert!(rel < 1e-6, "8 points per dimension: relative error {rel:e}");
}

#[test]
fn edge_and_vertex_inverse_distance_match_reference() {
    let t = unit_right();
    let cases = [
        (PairClass::SharedEdge, tri([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.8, 0.9, 0.3]])),
        (PairClass::SharedEdge, tri([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])),
        (PairClass::SharedVertex, tri([[0.0, 0.0, 0.0], [-1.0, 0.2, 0.0], [-0.3, -0.8, 0.0]])),
        (PairClass::SharedVertex, tri([[1.0, 0.0, 0.0], [1.5, -0.5, 0.6], [1.8, 0.4, 0.2]])),
    ];
    for (class, other) in cases {
        let reference = reference_inverse_distance(&t, &other);
        let rule = sauter_schwab_rule(class, 6).unwrap();
        let value = singular_integral(&t, &other, &rule.points, inverse_distance);
        let rel = (value.re - reference).abs() / reference;
        assert!(rel < 2e-4, "{class:?}: order 6 relative error {rel:e}");
        let rule = build_singular_rule(class, 10, 0);
        let value = singular_integral(&t, &other, &rule.points, inverse_distance);
        let rel = (value.re - reference).abs() / reference;
        assert!(rel < 1e-7, "{class:?}: 10 points per dimension relative error {rel:e}");
    }
}

#[test]
fn singular_error_decreases_with_order() {
    let t = unit_right();
    let errors: Vec<f64> = (2..=6)
        .step_by(2)
        .map(|order| {
            let rule = sauter_schwab_rule(PairClass::Identical, order).unwrap();
            let value = singular_integral(&t, &t, &rule.points, inverse_distance);
            (value.re - UNIT_RIGHT_SELF).abs()
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn helmholtz_kernel_matches_split_reference() {
    // e^{ikr}/r = 1/r + (e^{ikr} − 1)/r; the second part is bounded and is
    // integrated with a fine composite tensor rule.
    let k = 3.0;
    let t = tri([[0.0, 0.0, 0.0], [0.8, 0.1, 0.0], [0.2, 0.7, 0.1]]);
    let singular = reference_inverse_distance(&t, &t);
    let pts = composite(&t, 3);
    let mut smooth = Complex64::new(0.0, 0.0);
    for (x, wx) in &pts {
        for (y, wy) in &pts {
            let r = (x - y).norm();
            let v = if r == 0.0 {
                Complex64::new(0.0, k)
            } else {
                (Complex64::new(0.0, k * r).exp() - 1.0) / r
            };
            smooth += v * (wx * wy);
        }
    }
    let reference = smooth + singular;
    let rule = sauter_schwab_rule(PairClass::Identical, 6).unwrap();
    let value = singular_integral(&t, &t, &rule.points, |x, y| {
        let r = (x - y).norm();
        Complex64::new(0.0, k * r).exp() / r
    });
    let rel = (value - reference).norm() / reference.norm();
    assert!(rel < 2e-4, "relative error {rel:e}");
}

/// For smooth integrands every correct decomposition must agree with plain
/// tensor quadrature; this checks the subdomain maps and Jacobians.
#[test]
fn smooth_integrands_match_tensor_quadrature() {
    let f = |x: &Point3, y: &Point3| {
        let s = 0.3 * x.x - 0.5 * x.y + 0.2 * x.z + 0.7 * y.x + 0.1 * y.y - 0.4 * y.z;
        Complex64::new(0.0, 2.0 * s).exp() * (1.0 + x.dot(y))
    };
    let t = tri([[0.0, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.9, -0.2]]);
    let pairs = [
        (PairClass::Identical, t),
        (PairClass::SharedEdge, [t[2], t[1], Point3::new(1.2, 1.1, 0.4)]),
        (PairClass::SharedVertex, [t[1], Point3::new(1.6, -0.3, 0.5), Point3::new(1.9, 0.6, 0.0)]),
    ];
    for (class, other) in pairs {
        let px = composite(&t, 2);
        let py = composite(&other, 2);
        let reference: Complex64 = px
            .iter()
            .flat_map(|(x, wx)| py.iter().map(move |(y, wy)| f(x, y) * (wx * wy)))
            .sum();
        let mut previous = f64::INFINITY;
        for m in [2, 4, 6, 8] {
            let rule = build_singular_rule(class, m, 0);
            let value = singular_integral(&t, &other, &rule.points, f);
            let err = (value - reference).norm() / reference.norm();
            assert!(err <= previous * 1.0001 || err < 1e-13, "{class:?} m={m}: {err:e} after {previous:e}");
            previous = err;
        }
        assert!(previous < 1e-12, "{class:?}: {previous:e}");
    }
}

