//! Galerkin matrices of `S` and `C` on a tetrahedron against an independent
//! reference integrator: the `1/r` part of the kernel is integrated over the
//! trial triangle in closed form, the bounded remainder by composite tensor
//! quadrature, and the outer integral by composite quadrature with one
//! Richardson step.

use std::f64::consts::PI;
use std::sync::Arc;

use bem_core::geometry::{Point3, SurfaceMesh};
use bem_core::operators::{assemble_C, assemble_S, AssemblyMode, GalerkinEvaluator, Medium, OperatorKind};
use bem_core::hmatrix::BlockEvaluator;
use bem_core::quadrature::{map_reference, triangle_rule, QuadOrders};
use bem_core::spaces::{build_rwg, FunctionSpace};
use bem_core::C64;
use nalgebra::DMatrix;

const I: C64 = C64::new(0.0, 1.0);

fn tetrahedron() -> Arc<SurfaceMesh> {
    let v = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
    ];
    let t = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    Arc::new(SurfaceMesh::new(v, t, vec![0; 4]).unwrap())
}

/// Closed-form integrals over a flat triangle `T` seen from `x`:
/// `∫ 1/R`, `∫ (y − x)/R` and `∇_x ∫ 1/R`, with `R = |x − y|`.
struct Potentials {
    i0: f64,
    i1: Point3,
    grad: Point3,
}

fn potentials(x: &Point3, t: &[Point3; 3]) -> Potentials {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
    let d = n.dot(&(x - t[0]));
    let rho = x - n * d;
    let ad = d.abs();
    let (mut i0, mut tangential, mut in_plane, mut solid) = (0.0, Point3::zeros(), Point3::zeros(), 0.0);
    for i in 0..3 {
        let (p, q) = (t[i], t[(i + 1) % 3]);
        let lhat = (q - p).normalize();
        let uhat = lhat.cross(&n);
        let p0 = (p - rho).dot(&uhat);
        let (lm, lp) = ((p - rho).dot(&lhat), (q - rho).dot(&lhat));
        let (rm, rp) = ((p - x).norm(), (q - x).norm());
        let r0sq = p0 * p0 + d * d;
        // (R⁺ + l⁺)/(R⁻ + l⁻) = (R⁻ − l⁻)/(R⁺ − l⁺); use the better
        // conditioned form.
        let f = if lp + lm >= 0.0 { ((rp + lp) / (rm + lm)).ln() } else { ((rm - lm) / (rp - lp)).ln() };
        let beta = if ad > 0.0 {
            (p0 * lp / (r0sq + ad * rp)).atan() - (p0 * lm / (r0sq + ad * rm)).atan()
        } else {
            0.0
        };
        i0 += p0 * f - ad * beta;
        tangential += uhat * (0.5 * (r0sq * f + lp * rp - lm * rm));
        in_plane -= uhat * f;
        solid += beta;
    }
    let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    Potentials { i0, i1: tangential - n * (d * i0), grad: in_plane - n * (sign * solid) }
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

fn composite(t: &[Point3; 3], levels: usize, order: usize) -> Vec<(Point3, f64)> {
    let rule = triangle_rule(order).unwrap();
    let mut out = Vec::new();
    for s in subdivide(t, levels) {
        let a2 = (s[1] - s[0]).cross(&(s[2] - s[0])).norm();
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            out.push((map_reference(&s, *p), w * a2));
        }
    }
    out
}

/// An RWG function restricted to one triangle: `α (y − q)`.
#[derive(Clone, Copy)]
struct Affine {
    alpha: f64,
    q: Point3,
}

impl Affine {
    fn from_space(space: &FunctionSpace, dof: usize, tri: usize, v: &[Point3; 3]) -> Option<Self> {
        let f0 = space.evaluate(dof, tri, &v[0])?;
        let f1 = space.evaluate(dof, tri, &v[1])?;
        let e = v[1] - v[0];
        let alpha = (f1 - f0).dot(&e) / e.norm_squared();
        let a = Self { alpha, q: v[0] - f0 / alpha };
        let f2 = space.evaluate(dof, tri, &v[2])?;
        assert!((a.at(&v[2]) - f2).norm() < 1e-12, "not an RWG-type field");
        assert!((space.divergence(dof, tri) - 2.0 * alpha).abs() < 1e-12);
        Some(a)
    }

    fn at(&self, y: &Point3) -> Point3 {
        (y - self.q) * self.alpha
    }
}

/// Reference `S` and `C` entries for one pair of triangles, for all
/// (test, trial) function pairs supported on them.
fn pair_reference(
    k: C64,
    tx: &[Point3; 3],
    ty: &[Point3; 3],
    tests: &[(usize, Affine)],
    trials: &[(usize, Affine)],
    levels: usize,
) -> (DMatrix<C64>, DMatrix<C64>) {
    let (nt, nr) = (tests.len(), trials.len());
    let mut s = DMatrix::zeros(nt, nr);
    let mut c = DMatrix::zeros(nt, nr);
    let coplanar = {
        let nx = (tx[1] - tx[0]).cross(&(tx[2] - tx[0])).normalize();
        ty.iter().all(|p| nx.dot(&(p - tx[0])).abs() < 1e-14)
    };
    // Singular part: closed-form inner integrals, composite outer rule.
    let singular = |lv: usize| {
        let mut s = DMatrix::<C64>::zeros(nt, nr);
        let mut c = DMatrix::<C64>::zeros(nt, nr);
        for (x, wx) in composite(tx, lv, 6) {
            let pot = potentials(&x, ty);
            for (a, (_, psi)) in tests.iter().enumerate() {
                let px = psi.at(&x);
                for (b, (_, phi)) in trials.iter().enumerate() {
                    // ∫ φ(y)/R = α(∫ (y − x)/R + (x − q)∫ 1/R)
                    let v = (pot.i1 + (x - phi.q) * pot.i0) * phi.alpha;
                    let scalar = -I * k * px.dot(&v) - (2.0 * psi.alpha) * (2.0 * phi.alpha) * pot.i0 / (I * k);
                    s[(a, b)] += scalar * (wx / (4.0 * PI));
                    if !coplanar {
                        // ∫ ∇_x(1/R) × α(y − q) = α ∇_x(∫1/R) × (x − q)
                        let g = pot.grad.cross(&(x - phi.q)) * phi.alpha;
                        c[(a, b)] -= C64::new(px.dot(&g) * wx / (4.0 * PI), 0.0);
                    }
                }
            }
        }
        (s, c)
    };
    let (s6, c6) = singular(levels);
    let (s7, c7) = singular(levels + 1);
    s += &s7 + (&s7 - &s6) / C64::new(3.0, 0.0);
    // the shared-edge log singularity of the gradient leaves a first-order error
    c += &c7 * C64::new(2.0, 0.0) - &c6;
    // Bounded remainder G − 1/(4πR) and its gradient.
    let remainder = |lv: usize| {
        let mut s = DMatrix::<C64>::zeros(nt, nr);
        let mut c = DMatrix::<C64>::zeros(nt, nr);
        let px = composite(tx, lv, 4);
        let py = composite(ty, lv, 4);
        for (x, wx) in &px {
            for (y, wy) in &py {
                let d = x - y;
                let r = d.norm();
                let (g, f) = if r < 1e-12 {
                    (I * k / (4.0 * PI), C64::new(0.0, 0.0))
                } else {
                    let e = (I * k * r).exp();
                    ((e - 1.0) / (4.0 * PI * r), ((I * k * r - 1.0) * e + 1.0) / (4.0 * PI * r * r * r))
                };
                let w = wx * wy;
                for (a, (_, psi)) in tests.iter().enumerate() {
                    let ps = psi.at(x);
                    for (b, (_, phi)) in trials.iter().enumerate() {
                        let ph = phi.at(y);
                        s[(a, b)] += (-I * k * g * ps.dot(&ph) - g * (4.0 * psi.alpha * phi.alpha) / (I * k)) * w;
                        if !coplanar {
                            c[(a, b)] -= f * ps.dot(&d.cross(&ph)) * w;
                        }
                    }
                }
            }
        }
        (s, c)
    };
    let (s3, c3) = remainder(levels - 3);
    let (s4, c4) = remainder(levels - 2);
    // The remainder is C¹ apart from an |x − y| kink; its composite error
    // decays like h³ (factor 8 per level).
    s += &s4 + (&s4 - &s3) / C64::new(7.0, 0.0);
    c += &c4 + (&c4 - &c3) / C64::new(7.0, 0.0);
    (s, c)
}

fn reference_matrices(space: &FunctionSpace, k: C64, levels: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let mesh = space.evaluation_mesh();
    let n = space.dof_count();
    let mut s = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let funcs: Vec<Vec<(usize, Affine)>> = (0..mesh.num_triangles())
        .map(|t| {
            let v = mesh.triangle_vertices(t);
            (0..n).filter_map(|i| Affine::from_space(space, i, t, &v).map(|a| (i, a))).collect()
        })
        .collect();
    for tx in 0..mesh.num_triangles() {
        for ty in 0..mesh.num_triangles() {
            let (ps, pc) = pair_reference(
                k,
                &mesh.triangle_vertices(tx),
                &mesh.triangle_vertices(ty),
                &funcs[tx],
                &funcs[ty],
                levels,
            );
            for (a, (i, _)) in funcs[tx].iter().enumerate() {
                for (b, (j, _)) in funcs[ty].iter().enumerate() {
                    s[(*i, *j)] += ps[(a, b)];
                    c[(*i, *j)] += pc[(a, b)];
                }
            }
        }
    }
    (s, c)
}

fn rel(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn closed_form_potentials_match_finite_differences_and_brute_force() {
    let t = [Point3::new(0.1, -0.2, 0.3), Point3::new(1.2, 0.1, 0.0), Point3::new(0.3, 0.9, 0.4)];
    let x = Point3::new(0.4, 0.3, 0.8);
    let pot = potentials(&x, &t);
    let pts = composite(&t, 5, 6);
    let i0: f64 = pts.iter().map(|(y, w)| w / (x - y).norm()).sum();
    let i1: Point3 = pts.iter().map(|(y, w)| (y - x) * (w / (x - y).norm())).sum();
    assert!((pot.i0 - i0).abs() < 1e-10 * i0);
    assert!((pot.i1 - i1).norm() < 1e-10 * i1.norm());
    let h = 1e-6;
    for axis in 0..3 {
        let mut e = Point3::zeros();
        e[axis] = h;
        let fd = (potentials(&(x + e), &t).i0 - potentials(&(x - e), &t).i0) / (2.0 * h);
        assert!((fd - pot.grad[axis]).abs() < 1e-7, "axis {axis}: {fd} vs {}", pot.grad[axis]);
    }
}

#[test]
fn tetrahedron_matrices_match_reference() {
    let mesh = tetrahedron();
    let rwg = build_rwg(&mesh).unwrap();
    assert_eq!(rwg.dof_count(), 6);
    let medium = Medium::real(1.5).unwrap();
    let (s_ref, c_ref) = reference_matrices(&rwg, medium.k, 6);
    let all: Vec<usize> = (0..6).collect();

    // Singular rules with 12 Gauss points per dimension.
    let fine = |kind| {
        GalerkinEvaluator::with_singular_points(kind, &rwg, &rwg, &medium, QuadOrders::uniform(6).unwrap(), Some(12))
            .unwrap()
            .evaluate(&all, &all)
    };
    let es = rel(&fine(OperatorKind::S), &s_ref);
    let ec = rel(&fine(OperatorKind::C), &c_ref);
    assert!(es < 1e-6, "S with 12-point singular rules: {es:e}");
    assert!(ec < 1e-6, "C with 12-point singular rules: {ec:e}");

    // Default orders: limited by the 4-point singular rules.
    let q = QuadOrders::default();
    let s = assemble_S(&rwg, &rwg, &medium, q, AssemblyMode::Dense).unwrap().to_dense();
    let c = assemble_C(&rwg, &rwg, &medium, q, AssemblyMode::Dense).unwrap().to_dense();
    let (es, ec) = (rel(&s, &s_ref), rel(&c, &c_ref));
    assert!(es < 2e-3, "S at default orders: {es:e}");
    assert!(ec < 2e-3, "C at default orders: {ec:e}");
}
