//! Quadrature for Galerkin double integrals over triangle pairs.
//!
//! Regular pairs use tensor products of symmetric triangle rules whose order
//! depends on the pair's separation class. Touching pairs (identical, shared
//! edge, shared vertex) use the Sauter–Schwab regularising transformations:
//! the pair is mapped to `[0,1]^4`, split into 6/5/2 subdomains, and each
//! subdomain is integrated with an `m⁴` tensor Gauss–Legendre rule.
//!
//! Reference triangles:
//! - triangle rules live on `{ξ, η ≥ 0, ξ + η ≤ 1}` with
//!   `x = P0 + ξ (P1 − P0) + η (P2 − P0)`; weights sum to ½.
//! - singular rules live on `K̂ = {0 ≤ x₂ ≤ x₁ ≤ 1}` with
//!   `x = P0 (1 − x₁) + P1 (x₁ − x₂) + P2 x₂`; weights sum to ¼, so a physical
//!   double integral is `4 A₁ A₂ Σ w f`.

use std::sync::OnceLock;

use crate::error::{BemError, Result};
use crate::geometry::Point3;

/// Highest supported rule order.
pub const MAX_ORDER: usize = 6;

/// Quadrature orders per pair class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuadOrders {
    pub near: usize,
    pub medium: usize,
    pub far: usize,
    pub singular: usize,
}

impl Default for QuadOrders {
    fn default() -> Self {
        Self { near: 4, medium: 3, far: 2, singular: 6 }
    }
}

impl QuadOrders {
    pub const MINIMAL: QuadOrders = QuadOrders { near: 1, medium: 1, far: 1, singular: 1 };

    pub fn new(near: usize, medium: usize, far: usize, singular: usize) -> Result<Self> {
        let q = Self { near, medium, far, singular };
        q.validate()?;
        Ok(q)
    }

    pub fn uniform(order: usize) -> Result<Self> {
        Self::new(order, order, order, order)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("near", self.near),
            ("medium", self.medium),
            ("far", self.far),
            ("singular", self.singular),
        ] {
            if !(1..=MAX_ORDER).contains(&v) {
                return Err(BemError::InvalidArgument(format!(
                    "quadrature order {name} = {v} outside 1..={MAX_ORDER}"
                )));
            }
        }
        Ok(())
    }

    /// Order used for a pair of the given class.
    pub fn order_for(&self, class: PairClass) -> usize {
        match class {
            PairClass::Identical | PairClass::SharedEdge | PairClass::SharedVertex => self.singular,
            PairClass::Near => self.near,
            PairClass::Medium => self.medium,
            PairClass::Far => self.far,
        }
    }

    /// Integrand evaluations spent on one pair of the given class.
    pub fn evaluations(&self, class: PairClass) -> usize {
        let order = self.order_for(class);
        if class.is_touching() {
            class.subdomains() * singular_points_per_dim(order).pow(4)
        } else {
            let n = TRIANGLE_POINT_COUNTS[order - 1];
            n * n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairClass {
    Identical,
    SharedEdge,
    SharedVertex,
    Near,
    Medium,
    Far,
}

impl PairClass {
    pub fn is_touching(self) -> bool {
        matches!(self, PairClass::Identical | PairClass::SharedEdge | PairClass::SharedVertex)
    }

    /// Number of regularising subdomains for touching classes, 1 otherwise.
    pub fn subdomains(self) -> usize {
        match self {
            PairClass::Identical => 6,
            PairClass::SharedEdge => 5,
            PairClass::SharedVertex => 2,
            _ => 1,
        }
    }
}

/// Symmetric rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub order: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const TRIANGLE_POINT_COUNTS: [usize; MAX_ORDER] = [1, 3, 4, 6, 7, 12];

/// Symmetric Gauss rule of the given polynomial degree (1..=6).
pub fn triangle_rule(order: usize) -> Result<&'static TriangleRule> {
    static RULES: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(BemError::InvalidArgument(format!(
            "triangle rule order {order} outside 1..={MAX_ORDER}"
        )));
    }
    Ok(&RULES.get_or_init(|| (1..=MAX_ORDER).map(build_triangle_rule).collect())[order - 1])
}

fn build_triangle_rule(order: usize) -> TriangleRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    // Weights below are normalised to 1 and halved at the end.
    let centroid = |w: f64, p: &mut Vec<[f64; 2]>, ws: &mut Vec<f64>| {
        p.push([1.0 / 3.0, 1.0 / 3.0]);
        ws.push(w);
    };
    let orbit3 = |a: f64, w: f64, p: &mut Vec<[f64; 2]>, ws: &mut Vec<f64>| {
        let b = 1.0 - 2.0 * a;
        for q in [[a, a], [b, a], [a, b]] {
            p.push(q);
            ws.push(w);
        }
    };
    let orbit6 = |a: f64, b: f64, w: f64, p: &mut Vec<[f64; 2]>, ws: &mut Vec<f64>| {
        let c = 1.0 - a - b;
        for q in [[a, b], [b, a], [a, c], [c, a], [b, c], [c, b]] {
            p.push(q);
            ws.push(w);
        }
    };
    match order {
        1 => centroid(1.0, &mut points, &mut weights),
        2 => orbit3(1.0 / 6.0, 1.0 / 3.0, &mut points, &mut weights),
        3 => {
            centroid(-27.0 / 48.0, &mut points, &mut weights);
            orbit3(0.2, 25.0 / 48.0, &mut points, &mut weights);
        }
        4 => {
            orbit3(0.445948490915965, 0.223381589678011, &mut points, &mut weights);
            orbit3(0.091576213509771, 0.109951743655322, &mut points, &mut weights);
        }
        5 => {
            let s15 = 15f64.sqrt();
            centroid(0.225, &mut points, &mut weights);
            orbit3((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0, &mut points, &mut weights);
            orbit3((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0, &mut points, &mut weights);
        }
        6 => {
            orbit3(0.249286745170910, 0.116786275726379, &mut points, &mut weights);
            orbit3(0.063089014491502, 0.050844906370207, &mut points, &mut weights);
            orbit6(0.053145049844816, 0.310352451033785, 0.082851075618374, &mut points, &mut weights);
        }
        _ => unreachable!("order checked by caller"),
    }
    for w in &mut weights {
        *w *= 0.5;
    }
    TriangleRule { order, points, weights }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_m.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for n in 2..=m {
                let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if m == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Gauss points per dimension used by the singular rules.
pub fn singular_points_per_dim(order: usize) -> usize {
    const TABLE: [usize; MAX_ORDER] = [1, 2, 2, 3, 3, 4];
    TABLE[order.clamp(1, MAX_ORDER) - 1]
}

/// Classifies a triangle pair. Touching is decided by exact coordinate
/// coincidence of vertices; otherwise by the minimum vertex distance `δ`
/// relative to the larger diameter `d`: Near if `δ < d`, Medium if
/// `δ < 3d`, Far otherwise.
pub fn classify_pair(t1: &[Point3; 3], t2: &[Point3; 3]) -> PairClass {
    let shared = t1.iter().filter(|p| t2.contains(p)).count();
    match shared {
        3 => return PairClass::Identical,
        2 => return PairClass::SharedEdge,
        1 => return PairClass::SharedVertex,
        _ => {}
    }
    let d = diameter(t1).max(diameter(t2));
    let delta = t1
        .iter()
        .flat_map(|p| t2.iter().map(move |q| (p - q).norm()))
        .fold(f64::INFINITY, f64::min);
    if delta < d {
        PairClass::Near
    } else if delta < 3.0 * d {
        PairClass::Medium
    } else {
        PairClass::Far
    }
}

fn diameter(t: &[Point3; 3]) -> f64 {
    (t[1] - t[0]).norm().max((t[2] - t[1]).norm()).max((t[0] - t[2]).norm())
}

/// Local vertex orderings placing the shared vertices of a touching pair
/// first, and in matching order: `perm1[i]` and `perm2[i]` are local vertex
/// indices of the original triangles, and `t1[perm1[i]] == t2[perm2[i]]` for
/// every shared position `i`.
pub fn touching_order(t1: &[Point3; 3], t2: &[Point3; 3]) -> (PairClass, [usize; 3], [usize; 3]) {
    let mut shared: Vec<(usize, usize)> = Vec::with_capacity(3);
    for i in 0..3 {
        if let Some(j) = (0..3).find(|&j| t1[i] == t2[j]) {
            shared.push((i, j));
        }
    }
    let complete = |head: &[usize]| -> [usize; 3] {
        let mut out = [0; 3];
        out[..head.len()].copy_from_slice(head);
        let mut k = head.len();
        for v in 0..3 {
            if !head.contains(&v) {
                out[k] = v;
                k += 1;
            }
        }
        out
    };
    let (h1, h2): (Vec<usize>, Vec<usize>) = shared.iter().copied().unzip();
    let class = match shared.len() {
        3 => PairClass::Identical,
        2 => PairClass::SharedEdge,
        1 => PairClass::SharedVertex,
        _ => return (classify_pair(t1, t2), [0, 1, 2], [0, 1, 2]),
    };
    if class == PairClass::Identical {
        // Keep the first triangle's order and align the second to it.
        return (class, [0, 1, 2], [h2[0], h2[1], h2[2]]);
    }
    (class, complete(&h1), complete(&h2))
}

/// One point of a singular rule: coordinates in `K̂` for both triangles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPoint {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub weight: f64,
}

/// Regularised tensor rule for a touching pair.
#[derive(Debug, Clone)]
pub struct SingularRule {
    pub class: PairClass,
    pub order: usize,
    pub points: Vec<SingularPoint>,
}

/// Sauter–Schwab rule for a touching class. For `SharedEdge` the shared edge
/// must be `P0 P1` in both triangles; for `SharedVertex` the shared vertex is
/// `P0` (see [`touching_order`]).
pub fn sauter_schwab_rule(class: PairClass, order: usize) -> Result<&'static SingularRule> {
    static RULES: OnceLock<Vec<SingularRule>> = OnceLock::new();
    if !class.is_touching() {
        return Err(BemError::InvalidArgument(format!(
            "singular rules exist only for touching pairs, got {class:?}"
        )));
    }
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(BemError::InvalidArgument(format!(
            "singular rule order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let rules = RULES.get_or_init(|| {
        let mut all = Vec::with_capacity(3 * MAX_ORDER);
        for c in [PairClass::Identical, PairClass::SharedEdge, PairClass::SharedVertex] {
            for q in 1..=MAX_ORDER {
                all.push(build_singular_rule(c, singular_points_per_dim(q), q));
            }
        }
        all
    });
    let slot = match class {
        PairClass::Identical => 0,
        PairClass::SharedEdge => 1,
        _ => 2,
    };
    Ok(&rules[slot * MAX_ORDER + order - 1])
}

/// Builds a singular rule with `m` Gauss points per dimension. Exposed for
/// convergence studies beyond the fixed order table.
pub fn build_singular_rule(class: PairClass, m: usize, order: usize) -> SingularRule {
    let (g, gw) = gauss_legendre(m);
    let mut points = Vec::with_capacity(class.subdomains() * m.pow(4));
    for (a, &xi) in g.iter().enumerate() {
        for (b, &e1) in g.iter().enumerate() {
            for (c, &e2) in g.iter().enumerate() {
                for (d, &e3) in g.iter().enumerate() {
                    let w = gw[a] * gw[b] * gw[c] * gw[d];
                    push_subdomains(class, xi, e1, e2, e3, w, &mut points);
                }
            }
        }
    }
    SingularRule { class, order, points }
}

fn push_subdomains(class: PairClass, xi: f64, e1: f64, e2: f64, e3: f64, w: f64, out: &mut Vec<SingularPoint>) {
    let mut push = |x: [f64; 2], y: [f64; 2], jac: f64| {
        out.push(SingularPoint { x, y, weight: w * jac });
    };
    match class {
        PairClass::Identical => {
            let jac = xi.powi(3) * e1 * e1 * e2;
            let maps = [
                ([xi, xi * (1.0 - e1 + e1 * e2)], [xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)]),
                ([xi, xi * e1 * (1.0 - e2 + e2 * e3)], [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)]),
                ([xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)], [xi, xi * e1 * (1.0 - e2)]),
            ];
            for (x, y) in maps {
                push(x, y, jac);
                push(y, x, jac);
            }
        }
        PairClass::SharedEdge => {
            let base = xi.powi(3) * e1 * e1;
            push([xi, xi * e1 * e3], [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)], base);
            push([xi, xi * e1], [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)], base * e2);
            push([xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)], [xi, xi * e1 * e2 * e3], base * e2);
            push([xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)], [xi, xi * e1], base * e2);
            push([xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)], [xi, xi * e1 * e2], base * e2);
        }
        PairClass::SharedVertex => {
            let jac = xi.powi(3) * e2;
            push([xi, xi * e1], [xi * e2, xi * e2 * e3], jac);
            push([xi * e2, xi * e2 * e3], [xi, xi * e1], jac);
        }
        _ => unreachable!("touching class checked by caller"),
    }
}

/// Physical point of `K̂` coordinates on triangle `(p0, p1, p2)`.
#[inline]
pub fn map_singular(p: &[Point3; 3], x: [f64; 2]) -> Point3 {
    p[0] * (1.0 - x[0]) + p[1] * (x[0] - x[1]) + p[2] * x[1]
}

/// Physical point of triangle-rule coordinates on triangle `(p0, p1, p2)`.
#[inline]
pub fn map_reference(p: &[Point3; 3], x: [f64; 2]) -> Point3 {
    p[0] + (p[1] - p[0]) * x[0] + (p[2] - p[0]) * x[1]
}
