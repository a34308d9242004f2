//! Field grids on axis-aligned planes.

use std::str::FromStr;

use bem_core::geometry::Point3;
use bem_core::pmchwt::{evaluate_fields, FieldPoint, Region, TransmissionProblem};
use bem_core::quadrature::QuadOrders;
use bem_core::C64;

use crate::config::FieldConfig;
use crate::error::{HarnessError, Result};

pub const FIELD_CSV_HEADER: &str = "x,y,z,ex_re,ex_im,ey_re,ey_im,ez_re,ez_im,abs2,region,near_surface";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    /// Normal axis: 0, 1 or 2.
    pub axis: usize,
    pub offset: f64,
}

impl FromStr for Plane {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarnessError::config(format!("plane must look like \"y=0.2\", got {s:?}"));
        let (axis, value) = s.split_once('=').ok_or_else(bad)?;
        let axis = match axis.trim().to_ascii_lowercase().as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => return Err(bad()),
        };
        let offset: f64 = value.trim().parse().map_err(|_| bad())?;
        if !offset.is_finite() {
            return Err(bad());
        }
        Ok(Self { axis, offset })
    }
}

impl Plane {
    /// In-plane axes `(u, v)`.
    pub fn in_plane_axes(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

/// Row-major grid, `u` varying fastest.
pub fn grid(plane: Plane, u: [f64; 2], v: [f64; 2], resolution: [usize; 2]) -> Result<Vec<Point3>> {
    if resolution[0] == 0 || resolution[1] == 0 {
        return Err(HarnessError::config("field resolution must be at least 1x1"));
    }
    let (a, b) = plane.in_plane_axes();
    let step = |r: [f64; 2], n: usize, i: usize| if n == 1 { 0.5 * (r[0] + r[1]) } else { r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64 };
    let mut pts = Vec::with_capacity(resolution[0] * resolution[1]);
    for j in 0..resolution[1] {
        for i in 0..resolution[0] {
            let mut p = Point3::zeros();
            p[plane.axis] = plane.offset;
            p[a] = step(u, resolution[0], i);
            p[b] = step(v, resolution[1], j);
            pts.push(p);
        }
    }
    Ok(pts)
}

pub fn grid_from_config(cfg: &FieldConfig) -> Result<Vec<Point3>> {
    grid(cfg.plane.parse()?, cfg.u, cfg.v, cfg.resolution)
}

pub fn abs2(v: &[C64; 3]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn region_label(r: Region) -> String {
    match r {
        Region::Exterior => "exterior".into(),
        Region::Interior(m) => format!("interior:{m}"),
    }
}

pub fn field_csv(points: &[FieldPoint]) -> String {
    let mut out = String::from(FIELD_CSV_HEADER);
    out.push('\n');
    for f in points {
        let p = f.point;
        out.push_str(&format!("{},{},{}", p.x, p.y, p.z));
        for z in &f.value {
            out.push_str(&format!(",{:e},{:e}", z.re, z.im));
        }
        out.push_str(&format!(",{:e},{},{}\n", abs2(&f.value), region_label(f.region), u8::from(f.near_surface)));
    }
    out
}

pub fn evaluate(problem: &TransmissionProblem, solution: &[C64], points: &[Point3], order: usize) -> Result<Vec<FieldPoint>> {
    Ok(evaluate_fields(problem, solution, points, &QuadOrders::default(), order)?)
}

/// Relative mismatch of the tangential field across a face through
/// `face` with unit normal `normal`. Each side is linearly extrapolated to
/// the face from points at distances `delta` and `2 delta`, which removes
/// the first-order effect of the jump in the normal derivative.
pub fn tangential_mismatch(
    problem: &TransmissionProblem,
    solution: &[C64],
    face: Point3,
    normal: Point3,
    delta: f64,
    order: usize,
) -> Result<f64> {
    let n = normal.normalize();
    let pts = [face - n * delta, face - n * (2.0 * delta), face + n * delta, face + n * (2.0 * delta)];
    let f = evaluate(problem, solution, &pts, order)?;
    let extrapolate = |a: &FieldPoint, b: &FieldPoint| -> [C64; 3] { std::array::from_fn(|c| 2.0 * a.value[c] - b.value[c]) };
    let inner = extrapolate(&f[0], &f[1]);
    let outer = extrapolate(&f[2], &f[3]);
    let tangential = |v: &[C64; 3]| -> [C64; 3] {
        let vn = v[0] * n.x + v[1] * n.y + v[2] * n.z;
        [v[0] - vn * n.x, v[1] - vn * n.y, v[2] - vn * n.z]
    };
    let (ti, to) = (tangential(&inner), tangential(&outer));
    let jump: [C64; 3] = std::array::from_fn(|c| ti[c] - to[c]);
    let scale = abs2(&to).max(abs2(&ti)).sqrt();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(abs2(&jump).sqrt() / scale)
}
