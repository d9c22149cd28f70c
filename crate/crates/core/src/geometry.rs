//! Coordinate frames, range-based multilateration and fix averaging.
//!
//! The local frame is an equirectangular tangent approximation around a
//! configured origin: `x` points east (along the surveyed road in every
//! layout this crate generates), `y` north (lateral), `z` up. It is accurate
//! for road segments of a few kilometers and is exactly invertible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used by the local frame, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Latitudes at or beyond this magnitude are rejected by the local frame.
pub const MAX_FRAME_LATITUDE_DEG: f64 = 89.0;

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("latitude {0}° is too close to a pole for the local frame")]
    PolarRegion(f64),
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("need at least {need} anchors, got {have}")]
    InsufficientAnchors { need: usize, have: usize },
    #[error("anchor geometry is degenerate: {0}")]
    DegenerateGeometry(&'static str),
    #[error("Gauss-Newton did not converge after {iterations} iterations (last step {last_step_m:.3e} m)")]
    NoConvergence { iterations: usize, last_step_m: f64 },
    #[error("cannot fuse an empty list of fixes")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPosition {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_m: f64,
}

impl GlobalPosition {
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Result<Self, GeometryError> {
        let g = Self { latitude_deg, longitude_deg, altitude_m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.latitude_deg.is_finite() && (-90.0..=90.0).contains(&self.latitude_deg)) {
            return Err(GeometryError::InvalidCoordinate(format!("latitude {}", self.latitude_deg)));
        }
        if !(self.longitude_deg.is_finite() && (-180.0..=180.0).contains(&self.longitude_deg)) {
            return Err(GeometryError::InvalidCoordinate(format!("longitude {}", self.longitude_deg)));
        }
        if !self.altitude_m.is_finite() {
            return Err(GeometryError::InvalidCoordinate(format!("altitude {}", self.altitude_m)));
        }
        Ok(())
    }
}

/// A point in the road-aligned local frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl LocalPoint {
    pub const ORIGIN: LocalPoint = LocalPoint { x_m: 0.0, y_m: 0.0, z_m: 0.0 };

    pub const fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        Self { x_m, y_m, z_m }
    }

    pub fn distance_to(&self, other: &LocalPoint) -> f64 {
        let (dx, dy, dz) = (self.x_m - other.x_m, self.y_m - other.y_m, self.z_m - other.z_m);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x_m.is_finite() && self.y_m.is_finite() && self.z_m.is_finite()
    }

    pub fn translated(&self, by: &LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x_m + by.x_m, self.y_m + by.y_m, self.z_m + by.z_m)
    }
}

/// Measured distance to a known anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorRange {
    pub anchor: LocalPoint,
    pub range_m: f64,
}

impl AnchorRange {
    pub fn new(anchor: LocalPoint, range_m: f64) -> Self {
        Self { anchor, range_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    TwoD,
    ThreeD,
}

impl Dimension {
    pub fn min_anchors(self) -> usize {
        match self {
            Dimension::TwoD => 2,
            Dimension::ThreeD => 3,
        }
    }

    fn unknowns(self) -> usize {
        match self {
            Dimension::TwoD => 2,
            Dimension::ThreeD => 3,
        }
    }
}

fn check_frame_latitude(lat: f64) -> Result<(), GeometryError> {
    if lat.abs() >= MAX_FRAME_LATITUDE_DEG {
        Err(GeometryError::PolarRegion(lat))
    } else {
        Ok(())
    }
}

fn wrap_longitude(mut deg: f64) -> f64 {
    while deg > 180.0 {
        deg -= 360.0;
    }
    while deg < -180.0 {
        deg += 360.0;
    }
    deg
}

pub fn to_local(g: &GlobalPosition, origin: &GlobalPosition) -> Result<LocalPoint, GeometryError> {
    g.validate()?;
    origin.validate()?;
    check_frame_latitude(g.latitude_deg)?;
    check_frame_latitude(origin.latitude_deg)?;
    let dlon = wrap_longitude(g.longitude_deg - origin.longitude_deg).to_radians();
    let dlat = (g.latitude_deg - origin.latitude_deg).to_radians();
    Ok(LocalPoint {
        x_m: EARTH_RADIUS_M * dlon * origin.latitude_deg.to_radians().cos(),
        y_m: EARTH_RADIUS_M * dlat,
        z_m: g.altitude_m - origin.altitude_m,
    })
}

pub fn to_global(p: &LocalPoint, origin: &GlobalPosition) -> Result<GlobalPosition, GeometryError> {
    origin.validate()?;
    check_frame_latitude(origin.latitude_deg)?;
    if !p.is_finite() {
        return Err(GeometryError::InvalidCoordinate("non-finite local point".into()));
    }
    let lat = origin.latitude_deg + (p.y_m / EARTH_RADIUS_M).to_degrees();
    check_frame_latitude(lat)?;
    let dlon = (p.x_m / (EARTH_RADIUS_M * origin.latitude_deg.to_radians().cos())).to_degrees();
    Ok(GlobalPosition {
        latitude_deg: lat,
        longitude_deg: wrap_longitude(origin.longitude_deg + dlon),
        altitude_m: origin.altitude_m + p.z_m,
    })
}

/// Component-wise mean of a set of fixes.
///
/// Each coordinate is summed in sorted order relative to its minimum, so the
/// result is bit-identical under any permutation of the input and exact when
/// all points coincide.
pub fn fuse_fixes(points: &[LocalPoint]) -> Result<LocalPoint, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mean = |component: fn(&LocalPoint) -> f64| {
        let mut values: Vec<f64> = points.iter().map(component).collect();
        values.sort_by(f64::total_cmp);
        let base = values[0];
        let offset: f64 = values.iter().map(|v| v - base).sum();
        base + offset / values.len() as f64
    };
    Ok(LocalPoint {
        x_m: mean(|p| p.x_m),
        y_m: mean(|p| p.y_m),
        z_m: mean(|p| p.z_m),
    })
}

/// How the anchors constrain the solution, beyond their count.
#[derive(Debug, Clone, Copy)]
enum Layout {
    Coincident,
    /// All anchors on one line (unit direction), in the solved coordinates.
    Collinear { direction: [f64; 3] },
    /// 3D only: all anchors in one plane (unit normal).
    Coplanar { normal: [f64; 3] },
    General,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Orients a normal so its first non-negligible component among (z, y, x)
/// is positive. This fixes the "road side" used to break mirror ambiguity.
fn orient(n: [f64; 3]) -> [f64; 3] {
    for idx in [2, 1, 0] {
        if n[idx].abs() > 1e-12 {
            return if n[idx] < 0.0 { scale(n, -1.0) } else { n };
        }
    }
    n
}

fn classify(points: &[[f64; 3]], dim: Dimension) -> Layout {
    let p0 = points[0];
    let extent = points.iter().map(|p| norm(sub(*p, p0))).fold(0.0, f64::max);
    let tol = 1e-9 * extent.max(1.0);
    if extent <= tol {
        return Layout::Coincident;
    }
    let far = points
        .iter()
        .copied()
        .max_by(|a, b| norm(sub(*a, p0)).total_cmp(&norm(sub(*b, p0))))
        .unwrap();
    let u = scale(sub(far, p0), 1.0 / norm(sub(far, p0)));
    // Point farthest from the line p0 + t·u.
    let (off_dist, off_vec) = points
        .iter()
        .map(|p| {
            let d = sub(*p, p0);
            let perp = sub(d, scale(u, dot(d, u)));
            (norm(perp), perp)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    if off_dist <= tol {
        return Layout::Collinear { direction: u };
    }
    if dim == Dimension::TwoD {
        return Layout::General;
    }
    let n = cross(u, scale(off_vec, 1.0 / off_dist));
    let n = scale(n, 1.0 / norm(n));
    let max_out = points.iter().map(|p| dot(sub(*p, p0), n).abs()).fold(0.0, f64::max);
    if max_out <= tol {
        Layout::Coplanar { normal: orient(n) }
    } else {
        Layout::General
    }
}

struct Problem {
    dim: Dimension,
    anchors: Vec<[f64; 3]>,
    ranges: Vec<f64>,
    plane_z: f64,
}

impl Problem {
    fn full(&self, x: &[f64]) -> [f64; 3] {
        match self.dim {
            Dimension::TwoD => [x[0], x[1], self.plane_z],
            Dimension::ThreeD => [x[0], x[1], x[2]],
        }
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let p = self.full(x);
        self.anchors.iter().zip(&self.ranges).map(|(a, r)| norm(sub(p, *a)) - r).collect()
    }

    fn cost(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|r| r * r).sum()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.full(x);
        let k = self.dim.unknowns();
        DMatrix::from_fn(self.anchors.len(), k, |i, j| {
            let d = sub(p, self.anchors[i]);
            let dist = norm(d);
            if dist < 1e-12 {
                0.0
            } else {
                d[j] / dist
            }
        })
    }

    /// Gradient and Hessian of the cost / 2. The Hessian keeps the residual
    /// curvature term Σ eᵢ (I − ûᵢûᵢᵀ)/dᵢ that Gauss-Newton drops: without it
    /// the minimum on the anchor line of a collinear layout (range circles
    /// that do not meet) is approached only linearly.
    fn gradient_hessian(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.dim.unknowns();
        let jac = self.jacobian(x);
        let res = DVector::from_vec(self.residuals(x));
        let mut hess = jac.transpose() * &jac;
        let p = self.full(x);
        for (a, e) in self.anchors.iter().zip(res.iter()) {
            let d = sub(p, *a);
            let dist = norm(d);
            if dist < 1e-12 {
                continue;
            }
            for r in 0..k {
                for c in 0..k {
                    let eye = if r == c { 1.0 } else { 0.0 };
                    hess[(r, c)] += e * (eye - d[r] * d[c] / (dist * dist)) / dist;
                }
            }
        }
        (jac.transpose() * res, hess)
    }

    /// Newton's method on the range residuals with Levenberg damping: the
    /// damping is raised until the step is a descent step and shrinks after
    /// each accepted one, so near a regular solution this is the undamped
    /// Gauss-Newton/Newton iteration.
    fn solve(&self, start: Vec<f64>) -> Result<Vec<f64>, GeometryError> {
        let k = self.dim.unknowns();
        let mut x = start;
        let mut cost = self.cost(&x);
        let mut lambda = 0.0f64;
        let mut last_step = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            let (grad, hess) = self.gradient_hessian(&x);
            let floor = 1e-9 * hess.diagonal().abs().max().max(1e-12);
            let mut lam = lambda;
            let accepted = loop {
                let damped = &hess + DMatrix::identity(k, k) * lam;
                let delta = damped.cholesky().map(|c| c.solve(&(-&grad)));
                if let Some(delta) = delta {
                    let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(xi, di)| xi + di).collect();
                    let trial_cost = self.cost(&trial);
                    if trial_cost <= cost {
                        break Some((trial, trial_cost, delta.norm()));
                    }
                }
                lam = (lam * 10.0).max(floor);
                if lam > 1e12 * floor.max(1.0) {
                    break None;
                }
            };
            match accepted {
                Some((trial, trial_cost, step)) => {
                    x = trial;
                    cost = trial_cost;
                    last_step = step;
                    lambda = if lam / 10.0 < floor { 0.0 } else { lam / 10.0 };
                    if step < STEP_TOLERANCE_M {
                        return Ok(x);
                    }
                }
                // No descent even along a tiny gradient step: stationary to
                // working precision.
                None => return Ok(x),
            }
        }
        Err(GeometryError::NoConvergence { iterations: MAX_ITERATIONS, last_step_m: last_step })
    }
}

/// Closed-form start for a general layout: differences of squared range
/// equations are linear in the position.
fn linear_start(problem: &Problem) -> Option<Vec<f64>> {
    let k = problem.dim.unknowns();
    // Squared range restricted to the solved coordinates.
    let reduced = |a: &[f64; 3], r: f64| match problem.dim {
        Dimension::TwoD => r * r - (problem.plane_z - a[2]).powi(2),
        Dimension::ThreeD => r * r,
    };
    let a0 = problem.anchors[0];
    let h0 = reduced(&a0, problem.ranges[0]);
    let rows = problem.anchors.len() - 1;
    let mut a = DMatrix::zeros(rows, k);
    let mut b = DVector::zeros(rows);
    for (row, (ai, ri)) in problem.anchors.iter().zip(&problem.ranges).skip(1).enumerate() {
        let mut rhs = h0 - reduced(ai, *ri);
        for j in 0..k {
            a[(row, j)] = 2.0 * (ai[j] - a0[j]);
            rhs += ai[j] * ai[j] - a0[j] * a0[j];
        }
        b[row] = rhs;
    }
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let v: Vec<f64> = sol.iter().copied().collect();
    v.iter().all(|c| c.is_finite()).then_some(v)
}

fn reflect(p: [f64; 3], base: [f64; 3], normal: [f64; 3]) -> [f64; 3] {
    let d = dot(sub(p, base), normal);
    sub(p, scale(normal, 2.0 * d))
}

/// Least-squares position from anchor ranges.
///
/// Minimizes `Σ(‖p − anchor‖ − range)²` by Gauss-Newton. In 2D the solution
/// lies in the horizontal plane through the hint (or `z = 0`). When the
/// anchors leave a mirror ambiguity (collinear in 2D, coplanar in 3D) the
/// mirror image nearer the hint is returned; without a hint, the image on
/// the positive side of the anchor line (larger `y`) or plane (larger `z`).
pub fn multilaterate(
    ranges: &[AnchorRange],
    mode: Dimension,
    hint: Option<LocalPoint>,
) -> Result<LocalPoint, GeometryError> {
    let need = mode.min_anchors();
    if ranges.len() < need {
        return Err(GeometryError::InsufficientAnchors { need, have: ranges.len() });
    }
    for r in ranges {
        if !r.anchor.is_finite() || !r.range_m.is_finite() || r.range_m < 0.0 {
            return Err(GeometryError::InvalidCoordinate(format!("bad anchor range {r:?}")));
        }
    }
    if let Some(h) = hint {
        if !h.is_finite() {
            return Err(GeometryError::InvalidCoordinate("non-finite hint".into()));
        }
    }
    let plane_z = hint.map_or(0.0, |h| h.z_m);
    let problem = Problem {
        dim: mode,
        anchors: ranges.iter().map(|r| [r.anchor.x_m, r.anchor.y_m, r.anchor.z_m]).collect(),
        ranges: ranges.iter().map(|r| r.range_m).collect(),
        plane_z,
    };
    let solved: Vec<[f64; 3]> = match mode {
        Dimension::TwoD => problem.anchors.iter().map(|a| [a[0], a[1], 0.0]).collect(),
        Dimension::ThreeD => problem.anchors.clone(),
    };
    let layout = classify(&solved, mode);
    let centroid = {
        let n = solved.len() as f64;
        let s = solved.iter().fold([0.0; 3], |acc, p| [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]);
        scale(s, 1.0 / n)
    };

    // Side normal used for the mirror rule, if the layout has a mirror.
    let mirror_normal = match (layout, mode) {
        (Layout::Collinear { direction }, Dimension::TwoD) => Some(orient([-direction[1], direction[0], 0.0])),
        (Layout::Coplanar { normal }, Dimension::ThreeD) => Some(normal),
        _ => None,
    };

    let start: Vec<f64> = match hint {
        Some(h) => {
            let mut h = [h.x_m, h.y_m, if mode == Dimension::TwoD { 0.0 } else { h.z_m }];
            // A start on the mirror line or plane is a saddle: the gradient
            // has no component towards either mirror solution.
            if let Some(n) = mirror_normal {
                if dot(sub(h, solved[0]), n).abs() < 1e-6 {
                    h = [h[0] + n[0], h[1] + n[1], h[2] + n[2]];
                }
            }
            h[..mode.unknowns()].to_vec()
        }
        None => match layout {
            Layout::Coincident => return Err(GeometryError::DegenerateGeometry("all anchors coincide")),
            Layout::Collinear { .. } if mode == Dimension::ThreeD => {
                return Err(GeometryError::DegenerateGeometry("collinear anchors in 3D"))
            }
            Layout::General => linear_start(&problem).unwrap_or_else(|| centroid[..mode.unknowns()].to_vec()),
            _ => {
                let n = mirror_normal.expect("mirror layouts carry a normal");
                centroid.iter().zip(n).map(|(c, ni)| c + ni).take(mode.unknowns()).collect()
            }
        },
    };

    let x = problem.solve(start)?;
    let mut p = problem.full(&x);

    if let Some(n) = mirror_normal {
        let base = match mode {
            Dimension::TwoD => [solved[0][0], solved[0][1], plane_z],
            Dimension::ThreeD => solved[0],
        };
        let mirrored = reflect(p, base, n);
        let positive_side = dot(sub(p, base), n) >= 0.0;
        let pick_mirror = match hint {
            Some(h) => {
                let h = [h.x_m, h.y_m, if mode == Dimension::TwoD { plane_z } else { h.z_m }];
                let (dm, dp) = (norm(sub(mirrored, h)), norm(sub(p, h)));
                // Equidistant hints (on the mirror line) fall back to the side rule.
                if (dm - dp).abs() <= 1e-9 * (1.0 + dp) {
                    !positive_side
                } else {
                    dm < dp
                }
            }
            None => !positive_side,
        };
        if pick_mirror {
            p = mirrored;
        }
    }
    Ok(LocalPoint::new(p[0], p[1], p[2]))
}
