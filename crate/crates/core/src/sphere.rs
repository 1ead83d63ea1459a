//! Unit-sphere primitives: points, tangent frames, geodesics, the exponential
//! and logarithm maps, and the quadrature grids used by the rest of the crate.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Projections shorter than this make a frame hint unusable.
const HINT_TOLERANCE: f64 = 1e-10;

/// A point on the unit sphere. Coordinates are renormalized on construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpherePoint(Vec3);

impl SpherePoint {
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidPoint(format!("{v:?}")));
        }
        Ok(Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(Vec3::new(x, y, z))
    }

    /// Point with polar angle `theta` (from +z) and azimuth `phi`.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self(Vec3::new(st * cp, st * sp, ct).normalize())
    }

    pub fn north() -> Self {
        Self(Vec3::z())
    }

    pub fn coords(&self) -> &Vec3 {
        &self.0
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn antipode(&self) -> Self {
        Self(-self.0)
    }

    /// Orthogonal projection of an ambient vector onto the tangent plane here.
    pub fn project_tangent(&self, v: &Vec3) -> Vec3 {
        v - self.0 * self.0.dot(v)
    }
}

/// Orthonormal tangent frame `(e1, e2)` at `base`, with `e2 = base × e1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentFrame {
    base: SpherePoint,
    e1: Vec3,
    e2: Vec3,
}

impl TangentFrame {
    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn e1(&self) -> &Vec3 {
        &self.e1
    }

    pub fn e2(&self) -> &Vec3 {
        &self.e2
    }

    pub fn to_ambient(&self, components: &Vector2<f64>) -> Vec3 {
        self.e1 * components.x + self.e2 * components.y
    }

    pub fn to_components(&self, v: &Vec3) -> Vector2<f64> {
        Vector2::new(self.e1.dot(v), self.e2.dot(v))
    }
}

/// A tangent vector expressed in a [`TangentFrame`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    frame: TangentFrame,
    components: Vector2<f64>,
}

impl TangentVector {
    pub fn new(frame: TangentFrame, components: Vector2<f64>) -> Self {
        Self { frame, components }
    }

    /// Tangent vector from an ambient vector; the normal component is dropped.
    pub fn from_ambient(frame: TangentFrame, v: &Vec3) -> Self {
        let components = frame.to_components(v);
        Self { frame, components }
    }

    /// `magnitude` along the frame direction at `angle` from `e1`.
    pub fn from_polar(frame: TangentFrame, magnitude: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(frame, Vector2::new(magnitude * c, magnitude * s))
    }

    pub fn frame(&self) -> &TangentFrame {
        &self.frame
    }

    pub fn base(&self) -> &SpherePoint {
        &self.frame.base
    }

    pub fn components(&self) -> &Vector2<f64> {
        &self.components
    }

    pub fn norm(&self) -> f64 {
        self.components.norm()
    }

    pub fn ambient(&self) -> Vec3 {
        self.frame.to_ambient(&self.components)
    }

    /// Unit direction, or `None` for the zero vector.
    pub fn direction(&self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0).then(|| self.ambient() / n)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.frame, self.components * factor)
    }
}

pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> f64 {
    x.dot(y).clamp(-1.0, 1.0).acos()
}

/// Chord-free, well-conditioned distance: `atan2(|x × y|, x·y)`. Agrees with
/// [`geodesic_distance`] but keeps full precision near 0 and π.
pub fn geodesic_distance_precise(x: &SpherePoint, y: &SpherePoint) -> f64 {
    x.0.cross(&y.0).norm().atan2(x.dot(y))
}

pub fn exp_map(x: &SpherePoint, v: &TangentVector) -> SpherePoint {
    exp_map_ambient(x, &v.ambient())
}

/// Exponential map for a tangent vector given in ambient coordinates.
pub fn exp_map_ambient(x: &SpherePoint, v: &Vec3) -> SpherePoint {
    let len = v.norm();
    if len == 0.0 {
        return *x;
    }
    let (s, c) = len.sin_cos();
    SpherePoint((x.0 * c + v * (s / len)).normalize())
}

/// Inverse of [`exp_map_ambient`] for `y ≠ −x`, returned in ambient
/// coordinates. The antipode returns the zero vector.
pub fn log_map(x: &SpherePoint, y: &SpherePoint) -> Vec3 {
    let tangent = x.project_tangent(&y.0);
    let t = tangent.norm();
    if t == 0.0 {
        return Vec3::zeros();
    }
    let d = t.atan2(x.dot(y));
    tangent * (d / t)
}

pub fn make_frame(x: &SpherePoint, direction_hint: &Vec3) -> Result<TangentFrame> {
    let projected = x.project_tangent(direction_hint);
    let len = projected.norm();
    if len < HINT_TOLERANCE {
        return Err(Error::DegenerateHint(len));
    }
    let e1 = projected / len;
    let e2 = x.0.cross(&e1).normalize();
    Ok(TangentFrame { base: *x, e1, e2 })
}

/// A frame at `x` built from whichever coordinate axis is least aligned with it.
pub fn any_frame(x: &SpherePoint) -> TangentFrame {
    let c = x.coords();
    let hint = if c.x.abs() <= c.y.abs() && c.x.abs() <= c.z.abs() {
        Vec3::x()
    } else if c.y.abs() <= c.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    make_frame(x, &hint).expect("least aligned axis is never parallel")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `resolution` polar bands by `2·resolution` azimuthal cells.
    #[serde(alias = "latlong", alias = "lat-long")]
    LatLong,
    /// `resolution` points on a golden-angle spiral, equal weights.
    Fibonacci,
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "latlong" | "lat-long" | "lat_long" => Ok(GridKind::LatLong),
            "fibonacci" | "fib" => Ok(GridKind::Fibonacci),
            other => Err(Error::BadParam(format!("unknown grid kind `{other}`"))),
        }
    }
}

/// Quadrature nodes on the sphere with positive weights (steradians).
#[derive(Clone, Debug)]
pub struct SphereGrid {
    kind: GridKind,
    resolution: usize,
    nodes: Vec<SpherePoint>,
    weights: Vec<f64>,
}

pub fn build_grid(kind: GridKind, resolution: usize) -> Result<SphereGrid> {
    if resolution < 2 {
        return Err(Error::BadResolution(resolution));
    }
    let (nodes, weights) = match kind {
        GridKind::LatLong => lat_long_nodes(resolution),
        GridKind::Fibonacci => fibonacci_nodes(resolution),
    };
    Ok(SphereGrid {
        kind,
        resolution,
        nodes,
        weights,
    })
}

// Weights are exact band areas Δφ·(cos θ₋ − cos θ₊) = Δθ·Δφ·sin θ · sinc(Δθ/2),
// so the total is 4π up to rounding.
fn lat_long_nodes(n_theta: usize) -> (Vec<SpherePoint>, Vec<f64>) {
    let n_phi = 2 * n_theta;
    let d_theta = PI / n_theta as f64;
    let d_phi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * d_theta;
        let lo = i as f64 * d_theta;
        let hi = (i + 1) as f64 * d_theta;
        let band = d_phi * (lo.cos() - hi.cos());
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * d_phi;
            nodes.push(SpherePoint::from_spherical(theta, phi));
            weights.push(band);
        }
    }
    (nodes, weights)
}

fn fibonacci_nodes(n: usize) -> (Vec<SpherePoint>, Vec<f64>) {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let w = 4.0 * PI / n as f64;
    let nodes = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            let (s, c) = phi.sin_cos();
            SpherePoint(Vec3::new(r * c, r * s, z).normalize())
        })
        .collect();
    (nodes, vec![w; n])
}

impl SphereGrid {
    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SpherePoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F: Fn(&SpherePoint) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| f(p) * w)
            .sum()
    }

    /// Typical node spacing in radians: the polar step for lat-long grids,
    /// `√(4π/N)` for Fibonacci grids.
    pub fn spacing(&self) -> f64 {
        match self.kind {
            GridKind::LatLong => PI / self.resolution as f64,
            GridKind::Fibonacci => (4.0 * PI / self.nodes.len() as f64).sqrt(),
        }
    }

    pub fn neighbor_index(&self) -> NeighborIndex<'_> {
        NeighborIndex::new(self)
    }
}

/// Uniform-cell spatial hash over the ambient cube for nearest-neighbour
/// queries on a [`SphereGrid`].
pub struct NeighborIndex<'a> {
    grid: &'a SphereGrid,
    cell: f64,
    cells: HashMap<(i32, i32, i32), Vec<u32>>,
}

impl<'a> NeighborIndex<'a> {
    fn new(grid: &'a SphereGrid) -> Self {
        let cell = (2.0 * grid.spacing()).clamp(1e-4, 2.0);
        let mut cells: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
        for (i, p) in grid.nodes.iter().enumerate() {
            cells.entry(Self::key(cell, p.coords())).or_default().push(i as u32);
        }
        Self { grid, cell, cells }
    }

    fn key(cell: f64, v: &Vec3) -> (i32, i32, i32) {
        (
            ((v.x + 1.0) / cell).floor() as i32,
            ((v.y + 1.0) / cell).floor() as i32,
            ((v.z + 1.0) / cell).floor() as i32,
        )
    }

    /// Indices of nodes with chord distance at most `chord` from `v`.
    fn within_chord(&self, v: &Vec3, chord: f64, out: &mut Vec<(f64, usize)>) {
        out.clear();
        let lo = Self::key(self.cell, &v.add_scalar(-chord));
        let hi = Self::key(self.cell, &v.add_scalar(chord));
        for a in lo.0..=hi.0 {
            for b in lo.1..=hi.1 {
                for c in lo.2..=hi.2 {
                    if let Some(ids) = self.cells.get(&(a, b, c)) {
                        for &id in ids {
                            let d = (self.grid.nodes[id as usize].coords() - v).norm();
                            if d <= chord {
                                out.push((d, id as usize));
                            }
                        }
                    }
                }
            }
        }
    }

    /// The `k` nodes closest to `point` (ties broken by index), nearest first.
    pub fn nearest(&self, point: &SpherePoint, k: usize) -> Vec<usize> {
        let k = k.min(self.grid.len());
        let mut chord = self.cell;
        let mut found = Vec::new();
        loop {
            self.within_chord(point.coords(), chord, &mut found);
            if found.len() >= k || chord >= 2.0 {
                break;
            }
            chord = (chord * 2.0).min(2.0);
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.into_iter().take(k).map(|(_, i)| i).collect()
    }

    /// All nodes within geodesic `radius` of `point`.
    pub fn within(&self, point: &SpherePoint, radius: f64) -> Vec<usize> {
        let chord = 2.0 * (radius.min(PI) / 2.0).sin();
        let mut found = Vec::new();
        self.within_chord(point.coords(), chord + 1e-12, &mut found);
        let mut ids: Vec<usize> = found.into_iter().map(|(_, i)| i).collect();
        ids.sort_unstable();
        ids
    }
}
