//! Densities on sphere grids and solvability diagnostics: concentrated
//! Gaussian-like densities, cap masses, a certified lower bound on transport
//! distance, and density-ratio diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{classify, CostSpec, Defect, DEFAULT_SCAN_POINTS, DEFAULT_TOL_ROOT};
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::sphere::{any_frame, geodesic_distance, log_map, SphereGrid, SpherePoint, Vec3};

pub const NORMALIZATION_TOL: f64 = 1e-8;

/// A probability density (per steradian) sampled at the nodes of a grid.
#[derive(Clone, Debug)]
pub struct DensityField {
    grid: Arc<SphereGrid>,
    values: Vec<f64>,
}

impl DensityField {
    /// Takes already-normalized values.
    pub fn new(grid: Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        Self::check_values(&grid, &values)?;
        let total: f64 = values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDensity(format!("total mass {total} is not 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales non-negative values to unit mass on the grid.
    pub fn normalized(grid: Arc<SphereGrid>, mut values: Vec<f64>) -> Result<Self> {
        Self::check_values(&grid, &values)?;
        let total: f64 = values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDensity("density has no mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self { grid, values })
    }

    fn check_values(grid: &SphereGrid, values: &[f64]) -> Result<()> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("value {} at node {i}", values[i])));
        }
        Ok(())
    }

    pub fn uniform(grid: Arc<SphereGrid>) -> Self {
        let n = grid.len();
        Self::normalized(grid, vec![1.0; n]).expect("uniform density is valid")
    }

    /// Density proportional to `1 + amplitude · (direction · x)`.
    pub fn linear_perturbation(grid: Arc<SphereGrid>, direction: &Vec3, amplitude: f64) -> Result<Self> {
        let values = grid
            .nodes()
            .iter()
            .map(|x| 1.0 + amplitude * direction.dot(x.coords()))
            .collect();
        Self::normalized(grid, values)
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-node masses `value · weight`.
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }
}

/// Normalizing constant `2π ∫₀^π exp(−½(θ/σ)²) sin θ dθ` of the
/// Gaussian-like density.
pub fn gaussian_normalization(sigma: f64) -> f64 {
    gaussian_cap_integral(sigma, PI)
}

/// Mass of the exact (continuous) Gaussian-like density in a cap of
/// `radius` about its center.
pub fn gaussian_cap_mass(sigma: f64, radius: f64) -> f64 {
    gaussian_cap_integral(sigma, radius.min(PI)) / gaussian_normalization(sigma)
}

fn gaussian_cap_integral(sigma: f64, upper: f64) -> f64 {
    let rule = GaussLegendre::new(20);
    let f = |t: f64| (-0.5 * (t / sigma).powi(2)).exp() * t.sin();
    // The integrand is negligible past 40σ (below e^{-800}).
    let core = upper.min(40.0 * sigma);
    let mut total = rule.integrate_composite(0.0, core, 64, f);
    if upper > core {
        total += rule.integrate_composite(core, upper, 16, f);
    }
    2.0 * PI * total
}

#[derive(Clone, Debug)]
pub struct GaussianDensity {
    pub field: DensityField,
    /// Analytic normalizing constant of the continuous density.
    pub normalization: f64,
}

/// `f(x) ∝ exp(−½ d(x, center)² / σ²)`, renormalized on the grid.
pub fn gaussian_like_density(center: &SpherePoint, sigma: f64, grid: Arc<SphereGrid>) -> Result<GaussianDensity> {
    if !(sigma > 0.0) {
        return Err(Error::BadParam(format!("sigma must be positive, got {sigma}")));
    }
    let spacing = grid.spacing();
    if spacing > 0.5 * sigma {
        return Err(Error::UnderResolved { spacing, sigma });
    }
    let normalization = gaussian_normalization(sigma);
    let values = grid
        .nodes()
        .iter()
        .map(|x| (-0.5 * (geodesic_distance(x, center) / sigma).powi(2)).exp() / normalization)
        .collect();
    Ok(GaussianDensity {
        field: DensityField::normalized(grid, values)?,
        normalization,
    })
}

/// Grid mass within geodesic `radius` of `center`.
pub fn cap_mass(density: &DensityField, center: &SpherePoint, radius: f64) -> f64 {
    density
        .grid
        .nodes()
        .iter()
        .zip(density.grid.weights())
        .zip(&density.values)
        .filter(|((x, _), _)| geodesic_distance(x, center) <= radius)
        .map(|((_, w), v)| v * w)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapWitness {
    /// Which density the small cap is drawn from (`"f"` or `"g"`).
    pub cap_density: &'static str,
    pub center_index: usize,
    pub center: [f64; 3],
    pub cap_radius: f64,
    pub cap_mass: f64,
    pub dilated_radius: f64,
    /// Mass of the other density within `dilated_radius`.
    pub dilated_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub required_distance_lower_bound: f64,
    #[serde(serialize_with = "crate::cost::serialize_extended")]
    pub z_star: f64,
    pub feasible: bool,
    pub witness: Option<CapWitness>,
    pub alpha: f64,
    pub epsilon: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-4;
const HISTOGRAM_BINS: usize = 8192;
const TOP_CENTERS: usize = 16;
const STRIDED_CENTERS: usize = 64;

/// Radial histogram bins, resolved finely near 0 and near π: bins are uniform
/// in `sin(d/2)` on the near half and in `cos(d/2)` on the far half.
struct RadialBins {
    edges: Vec<f64>,
}

impl RadialBins {
    fn new() -> Self {
        let half = HISTOGRAM_BINS / 2;
        let step = std::f64::consts::FRAC_1_SQRT_2 / half as f64;
        let mut edges: Vec<f64> = (0..=half).map(|k| 2.0 * (step * k as f64).min(1.0).asin()).collect();
        edges.extend((0..half).rev().map(|j| 2.0 * (step * j as f64).min(1.0).acos()));
        Self { edges }
    }

    fn index(&self, dot: f64) -> usize {
        let half = HISTOGRAM_BINS / 2;
        let u = (0.5 * (1.0 - dot)).clamp(0.0, 1.0);
        let scale = half as f64 * std::f64::consts::SQRT_2;
        if u <= 0.5 {
            ((u.sqrt() * scale) as usize).min(half - 1)
        } else {
            HISTOGRAM_BINS - 1 - (((1.0 - u).sqrt() * scale) as usize).min(half - 1)
        }
    }
}

struct CenterBound {
    bound: f64,
    witness: CapWitness,
}

/// Nodes carrying mass in either density, with both masses.
struct MassiveNodes {
    coords: Vec<Vec3>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl MassiveNodes {
    fn new(f: &DensityField, g: &DensityField) -> Self {
        let (fm, gm) = (f.masses(), g.masses());
        let mut out = Self {
            coords: Vec::new(),
            f: Vec::new(),
            g: Vec::new(),
        };
        for (i, x) in f.grid.nodes().iter().enumerate() {
            if fm[i] > 0.0 || gm[i] > 0.0 {
                out.coords.push(*x.coords());
                out.f.push(fm[i]);
                out.g.push(gm[i]);
            }
        }
        out
    }

    fn histograms(&self, bins: &RadialBins, c: &Vec3) -> (Vec<f64>, Vec<f64>) {
        let mut hf = vec![0.0; HISTOGRAM_BINS];
        let mut hg = vec![0.0; HISTOGRAM_BINS];
        for ((x, a), b) in self.coords.iter().zip(&self.f).zip(&self.g) {
            let k = bins.index(x.dot(c));
            hf[k] += a;
            hg[k] += b;
        }
        (hf, hg)
    }
}

#[allow(clippy::too_many_arguments)]
fn bound_from_histograms(
    bins: &RadialBins,
    hist_cap: &[f64],
    hist_other: &[f64],
    cap_name: &'static str,
    idx: usize,
    c: &Vec3,
    alpha: f64,
    epsilon: f64,
    z_star: f64,
) -> CenterBound {
    // Smallest cap radius (upper bin edge) holding alpha of the cap density.
    let mut acc = 0.0;
    let mut k_cap = HISTOGRAM_BINS - 1;
    for (k, m) in hist_cap.iter().enumerate() {
        acc += m;
        if acc >= alpha {
            k_cap = k;
            break;
        }
    }
    let cap_radius = bins.edges[k_cap + 1];
    let cap_mass = acc;
    // Largest radius (lower bin edge) certain to hold less than alpha − ε
    // of the other density.
    let mut acc = 0.0;
    let mut k_other = HISTOGRAM_BINS - 1;
    for (k, m) in hist_other.iter().enumerate() {
        if acc + m >= alpha - epsilon {
            k_other = k;
            break;
        }
        acc += m;
    }
    let reach = bins.edges[k_other];
    let bound = (reach - cap_radius).max(0.0);
    let dilated_radius = (cap_radius + z_star).min(PI);
    let dilated_mass = if z_star.is_finite() {
        hist_other
            .iter()
            .zip(bins.edges.windows(2))
            .filter(|(_, e)| e[1] <= dilated_radius)
            .map(|(m, _)| m)
            .sum()
    } else {
        1.0
    };
    CenterBound {
        bound,
        witness: CapWitness {
            cap_density: cap_name,
            center_index: idx,
            center: [c.x, c.y, c.z],
            cap_radius,
            cap_mass,
            dilated_radius,
            dilated_mass,
        },
    }
}

fn candidate_centers(f: &DensityField, g: &DensityField) -> Vec<usize> {
    let n = f.values.len();
    let mut centers = Vec::new();
    for d in [f, g] {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| d.values[*b].total_cmp(&d.values[*a]).then(a.cmp(b)));
        centers.extend(order.into_iter().take(TOP_CENTERS));
    }
    let stride = (n / STRIDED_CENTERS).max(1);
    centers.extend((0..n).step_by(stride));
    centers.sort_unstable();
    centers.dedup();
    centers
}

/// Certified lower bound on how far mass must travel between `f` and `g`:
/// a cap holding `alpha` of one density must reach `alpha − ε` of the other,
/// so the gap between the two radii is a distance some mass has to cover.
/// Infeasible when the bound exceeds the cost's z*.
pub fn feasibility_check(f: &DensityField, g: &DensityField, cost: &CostSpec, alpha: f64) -> Result<FeasibilityReport> {
    feasibility_check_with(f, g, cost, alpha, DEFAULT_EPSILON)
}

pub fn feasibility_check_with(
    f: &DensityField,
    g: &DensityField,
    cost: &CostSpec,
    alpha: f64,
    epsilon: f64,
) -> Result<FeasibilityReport> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::BadParam(format!("alpha must lie in (0.5, 1), got {alpha}")));
    }
    if !Arc::ptr_eq(&f.grid, &g.grid) && f.grid.len() != g.grid.len() {
        return Err(Error::InvalidDensity("densities live on different grids".into()));
    }
    let report = classify(cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS)?;
    let z_star = match report.classification {
        Defect::NonDefective => f64::INFINITY,
        _ => report.z_star,
    };
    let bins = RadialBins::new();
    let centers = candidate_centers(f, g);
    let massive = MassiveNodes::new(f, g);
    let results: Vec<CenterBound> = centers
        .par_iter()
        .flat_map_iter(|&idx| {
            let c = *f.grid.nodes()[idx].coords();
            let (hf, hg) = massive.histograms(&bins, &c);
            [
                bound_from_histograms(&bins, &hf, &hg, "f", idx, &c, alpha, epsilon, z_star),
                bound_from_histograms(&bins, &hg, &hf, "g", idx, &c, alpha, epsilon, z_star),
            ]
        })
        .collect();
    // Largest bound; ties resolved by lowest center index, then f before g.
    let best = results
        .into_iter()
        .reduce(|a, b| if b.bound > a.bound { b } else { a })
        .expect("at least one candidate center");
    Ok(FeasibilityReport {
        required_distance_lower_bound: best.bound,
        z_star,
        feasible: best.bound <= z_star,
        witness: Some(best.witness),
        alpha,
        epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioDiagnostics {
    pub max_ratio: f64,
    pub max_grad_ratio: f64,
}

const GRADIENT_NEIGHBORS: usize = 8;

/// `max g/f` and the largest surface-gradient magnitude of `g/f`, the
/// latter by tangent-plane least squares over nearest neighbours.
pub fn ratio_diagnostics(f: &DensityField, g: &DensityField) -> Result<RatioDiagnostics> {
    if let Some(i) = f.values.iter().position(|v| *v <= 0.0) {
        return Err(Error::ZeroDensity(i));
    }
    let ratio: Vec<f64> = g.values.iter().zip(&f.values).map(|(a, b)| a / b).collect();
    let max_ratio = ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = f.grid.as_ref();
    let index = grid.neighbor_index();
    let max_grad_ratio = (0..grid.len())
        .into_par_iter()
        .map(|i| surface_gradient(grid, &index, &ratio, i).norm())
        .reduce(|| 0.0, f64::max);
    Ok(RatioDiagnostics {
        max_ratio,
        max_grad_ratio,
    })
}

/// Least-squares gradient of nodal `values` at node `i`, in the node's
/// tangent frame. Widens the neighbourhood until the fit is well posed.
pub fn surface_gradient(grid: &SphereGrid, index: &crate::sphere::NeighborIndex<'_>, values: &[f64], i: usize) -> Vector2<f64> {
    let x = grid.nodes()[i];
    let frame = any_frame(&x);
    let mut k = GRADIENT_NEIGHBORS + 1;
    loop {
        let mut normal = Matrix2::zeros();
        let mut rhs = Vector2::zeros();
        for j in index.nearest(&x, k) {
            if j == i {
                continue;
            }
            let xi = frame.to_components(&log_map(&x, &grid.nodes()[j]));
            normal += xi * xi.transpose();
            rhs += xi * (values[j] - values[i]);
        }
        let det = normal.determinant();
        let trace = normal.trace();
        if det > 1e-6 * trace * trace || k >= 8 * GRADIENT_NEIGHBORS {
            return normal.try_inverse().map(|inv| inv * rhs).unwrap_or_else(Vector2::zeros);
        }
        k *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{build_grid, GridKind};

    fn grid(kind: GridKind, res: usize) -> Arc<SphereGrid> {
        Arc::new(build_grid(kind, res).unwrap())
    }

    #[test]
    fn normalization_constant() {
        // Independent reference from 50-digit quadrature of the θ-integral.
        let z = gaussian_normalization(0.01);
        assert!((z - 6.282_975_87e-4).abs() / z < 1e-8);
        for sigma in [0.005, 0.01, 0.1, 0.5] {
            let a = gaussian_normalization(sigma);
            let rule = GaussLegendre::new(40);
            let b = 2.0 * PI * rule.integrate_composite(0.0, PI, 512, |t| (-0.5 * (t / sigma).powi(2)).exp() * t.sin());
            assert!((a - b).abs() / a < 1e-10, "sigma {sigma}");
        }
        assert!((gaussian_cap_mass(0.01, 0.05) - 0.999_996_274_9).abs() < 1e-9);
    }

    #[test]
    fn uniform_caps() {
        let g = grid(GridKind::LatLong, 90);
        let u = DensityField::uniform(g);
        let n = SpherePoint::north();
        assert!((cap_mass(&u, &n, PI) - 1.0).abs() < 1e-12);
        assert!((cap_mass(&u, &n, PI / 2.0) - 0.5).abs() < 1e-6);
        let mut prev = 0.0;
        for i in 0..=50 {
            let m = cap_mass(&u, &n, PI * i as f64 / 50.0);
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn gaussian_field() {
        let g = grid(GridKind::LatLong, 360);
        let d = gaussian_like_density(&SpherePoint::north(), 0.05, g.clone()).unwrap();
        assert!((d.field.total_mass() - 1.0).abs() < 1e-12);
        // Rings at θ = (i + ½)π/360 lie inside 0.15 for i ≤ 16, so the grid
        // cap is exactly the bands up to θ = 17π/360.
        let grid_mass = cap_mass(&d.field, &SpherePoint::north(), 0.15);
        assert!((grid_mass - gaussian_cap_mass(0.05, 17.0 * PI / 360.0)).abs() < 5e-4);
        assert!(matches!(
            gaussian_like_density(&SpherePoint::north(), 0.01, g),
            Err(Error::UnderResolved { .. })
        ));
    }

    #[test]
    fn feasibility_examples() {
        let g = grid(GridKind::LatLong, 180);
        let u = DensityField::uniform(g.clone());
        let rep = feasibility_check(&u, &u, &CostSpec::refractor_i(1.52).unwrap(), 0.999).unwrap();
        assert!(rep.feasible);
        assert_eq!(rep.required_distance_lower_bound, 0.0);

        let x0 = SpherePoint::from_xyz(0.3, 0.2, 0.9).unwrap();
        let f = gaussian_like_density(&x0, 0.05, g.clone()).unwrap().field;
        let h = gaussian_like_density(&x0.antipode(), 0.05, g.clone()).unwrap().field;
        let r = feasibility_check(&f, &h, &CostSpec::refractor_i(2.417).unwrap(), 0.999).unwrap();
        assert!(!r.feasible);
        assert!(r.required_distance_lower_bound > PI - 0.5);
        let geo = feasibility_check(&f, &h, &CostSpec::geodesic_squared(), 0.999).unwrap();
        assert!(geo.feasible);

        // Swapping the densities swaps the witness roles, not the bound.
        let s = feasibility_check(&h, &f, &CostSpec::refractor_i(2.417).unwrap(), 0.999).unwrap();
        assert_eq!(s.required_distance_lower_bound, r.required_distance_lower_bound);
        let (a, b) = (r.witness.unwrap(), s.witness.unwrap());
        assert_ne!(a.cap_density, b.cap_density);
        assert_eq!(a.cap_radius, b.cap_radius);
    }

    #[test]
    fn ratio_identity() {
        let g = grid(GridKind::Fibonacci, 2000);
        let f = DensityField::linear_perturbation(g, &Vec3::z(), 0.3).unwrap();
        let d = ratio_diagnostics(&f, &f).unwrap();
        assert!((d.max_ratio - 1.0).abs() < 1e-12);
        assert!(d.max_grad_ratio < 1e-9);
    }

    #[test]
    fn ratio_against_closed_form() {
        let sigma = 0.5;
        for res in [180, 360] {
            let g = grid(GridKind::LatLong, res);
            let c = SpherePoint::north();
            let f = gaussian_like_density(&c, sigma, g.clone()).unwrap();
            let u = DensityField::uniform(g.clone());
            let d = ratio_diagnostics(&f.field, &u).unwrap();
            let min_f = g
                .nodes()
                .iter()
                .map(|x| (-0.5 * (geodesic_distance(x, &c) / sigma).powi(2)).exp() / f.normalization)
                .fold(f64::INFINITY, f64::min);
            let expected = u.values()[0] / min_f;
            assert!((d.max_ratio - expected).abs() / expected < 1e-4, "res {res}: {} vs {expected}", d.max_ratio);
        }
        let at = |res| {
            let g = grid(GridKind::LatLong, res);
            let f = DensityField::linear_perturbation(g.clone(), &Vec3::new(0.6, 0.0, 0.8), 0.5).unwrap();
            ratio_diagnostics(&f, &DensityField::uniform(g)).unwrap()
        };
        let (a, b) = (at(90), at(180));
        assert!((a.max_grad_ratio - b.max_grad_ratio).abs() / b.max_grad_ratio < 0.05);
        assert!((a.max_ratio - b.max_ratio).abs() / b.max_ratio < 0.05);
    }

    #[test]
    fn zero_density_rejected() {
        let g = grid(GridKind::Fibonacci, 100);
        let mut v = vec![1.0; 100];
        v[7] = 0.0;
        let f = DensityField::normalized(g.clone(), v).unwrap();
        assert!(matches!(ratio_diagnostics(&f, &f), Err(Error::ZeroDensity(7))));
    }
}
