//! The β function (inverse of |G′|), exponential-type transport maps, and the
//! closed-form refractor maps used as independent checks.

use serde::Serialize;

use crate::cost::{classify, CostSpec, Defect, DefectReport, Geometry, DEFAULT_SCAN_POINTS, DEFAULT_TOL_ROOT};
use crate::error::{Error, Result};
use crate::roots::brent;
use crate::sphere::{exp_map_ambient, SpherePoint, TangentVector, Vec3};

/// Gradients this close below p* are treated as sitting on the cusp.
pub const CUSP_WINDOW: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaValue {
    pub value: f64,
    /// Set when `r` is within [`CUSP_WINDOW`] of p* and z* was returned.
    pub near_cusp: bool,
}

/// `β`: gradient magnitude `r` ↦ transport distance `z` with `|G′(z)| = r`.
#[derive(Clone, Debug)]
pub struct BetaFunction {
    cost: CostSpec,
    report: DefectReport,
    sign: f64,
    /// Distances are confined to `[0, z_limit]`.
    z_limit: f64,
    /// `|G′(z_limit)|`; infinite for type II costs.
    r_limit: f64,
}

impl BetaFunction {
    pub fn new(cost: &CostSpec) -> Result<Self> {
        let report = classify(cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS)?;
        Self::with_report(cost, report)
    }

    pub fn with_report(cost: &CostSpec, report: DefectReport) -> Result<Self> {
        let sign = cost.transport_sign();
        let probe = cost.radial(1e-3 * cost.z_max().min(report.z_star));
        // |G′| must grow away from 0; otherwise β starts at the far end.
        if probe.d1 * probe.d2 <= 0.0 || cost.is_reflector_antenna() {
            return Err(Error::UnsupportedBranch(cost.name().to_string()));
        }
        let (z_limit, r_limit) = match report.classification {
            Defect::TypeI => (report.z_star, report.p_star),
            Defect::TypeII => (report.z_star, f64::INFINITY),
            Defect::NonDefective => (cost.z_max(), cost.radial(cost.z_max()).d1.abs()),
        };
        Ok(Self {
            cost: cost.clone(),
            report,
            sign,
            z_limit,
            r_limit,
        })
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn report(&self) -> &DefectReport {
        &self.report
    }

    /// `+1` when transport follows `p̂`, `−1` when it runs against it.
    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn z_limit(&self) -> f64 {
        self.z_limit
    }

    /// Supremum of admissible gradient magnitudes (p* for type I).
    pub fn r_limit(&self) -> f64 {
        self.r_limit
    }

    pub fn beta(&self, r: f64) -> Result<f64> {
        self.beta_flagged(r).map(|b| b.value)
    }

    pub fn beta_flagged(&self, r: f64) -> Result<BetaValue> {
        if !(r >= 0.0) || r > self.r_limit {
            return Err(Error::OutOfDomain { r, limit: self.r_limit });
        }
        if r == 0.0 {
            return Ok(BetaValue { value: 0.0, near_cusp: false });
        }
        if self.report.classification == Defect::TypeI && r >= self.r_limit - CUSP_WINDOW {
            return Ok(BetaValue { value: self.z_limit, near_cusp: true });
        }
        if r == self.r_limit {
            return Ok(BetaValue { value: self.z_limit, near_cusp: false });
        }
        let g = |z: f64| self.cost.radial(z).d1.abs() - r;
        let hi = if self.r_limit.is_finite() {
            self.z_limit
        } else {
            // Approach the singular endpoint until |G′| exceeds r.
            let mut gap = 1e-3 * self.z_limit;
            let mut hi = self.z_limit - gap;
            while g(hi) < 0.0 {
                gap *= 0.1;
                if gap < 4.0 * f64::EPSILON * self.z_limit {
                    return Ok(BetaValue { value: self.z_limit, near_cusp: true });
                }
                hi = self.z_limit - gap;
            }
            hi
        };
        let z = brent(g, 0.0, hi, 0.0, 200)?;
        Ok(BetaValue { value: z, near_cusp: false })
    }

    /// `β′(r) = 1/|G″(β(r))|`.
    pub fn beta_prime(&self, r: f64) -> Result<f64> {
        let b = self.beta(r)?;
        Ok(1.0 / self.cost.radial(b).d2.abs())
    }

    /// `T = x R₁ + p R₂` with `R₁ = cos β`, `R₂ = σ sin β / r` (σ the
    /// transport sign); at `r = 0`, `R₂ = σ β′(0)`.
    pub fn decompose(&self, r: f64) -> Result<MapDecomposition> {
        let b = self.beta(r)?;
        let r2 = if r == 0.0 {
            self.sign * self.beta_prime(0.0)?
        } else {
            self.sign * b.sin() / r
        };
        Ok(MapDecomposition {
            r1: b.cos(),
            r2,
            beta_value: b,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MapDecomposition {
    pub r1: f64,
    pub r2: f64,
    pub beta_value: f64,
}

/// `T(x, p) = exp_x(σ p̂ β(|p|))` on the sphere.
pub fn transport_map(beta: &BetaFunction, x: &SpherePoint, p: &TangentVector) -> Result<SpherePoint> {
    transport_map_ambient(beta, x, &p.ambient())
}

/// [`transport_map`] with `p` in ambient coordinates (tangent at `x`).
pub fn transport_map_ambient(beta: &BetaFunction, x: &SpherePoint, p: &Vec3) -> Result<SpherePoint> {
    if !beta.cost.geometry().is_sphere() {
        return Err(Error::WrongGeometry { expected: "sphere" });
    }
    let r = p.norm();
    if r == 0.0 {
        return Ok(*x);
    }
    let b = beta.beta(r)?;
    Ok(exp_map_ambient(x, &(p * (beta.sign * b / r))))
}

/// `y = x + σ p̂ β(|p|)` in ℝᵈ.
pub fn transport_map_euclidean(beta: &BetaFunction, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    match beta.cost.geometry() {
        Geometry::Euclidean { dim } if dim == x.len() && dim == p.len() => {}
        Geometry::Euclidean { .. } => {
            return Err(Error::BadParam("point dimension does not match the cost".into()))
        }
        Geometry::Sphere => return Err(Error::WrongGeometry { expected: "euclidean" }),
    }
    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Ok(x.to_vec());
    }
    let scale = beta.sign * beta.beta(r)? / r;
    Ok(x.iter().zip(p).map(|(a, b)| a + scale * b).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefractorVariant {
    /// Cost `−log(n − x·y)`.
    I { n: f64 },
    /// Cost `log(κ x·y − 1)`.
    II { kappa: f64 },
}

impl RefractorVariant {
    pub fn cost(&self) -> Result<CostSpec> {
        match *self {
            RefractorVariant::I { n } => CostSpec::refractor_i(n),
            RefractorVariant::II { kappa } => CostSpec::refractor_ii(kappa),
        }
    }

    /// Coefficients `(R₁, R₂)` of the explicit algebraic map.
    pub fn coefficients(&self, r: f64) -> Result<(f64, f64)> {
        let r_sq = r * r;
        match *self {
            RefractorVariant::I { n } => {
                let p_star = 1.0 / (n * n - 1.0).sqrt();
                if r > p_star {
                    return Err(Error::ComplexMapping { r, p_star });
                }
                let root = (1.0 + (1.0 - n * n) * r_sq).max(0.0).sqrt();
                let den = 1.0 + r_sq;
                Ok(((root + n * r_sq) / den, (root - n) / den))
            }
            RefractorVariant::II { kappa } => {
                let root = (kappa * kappa + (kappa * kappa - 1.0) * r_sq).sqrt();
                let den = kappa * (1.0 + r_sq);
                Ok(((root + r_sq) / den, -(root - 1.0) / den))
            }
        }
    }
}

/// The refractor maps in explicit radical form, `T = x R₁ + p R₂`.
pub fn closed_form_refractor_map(variant: RefractorVariant, x: &SpherePoint, p: &TangentVector) -> Result<SpherePoint> {
    let pv = p.ambient();
    // The domain test uses the vector's own length, not the re-rounded ambient norm.
    let (r1, r2) = variant.coefficients(p.norm())?;
    SpherePoint::new(x.coords() * r1 + pv * r2)
}
