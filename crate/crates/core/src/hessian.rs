//! The determinant of the mixed Hessian `|det D²ₓᵧ c|` along the
//! exponential-type map, computed several independent ways and cross-checked.

use serde::Serialize;

use crate::cost::{Defect, Geometry};
use crate::error::{Error, Result};
use crate::mapping::BetaFunction;

/// Below this gradient magnitude the ratio forms are 0/0 and only the
/// identity form is used.
pub const SMALL_R: f64 = 1e-4;
pub const TIGHT_TOL: f64 = 1e-8;
pub const LOOSE_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HessianSample {
    pub r: f64,
    /// `√(1 − r²R₂²) / |r R₂ R₂′ + R₂²|`
    pub via_r2: f64,
    /// `r / |R₁′|`
    pub via_r1prime: f64,
    /// `r / (sin β · β′)`
    pub via_beta: f64,
    /// `|G″(β)| · |F′(cos β)|`
    pub via_identity: f64,
}

impl HessianSample {
    pub fn values(&self) -> [f64; 4] {
        [self.via_r2, self.via_r1prime, self.via_beta, self.via_identity]
    }

    /// Largest pairwise relative difference among the four forms.
    pub fn max_relative_spread(&self) -> f64 {
        let v = self.values();
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                let scale = v[i].abs().max(v[j].abs());
                if scale > 0.0 {
                    worst = worst.max((v[i] - v[j]).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Fourth-order central difference.
fn derivative<F: Fn(f64) -> Result<f64>>(f: F, r: f64, h: f64) -> Result<f64> {
    Ok((-f(r + 2.0 * h)? + 8.0 * f(r + h)? - 8.0 * f(r - h)? + f(r - 2.0 * h)?) / (12.0 * h))
}

/// Cross-check tolerance at `r`: tight in the interior of the domain, loose
/// near the origin and the cusp.
pub fn cross_check_tolerance(beta: &BetaFunction, r: f64) -> f64 {
    let limit = beta.r_limit();
    let interior = if limit.is_finite() {
        r >= 1e-3 * limit && r <= 0.99 * limit
    } else {
        r >= 1e-3
    };
    if interior {
        TIGHT_TOL
    } else {
        LOOSE_TOL
    }
}

fn identity_form(beta: &BetaFunction, b: f64) -> f64 {
    let cost = beta.cost();
    cost.radial(b).d2.abs() * cost.outer(b.cos()).d1.abs()
}

/// All four sphere formulas at gradient magnitude `r`; fails with
/// `CrossCheckFailure` when any two disagree beyond the tolerance.
pub fn mixed_hessian_sphere(beta: &BetaFunction, r: f64) -> Result<HessianSample> {
    if !beta.cost().geometry().is_sphere() {
        return Err(Error::WrongGeometry { expected: "sphere" });
    }
    let bv = beta.beta_flagged(r)?;
    let b = bv.value;
    let identity = identity_form(beta, b);
    if r < SMALL_R || bv.near_cusp {
        return Ok(HessianSample {
            r,
            via_r2: identity,
            via_r1prime: identity,
            via_beta: identity,
            via_identity: identity,
        });
    }
    // Keep the stencil well inside the domain: near the cusp β behaves like
    // a square root and the truncation error scales as (h / distance)⁴.
    let h = (1e-5 * r.max(1.0)).min((beta.r_limit() - r) / 16.0);
    let d = beta.decompose(r)?;
    let r2_prime = derivative(|t| beta.decompose(t).map(|d| d.r2), r, h)?;
    // R₁ = 1 − 2 sin²(β/2); differencing the versine avoids cancellation
    // when β is small.
    let r1_prime = -derivative(
        |t| beta.beta(t).map(|b| 2.0 * (0.5 * b).sin().powi(2)),
        r,
        h,
    )?;
    let sample = HessianSample {
        r,
        via_r2: (1.0 - r * r * d.r2 * d.r2).max(0.0).sqrt() / (r * d.r2 * r2_prime + d.r2 * d.r2).abs(),
        via_r1prime: r / r1_prime.abs(),
        via_beta: r / (b.sin() * beta.beta_prime(r)?),
        via_identity: identity,
    };
    let spread = sample.max_relative_spread();
    let tol = cross_check_tolerance(beta, r);
    if !(spread <= tol) {
        return Err(Error::CrossCheckFailure {
            r,
            detail: format!("relative spread {spread:e} > {tol:e} among {:?}", sample.values()),
        });
    }
    Ok(sample)
}

/// `|det D²ₓᵧ c|` for a cost `J(½|x − y|²)` on ℝᵈ along the map:
/// `(1/β′)(r/β)^{d−1}`, cross-checked against `|H″(β)| |J′(½β²)|^{d−1}`.
pub fn mixed_hessian_euclidean(beta: &BetaFunction, r: f64, d: usize) -> Result<f64> {
    let cost = beta.cost();
    if !matches!(cost.geometry(), Geometry::Euclidean { .. }) {
        return Err(Error::WrongGeometry { expected: "euclidean" });
    }
    let b = beta.beta(r)?;
    let exponent = d as i32 - 1;
    let identity = cost.radial(b).d2.abs() * cost.outer(0.5 * b * b).d1.abs().powi(exponent);
    if r < SMALL_R {
        return Ok(identity);
    }
    let via_beta = (r / b).powi(exponent) / beta.beta_prime(r)?;
    let spread = (via_beta - identity).abs() / via_beta.abs().max(identity.abs());
    if !(spread <= TIGHT_TOL) {
        return Err(Error::CrossCheckFailure {
            r,
            detail: format!("beta form {via_beta} vs profile form {identity}"),
        });
    }
    Ok(via_beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PositivityReport {
    pub positive: bool,
    pub min_value: f64,
    pub argmin: f64,
    pub r_max: f64,
}

fn determinant_value(beta: &BetaFunction, r: f64) -> Result<f64> {
    let b = beta.beta(r)?;
    Ok(match beta.cost().geometry() {
        Geometry::Sphere => identity_form(beta, b),
        Geometry::Euclidean { dim } => {
            let cost = beta.cost();
            cost.radial(b).d2.abs() * cost.outer(0.5 * b * b).d1.abs().powi(dim as i32 - 1)
        }
    })
}

/// Minimum of the mixed-Hessian determinant over `(0, fraction · p*]`, or,
/// for costs without a finite p*, over a geometric grid up to the gradient
/// that reaches `fraction` of the distance limit.
pub fn positivity_scan(beta: &BetaFunction, gamma_fraction: f64, samples: usize) -> PositivityReport {
    let geometric = beta.report().classification == Defect::TypeII;
    let r_max = if beta.r_limit().is_finite() {
        gamma_fraction * beta.r_limit()
    } else {
        beta.cost().radial(gamma_fraction * beta.z_limit()).d1.abs()
    };
    positivity_scan_to(beta, r_max, samples, geometric)
}

/// [`positivity_scan`] over `(0, r_max]`, uniform or geometric from 1e-6·r_max.
pub fn positivity_scan_to(beta: &BetaFunction, r_max: f64, samples: usize, geometric: bool) -> PositivityReport {
    let samples = samples.max(2);
    let mut min_value = f64::INFINITY;
    let mut argmin = f64::NAN;
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        let r = if geometric {
            r_max * 1e-6f64.powf(1.0 - t)
        } else {
            r_max * t
        };
        let v = determinant_value(beta, r).unwrap_or(f64::NAN);
        if v.is_nan() || v < min_value {
            min_value = v;
            argmin = r;
            if v.is_nan() {
                break;
            }
        }
    }
    PositivityReport {
        positive: min_value > 0.0,
        min_value,
        argmin,
        r_max,
    }
}
