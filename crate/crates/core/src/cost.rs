//! Cost functions given by one-dimensional profiles, the builtin costs of the
//! refractor problems, and the defect classification (z*, p*).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bisect;

/// A value with its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Geometry {
    Sphere,
    Euclidean { dim: usize },
}

impl Geometry {
    pub fn is_sphere(&self) -> bool {
        matches!(self, Geometry::Sphere)
    }
}

type OuterFn = Arc<dyn Fn(f64) -> Jet + Send + Sync>;

#[derive(Clone)]
enum Profile {
    RefractorI { n: f64 },
    RefractorII { kappa: f64 },
    GeodesicSquared,
    ReflectorAntenna,
    Power { s: f64 },
    AmbientEuclideanSq,
    EuclideanSquared,
    /// User-supplied outer profile; the radial profile is derived from it.
    Custom(OuterFn),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::RefractorI { n } => write!(f, "RefractorI(n={n})"),
            Profile::RefractorII { kappa } => write!(f, "RefractorII(kappa={kappa})"),
            Profile::GeodesicSquared => f.write_str("GeodesicSquared"),
            Profile::ReflectorAntenna => f.write_str("ReflectorAntenna"),
            Profile::Power { s } => write!(f, "Power(s={s})"),
            Profile::AmbientEuclideanSq => f.write_str("AmbientEuclideanSq"),
            Profile::EuclideanSquared => f.write_str("EuclideanSquared"),
            Profile::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// A cost `c = F(x·y) = G(d)` on the sphere, or `c = J(½d²) = H(d)` in ℝᵈ.
///
/// `outer` evaluates F (or J) and `radial` evaluates G (or H). The builtin
/// costs carry independent closed forms for both.
#[derive(Clone, Debug)]
pub struct CostSpec {
    name: String,
    geometry: Geometry,
    params: BTreeMap<String, f64>,
    profile: Profile,
    closed_form_zstar: Option<f64>,
    /// Upper end of the distance range the profile is defined on.
    z_max: f64,
    /// Distance at which the profile is singular (declared, not detected).
    singular_z: Option<f64>,
}

/// Derivatives of `F(x) = x^s / s` style functions near zero get large
/// cancellations; below this angle the power profile uses series.
const SERIES_CUTOFF: f64 = 1e-3;

impl CostSpec {
    pub fn refractor_i(n: f64) -> Result<Self> {
        if !(n > 1.0 && n.is_finite()) {
            return Err(Error::BadParam(format!("refractor_I needs n > 1, got {n}")));
        }
        Ok(Self::builtin(
            "refractor_I",
            Geometry::Sphere,
            [("n", n)],
            Profile::RefractorI { n },
            Some((1.0 / n).acos()),
            PI,
            None,
        ))
    }

    pub fn refractor_ii(kappa: f64) -> Result<Self> {
        if !(kappa > 1.0 && kappa.is_finite()) {
            return Err(Error::BadParam(format!(
                "refractor_II needs kappa > 1, got {kappa}"
            )));
        }
        let z_sing = (1.0 / kappa).acos();
        Ok(Self::builtin(
            "refractor_II",
            Geometry::Sphere,
            [("kappa", kappa)],
            Profile::RefractorII { kappa },
            Some(z_sing),
            z_sing,
            Some(z_sing),
        ))
    }

    pub fn geodesic_squared() -> Self {
        Self::builtin(
            "geodesic_squared",
            Geometry::Sphere,
            [],
            Profile::GeodesicSquared,
            None,
            PI,
            None,
        )
    }

    /// `c = −log(1 − x·y)`. Its exponential-type map starts at the antipode,
    /// so it classifies but cannot drive the β machinery.
    pub fn reflector_antenna() -> Self {
        Self::builtin(
            "reflector_antenna",
            Geometry::Sphere,
            [],
            Profile::ReflectorAntenna,
            None,
            PI,
            None,
        )
    }

    pub fn power(s: f64) -> Result<Self> {
        if !(s > 1.0 && s.is_finite()) {
            return Err(Error::BadParam(format!("power needs s > 1, got {s}")));
        }
        Ok(Self::builtin(
            "power",
            Geometry::Sphere,
            [("s", s)],
            Profile::Power { s },
            None,
            PI,
            None,
        ))
    }

    /// Half the squared chordal distance between points of the sphere,
    /// `½|x − y|² = 1 − x·y`.
    pub fn ambient_euclidean_sq() -> Self {
        Self::builtin(
            "ambient_euclidean_sq",
            Geometry::Sphere,
            [],
            Profile::AmbientEuclideanSq,
            Some(PI / 2.0),
            PI,
            None,
        )
    }

    pub fn euclidean_squared(dim: usize, z_max: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadParam("euclidean_squared needs d >= 1".into()));
        }
        if !(z_max > 0.0 && z_max.is_finite()) {
            return Err(Error::BadParam(format!("z_max must be positive, got {z_max}")));
        }
        Ok(Self::builtin(
            "euclidean_squared",
            Geometry::Euclidean { dim },
            [("d", dim as f64), ("z_max", z_max)],
            Profile::EuclideanSquared,
            None,
            z_max,
            None,
        ))
    }

    /// A sphere cost from its outer profile `ζ ↦ (F, F′, F″)`; the radial
    /// profile is derived through `ζ = cos z`.
    pub fn custom_sphere<F>(name: &str, outer: F, singular_z: Option<f64>) -> Self
    where
        F: Fn(f64) -> Jet + Send + Sync + 'static,
    {
        let z_max = singular_z.unwrap_or(PI);
        Self::builtin(name, Geometry::Sphere, [], Profile::Custom(Arc::new(outer)), None, z_max, singular_z)
    }

    /// A Euclidean cost from `ζ ↦ (J, J′, J″)` with `ζ = ½d²`, defined for
    /// distances below `z_max`.
    pub fn custom_euclidean<F>(name: &str, dim: usize, z_max: f64, outer: F) -> Self
    where
        F: Fn(f64) -> Jet + Send + Sync + 'static,
    {
        Self::builtin(
            name,
            Geometry::Euclidean { dim },
            [("d", dim as f64), ("z_max", z_max)],
            Profile::Custom(Arc::new(outer)),
            None,
            z_max,
            None,
        )
    }

    fn builtin<const K: usize>(
        name: &str,
        geometry: Geometry,
        params: [(&str, f64); K],
        profile: Profile,
        closed_form_zstar: Option<f64>,
        z_max: f64,
        singular_z: Option<f64>,
    ) -> Self {
        Self {
            name: name.to_string(),
            geometry,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            profile,
            closed_form_zstar,
            z_max,
            singular_z,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn closed_form_zstar(&self) -> Option<f64> {
        self.closed_form_zstar
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn singular_z(&self) -> Option<f64> {
        self.singular_z
    }

    pub fn is_reflector_antenna(&self) -> bool {
        matches!(self.profile, Profile::ReflectorAntenna)
    }

    /// Cost between two points at distance `z`.
    pub fn cost_at_distance(&self, z: f64) -> f64 {
        self.radial(z).value
    }

    /// `F(ζ)` on the sphere (ζ = x·y) or `J(ζ)` in ℝᵈ (ζ = ½d²).
    pub fn outer(&self, zeta: f64) -> Jet {
        match &self.profile {
            Profile::RefractorI { n } => {
                let t = n - zeta;
                Jet::new(-t.ln(), 1.0 / t, 1.0 / (t * t))
            }
            Profile::RefractorII { kappa } => {
                let t = kappa * zeta - 1.0;
                Jet::new(t.ln(), kappa / t, -kappa * kappa / (t * t))
            }
            Profile::GeodesicSquared => {
                let z = zeta.clamp(-1.0, 1.0).acos();
                let (d1, d2) = if z < SERIES_CUTOFF {
                    let z2 = z * z;
                    (-(1.0 + z2 / 6.0), 1.0 / 3.0 + 2.0 * z2 / 15.0)
                } else {
                    let s = z.sin();
                    (-z / s, (s - z * z.cos()) / (s * s * s))
                };
                Jet::new(0.5 * z * z, d1, d2)
            }
            Profile::ReflectorAntenna => {
                let t = 1.0 - zeta;
                Jet::new(-t.ln(), 1.0 / t, 1.0 / (t * t))
            }
            Profile::Power { s } => {
                let z = zeta.clamp(-1.0, 1.0).acos();
                let sin = z.sin();
                let bracket = if z < SERIES_CUTOFF {
                    let z2 = z * z;
                    (s - 2.0) + z2 * (0.5 - (s - 1.0) / 6.0) + z2 * z2 * ((s - 1.0) / 120.0 - 1.0 / 24.0)
                } else {
                    (s - 1.0) * sin / z - z.cos()
                };
                let zs1 = z.powf(s - 1.0);
                Jet::new(z.powf(*s) / s, -zs1 / sin, zs1 * bracket / (sin * sin * sin))
            }
            Profile::AmbientEuclideanSq => Jet::new(1.0 - zeta, -1.0, 0.0),
            Profile::EuclideanSquared => Jet::new(zeta, 1.0, 0.0),
            Profile::Custom(f) => f(zeta),
        }
    }

    /// `G(z)` on the sphere or `H(z)` in ℝᵈ, z the distance.
    pub fn radial(&self, z: f64) -> Jet {
        match &self.profile {
            Profile::RefractorI { n } => {
                let (s, c) = z.sin_cos();
                let t = n - c;
                Jet::new(-t.ln(), -s / t, -(n * c - 1.0) / (t * t))
            }
            Profile::RefractorII { kappa } => {
                let (s, c) = z.sin_cos();
                let t = kappa * c - 1.0;
                Jet::new(t.ln(), -kappa * s / t, -kappa * (kappa - c) / (t * t))
            }
            Profile::GeodesicSquared => Jet::new(0.5 * z * z, z, 1.0),
            Profile::ReflectorAntenna => {
                let h = 0.5 * z;
                let sh = h.sin();
                Jet::new(-(2.0 * sh * sh).ln(), -h.cos() / sh, 0.5 / (sh * sh))
            }
            Profile::Power { s } => Jet::new(
                z.powf(*s) / s,
                z.powf(s - 1.0),
                (s - 1.0) * z.powf(s - 2.0),
            ),
            Profile::AmbientEuclideanSq => {
                let h = (0.5 * z).sin();
                Jet::new(2.0 * h * h, z.sin(), z.cos())
            }
            Profile::EuclideanSquared => Jet::new(0.5 * z * z, z, 1.0),
            Profile::Custom(f) => match self.geometry {
                Geometry::Sphere => {
                    let (s, c) = z.sin_cos();
                    let o = f(c);
                    Jet::new(o.value, -s * o.d1, s * s * o.d2 - c * o.d1)
                }
                Geometry::Euclidean { .. } => {
                    let o = f(0.5 * z * z);
                    Jet::new(o.value, z * o.d1, o.d1 + z * z * o.d2)
                }
            },
        }
    }

    /// `ζ` as a function of the distance: `cos z` on the sphere, `½z²` in ℝᵈ.
    pub fn zeta_of_distance(&self, z: f64) -> f64 {
        match self.geometry {
            Geometry::Sphere => z.cos(),
            Geometry::Euclidean { .. } => 0.5 * z * z,
        }
    }

    /// Direction of transport relative to `p̂`: `+1` when the cost increases
    /// with distance near zero (F′ < 0 on the sphere, J′ > 0 in ℝᵈ), `−1`
    /// otherwise.
    pub fn transport_sign(&self) -> f64 {
        let probe = 1e-3 * self.z_max.min(self.singular_z.unwrap_or(f64::INFINITY));
        if self.radial(probe).d1 >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

fn canonical_name(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace('-', "_")
}

/// Builtin cost by name with named parameters.
///
/// Names: `refractor_I` (`n`), `refractor_II` (`kappa`), `geodesic_squared`,
/// `reflector_antenna`, `power` (`s`), `ambient_euclidean_sq`,
/// `euclidean_squared` (`d`, optional `z_max`, default 10).
pub fn builtin_cost(name: &str, params: &BTreeMap<String, f64>) -> Result<CostSpec> {
    let canon = canonical_name(name);
    let get = |keys: &[&str]| keys.iter().find_map(|k| params.get(*k).copied());
    let allowed: &[&str] = match canon.as_str() {
        "refractor_i" => &["n"],
        "refractor_ii" => &["kappa", "κ"],
        "power" => &["s"],
        "euclidean_squared" => &["d", "z_max"],
        "geodesic_squared" | "reflector_antenna" | "ambient_euclidean_sq" => &[],
        _ => return Err(Error::UnknownCost(name.to_string())),
    };
    if let Some(extra) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::BadParam(format!("`{name}` takes no parameter `{extra}`")));
    }
    let require = |keys: &[&str]| {
        get(keys).ok_or_else(|| Error::BadParam(format!("`{name}` needs parameter `{}`", keys[0])))
    };
    match canon.as_str() {
        "refractor_i" => CostSpec::refractor_i(require(&["n"])?),
        "refractor_ii" => CostSpec::refractor_ii(require(&["kappa", "κ"])?),
        "power" => CostSpec::power(require(&["s"])?),
        "euclidean_squared" => {
            let d = get(&["d"]).unwrap_or(2.0);
            if d < 1.0 || d.fract() != 0.0 {
                return Err(Error::BadParam(format!("dimension must be a positive integer, got {d}")));
            }
            CostSpec::euclidean_squared(d as usize, get(&["z_max"]).unwrap_or(10.0))
        }
        "geodesic_squared" => Ok(CostSpec::geodesic_squared()),
        "reflector_antenna" => Ok(CostSpec::reflector_antenna()),
        _ => Ok(CostSpec::ambient_euclidean_sq()),
    }
}

/// JSON form of a cost: `{"name": ..., "geometry": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDocument {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl CostDocument {
    pub fn resolve(&self) -> Result<CostSpec> {
        let cost = builtin_cost(&self.name, &self.params)?;
        if let Some(g) = &self.geometry {
            let declared = g.trim().to_ascii_lowercase();
            let actual = if cost.geometry().is_sphere() { "sphere" } else { "euclidean" };
            if declared != actual {
                return Err(Error::BadParam(format!(
                    "cost `{}` is a {actual} cost, document declares `{g}`",
                    self.name
                )));
            }
        }
        Ok(cost)
    }
}

impl From<&CostSpec> for CostDocument {
    fn from(cost: &CostSpec) -> Self {
        let geometry = if cost.geometry().is_sphere() { "sphere" } else { "euclidean" };
        Self {
            name: cost.name().to_string(),
            geometry: Some(geometry.to_string()),
            params: cost.params().clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Defect {
    #[serde(rename = "non_defective")]
    NonDefective,
    #[serde(rename = "type_I")]
    TypeI,
    #[serde(rename = "type_II")]
    TypeII,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DefectReport {
    pub classification: Defect,
    #[serde(serialize_with = "serialize_extended")]
    pub z_star: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub p_star: f64,
    pub concavity_sign_on_0_zstar: i8,
}

/// JSON has no infinity; emit it as the string `"inf"`.
pub fn serialize_extended<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

impl DefectReport {
    pub fn is_defective(&self) -> bool {
        self.classification != Defect::NonDefective
    }
}

pub const DEFAULT_TOL_ROOT: f64 = 1e-12;
pub const DEFAULT_SCAN_POINTS: usize = 4096;
/// |G′| beyond this on approach to a declared singular endpoint confirms
/// divergence.
const DIVERGENCE_LEVEL: f64 = 1e8;

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Classifies a cost as non-defective, type I (first zero of G″) or type II
/// (divergence of G′ at a declared singular endpoint).
pub fn classify(cost: &CostSpec, tol_root: f64, scan_points: usize) -> Result<DefectReport> {
    let scan_points = scan_points.max(8);
    let z_hi = cost.singular_z.unwrap_or(cost.z_max);
    let h = z_hi / scan_points as f64;
    let g2 = |z: f64| cost.radial(z).d2;

    let samples: Vec<(f64, f64)> = (1..scan_points).map(|i| (i as f64 * h, g2(i as f64 * h))).collect();
    if let Some((z, _)) = samples.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::AmbiguousClassification(format!(
            "G'' is not finite at z = {z} before any root or divergence"
        )));
    }
    let changes: Vec<usize> = samples
        .windows(2)
        .enumerate()
        .filter(|(_, w)| sign_of(w[0].1) != sign_of(w[1].1))
        .map(|(k, _)| k)
        .collect();

    if let Some(&k) = changes.first() {
        if changes.get(1).is_some_and(|&k2| k2 <= k + 2) {
            return Err(Error::AmbiguousClassification(format!(
                "G'' changes sign repeatedly near z = {} at scan resolution {h:e}",
                samples[k].0
            )));
        }
        let (a, b) = (samples[k].0, samples[k + 1].0);
        let z_star = if samples[k].1 == 0.0 {
            a
        } else {
            bisect(g2, a, b, tol_root)?
        };
        if let Some(cf) = cost.closed_form_zstar {
            if (cf - z_star).abs() > tol_root {
                return Err(Error::ClosedFormMismatch {
                    closed_form: cf,
                    located: z_star,
                    tol: tol_root,
                });
            }
        }
        return Ok(DefectReport {
            classification: Defect::TypeI,
            z_star,
            p_star: cost.radial(z_star).d1.abs(),
            concavity_sign_on_0_zstar: sign_of(g2(0.5 * z_star)),
        });
    }

    if let Some(z_sing) = cost.singular_z {
        let approach: Vec<f64> = (1..=14)
            .map(|j| cost.radial(z_sing - z_sing * 10f64.powi(-j)).d1.abs())
            .collect();
        let monotone = approach.windows(2).all(|w| w[1] > w[0]);
        if monotone && approach.last().is_some_and(|v| *v > DIVERGENCE_LEVEL) {
            if let Some(cf) = cost.closed_form_zstar {
                if (cf - z_sing).abs() > tol_root {
                    return Err(Error::ClosedFormMismatch {
                        closed_form: cf,
                        located: z_sing,
                        tol: tol_root,
                    });
                }
            }
            return Ok(DefectReport {
                classification: Defect::TypeII,
                z_star: z_sing,
                p_star: f64::INFINITY,
                concavity_sign_on_0_zstar: sign_of(g2(0.5 * z_sing)),
            });
        }
        return Err(Error::AmbiguousClassification(format!(
            "profile declares a singular endpoint at z = {z_sing} but |G'| does not diverge there"
        )));
    }

    Ok(DefectReport {
        classification: Defect::NonDefective,
        z_star: f64::INFINITY,
        p_star: f64::INFINITY,
        concavity_sign_on_0_zstar: sign_of(g2(0.5 * z_hi)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisViolation {
    pub condition: &'static str,
    pub location: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub holds: bool,
    pub gamma: f64,
    pub violations: Vec<HypothesisViolation>,
}

const HYPOTHESIS_SCAN: usize = 4096;

/// Checks the hypotheses under which the optimal map is of exponential type
/// on distances below `gamma`: the outer derivative does not vanish on the
/// range of ζ, nor in the limit of coincident points, and G″ keeps one sign.
pub fn validate_exponential_hypotheses(cost: &CostSpec, gamma: f64) -> HypothesisReport {
    let mut violations = Vec::new();
    let h = gamma / HYPOTHESIS_SCAN as f64;
    let mut first_sign = 0i8;
    let mut outer_sign = 0i8;
    for i in 1..HYPOTHESIS_SCAN {
        let z = i as f64 * h;
        let zeta = cost.zeta_of_distance(z);
        let d1 = cost.outer(zeta).d1;
        let s = sign_of(d1);
        if s == 0 || !d1.is_finite() || (outer_sign != 0 && s != outer_sign) {
            violations.push(HypothesisViolation {
                condition: "outer derivative vanishes or changes sign",
                location: zeta,
                value: d1,
            });
        }
        if outer_sign == 0 {
            outer_sign = s;
        }
        let g2 = cost.radial(z).d2;
        let s2 = sign_of(g2);
        if s2 == 0 || !g2.is_finite() || (first_sign != 0 && s2 != first_sign) {
            violations.push(HypothesisViolation {
                condition: "G'' vanishes or changes sign",
                location: z,
                value: g2,
            });
        }
        if first_sign == 0 {
            first_sign = s2;
        }
    }
    // Limit of coincident points: |F′| must stay away from zero.
    let limit: Vec<f64> = [1e-4, 1e-5, 1e-6]
        .iter()
        .map(|z| cost.outer(cost.zeta_of_distance(*z)).d1.abs())
        .collect();
    // Vanishing at least like √(distance) counts as tending to zero.
    let slope = (limit[0] / limit[2]).ln() / 100f64.ln();
    if slope >= 0.5 || limit[2].is_nan() {
        violations.push(HypothesisViolation {
            condition: "outer derivative tends to zero at coincident points",
            location: cost.zeta_of_distance(0.0),
            value: limit[2],
        });
    }
    HypothesisReport {
        holds: violations.is_empty(),
        gamma,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere_builtins() -> Vec<CostSpec> {
        vec![
            CostSpec::refractor_i(1.333).unwrap(),
            CostSpec::refractor_i(2.0).unwrap(),
            CostSpec::refractor_ii(1.52).unwrap(),
            CostSpec::geodesic_squared(),
            CostSpec::reflector_antenna(),
            CostSpec::power(1.5).unwrap(),
            CostSpec::power(2.0).unwrap(),
            CostSpec::power(3.0).unwrap(),
            CostSpec::ambient_euclidean_sq(),
        ]
    }

    fn upper(cost: &CostSpec) -> f64 {
        let z = cost.closed_form_zstar().unwrap_or(PI);
        z.min(PI) - 1e-3
    }

    #[test]
    fn radial_matches_outer() {
        for cost in sphere_builtins() {
            let hi = upper(&cost);
            for i in 1..=200 {
                let z = hi * i as f64 / 201.0;
                let g = cost.radial(z).value;
                let f = cost.outer(z.cos()).value;
                assert!((g - f).abs() < 1e-10, "{}: z={z} G={g} F={f}", cost.name());
            }
        }
        let e = CostSpec::euclidean_squared(3, 5.0).unwrap();
        for i in 1..100 {
            let z = 0.05 * i as f64;
            assert!((e.radial(z).value - e.outer(0.5 * z * z).value).abs() < 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut costs = sphere_builtins();
        costs.push(CostSpec::euclidean_squared(2, 4.0).unwrap());
        for cost in costs {
            let hi = upper(&cost).min(cost.z_max() - 1e-3);
            for i in 1..40 {
                let z = hi * i as f64 / 40.0;
                let h = 1e-5;
                let j = cost.radial(z);
                let fd1 = (cost.radial(z + h).value - cost.radial(z - h).value) / (2.0 * h);
                let fd2 = (cost.radial(z + h).d1 - cost.radial(z - h).d1) / (2.0 * h);
                let scale1 = j.d1.abs().max(1e-3);
                let scale2 = j.d2.abs().max(1e-3);
                assert!((fd1 - j.d1).abs() / scale1 < 1e-6, "{} G' at {z}", cost.name());
                assert!((fd2 - j.d2).abs() / scale2 < 1e-6, "{} G'' at {z}", cost.name());
                if cost.geometry().is_sphere() {
                    // F′ and F″ against the chain rule through ζ = cos z.
                    let o = cost.outer(z.cos());
                    assert_relative_eq!(-z.sin() * o.d1, j.d1, max_relative = 1e-8, epsilon = 1e-12);
                    let chain = z.sin().powi(2) * o.d2 - z.cos() * o.d1;
                    assert_relative_eq!(chain, j.d2, max_relative = 1e-6, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn builtin_examples() {
        let c = CostSpec::refractor_i(2.0).unwrap();
        let z = 0.4f64;
        assert_relative_eq!(c.radial(z).value, -(2.0 - z.cos()).ln(), max_relative = 1e-15);
        assert_relative_eq!(c.closed_form_zstar().unwrap(), PI / 3.0, max_relative = 1e-15);
        let a = CostSpec::ambient_euclidean_sq();
        assert_relative_eq!(a.radial(0.7).d2, 0.7f64.cos(), max_relative = 1e-15);
        assert!(matches!(CostSpec::refractor_i(1.0), Err(Error::BadParam(_))));
        assert!(matches!(CostSpec::refractor_ii(0.5), Err(Error::BadParam(_))));
        assert!(matches!(CostSpec::power(1.0), Err(Error::BadParam(_))));
    }

    #[test]
    fn classification_examples() {
        let geo = classify(&CostSpec::geodesic_squared(), 1e-12, 4096).unwrap();
        assert_eq!(geo.classification, Defect::NonDefective);
        assert!(geo.z_star.is_infinite());

        let k = 1.52;
        let r2 = classify(&CostSpec::refractor_ii(k).unwrap(), 1e-12, 4096).unwrap();
        assert_eq!(r2.classification, Defect::TypeII);
        assert_relative_eq!(r2.z_star, (1.0 / k).acos(), max_relative = 1e-15);
        assert!(r2.p_star.is_infinite());

        for n in [1.333, 1.52, 2.417] {
            let rep = classify(&CostSpec::refractor_i(n).unwrap(), 1e-12, 4096).unwrap();
            assert_eq!(rep.classification, Defect::TypeI);
            assert!((rep.z_star - (1.0 / n).acos()).abs() < 1e-12);
            assert!((rep.p_star - 1.0 / (n * n - 1.0).sqrt()).abs() < 1e-10);
            assert_eq!(rep.concavity_sign_on_0_zstar, -1);
        }
        // 1/√(1.333² − 1) in extended precision.
        let rep = classify(&CostSpec::refractor_i(1.333).unwrap(), 1e-12, 4096).unwrap();
        assert!((rep.p_star - 1.134_541_832_898_675_7).abs() < 1e-10);

        let amb = classify(&CostSpec::ambient_euclidean_sq(), 1e-12, 4096).unwrap();
        assert_eq!(amb.classification, Defect::TypeI);
        assert!((amb.z_star - PI / 2.0).abs() < 1e-12);
        assert!((amb.p_star - 1.0).abs() < 1e-12);

        let refl = classify(&CostSpec::reflector_antenna(), 1e-12, 4096).unwrap();
        assert_eq!(refl.classification, Defect::NonDefective);
    }

    #[test]
    fn classification_is_deterministic() {
        let c = CostSpec::refractor_i(1.52).unwrap();
        let a = classify(&c, 1e-12, 2048).unwrap();
        let b = classify(&c, 1e-12, 2048).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ambiguous_oscillation_is_reported() {
        // G″ flips sign on a scale finer than the scan spacing.
        let wiggly = CostSpec::custom_sphere(
            "wiggly",
            |zeta: f64| {
                let w = 4000.0;
                let z = zeta.clamp(-1.0, 1.0).acos();
                let g2 = (w * (z - 0.5)).sin();
                Jet::new(0.0, -g2, 0.0)
            },
            None,
        );
        assert!(matches!(
            classify(&wiggly, 1e-12, 4096),
            Err(Error::AmbiguousClassification(_))
        ));
    }

    #[test]
    fn exponential_hypotheses() {
        let r = CostSpec::refractor_i(2.0).unwrap();
        assert!(validate_exponential_hypotheses(&r, 0.9 * PI / 3.0).holds);
        let p2 = CostSpec::power(2.0).unwrap();
        assert!(validate_exponential_hypotheses(&p2, PI - 1e-3).holds);
        let p3 = CostSpec::power(3.0).unwrap();
        let rep = validate_exponential_hypotheses(&p3, PI - 1e-3);
        assert!(!rep.holds);
        assert!(rep.violations.iter().any(|v| v.condition.contains("coincident")));
    }

    #[test]
    fn json_documents() {
        let doc: CostDocument =
            serde_json::from_str(r#"{"name": "refractor_I", "geometry": "sphere", "params": {"n": 1.52}}"#).unwrap();
        let c = doc.resolve().unwrap();
        assert_eq!(c.param("n"), Some(1.52));
        assert!(serde_json::from_str::<CostDocument>(r#"{"name": "power", "extra": 1}"#).is_err());
        let bad: CostDocument = serde_json::from_str(r#"{"name": "refractor_II", "params": {"n": 2}}"#).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::BadParam(_))));
        let unknown: CostDocument = serde_json::from_str(r#"{"name": "nope"}"#).unwrap();
        assert!(matches!(unknown.resolve(), Err(Error::UnknownCost(_))));
        let round = CostDocument::from(&c);
        assert_eq!(round.resolve().unwrap().param("n"), Some(1.52));
    }
}
