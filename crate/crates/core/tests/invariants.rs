use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use refractor_core::cost::{classify, CostSpec, Defect, DEFAULT_SCAN_POINTS, DEFAULT_TOL_ROOT};
use refractor_core::hessian::mixed_hessian_sphere;
use refractor_core::mapping::BetaFunction;
use refractor_core::mtw::{check_all_sphere, AdmissibleDomain, Verdict};
use refractor_core::solvability::{feasibility_check, gaussian_like_density, DensityField};
use refractor_core::solver::{LensShape, LensVariant};
use refractor_core::sphere::{build_grid, make_frame, GridKind, SpherePoint, Vec3};

fn refractor() -> impl Strategy<Value = CostSpec> {
    prop_oneof![
        (1.05f64..3.0).prop_map(|n| CostSpec::refractor_i(n).unwrap()),
        (1.05f64..3.0).prop_map(|k| CostSpec::refractor_ii(k).unwrap()),
    ]
}

fn any_cost() -> impl Strategy<Value = CostSpec> {
    prop_oneof![
        refractor(),
        Just(CostSpec::geodesic_squared()),
        (1.2f64..4.0).prop_map(|s| CostSpec::power(s).unwrap()),
        Just(CostSpec::ambient_euclidean_sq()),
        (1usize..5).prop_map(|d| CostSpec::euclidean_squared(d, 10.0).unwrap()),
    ]
}

fn direction() -> impl Strategy<Value = Vec3> {
    (0.0f64..PI, 0.0f64..(2.0 * PI)).prop_map(|(t, p)| Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()))
}

/// Distance range on which the cost's derivatives are finite.
fn interior_distance(cost: &CostSpec, fraction: f64) -> f64 {
    let end = cost.singular_z().unwrap_or(cost.z_max());
    fraction * end
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn points_and_frames_are_orthonormal(v in direction(), scale in 0.1f64..10.0, hint in direction()) {
        let x = SpherePoint::new(v * scale).unwrap();
        prop_assert!((x.coords().norm() - 1.0).abs() < 1e-12);
        if let Ok(frame) = make_frame(&x, &hint) {
            let (e1, e2, b) = (frame.e1(), frame.e2(), frame.base().coords());
            for dot in [e1.dot(b), e2.dot(b), e1.dot(e2)] {
                prop_assert!(dot.abs() < 1e-12);
            }
            prop_assert!((e1.norm() - 1.0).abs() < 1e-12 && (e2.norm() - 1.0).abs() < 1e-12);
            prop_assert!((b.cross(e1) - e2).norm() < 1e-12);
        }
    }

    #[test]
    fn radial_profile_matches_outer_function(cost in any_cost(), fraction in 0.01f64..0.95) {
        let z = interior_distance(&cost, fraction);
        let g = cost.radial(z);
        let outer = cost.outer(cost.zeta_of_distance(z));
        prop_assert!((g.value - outer.value).abs() <= 1e-10 * outer.value.abs().max(1.0));
        // Derivatives against central differences of G.
        let h = 1e-5 * z.max(1e-2);
        let d1 = (cost.radial(z + h).value - cost.radial(z - h).value) / (2.0 * h);
        let d2 = (cost.radial(z + h).d1 - cost.radial(z - h).d1) / (2.0 * h);
        prop_assert!((d1 - g.d1).abs() <= 1e-6 * g.d1.abs().max(1.0), "G′ {d1} vs {}", g.d1);
        prop_assert!((d2 - g.d2).abs() <= 1e-6 * g.d2.abs().max(1.0), "G″ {d2} vs {}", g.d2);
    }

    #[test]
    fn classification_is_self_consistent(cost in refractor()) {
        let rep = classify(&cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS).unwrap();
        let at = cost.radial(rep.z_star);
        match rep.classification {
            Defect::TypeI => {
                prop_assert!(at.d2.abs() < 1e-8);
                prop_assert!((rep.p_star - at.d1.abs()).abs() <= 1e-10 * rep.p_star);
                let sign = cost.radial(0.5 * rep.z_star).d2.signum();
                for i in 1..50 {
                    let z = rep.z_star * i as f64 / 50.0;
                    prop_assert_eq!(cost.radial(z).d2.signum(), sign);
                }
            }
            Defect::TypeII => {
                prop_assert!(rep.p_star.is_infinite());
                let slopes: Vec<f64> = (1..8).map(|k| cost.radial(rep.z_star - 10f64.powi(-k)).d1.abs()).collect();
                prop_assert!(slopes.windows(2).all(|w| w[1] > w[0]));
            }
            Defect::NonDefective => prop_assert!(false, "refractor classified non-defective"),
        }
    }

    #[test]
    fn beta_inverts_the_gradient(cost in any_cost(), a in 0.0f64..0.999, b in 0.0f64..0.999) {
        let beta = BetaFunction::new(&cost).unwrap();
        prop_assert_eq!(beta.beta(0.0).unwrap(), 0.0);
        let top = if beta.r_limit().is_finite() { beta.r_limit() } else { 1e3 };
        let (lo, hi) = (a.min(b) * top, a.max(b) * top);
        let (blo, bhi) = (beta.beta(lo).unwrap(), beta.beta(hi).unwrap());
        if hi > lo {
            prop_assert!(bhi > blo);
        }
        let back = cost.radial(bhi).d1.abs();
        prop_assert!((back - hi).abs() <= 1e-10 * hi.max(1.0));
    }

    #[test]
    fn decomposition_lies_on_the_sphere(cost in any_cost().prop_filter("sphere", |c| c.geometry().is_sphere()), a in 0.001f64..0.999) {
        let beta = BetaFunction::new(&cost).unwrap();
        let top = if beta.r_limit().is_finite() { beta.r_limit() } else { 1e3 };
        let r = a * top;
        let d = beta.decompose(r).unwrap();
        prop_assert!((d.r1 * d.r1 + r * r * d.r2 * d.r2 - 1.0).abs() < 1e-10);
        prop_assert!((d.r1.clamp(-1.0, 1.0).acos() - d.beta_value).abs() < 1e-6 * d.beta_value.max(1e-3));
    }

    #[test]
    fn hessian_forms_agree_and_are_positive(cost in refractor(), a in 0.001f64..0.99) {
        let beta = BetaFunction::new(&cost).unwrap();
        let top = if beta.r_limit().is_finite() { beta.r_limit() } else { 50.0 };
        let s = mixed_hessian_sphere(&beta, a * top).unwrap();
        prop_assert!(s.values().iter().all(|v| *v > 0.0));
        prop_assert!(s.max_relative_spread() < 1e-8);
    }

    #[test]
    fn lens_round_trip(u in proptest::collection::vec(-5.0f64..5.0, 1..50), second in any::<bool>()) {
        let variant = if second { LensVariant::II } else { LensVariant::I };
        let lens = LensShape::from_potential(&u, variant);
        prop_assert!(lens.u1.iter().all(|v| *v > 0.0));
        for (a, b) in lens.potential().iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn strong_condition_implies_weak(kappa in 1.05f64..3.0, fraction in 0.2f64..0.97) {
        let beta = BetaFunction::new(&CostSpec::refractor_ii(kappa).unwrap()).unwrap();
        let domain = AdmissibleDomain::for_beta(&beta, fraction * beta.z_limit()).unwrap();
        let rep = check_all_sphere(&beta, &domain, 512).unwrap();
        if rep.verdict("As") == Some(Verdict::Holds) {
            prop_assert_eq!(rep.verdict("Aw"), Some(Verdict::Holds));
        }
        prop_assert_eq!(&rep, &check_all_sphere(&beta, &domain, 512).unwrap());
    }

    #[test]
    fn densities_are_normalized(dir in direction(), amplitude in 0.0f64..0.9, center in direction(), sigma in 0.3f64..2.0) {
        let grid = Arc::new(build_grid(GridKind::Fibonacci, 800).unwrap());
        let linear = DensityField::linear_perturbation(grid.clone(), &dir, amplitude).unwrap();
        let gauss = gaussian_like_density(&SpherePoint::new(center).unwrap(), sigma, grid).unwrap().field;
        for field in [linear, gauss] {
            prop_assert!((field.total_mass() - 1.0).abs() < 1e-8);
            prop_assert!(field.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn feasibility_verdict_matches_bound(cost in refractor(), a in direction(), b in direction(), sigma in 0.2f64..0.6) {
        let grid = Arc::new(build_grid(GridKind::Fibonacci, 1500).unwrap());
        let f = gaussian_like_density(&SpherePoint::new(a).unwrap(), sigma, grid.clone()).unwrap().field;
        let g = gaussian_like_density(&SpherePoint::new(b).unwrap(), sigma, grid).unwrap().field;
        let rep = feasibility_check(&f, &g, &cost, 0.999).unwrap();
        prop_assert_eq!(rep.feasible, rep.required_distance_lower_bound <= rep.z_star);
        prop_assert!(rep.required_distance_lower_bound >= 0.0);
    }
}
