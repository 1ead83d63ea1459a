//! Acceptance suite: one PASS/FAIL line per criterion, checked at the stated
//! tolerance and runtime budget. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refractor_core::cost::{classify, CostSpec, Defect, DEFAULT_SCAN_POINTS, DEFAULT_TOL_ROOT};
use refractor_core::hessian::mixed_hessian_sphere;
use refractor_core::mapping::{closed_form_refractor_map, transport_map, BetaFunction, RefractorVariant};
use refractor_core::mtw::{
    check_all_sphere, check_curvature_euclidean, power_cost_analysis, AdmissibleDomain, Verdict, DEFAULT_GRID,
};
use refractor_core::solvability::{cap_mass, feasibility_check, gaussian_like_density, DensityField};
use refractor_core::solver::{recover_lens, solve_entropic, verify_pde_residual, LensVariant, TransportProblem};
use refractor_core::sphere::{any_frame, build_grid, GridKind, SphereGrid, SpherePoint, TangentVector, Vec3};
use refractor_core::Error;

type Outcome = Result<String, String>;

/// Collects failures while still describing every check.
#[derive(Default)]
struct Checks {
    notes: String,
    failed: bool,
}

impl Checks {
    fn check(&mut self, ok: bool, note: impl AsRef<str>) {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        if !ok {
            self.failed = true;
            self.notes.push_str("✗ ");
        }
        self.notes.push_str(note.as_ref());
    }

    fn done(self) -> Outcome {
        if self.failed {
            Err(self.notes)
        } else {
            Ok(self.notes)
        }
    }
}

fn e(err: Error) -> String {
    err.to_string()
}

const N_VALUES: [f64; 3] = [1.333, 1.52, 2.417];

fn refractor_costs() -> Vec<CostSpec> {
    N_VALUES
        .iter()
        .map(|&n| CostSpec::refractor_i(n).unwrap())
        .chain(N_VALUES.iter().map(|&k| CostSpec::refractor_ii(k).unwrap()))
        .collect()
}

fn label(cost: &CostSpec) -> String {
    match cost.params().iter().next() {
        Some((k, v)) => format!("{}({k}={v})", cost.name()),
        None => cost.name().to_string(),
    }
}

fn solvability_constants() -> Outcome {
    let mut c = Checks::default();
    let mut slowest = Duration::ZERO;
    for cost in refractor_costs() {
        let t = Instant::now();
        let rep = classify(&cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS).map_err(e)?;
        slowest = slowest.max(t.elapsed());
        let (param, expected) = match cost.param("n") {
            Some(n) => (n, Defect::TypeI),
            None => (cost.param("kappa").unwrap(), Defect::TypeII),
        };
        let dz = (rep.z_star - (1.0 / param).acos()).abs();
        let mut ok = rep.classification == expected && dz <= 1e-10;
        let mut note = format!("{} {:?} |Δz*|={dz:.1e}", label(&cost), rep.classification);
        if expected == Defect::TypeI {
            let dp = (rep.p_star - 1.0 / (param * param - 1.0).sqrt()).abs();
            ok &= dp <= 1e-10;
            let _ = write!(note, " |Δp*|={dp:.1e}");
        }
        c.check(ok, note);
    }
    c.check(slowest < Duration::from_secs(1), format!("slowest {:.3}s < 1s", slowest.as_secs_f64()));
    c.done()
}

fn ill_posedness() -> Outcome {
    let mut c = Checks::default();
    let grid = Arc::new(build_grid(GridKind::LatLong, 720).map_err(e)?);
    let north = SpherePoint::north();
    let f = gaussian_like_density(&north, 0.01, grid.clone()).map_err(e)?;
    let g = gaussian_like_density(&north.antipode(), 0.01, grid.clone()).map_err(e)?;
    let rel = (f.normalization - 6.283e-4).abs() / 6.283e-4;
    c.check(rel <= 1e-6, format!("Z={:.10e} vs 6.283e-4: rel {rel:.2e} (tol 1e-6)", f.normalization));
    let mass = cap_mass(&f.field, &north, 0.05);
    let dm = (mass - 0.999992).abs();
    c.check(dm <= 1e-5, format!("cap mass(0.05)={mass:.10} |Δ|={dm:.1e}"));
    let mut infeasible = 0;
    let costs = refractor_costs();
    for cost in &costs {
        let rep = feasibility_check(&f.field, &g.field, cost, 0.999).map_err(e)?;
        if rep.feasible {
            c.check(false, format!("{} reported feasible", label(cost)));
        } else {
            infeasible += 1;
        }
    }
    c.check(
        infeasible == costs.len(),
        format!("antipodal pair infeasible for {infeasible}/{} refractor costs", costs.len()),
    );
    c.done()
}

/// Interior samples of `(0, limit)`, where the tight tolerance applies.
fn interior(beta: &BetaFunction, samples: usize) -> Vec<f64> {
    let limit = beta.r_limit();
    let (lo, hi) = if limit.is_finite() {
        (1e-3 * limit, 0.99 * limit)
    } else {
        (1e-3, 50.0)
    };
    (0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect()
}

fn formula_cross_check() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cost in [
        CostSpec::refractor_i(1.52).unwrap(),
        CostSpec::refractor_ii(1.52).unwrap(),
        CostSpec::geodesic_squared(),
    ] {
        let beta = BetaFunction::new(&cost).map_err(e)?;
        let mut spread: f64 = 0.0;
        for r in interior(&beta, 500) {
            spread = spread.max(mixed_hessian_sphere(&beta, r).map_err(e)?.max_relative_spread());
        }
        c.check(spread <= 1e-8, format!("{} four-way spread {spread:.1e}", label(&cost)));

        let top = if beta.r_limit().is_finite() { 0.9 * beta.r_limit() } else { 5.0 };
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_point(&mut rng);
            let frame = any_frame(&x);
            let r = rng.gen_range(0.05..top);
            let angle = rng.gen_range(0.0..2.0 * PI);
            let h = 1e-6;
            let map = |dr: f64, da: f64| -> Result<Vec3, String> {
                let p = TangentVector::from_polar(frame, r, angle).components() + Vector2::new(dr, da);
                let v = TangentVector::new(frame, p);
                Ok(*transport_map(&beta, &x, &v).map_err(e)?.coords())
            };
            let d1 = (map(h, 0.0)? - map(-h, 0.0)?) / (2.0 * h);
            let d2 = (map(0.0, h)? - map(0.0, -h)?) / (2.0 * h);
            let jac = d1.cross(&d2).dot(&map(0.0, 0.0)?).abs();
            let mh = mixed_hessian_sphere(&beta, r).map_err(e)?.via_identity;
            worst = worst.max((1.0 / mh - jac).abs() / jac);
        }
        c.check(worst <= 1e-5, format!("{} 1/Hessian vs FD Jacobian {worst:.1e}", label(&cost)));
    }
    c.done()
}

fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return SpherePoint::new(v / n).unwrap();
        }
    }
}

fn builtin_costs() -> Vec<CostSpec> {
    let mut costs = refractor_costs();
    costs.extend([
        CostSpec::geodesic_squared(),
        CostSpec::power(1.5).unwrap(),
        CostSpec::power(2.0).unwrap(),
        CostSpec::power(3.0).unwrap(),
        CostSpec::ambient_euclidean_sq(),
        CostSpec::euclidean_squared(2, 10.0).unwrap(),
        CostSpec::euclidean_squared(3, 10.0).unwrap(),
    ]);
    costs
}

fn inverse_identities() -> Outcome {
    let mut c = Checks::default();
    for cost in builtin_costs() {
        let beta = BetaFunction::new(&cost).map_err(e)?;
        let hi = if beta.r_limit().is_finite() { 0.999 * beta.r_limit() } else { 1e3 };
        let mut inverse: f64 = 0.0;
        for i in 0..=1000 {
            let r = hi * i as f64 / 1000.0;
            let back = cost.radial(beta.beta(r).map_err(e)?).d1.abs();
            inverse = inverse.max((back - r).abs() / r.max(1.0));
        }
        let top = if beta.r_limit().is_finite() { 0.9 * beta.r_limit() } else { 100.0 };
        let mut slope: f64 = 0.0;
        for i in 0..=200 {
            let r = 0.01 + (top - 0.01) * i as f64 / 200.0;
            let h = 1e-5 * r.max(1e-2);
            let fd = (beta.beta(r + h).map_err(e)? - beta.beta(r - h).map_err(e)?) / (2.0 * h);
            let an = beta.beta_prime(r).map_err(e)?;
            slope = slope.max((fd - an).abs() / an);
        }
        c.check(
            inverse <= 1e-10 && slope <= 1e-6,
            format!("{} inverse {inverse:.1e} β′ {slope:.1e}", label(&cost)),
        );
    }
    c.done()
}

fn mtw_anchors() -> Outcome {
    let mut c = Checks::default();
    let sphere = |cost: CostSpec, gamma_of: &dyn Fn(&BetaFunction) -> f64| -> Result<_, String> {
        let beta = BetaFunction::new(&cost).map_err(e)?;
        let domain = AdmissibleDomain::for_beta(&beta, gamma_of(&beta)).map_err(e)?;
        check_all_sphere(&beta, &domain, DEFAULT_GRID).map_err(e)
    };
    let restricted = |b: &BetaFunction| 0.9 * b.z_limit();
    for n in N_VALUES {
        let rep = sphere(CostSpec::refractor_i(n).unwrap(), &restricted)?;
        c.check(rep.verdict("Aw") == Some(Verdict::Fails), format!("refractor_I(n={n}) Aw {:?}", rep.verdict("Aw")));
    }
    let rep = sphere(CostSpec::refractor_ii(1.52).unwrap(), &restricted)?;
    let margin = rep.as_margin.unwrap_or(f64::NAN);
    c.check(
        rep.verdict("Aw") == Some(Verdict::Holds) && rep.verdict("As") == Some(Verdict::Holds) && margin > 0.0,
        format!("refractor_II(κ=1.52) Aw {:?} As {:?} margin {margin:.2e}", rep.verdict("Aw"), rep.verdict("As")),
    );
    let rep = sphere(CostSpec::geodesic_squared(), &|_| PI - 0.05)?;
    c.check(rep.verdict("Aw") == Some(Verdict::Holds), format!("geodesic_squared Aw {:?}", rep.verdict("Aw")));

    let beta = BetaFunction::new(&CostSpec::euclidean_squared(2, 10.0).unwrap()).map_err(e)?;
    let rep = check_curvature_euclidean(&beta, 5.0, DEFAULT_GRID).map_err(e)?;
    let margin = rep.as_margin.unwrap_or(f64::NAN);
    c.check(
        rep.verdict("Aw") == Some(Verdict::Holds) && rep.verdict("As") == Some(Verdict::Fails) && margin.abs() < 1e-9,
        format!("euclidean_squared Aw {:?} As {:?} margin {margin:.1e}", rep.verdict("Aw"), rep.verdict("As")),
    );

    let rep = sphere(CostSpec::power(3.0).unwrap(), &restricted)?;
    c.check(rep.verdict("A1") == Some(Verdict::Fails), format!("power(s=3) A1 {:?}", rep.verdict("A1")));
    for s in [1.5, 2.0, 3.0] {
        let rep = power_cost_analysis(s, 64).map_err(e)?;
        let expected: f64 = s - 2.0;
        // A vanishing coefficient has no relative scale; 5% of unity applies.
        let err = (rep.leading_coefficient - expected).abs() / expected.abs().max(1.0);
        c.check(
            err <= 0.05,
            format!("power(s={s}) leading coefficient {:.4} vs {expected} ({:.1}%)", rep.leading_coefficient, 100.0 * err),
        );
    }
    c.done()
}

fn exponential_map() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let variants: Vec<RefractorVariant> = N_VALUES
        .iter()
        .map(|&n| RefractorVariant::I { n })
        .chain(N_VALUES.iter().map(|&kappa| RefractorVariant::II { kappa }))
        .collect();
    let betas: Vec<BetaFunction> = variants
        .iter()
        .map(|v| BetaFunction::new(&v.cost().unwrap()))
        .collect::<Result<_, _>>()
        .map_err(e)?;
    let (mut agree, mut plane): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        let k = i % variants.len();
        let beta = &betas[k];
        let top = if beta.r_limit().is_finite() { beta.r_limit() } else { 20.0 };
        let x = random_point(&mut rng);
        let p = TangentVector::from_polar(any_frame(&x), rng.gen_range(0.0..top), rng.gen_range(0.0..2.0 * PI));
        let y = transport_map(beta, &x, &p).map_err(e)?;
        let closed = closed_form_refractor_map(variants[k], &x, &p).map_err(e)?;
        agree = agree.max((y.coords() - closed.coords()).norm());
        if let Some(dir) = p.direction() {
            let normal = x.coords().cross(&dir);
            plane = plane.max(y.coords().dot(&normal).abs());
        }
    }
    c.check(agree <= 1e-10, format!("max |T − closed form| {agree:.1e} over 1000 samples"));
    c.check(plane < 1e-12, format!("max |y·q̂| {plane:.1e}"));

    let mut mismatches = 0;
    let mut trials = 0;
    for &n in &N_VALUES {
        let p_star = 1.0 / (n * n - 1.0).sqrt();
        let x = random_point(&mut rng);
        let frame = any_frame(&x);
        let mut radii: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..2.0 * p_star)).collect();
        radii.extend([p_star, p_star * (1.0 - 1e-12), p_star * (1.0 + 1e-12), p_star.next_up()]);
        for r in radii {
            let result = closed_form_refractor_map(RefractorVariant::I { n }, &x, &TangentVector::from_polar(frame, r, 0.7));
            let complex = matches!(result, Err(Error::ComplexMapping { .. }));
            trials += 1;
            // The tangent vector's length is recomputed from components.
            let length = TangentVector::from_polar(frame, r, 0.7).norm();
            if complex != (length > p_star) {
                mismatches += 1;
            }
        }
    }
    c.check(mismatches == 0, format!("ComplexMapping iff ‖p‖ > p*: {mismatches}/{trials} mismatches"));
    c.done()
}

fn fibonacci(n: usize) -> Arc<SphereGrid> {
    Arc::new(build_grid(GridKind::Fibonacci, n).unwrap())
}

fn lens_cost() -> CostSpec {
    CostSpec::refractor_ii(1.52).unwrap()
}

fn perturbed(grid: &Arc<SphereGrid>) -> DensityField {
    DensityField::linear_perturbation(grid.clone(), &Vec3::new(0.6, 0.0, 0.8), 0.1).unwrap()
}

/// Smooth perturbation of the uniform density; `ε` resolves two grid cells.
fn smooth_problem(n: usize) -> Result<TransportProblem, String> {
    let grid = fibonacci(n);
    let cost = lens_cost();
    let h = grid.spacing();
    let eps = 0.5 * cost.radial(0.0).d2.abs() * (2.0 * h).powi(2);
    TransportProblem::new(DensityField::uniform(grid.clone()), perturbed(&grid), cost, eps).map_err(e)
}

fn solver_properties() -> Outcome {
    let mut c = Checks::default();

    let grid = fibonacci(2000);
    let f = perturbed(&grid);
    let base = TransportProblem::new(f.clone(), f, lens_cost(), 1.0).map_err(e)?;
    let problem = base.with_epsilon(0.01 * base.mean_cost()).map_err(e)?;
    let plan = solve_entropic(&problem, 5000, 1e-6).map_err(e)?;
    let three_h = 3.0 * grid.spacing();
    c.check(
        plan.max_transport_distance < three_h,
        format!("f=g max distance {:.3} < 3h={three_h:.3}", plan.max_transport_distance),
    );

    let mut medians = Vec::new();
    for n in [2000, 4000] {
        let problem = smooth_problem(n)?;
        let plan = solve_entropic(&problem, 5000, 1e-6).map_err(e)?;
        if n == 2000 {
            c.check(
                plan.marginal_error < 1e-6 && plan.iterations < 5000,
                format!("smooth problem error {:.1e} in {} iterations", plan.marginal_error, plan.iterations),
            );
        }
        let lens = recover_lens(&plan, &problem, LensVariant::II, 0.0);
        let residual = verify_pde_residual(&lens, &problem).map_err(e)?;
        medians.push((n, residual.median, residual.p90));
    }
    let ((n0, m0, p0), (n1, m1, p1)) = (medians[0], medians[1]);
    c.check(
        m1 < m0,
        format!("PDE residual median {m0:.2e} (N={n0}) → {m1:.2e} (N={n1}); p90 {p0:.2e} → {p1:.2e}"),
    );

    let grid = fibonacci(2000);
    let north = SpherePoint::north();
    let f = gaussian_like_density(&north, 0.2, grid.clone()).map_err(e)?.field;
    let g = gaussian_like_density(&north.antipode(), 0.2, grid).map_err(e)?.field;
    let verdict = TransportProblem::new(f, g, lens_cost(), 1.0).and_then(|p| {
        let p = p.with_epsilon(0.01 * p.mean_cost())?;
        solve_entropic(&p, 5000, 1e-6)
    });
    let (ok, what) = match verdict {
        Err(Error::InfeasibleMask(_)) => (true, "InfeasibleMask".to_string()),
        Err(Error::NotConverged { best, .. }) => {
            (best.marginal_error > 0.1, format!("not converged, error {:.2e}", best.marginal_error))
        }
        Ok(plan) => (false, format!("converged, error {:.1e}", plan.marginal_error)),
        Err(other) => (false, other.to_string()),
    };
    c.check(ok, format!("antipodal problem: {what}"));
    c.done()
}

fn kit(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_refractor-kit"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("REFRACTOR_KIT_THREADS")
        .output()
        .map_err(|err| err.to_string())?;
    match out.status.code() {
        Some(0 | 2) => Ok(()),
        code => Err(format!("{args:?} exited {code:?}: {}", String::from_utf8_lossy(&out.stderr))),
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let path = entry.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let mut c = Checks::default();
    let runs: [&[&str]; 8] = [
        &["analyze-cost", "--cost", "refractor_I", "--param", "n=1.52"],
        &["plot-beta", "--cost", "refractor_I", "--param", "n=1.333", "--rmax", "0.99pstar"],
        &["plot-cost", "--cost", "refractor_II", "--param", "kappa=1.52"],
        &["plot-hessian", "--cost", "refractor_II", "--param", "kappa=1.52"],
        &["plot-f4", "--cost", "refractor_I", "--param", "n=1.52"],
        &["check-mtw", "--cost", "refractor_II", "--param", "kappa=1.52", "--format", "csv"],
        &[
            "check-solvability",
            "--cost",
            "refractor_I",
            "--param",
            "n=1.52",
            "--res",
            "360",
            "--f",
            "gaussian:sigma=0.05,center=north",
            "--g",
            "gaussian:sigma=0.05,center=south",
        ],
        &[
            "solve",
            "--cost",
            "refractor_II",
            "--param",
            "kappa=1.52",
            "--grid",
            "fibonacci",
            "--res",
            "600",
            "--f",
            "uniform",
            "--g",
            "linear:amplitude=0.1,direction=0.6/0/0.8",
        ],
    ];
    let root = tempfile::tempdir().map_err(|err| err.to_string())?;
    for (i, args) in runs.iter().enumerate() {
        let (a, b) = (root.path().join(format!("{i}a")), root.path().join(format!("{i}b")));
        kit(&a, args)?;
        kit(&b, args)?;
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        c.check(!sa.is_empty() && sa == sb, format!("{} ({} files)", args[0], sa.len()));
    }
    c.done()
}

/// Identifier, name, runtime budget in seconds, check.
type Criterion = (u32, &'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "solvability constants", 6, solvability_constants),
        (2, "ill-posedness reproduction", 10, ill_posedness),
        (3, "formula cross-check", 30, formula_cross_check),
        (4, "inverse identities", 10, inverse_identities),
        (5, "MTW verdict anchors", 60, mtw_anchors),
        (6, "exponential-map properties", 5, exponential_map),
        (7, "solver properties", 300, solver_properties),
        (8, "CLI determinism", 600, determinism),
    ];
    let mut failures = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed().as_secs_f64();
        let in_time = elapsed <= budget as f64;
        let pass = outcome.is_ok() && in_time;
        let detail = match &outcome {
            Ok(s) | Err(s) => s,
        };
        println!(
            "criterion {id} [{name}] {} ({elapsed:.2}s / {budget}s budget{}): {detail}",
            if pass { "PASS" } else { "FAIL" },
            if in_time { "" } else { ", over budget" },
        );
        if !pass {
            failures.push(id);
        }
    }
    if failures.is_empty() {
        println!("acceptance: all 8 criteria pass");
    } else {
        println!("acceptance: {} of 8 criteria fail: {failures:?}", failures.len());
        std::process::exit(1);
    }
}
