use std::path::Path;

use refractor_core::cost::{
    classify, validate_exponential_hypotheses, CostDocument, CostSpec, DefectReport, HypothesisReport, DEFAULT_SCAN_POINTS,
    DEFAULT_TOL_ROOT,
};
use refractor_core::hessian::{mixed_hessian_euclidean, mixed_hessian_sphere};
use refractor_core::mapping::BetaFunction;
use refractor_core::mtw::{
    calibrate, check_all_sphere, check_curvature_euclidean, f_functions_euclidean, f_functions_sphere, power_cost_analysis,
    AdmissibleDomain, Calibration, MtwReport, PowerCostReport,
};
use refractor_core::solvability::{feasibility_check, ratio_diagnostics, FeasibilityReport, RatioDiagnostics};
use refractor_core::solver::{
    recover_lens, recover_map, solve_entropic, verify_pde_residual, LensVariant, PdeResidual, TransportProblem,
    DEFAULT_MASK_MARGIN,
};
use refractor_core::sphere::{geodesic_distance, GridKind};
use refractor_core::Error;
use serde::Serialize;

use crate::args::{CostArgs, Format, GridArgs, OutputArgs};
use crate::config::{parse_scaled, read_json, resolve_cost, DensitySpec, EpsilonSpec, GridSpec, SolveConfig};
use crate::output::{json_number, write_json, Table};
use crate::{CliError, Outcome};

fn cost_of(args: &CostArgs) -> Result<CostSpec, CliError> {
    resolve_cost(args.cost.as_deref(), &args.params)
}

fn report_of(cost: &CostSpec) -> Result<DefectReport, CliError> {
    Ok(classify(cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS)?)
}

/// z* for defective costs, else the largest distance the cost is defined on.
fn distance_cap(cost: &CostSpec, report: &DefectReport) -> f64 {
    if report.is_defective() {
        report.z_star
    } else {
        cost.z_max()
    }
}

fn resolve_gamma(raw: Option<&str>, cap: f64) -> Result<f64, CliError> {
    match raw {
        None => Ok(0.9 * cap),
        Some(s) => match parse_scaled(s, "zstar", "--gamma")? {
            (x, true) => Ok(x * cap),
            (x, false) => Ok(x),
        },
    }
}

/// Default `r` range: 0.99 p* when p* is finite, else `|G′|` at 0.99 of the
/// distance limit.
fn resolve_rmax(raw: Option<&str>, beta: &BetaFunction) -> Result<f64, CliError> {
    let p_star = beta.report().p_star;
    let default = || {
        if p_star.is_finite() {
            0.99 * p_star
        } else {
            beta.cost().radial(0.99 * beta.z_limit()).d1.abs()
        }
    };
    let r = match raw {
        None => default(),
        Some(s) => match parse_scaled(s, "pstar", "--rmax")? {
            (x, true) if p_star.is_finite() => x * p_star,
            (_, true) => return Err(CliError::Config(format!("--rmax {s}: p* is infinite for this cost"))),
            (x, false) => x,
        },
    };
    if !(r > 0.0) {
        return Err(CliError::Config(format!("--rmax must be positive, got {r}")));
    }
    Ok(r)
}

fn describe(table: &mut Table, verb: &str, cost: &CostSpec, report: &DefectReport) {
    table.meta("verb", verb).meta("cost", cost.name());
    for (k, v) in cost.params() {
        table.meta(&format!("param.{k}"), v);
    }
    table
        .meta("geometry", if cost.geometry().is_sphere() { "sphere" } else { "euclidean" })
        .meta("classification", serde_json::to_value(report.classification).unwrap().as_str().unwrap_or(""))
        .meta("z_star", report.z_star)
        .meta("p_star", report.p_star);
}

fn uniform(lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn finish(paths: Vec<std::path::PathBuf>) -> Outcome {
    Outcome::Done(paths)
}

#[derive(Serialize)]
struct CostAnalysis {
    cost: CostDocument,
    #[serde(flatten)]
    report: DefectReport,
    closed_form_zstar: Option<f64>,
    transport_sign: f64,
    hypotheses: HypothesisReport,
}

pub fn analyze_cost(cost: &CostArgs, output: &OutputArgs, gamma: Option<&str>) -> Result<Outcome, CliError> {
    if output.format == Some(Format::Csv) {
        return Err(CliError::Config("analyze-cost writes JSON only".into()));
    }
    let cost = cost_of(cost)?;
    let report = report_of(&cost)?;
    let gamma = resolve_gamma(gamma, distance_cap(&cost, &report))?;
    let analysis = CostAnalysis {
        cost: CostDocument::from(&cost),
        report,
        closed_form_zstar: cost.closed_form_zstar(),
        transport_sign: cost.transport_sign(),
        hypotheses: validate_exponential_hypotheses(&cost, gamma),
    };
    Ok(finish(vec![write_json(&output.out, "analyze_cost.json", &analysis)?]))
}

pub fn plot_beta(cost: &CostArgs, output: &OutputArgs, rmax: Option<&str>, samples: usize) -> Result<Outcome, CliError> {
    let cost = cost_of(cost)?;
    let beta = BetaFunction::new(&cost)?;
    let rmax = resolve_rmax(rmax, &beta)?;
    let mut table = Table::new(&["r", "beta", "beta_prime"]);
    describe(&mut table, "plot-beta", &cost, beta.report());
    table.meta("transport_sign", beta.sign()).meta("rmax", rmax);
    for r in uniform(0.0, rmax, samples) {
        table.push(vec![r, beta.beta(r)?, beta.beta_prime(r)?]);
    }
    Ok(finish(vec![table.write(&output.out, "beta", output.format.unwrap_or(Format::Csv))?]))
}

pub fn plot_cost(cost: &CostArgs, output: &OutputArgs, samples: usize) -> Result<Outcome, CliError> {
    let cost = cost_of(cost)?;
    let report = report_of(&cost)?;
    // Stop short of a singular endpoint, where the cost diverges.
    let end = cost.singular_z().map_or(cost.z_max(), |z| z * (1.0 - 1e-3));
    let mut table = Table::new(&["z", "cost", "d_cost", "d2_cost"]);
    describe(&mut table, "plot-cost", &cost, &report);
    table.meta("z_end", end);
    for z in uniform(0.0, end, samples) {
        let j = cost.radial(z);
        table.push(vec![z, j.value, j.d1, j.d2]);
    }
    Ok(finish(vec![table.write(&output.out, "cost", output.format.unwrap_or(Format::Csv))?]))
}

pub fn plot_hessian(cost: &CostArgs, output: &OutputArgs, rmax: Option<&str>, samples: usize) -> Result<Outcome, CliError> {
    let cost = cost_of(cost)?;
    let beta = BetaFunction::new(&cost)?;
    let rmax = resolve_rmax(rmax, &beta)?;
    let rs = uniform(0.0, rmax, samples);
    let mut table = match cost.geometry() {
        refractor_core::cost::Geometry::Sphere => {
            let mut t = Table::new(&["r", "value", "via_r2", "via_r1prime", "via_beta", "via_identity", "relative_spread"]);
            for &r in &rs {
                let s = mixed_hessian_sphere(&beta, r)?;
                t.push(vec![r, s.via_identity, s.via_r2, s.via_r1prime, s.via_beta, s.via_identity, s.max_relative_spread()]);
            }
            t
        }
        refractor_core::cost::Geometry::Euclidean { dim } => {
            let mut t = Table::new(&["r", "value"]);
            for &r in &rs {
                t.push(vec![r, mixed_hessian_euclidean(&beta, r, dim)?]);
            }
            t
        }
    };
    describe(&mut table, "plot-hessian", &cost, beta.report());
    table.meta("rmax", rmax);
    Ok(finish(vec![table.write(&output.out, "hessian", output.format.unwrap_or(Format::Csv))?]))
}

/// f-functions on `r ∈ (0, |G′(γ)|]`.
fn f_table(beta: &BetaFunction, gamma: f64, samples: usize, convention: i8) -> Result<Table, CliError> {
    let cost = beta.cost();
    let r_hi = cost.radial(gamma).d1.abs();
    let n = samples.max(2);
    let rs = (1..=n).map(|i| r_hi * i as f64 / n as f64);
    let mut table = if cost.geometry().is_sphere() {
        let mut t = Table::new(&["r", "beta", "f1", "f2", "f3", "f4", "f2_plus_f4"]);
        for r in rs {
            let f = f_functions_sphere(beta, r, convention)?;
            t.push(vec![r, beta.beta(r)?, f.f1, f.f2, f.f3, f.f4, f.f2 + f.f4]);
        }
        t
    } else {
        let mut t = Table::new(&["r", "beta", "f1", "f2", "f1_plus_f2"]);
        for r in rs {
            let f = f_functions_euclidean(beta, r, convention)?;
            t.push(vec![r, beta.beta(r)?, f.f1, f.f2, f.f1 + f.f2]);
        }
        t
    };
    describe(&mut table, "f-functions", cost, beta.report());
    table.meta("gamma", gamma).meta("convention", convention);
    Ok(table)
}

pub fn plot_f4(cost: &CostArgs, output: &OutputArgs, gamma: Option<&str>, samples: usize) -> Result<Outcome, CliError> {
    let cost = cost_of(cost)?;
    let beta = BetaFunction::new(&cost)?;
    let gamma = resolve_gamma(gamma, distance_cap(&cost, beta.report()).min(beta.z_limit()))?;
    let mut table = f_table(&beta, gamma, samples, calibrate()?.convention)?;
    table.meta[0].1 = "plot-f4".into();
    Ok(finish(vec![table.write(&output.out, "f_functions", output.format.unwrap_or(Format::Csv))?]))
}

#[derive(Serialize)]
struct MtwDocument {
    cost: CostDocument,
    gamma: f64,
    calibration: Calibration,
    report: MtwReport,
    hypotheses: HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    power_cost: Option<PowerCostReport>,
}

pub fn check_mtw(cost: &CostArgs, output: &OutputArgs, gamma: Option<&str>, points: usize) -> Result<Outcome, CliError> {
    let cost = cost_of(cost)?;
    let beta = BetaFunction::new(&cost)?;
    let gamma = resolve_gamma(gamma, distance_cap(&cost, beta.report()).min(beta.z_limit()))?;
    let calibration = calibrate()?;
    let report = if cost.geometry().is_sphere() {
        let domain = AdmissibleDomain::for_beta(&beta, gamma)?;
        check_all_sphere(&beta, &domain, points)?
    } else {
        let mut r = check_curvature_euclidean(&beta, cost.radial(gamma).d1.abs(), points)?;
        r.gamma = Some(gamma);
        r
    };
    let power_cost = match cost.param("s") {
        Some(s) if cost.name() == "power" => Some(power_cost_analysis(s, 64)?),
        _ => None,
    };
    let doc = MtwDocument {
        cost: CostDocument::from(&cost),
        gamma,
        calibration: calibration.clone(),
        report,
        hypotheses: validate_exponential_hypotheses(&cost, gamma),
        power_cost,
    };
    let mut paths = vec![write_json(&output.out, "mtw.json", &doc)?];
    if output.format == Some(Format::Csv) {
        let mut table = f_table(&beta, gamma, 201, calibration.convention)?;
        table.meta[0].1 = "check-mtw".into();
        paths.push(table.write(&output.out, "f_functions", Format::Csv)?);
    }
    Ok(finish(paths))
}

fn grid_spec(args: &GridArgs, fallback: Option<GridSpec>) -> Result<GridSpec, CliError> {
    let kind = match &args.grid {
        Some(s) => s.parse::<GridKind>()?,
        None => fallback.as_ref().map_or(GridKind::LatLong, |g| g.kind),
    };
    let resolution = args.res.or(fallback.map(|g| g.resolution)).unwrap_or(180);
    Ok(GridSpec { kind, resolution })
}

#[derive(Serialize)]
struct DensitySummary {
    spec: DensitySpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<f64>,
}

#[derive(Serialize)]
struct SolvabilityDocument {
    cost: CostDocument,
    grid: GridSpec,
    f: DensitySummary,
    g: DensitySummary,
    feasibility: FeasibilityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<RatioOutcome>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum RatioOutcome {
    Computed(RatioDiagnostics),
    Unavailable { error: String },
}

pub fn check_solvability(
    cost: &CostArgs,
    output: &OutputArgs,
    grid: &GridArgs,
    f: &str,
    g: &str,
    alpha: f64,
    ratio: bool,
) -> Result<Outcome, CliError> {
    if output.format == Some(Format::Csv) {
        return Err(CliError::Config("check-solvability writes JSON only".into()));
    }
    let cost = cost_of(cost)?;
    let spec = grid_spec(grid, None)?;
    let sphere = spec.build()?;
    let (f_spec, g_spec) = (DensitySpec::parse(f)?, DensitySpec::parse(g)?);
    let (fd, fz) = f_spec.build(&sphere)?;
    let (gd, gz) = g_spec.build(&sphere)?;
    let feasibility = feasibility_check(&fd, &gd, &cost, alpha)?;
    // A vanishing density makes the ratio undefined; report it rather than abort.
    let ratio = ratio.then(|| match ratio_diagnostics(&fd, &gd) {
        Ok(r) => RatioOutcome::Computed(r),
        Err(e) => RatioOutcome::Unavailable { error: e.to_string() },
    });
    let feasible = feasibility.feasible;
    let doc = SolvabilityDocument {
        cost: CostDocument::from(&cost),
        grid: spec,
        f: DensitySummary {
            spec: f_spec,
            normalization: fz,
        },
        g: DensitySummary {
            spec: g_spec,
            normalization: gz,
        },
        feasibility,
        ratio,
    };
    let paths = vec![write_json(&output.out, "solvability.json", &doc)?];
    Ok(if feasible { Outcome::Done(paths) } else { Outcome::Infeasible(paths) })
}

#[derive(Serialize)]
struct SolveSummary {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
    cost: CostDocument,
    grid: GridSpec,
    f: DensitySpec,
    g: DensitySpec,
    epsilon: f64,
    tol: f64,
    max_iters: usize,
    variant: LensVariant,
    gauge: f64,
    mask_margin: f64,
    z_star: serde_json::Value,
    mask_radius: serde_json::Value,
    admissible_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    marginal_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_transport_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pde_residual: Option<PdeResidual>,
}

pub struct SolveArgs<'a> {
    pub config: Option<&'a Path>,
    pub cost: &'a CostArgs,
    pub output: &'a OutputArgs,
    pub grid: &'a GridArgs,
    pub f: Option<&'a str>,
    pub g: Option<&'a str>,
    pub eps: Option<&'a str>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub variant: Option<&'a str>,
    pub gauge: Option<f64>,
}

pub fn solve(args: SolveArgs<'_>) -> Result<Outcome, CliError> {
    let doc: SolveConfig = match args.config {
        Some(p) => read_json(p)?,
        None => serde_json::from_str("{}").expect("empty problem document"),
    };
    let cost = match (&args.cost.cost, &doc.cost) {
        (Some(_), _) | (None, None) => cost_of(args.cost)?,
        (None, Some(d)) => {
            if !args.cost.params.is_empty() {
                return Err(CliError::Config("--param needs --cost".into()));
            }
            d.resolve()?
        }
    };
    let spec = grid_spec(args.grid, doc.grid.clone())?;
    let density = |flag: Option<&str>, from_doc: &Option<DensitySpec>, name: &str| -> Result<DensitySpec, CliError> {
        match (flag, from_doc) {
            (Some(s), _) => DensitySpec::parse(s),
            (None, Some(d)) => Ok(d.clone()),
            (None, None) => Err(CliError::Config(format!("density `{name}` is required (--{name} or config)"))),
        }
    };
    let f_spec = density(args.f, &doc.f, "f")?;
    let g_spec = density(args.g, &doc.g, "g")?;
    let eps_spec = match args.eps {
        Some(s) => match s.trim().parse::<f64>() {
            Ok(x) => EpsilonSpec::Absolute(x),
            Err(_) => EpsilonSpec::Relative(s.to_string()),
        },
        None => doc.epsilon.clone().unwrap_or(EpsilonSpec::Relative("0.01mean".into())),
    };
    let tol = args.tol.or(doc.tol).unwrap_or(1e-6);
    let max_iters = args.max_iters.or(doc.max_iters).unwrap_or(5000);
    let variant = match args.variant.map(str::to_string).or(doc.variant.clone()) {
        Some(v) => v.parse::<LensVariant>()?,
        None if cost.name() == "refractor_II" => LensVariant::II,
        None => LensVariant::I,
    };
    let gauge = args.gauge.or(doc.gauge).unwrap_or(0.0);
    let margin = doc.mask_margin.unwrap_or(DEFAULT_MASK_MARGIN);

    let sphere = spec.build()?;
    let (fd, _) = f_spec.build(&sphere)?;
    let (gd, _) = g_spec.build(&sphere)?;
    let base = TransportProblem::with_margin(fd, gd, cost.clone(), 1.0, margin)?;
    let epsilon = eps_spec.resolve(base.mean_cost())?;
    let problem = base.with_epsilon(epsilon)?;

    let mut summary = SolveSummary {
        status: "converged",
        detail: None,
        cost: CostDocument::from(&cost),
        grid: spec,
        f: f_spec,
        g: g_spec,
        epsilon,
        tol,
        max_iters,
        variant,
        gauge,
        mask_margin: margin,
        z_star: json_number(problem.z_star()),
        mask_radius: json_number(problem.mask_radius()),
        admissible_pairs: problem.admissible_pairs(),
        iterations: None,
        marginal_error: None,
        max_transport_distance: None,
        total_mass: None,
        pde_residual: None,
    };
    let out = &args.output.out;
    let format = args.output.format.unwrap_or(Format::Csv);
    let plan = match solve_entropic(&problem, max_iters, tol) {
        Ok(plan) => plan,
        Err(Error::NotConverged { best, .. }) => {
            summary.status = "not_converged";
            *best
        }
        Err(Error::InfeasibleMask(detail)) => {
            summary.status = "infeasible";
            summary.detail = Some(detail);
            return Ok(Outcome::Infeasible(vec![write_json(out, "plan_summary.json", &summary)?]));
        }
        Err(e) => return Err(e.into()),
    };
    summary.iterations = Some(plan.iterations);
    summary.marginal_error = Some(plan.marginal_error);
    summary.max_transport_distance = Some(plan.max_transport_distance);
    summary.total_mass = Some(plan.coupling.total());

    let map = recover_map(&plan, &problem);
    let lens = recover_lens(&plan, &problem, variant, gauge);
    if summary.status == "converged" {
        match verify_pde_residual(&lens, &problem) {
            Ok(r) => summary.pde_residual = Some(r),
            Err(e) => summary.detail = Some(format!("PDE residual unavailable: {e}")),
        }
    }
    let u = lens.potential();
    let mut nodes = Table::new(&[
        "node",
        "x",
        "y",
        "z",
        "u",
        "u1",
        "target_x",
        "target_y",
        "target_z",
        "transport_distance",
        "spread",
    ]);
    nodes.meta("verb", "solve").meta("cost", cost.name()).meta("epsilon", epsilon).meta("variant", variant);
    for (i, x) in problem.grid().nodes().iter().enumerate() {
        let t = map.targets[i];
        let (c, tc) = (x.coords(), t.coords());
        nodes.push(vec![
            i as f64,
            c.x,
            c.y,
            c.z,
            u[i],
            lens.u1[i],
            tc.x,
            tc.y,
            tc.z,
            geodesic_distance(x, &t),
            map.spread[i],
        ]);
    }
    let mut log = Table::new(&["iter", "epsilon", "marginal_error"]);
    log.meta("verb", "solve").meta("cost", cost.name());
    for r in &plan.convergence {
        log.push(vec![r.iteration as f64, r.epsilon, r.marginal_error]);
    }
    let paths = vec![
        write_json(out, "plan_summary.json", &summary)?,
        nodes.write(out, "nodes", format)?,
        log.write(out, "convergence", format)?,
    ];
    Ok(if summary.status == "converged" {
        Outcome::Done(paths)
    } else {
        Outcome::Failed(
            paths,
            format!(
                "entropic solver did not converge: marginal error {:e} after {} iterations",
                plan.marginal_error, plan.iterations
            ),
        )
    })
}
