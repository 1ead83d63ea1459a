//! Entropic optimal transport between grid densities with the cost's
//! admissible set imposed as a hard support mask, plus recovery of the
//! transport map, the potential and the lens shape.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{classify, CostSpec, Defect, DEFAULT_SCAN_POINTS, DEFAULT_TOL_ROOT};
use crate::error::{Error, Result};
use crate::hessian::mixed_hessian_sphere;
use crate::mapping::{transport_map_ambient, BetaFunction};
use crate::solvability::{surface_gradient, DensityField};
use crate::sphere::{any_frame, exp_map_ambient, geodesic_distance, log_map, SphereGrid, SpherePoint, Vec3};

/// Mask cut-off below z*, as a fraction of z*. Keeps iterates off the cusp
/// where the mixed Hessian degenerates.
pub const DEFAULT_MASK_MARGIN: f64 = 0.02;
/// The reported maximum transport distance is the largest, over rows, of the
/// radius holding all but this fraction of the row's mass.
pub const TAIL_FRACTION: f64 = 1e-3;
/// Hall deficits above this mass certify that no coupling fits the mask.
const DEFICIT_TOL: f64 = 1e-12;

const STAGE_TOL: f64 = 1e-3;
const STAGE_MAX_ITERS: usize = 100;
const RELAX_PROBE: usize = 30;
const RELAX_WINDOW: usize = 10;
const RELAX_SWEEPS: usize = 9;
const MAX_RELAXATION: f64 = 1.9;

/// A masked transport problem between two densities on the same grid.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    f: DensityField,
    g: DensityField,
    cost: CostSpec,
    epsilon: f64,
    z_star: f64,
    radius: f64,
    sign: f64,
    source_mass: Vec<f64>,
    target_mass: Vec<f64>,
    // Admissible pairs, row-major (CSR) and column-major copies of the
    // signed cost.
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    costs: Vec<f64>,
    distances: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_costs: Vec<f64>,
}

impl TransportProblem {
    pub fn new(f: DensityField, g: DensityField, cost: CostSpec, epsilon: f64) -> Result<Self> {
        Self::with_margin(f, g, cost, epsilon, DEFAULT_MASK_MARGIN)
    }

    pub fn with_margin(f: DensityField, g: DensityField, cost: CostSpec, epsilon: f64, margin: f64) -> Result<Self> {
        if !cost.geometry().is_sphere() {
            return Err(Error::WrongGeometry { expected: "sphere" });
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::BadParam(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&margin) {
            return Err(Error::BadParam(format!("mask margin must lie in [0, 1), got {margin}")));
        }
        let (fg, gg) = (f.grid(), g.grid());
        if fg.len() != gg.len() || fg.kind() != gg.kind() || fg.resolution() != gg.resolution() {
            return Err(Error::InvalidDensity("densities live on different grids".into()));
        }
        let report = classify(&cost, DEFAULT_TOL_ROOT, DEFAULT_SCAN_POINTS)?;
        let z_star = match report.classification {
            Defect::NonDefective => f64::INFINITY,
            _ => report.z_star,
        };
        let radius = if z_star.is_finite() { (1.0 - margin) * z_star } else { f64::INFINITY };
        let sign = cost.transport_sign();
        let grid = fg.clone();
        let n = grid.len();
        let nodes = grid.nodes();
        let cos_cut = if radius.is_finite() { radius.cos() } else { -2.0 };

        let rows: Vec<(Vec<u32>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut js, mut cs, mut ds) = (Vec::new(), Vec::new(), Vec::new());
                for (j, y) in nodes.iter().enumerate() {
                    if nodes[i].dot(y) <= cos_cut {
                        continue;
                    }
                    let d = geodesic_distance(&nodes[i], y);
                    if d < radius {
                        js.push(j as u32);
                        cs.push(sign * cost.cost_at_distance(d));
                        ds.push(d);
                    }
                }
                (js, cs, ds)
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.0.len()).sum();
        let (mut cols, mut costs, mut distances) = (Vec::with_capacity(nnz), Vec::with_capacity(nnz), Vec::with_capacity(nnz));
        for (js, cs, ds) in rows {
            cols.extend(js);
            costs.extend(cs);
            distances.extend(ds);
            row_ptr.push(cols.len());
        }
        if let Some(i) = (0..n).find(|&i| row_ptr[i] == row_ptr[i + 1]) {
            return Err(Error::InfeasibleMask(format!("row {i} has no admissible column")));
        }

        let mut counts = vec![0usize; n + 1];
        for &j in &cols {
            counts[j as usize + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        if let Some(j) = (0..n).find(|&j| col_ptr[j] == col_ptr[j + 1]) {
            return Err(Error::InfeasibleMask(format!("column {j} has no admissible row")));
        }
        let mut col_rows = vec![0u32; nnz];
        let mut col_costs = vec![0.0; nnz];
        let mut next = counts;
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = cols[k] as usize;
                col_rows[next[j]] = i as u32;
                col_costs[next[j]] = costs[k];
                next[j] += 1;
            }
        }

        let source_mass = f.masses();
        let target_mass = g.masses();
        Ok(Self {
            f,
            g,
            cost,
            epsilon,
            z_star,
            radius,
            sign,
            source_mass,
            target_mass,
            row_ptr,
            cols,
            costs,
            distances,
            col_ptr,
            col_rows,
            col_costs,
        })
    }

    /// The same problem at another regularization strength.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::BadParam(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, ..self.clone() })
    }

    pub fn grid(&self) -> &SphereGrid {
        self.f.grid()
    }

    pub fn f(&self) -> &DensityField {
        &self.f
    }

    pub fn g(&self) -> &DensityField {
        &self.g
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn z_star(&self) -> f64 {
        self.z_star
    }

    /// Admissible distances are those strictly below this radius.
    pub fn mask_radius(&self) -> f64 {
        self.radius
    }

    /// Transport direction sign; the solver minimizes `sign · c`.
    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn admissible_pairs(&self) -> usize {
        self.cols.len()
    }

    /// Admissible columns of row `i`.
    pub fn mask_row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn is_admissible(&self, i: usize, j: usize) -> bool {
        self.mask_row(i).binary_search(&(j as u32)).is_ok()
    }

    /// Largest single-node Hall deficit: the mass of a node beyond the total
    /// mass of its admissible partners. Positive means no coupling supported
    /// on the mask has the prescribed marginals.
    pub fn hall_deficit(&self) -> (f64, String) {
        let (mu, nu) = (&self.source_mass, &self.target_mass);
        let mut worst = (f64::NEG_INFINITY, String::new());
        for (i, &m) in mu.iter().enumerate() {
            let reach: f64 = self.mask_row(i).iter().map(|&j| nu[j as usize]).sum();
            if m - reach > worst.0 {
                worst = (m - reach, format!("source node {i} holds {m:e} but its admissible targets hold {reach:e}"));
            }
        }
        for (j, &m) in nu.iter().enumerate() {
            let reach: f64 = self.col_rows[self.col_ptr[j]..self.col_ptr[j + 1]].iter().map(|&i| mu[i as usize]).sum();
            if m - reach > worst.0 {
                worst = (m - reach, format!("target node {j} holds {m:e} but its admissible sources hold {reach:e}"));
            }
        }
        worst
    }

    /// Mean admissible cost above the zero-distance cost; the natural unit
    /// for choosing epsilon.
    pub fn mean_cost(&self) -> f64 {
        let base = self.sign * self.cost.cost_at_distance(0.0);
        self.costs.iter().map(|c| c - base).sum::<f64>() / self.costs.len() as f64
    }
}

/// Sparse coupling on the admissible pairs (CSR).
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub values: Vec<f64>,
}

impl Coupling {
    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, values) = self.row(i);
        cols.binary_search(&(j as u32)).map(|k| values[k]).unwrap_or(0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows()];
        for (j, v) in self.cols.iter().zip(&self.values) {
            sums[*j as usize] += v;
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub epsilon: f64,
    pub marginal_error: f64,
}

/// Result of [`solve_entropic`]. `coupling[i][j] = μᵢ νⱼ exp((uᵢ + vⱼ − σcᵢⱼ)/ε)`
/// with μ, ν the node masses and σ the transport sign.
#[derive(Clone)]
pub struct TransportPlan {
    pub coupling: Coupling,
    pub u_potential: Vec<f64>,
    pub v_potential: Vec<f64>,
    /// Larger of the L1 row and column marginal errors.
    pub marginal_error: f64,
    pub max_transport_distance: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub convergence: Vec<ConvergenceRecord>,
}

impl fmt::Debug for TransportPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportPlan")
            .field("nodes", &self.u_potential.len())
            .field("admissible_pairs", &self.coupling.values.len())
            .field("marginal_error", &self.marginal_error)
            .field("max_transport_distance", &self.max_transport_distance)
            .field("iterations", &self.iterations)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl TransportPlan {
    /// The same plan with `shift` added to the source potential and
    /// subtracted from the target potential.
    pub fn gauge_shifted(&self, shift: f64) -> Self {
        let mut plan = self.clone();
        plan.u_potential.iter_mut().for_each(|u| *u += shift);
        plan.v_potential.iter_mut().for_each(|v| *v -= shift);
        plan
    }
}

struct Side<'a> {
    ptr: &'a [usize],
    idx: &'a [u32],
    costs: &'a [f64],
}

/// One half-step: `out[i] = −ε log Σⱼ νⱼ exp((other[j] − C[i][j])/ε)` with a
/// streaming log-sum-exp. Rows with no massive admissible partner keep their
/// previous value.
fn half_step(side: &Side<'_>, other: &[f64], other_log_mass: &[f64], eps: f64, out: &mut [f64]) {
    let inv = 1.0 / eps;
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
        for k in side.ptr[i]..side.ptr[i + 1] {
            let j = side.idx[k] as usize;
            let lm = other_log_mass[j];
            if lm == f64::NEG_INFINITY {
                continue;
            }
            let t = lm + (other[j] - side.costs[k]) * inv;
            if t <= m {
                s += (t - m).exp();
            } else {
                s = s * (m - t).exp() + 1.0;
                m = t;
            }
        }
        if m > f64::NEG_INFINITY {
            *o = -eps * (m + s.ln());
        }
    });
}

fn ln_masses(m: &[f64]) -> Vec<f64> {
    m.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

/// Log-domain Sinkhorn on the masked kernel, with epsilon-scaling from the
/// problem's cost scale down to its epsilon and over-relaxation at the final
/// epsilon (factor from the observed plain contraction rate). Stops when the
/// L1 marginal error drops below `tol` or after `max_iters` sweeps in total.
pub fn solve_entropic(problem: &TransportProblem, max_iters: usize, tol: f64) -> Result<TransportPlan> {
    let (deficit, detail) = problem.hall_deficit();
    if deficit > DEFICIT_TOL {
        return Err(Error::InfeasibleMask(detail));
    }
    let n = problem.source_mass.len();
    let target_eps = problem.epsilon;
    let mut schedule = Vec::new();
    let mut e = target_eps;
    let start = 0.25 * problem.mean_cost();
    while e < start {
        schedule.push(e);
        e *= 2.0;
    }
    schedule.reverse();
    if schedule.last() != Some(&target_eps) {
        schedule.push(target_eps);
    }

    let rows = Side {
        ptr: &problem.row_ptr,
        idx: &problem.cols,
        costs: &problem.costs,
    };
    let cols = Side {
        ptr: &problem.col_ptr,
        idx: &problem.col_rows,
        costs: &problem.col_costs,
    };
    let log_mu = ln_masses(&problem.source_mass);
    let log_nu = ln_masses(&problem.target_mass);
    let mu = &problem.source_mass;
    // L1 row error of (u, v) given the row update computed from v; exact
    // column marginals are assumed.
    let row_error = |u: &[f64], fresh: &[f64], eps: f64| -> f64 {
        (0..n)
            .map(|i| if mu[i] > 0.0 { mu[i] * ((u[i] - fresh[i]) / eps).exp_m1().abs() } else { 0.0 })
            .sum()
    };

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut fresh = vec![0.0; n];
    half_step(&cols, &u, &log_mu, schedule[0], &mut v);

    let mut log = Vec::new();
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;

    'stages: for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let stage_tol = if last { tol } else { STAGE_TOL.max(tol) };
        let mut stage_iters = 0;
        let mut history: Vec<f64> = Vec::new();
        let mut omega = 1.0;
        loop {
            if iterations >= max_iters {
                break 'stages;
            }
            // Plain sweep: (u, v) has exact columns, so the fresh row update
            // measures its full marginal error.
            half_step(&rows, &v, &log_nu, eps, &mut fresh);
            let err = row_error(&u, &fresh, eps);
            log.push(ConvergenceRecord {
                iteration: iterations,
                epsilon: eps,
                marginal_error: err,
            });
            if last && best.as_ref().is_none_or(|b| err < b.0) {
                best = Some((err, u.clone(), v.clone()));
            }
            if err < stage_tol {
                if last {
                    converged = true;
                }
                break;
            }
            if !last && stage_iters >= STAGE_MAX_ITERS {
                break;
            }
            std::mem::swap(&mut u, &mut fresh);
            half_step(&cols, &u, &log_mu, eps, &mut v);
            iterations += 1;
            stage_iters += 1;
            history.push(err);
            if !last || history.len() < RELAX_PROBE {
                continue;
            }
            // Relaxed sweeps between plain ones, ω adapted to the plain
            // contraction rate and backed off if the error grows.
            let k = history.len();
            if omega == 1.0 && k == RELAX_PROBE {
                let rate = (history[k - 1] / history[k - 1 - RELAX_WINDOW]).powf(1.0 / RELAX_WINDOW as f64);
                if rate < 1.0 {
                    omega = (2.0 / (1.0 + (1.0 - rate).sqrt())).min(MAX_RELAXATION);
                }
            } else if k > RELAX_PROBE && history[k - 1] > history[k - 2] {
                omega = 1.0 + 0.5 * (omega - 1.0);
            }
            if omega > 1.0 {
                for _ in 0..RELAX_SWEEPS {
                    if iterations >= max_iters {
                        break;
                    }
                    half_step(&rows, &v, &log_nu, eps, &mut fresh);
                    u.iter_mut().zip(&fresh).for_each(|(a, b)| *a += omega * (b - *a));
                    half_step(&cols, &u, &log_mu, eps, &mut fresh);
                    v.iter_mut().zip(&fresh).for_each(|(a, b)| *a += omega * (b - *a));
                    iterations += 1;
                }
                // Restore exact columns before the next measurement.
                half_step(&cols, &u, &log_mu, eps, &mut v);
            }
        }
    }

    if converged {
        return Ok(assemble_plan(problem, u, v, iterations, log));
    }
    let (_, bu, bv) = best.unwrap_or((f64::INFINITY, u, v));
    let plan = assemble_plan(problem, bu, bv, iterations, log);
    Err(Error::NotConverged {
        marginal_error: plan.marginal_error,
        iterations,
        best: Box::new(plan),
    })
}

fn assemble_plan(problem: &TransportProblem, u: Vec<f64>, v: Vec<f64>, iterations: usize, convergence: Vec<ConvergenceRecord>) -> TransportPlan {
    let eps = problem.epsilon;
    let (mu, nu) = (&problem.source_mass, &problem.target_mass);
    let n = mu.len();
    let per_row: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = problem.row_ptr[i]..problem.row_ptr[i + 1];
            let vals: Vec<f64> = r
                .clone()
                .map(|k| {
                    let j = problem.cols[k] as usize;
                    if mu[i] > 0.0 && nu[j] > 0.0 {
                        mu[i] * nu[j] * ((u[i] + v[j] - problem.costs[k]) / eps).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let row_mass: f64 = vals.iter().sum();
            let mut by_distance: Vec<(f64, f64)> = r.map(|k| problem.distances[k]).zip(vals.iter().copied()).collect();
            by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            let mut reach = 0.0;
            for (d, p) in by_distance {
                if acc >= (1.0 - TAIL_FRACTION) * row_mass {
                    break;
                }
                acc += p;
                reach = d;
            }
            (vals, reach)
        })
        .collect();
    let mut values = Vec::with_capacity(problem.cols.len());
    let mut max_transport_distance: f64 = 0.0;
    for (vals, reach) in per_row {
        values.extend(vals);
        max_transport_distance = max_transport_distance.max(reach);
    }
    let coupling = Coupling {
        row_ptr: problem.row_ptr.clone(),
        cols: problem.cols.clone(),
        values,
    };
    let row_err: f64 = coupling.row_sums().iter().zip(mu).map(|(a, b)| (a - b).abs()).sum();
    let col_err: f64 = coupling.col_sums().iter().zip(nu).map(|(a, b)| (a - b).abs()).sum();
    TransportPlan {
        coupling,
        u_potential: u,
        v_potential: v,
        marginal_error: row_err.max(col_err),
        max_transport_distance,
        iterations,
        epsilon: eps,
        convergence,
    }
}

#[derive(Clone, Debug)]
pub struct MapRecovery {
    pub targets: Vec<SpherePoint>,
    /// Coupling-weighted RMS geodesic deviation of each row from its target.
    pub spread: Vec<f64>,
}

/// Barycentric projection of the plan: each source node is sent to the
/// exponential of the coupling-weighted mean of its targets' log-map images.
pub fn recover_map(plan: &TransportPlan, problem: &TransportProblem) -> MapRecovery {
    let nodes = problem.grid().nodes();
    let (targets, spread) = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let x = nodes[i];
            let (cols, vals) = plan.coupling.row(i);
            let mass: f64 = vals.iter().sum();
            if !(mass > 0.0) {
                return (x, 0.0);
            }
            let logs: Vec<Vec3> = cols.iter().map(|&j| log_map(&x, &nodes[j as usize])).collect();
            let mean = logs.iter().zip(vals).fold(Vec3::zeros(), |acc, (l, w)| acc + l * *w) / mass;
            let var = logs.iter().zip(vals).map(|(l, w)| w * (l - mean).norm_squared()).sum::<f64>() / mass;
            (exp_map_ambient(&x, &mean), var.sqrt())
        })
        .unzip();
    MapRecovery { targets, spread }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LensVariant {
    I,
    II,
}

impl FromStr for LensVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "1" => Ok(Self::I),
            "II" | "ii" | "2" => Ok(Self::II),
            other => Err(Error::BadParam(format!("unknown lens variant `{other}`"))),
        }
    }
}

impl fmt::Display for LensVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::I => "I",
            Self::II => "II",
        })
    }
}

/// Radial profile of the outer lens surface, `u₁ = e^{u}` (I) or `e^{−u}` (II).
#[derive(Clone, Debug, PartialEq)]
pub struct LensShape {
    pub u1: Vec<f64>,
    pub variant: LensVariant,
}

impl LensShape {
    pub fn from_potential(u: &[f64], variant: LensVariant) -> Self {
        let u1 = match variant {
            LensVariant::I => u.iter().map(|v| v.exp()).collect(),
            LensVariant::II => u.iter().map(|v| (-v).exp()).collect(),
        };
        Self { u1, variant }
    }

    /// The potential the shape encodes.
    pub fn potential(&self) -> Vec<f64> {
        match self.variant {
            LensVariant::I => self.u1.iter().map(|v| v.ln()).collect(),
            LensVariant::II => self.u1.iter().map(|v| -v.ln()).collect(),
        }
    }
}

/// Potential `u = −σ·u_potential` with `∇u = −∇ₓc(x, T(x))`, shifted to
/// area-weighted mean `gauge`.
pub fn recover_potential(plan: &TransportPlan, problem: &TransportProblem, gauge: f64) -> Vec<f64> {
    let w = problem.grid().weights();
    let mut u: Vec<f64> = plan.u_potential.iter().map(|p| -problem.sign * p).collect();
    let mean = u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    u.iter_mut().for_each(|a| *a += gauge - mean);
    u
}

pub fn recover_lens(plan: &TransportPlan, problem: &TransportProblem, variant: LensVariant, gauge: f64) -> LensShape {
    LensShape::from_potential(&recover_potential(plan, problem, gauge), variant)
}

/// Transport map implied by the surface gradient of `u`.
pub fn gradient_map(u: &[f64], problem: &TransportProblem) -> Result<Vec<SpherePoint>> {
    let beta = BetaFunction::new(problem.cost())?;
    let grid = problem.grid();
    let index = grid.neighbor_index();
    (0..grid.len())
        .map(|i| {
            let x = grid.nodes()[i];
            let grad = any_frame(&x).to_ambient(&surface_gradient(grid, &index, u, i));
            transport_map_ambient(&beta, &x, &grad)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PdeResidual {
    pub median: f64,
    pub p90: f64,
    /// Fraction of evaluated nodes where `σ(D²u + D²ₓₓc)` is positive
    /// semi-definite, i.e. where `u` is locally c-convex.
    pub convex_fraction: f64,
    pub evaluated: usize,
    /// Nodes whose gradient left the admissible range.
    pub skipped: usize,
    #[serde(skip)]
    pub per_node: Vec<Option<f64>>,
}

const HESSIAN_NEIGHBORS: usize = 12;

/// Gradient and Hessian of nodal `values` at node `i` by a least-squares
/// quadratic in normal coordinates, where the Riemannian and coordinate
/// Hessians coincide at the base point.
fn local_quadratic(grid: &SphereGrid, index: &crate::sphere::NeighborIndex<'_>, values: &[f64], i: usize) -> (Vector2<f64>, Matrix2<f64>) {
    let x = grid.nodes()[i];
    let frame = any_frame(&x);
    let mut k = HESSIAN_NEIGHBORS + 1;
    loop {
        let mut normal = SMatrix::<f64, 5, 5>::zeros();
        let mut rhs = SVector::<f64, 5>::zeros();
        for j in index.nearest(&x, k) {
            if j == i {
                continue;
            }
            let xi = frame.to_components(&log_map(&x, &grid.nodes()[j]));
            let row = SVector::<f64, 5>::new(xi.x, xi.y, 0.5 * xi.x * xi.x, xi.x * xi.y, 0.5 * xi.y * xi.y);
            normal += row * row.transpose();
            rhs += row * (values[j] - values[i]);
        }
        if let Some(c) = normal.cholesky() {
            let s = c.solve(&rhs);
            return (Vector2::new(s[0], s[1]), Matrix2::new(s[2], s[3], s[3], s[4]));
        }
        if k > 8 * HESSIAN_NEIGHBORS {
            return (Vector2::zeros(), Matrix2::zeros());
        }
        k *= 2;
    }
}

/// Both sides of `det(D²u + D²ₓₓc) = |D²ₓᵧc| f/g(T)` at every node, with
/// `T` taken from the gradient of `u`; reports relative residual statistics.
pub fn verify_pde_residual(lens: &LensShape, problem: &TransportProblem) -> Result<PdeResidual> {
    let beta = BetaFunction::new(problem.cost())?;
    let cost = problem.cost();
    let grid = problem.grid();
    let index = grid.neighbor_index();
    let u = lens.potential();
    let (f, g) = (problem.f().values(), problem.g().values());
    let sign = problem.sign();
    let per_node: Vec<Option<(f64, bool)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.nodes()[i];
            let frame = any_frame(&x);
            let (grad, hess_u) = local_quadratic(grid, &index, &u, i);
            let r = grad.norm();
            if r >= beta.r_limit() {
                return None;
            }
            let t = transport_map_ambient(&beta, &x, &frame.to_ambient(&grad)).ok()?;
            let d = geodesic_distance(&x, &t);
            let jet = cost.radial(d);
            let hess_c = if d < 1e-8 {
                Matrix2::identity() * cost.radial(0.0).d2
            } else {
                let dir = frame.to_components(&log_map(&x, &t)) / d;
                let radial = dir * dir.transpose();
                radial * jet.d2 + (Matrix2::identity() - radial) * (jet.d1 / d.tan())
            };
            let total = hess_u + hess_c;
            let lhs = total.determinant();
            let mixed = mixed_hessian_sphere(&beta, r).ok()?.via_identity;
            let j0 = index.nearest(&t, 1)[0];
            let y0 = grid.nodes()[j0];
            let g_grad = surface_gradient(grid, &index, g, j0);
            let g_t = g[j0] + g_grad.dot(&any_frame(&y0).to_components(&log_map(&y0, &t)));
            let rhs = mixed * f[i] / g_t;
            let eig = (total * sign).symmetric_eigenvalues();
            let scale = total.norm().max(f64::MIN_POSITIVE);
            let convex = eig.iter().all(|e| *e >= -1e-8 * scale);
            Some(((lhs - rhs).abs() / rhs.abs(), convex))
        })
        .collect();
    let mut residuals: Vec<f64> = per_node.iter().flatten().map(|(r, _)| *r).collect();
    let evaluated = residuals.len();
    let convex = per_node.iter().flatten().filter(|(_, c)| *c).count();
    residuals.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        if residuals.is_empty() {
            f64::NAN
        } else {
            residuals[((q * (evaluated - 1) as f64).round() as usize).min(evaluated - 1)]
        }
    };
    Ok(PdeResidual {
        median: quantile(0.5),
        p90: quantile(0.9),
        convex_fraction: if evaluated == 0 { 0.0 } else { convex as f64 / evaluated as f64 },
        evaluated,
        skipped: grid.len() - evaluated,
        per_node: per_node.into_iter().map(|p| p.map(|(r, _)| r)).collect(),
    })
}
