//! Monotonic paths of product operators inside a zonotope.
//!
//! The search is a continuation in the trace parameter `s`, starting at the
//! identity. Each step changes a single party's factor and lowers every
//! zonotope coefficient weakly, which keeps the path piecewise local and makes
//! the trace-norm gap between consecutive points exactly the trace drop.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LoccError, Result};
use crate::factorize::{nearest_product, FactorizationOptions};
use crate::operator::{tensor_unchecked, unrealify, HermitianOperator, LocalOp, PSD_TOL};
use crate::random::task_rng;
use crate::sampling::{descend_bounded, descend_to_product, SampleFilter};
use crate::solver::{LinearProgram, LpOutcome};
use crate::zonotope::{Zonotope, MEMBERSHIP_TOL};

const JOINT_ITERS: usize = 60;

pub const DEFAULT_PRODUCT_TOL: f64 = 1e-8;
pub const DEFAULT_ENDPOINT_TOL: f64 = 1e-8;
const PROPORTIONAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct PathPoint {
    pub s: f64,
    pub coefficients: Vec<f64>,
    pub operator: HermitianOperator,
    pub product_residual: f64,
}

impl PathPoint {
    /// Builds the point `sum c_j E_j` with trace parameter equal to its trace.
    pub fn from_coefficients(z: &Zonotope, coefficients: Vec<f64>) -> Self {
        let operator = z.point(&coefficients);
        let product_residual = nearest_product(&operator, &FactorizationOptions::default()).residual;
        Self {
            s: operator.trace(),
            coefficients,
            operator,
            product_residual,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorPath {
    /// Index of the generator whose segment `(0, E]` the path ends on.
    pub target: usize,
    /// `q` with final operator close to `q E`.
    pub endpoint_scale: f64,
    /// Largest admissible trace-norm gap between consecutive points.
    pub step_cap: f64,
    pub points: Vec<PathPoint>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathSearchOptions {
    /// Decrease of `s` per step; `None` means `D / 200`.
    pub s_step: Option<f64>,
    /// `None` means four times the step.
    pub step_cap: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub product_tol: f64,
    pub membership_tol: f64,
    pub endpoint_tol: f64,
    /// Steps without progress before a restart is declared stalled.
    pub patience: usize,
    /// Local-descent probes around each stall point.
    pub stall_samples: usize,
}

impl Default for PathSearchOptions {
    fn default() -> Self {
        Self {
            s_step: None,
            step_cap: None,
            restarts: 4,
            seed: 0,
            product_tol: DEFAULT_PRODUCT_TOL,
            membership_tol: MEMBERSHIP_TOL,
            endpoint_tol: DEFAULT_ENDPOINT_TOL,
            patience: 10,
            stall_samples: 64,
        }
    }
}

/// Heuristic evidence that no path exists: every restart stalled.
#[derive(Clone, Debug, Serialize)]
pub struct ObstructionReport {
    pub target: usize,
    /// `s` at the last step of each restart that still made progress.
    pub lowest_s_per_restart: Vec<f64>,
    /// Smallest trace-norm distance from any point of each restart to `[0, E]`.
    pub closest_approach_per_restart: Vec<f64>,
    /// Smallest trace-norm distance from any point of each restart to the
    /// segment of any outcome.
    pub closest_any_outcome_per_restart: Vec<f64>,
    /// Product points found by local descent around each stall point.
    pub stall_neighborhood_hits: Vec<usize>,
    pub stall_neighborhood_samples: usize,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PathSearchOutcome {
    Found(OperatorPath),
    Obstructed(ObstructionReport),
}

impl PathSearchOutcome {
    pub fn path(&self) -> Option<&OperatorPath> {
        match self {
            PathSearchOutcome::Found(p) => Some(p),
            PathSearchOutcome::Obstructed(_) => None,
        }
    }

    pub fn obstruction(&self) -> Option<&ObstructionReport> {
        match self {
            PathSearchOutcome::Found(_) => None,
            PathSearchOutcome::Obstructed(o) => Some(o),
        }
    }
}

/// Index of the generator proportional to `target`.
pub fn resolve_target(z: &Zonotope, target: &HermitianOperator) -> Result<usize> {
    let tn = target.frobenius_norm();
    if tn == 0.0 {
        return Err(LoccError::TargetNotGenerator);
    }
    z.generators()
        .iter()
        .position(|g| {
            let gn = g.frobenius_norm();
            gn > 0.0 && (&g.scaled(1.0 / gn) - &target.scaled(1.0 / tn)).frobenius_norm() <= PROPORTIONAL_TOL
        })
        .ok_or(LoccError::TargetNotGenerator)
}

/// `min_{q in [0,1]} |X - q E|_1` and the minimiser.
pub fn segment_distance(x: &HermitianOperator, e: &HermitianOperator) -> (f64, f64) {
    golden_min(|q| (x - &e.scaled(q)).trace_norm(), 0.0, 1.0)
}

/// Golden-section minimisation of a convex function on `[lo, hi]`.
pub(crate) fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    let mut best = (f1, x1);
    for q in [lo, hi, x2] {
        let v = f(q);
        if v < best.0 {
            best = (v, q);
        }
    }
    best
}

pub fn find_monotonic_product_path(
    z: &Zonotope,
    target: &HermitianOperator,
    opts: &PathSearchOptions,
) -> Result<PathSearchOutcome> {
    let t = resolve_target(z, target)?;
    find_path_to_generator(z, t, opts)
}

pub fn find_path_to_generator(z: &Zonotope, t: usize, opts: &PathSearchOptions) -> Result<PathSearchOutcome> {
    if t >= z.len() || z.generators()[t].frobenius_norm() == 0.0 {
        return Err(LoccError::TargetNotGenerator);
    }
    let d = z.space().total_dim() as f64;
    let s_step = opts.s_step.unwrap_or(d / 200.0);
    let step_cap = opts.step_cap.unwrap_or(4.0 * s_step);
    if !(s_step > 0.0) || step_cap < s_step {
        return Err(LoccError::InvalidInput("need s_step > 0 and step_cap >= s_step".into()));
    }
    let problem = Continuation::new(z, t, s_step, opts);

    let runs: Vec<Run> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| problem.run(r as u64))
        .collect::<Result<_>>()?;

    if let Some(run) = runs.iter().find(|r| r.success) {
        let last = run.points.last().expect("nonempty run");
        return Ok(PathSearchOutcome::Found(OperatorPath {
            target: t,
            endpoint_scale: last.coefficients[t],
            step_cap,
            points: run.points.clone(),
        }));
    }

    let e = &z.generators()[t];
    let filter = SampleFilter {
        product_tol: opts.product_tol,
        membership_tol: opts.membership_tol,
        min_trace: 0.0,
    };
    let mut report = ObstructionReport {
        target: t,
        lowest_s_per_restart: Vec::new(),
        closest_approach_per_restart: Vec::new(),
        closest_any_outcome_per_restart: Vec::new(),
        stall_neighborhood_hits: Vec::new(),
        stall_neighborhood_samples: opts.stall_samples,
    };
    for (r, run) in runs.iter().enumerate() {
        let stall = &run.points[run.last_progress];
        report.lowest_s_per_restart.push(stall.s);
        let closest = run
            .points
            .iter()
            .map(|p| segment_distance(&p.operator, e).0)
            .fold(f64::INFINITY, f64::min);
        report.closest_approach_per_restart.push(closest);
        let closest_any = run
            .points
            .iter()
            .flat_map(|p| {
                z.generators()
                    .iter()
                    .filter(|g| g.frobenius_norm() > 0.0)
                    .map(|g| segment_distance(&p.operator, g).0)
            })
            .fold(f64::INFINITY, f64::min);
        report.closest_any_outcome_per_restart.push(closest_any);
        let hits = (0..opts.stall_samples)
            .into_par_iter()
            .filter(|&i| {
                let mut rng = task_rng(opts.seed ^ 0x5a11, (r * opts.stall_samples + i) as u64);
                let c: Vec<f64> = stall
                    .coefficients
                    .iter()
                    .map(|&c| (c + rng.gen_range(-0.05..=0.05)).clamp(0.0, 1.0))
                    .collect();
                descend_to_product(z, &c, &filter, 30).is_some()
            })
            .count();
        report.stall_neighborhood_hits.push(hits);
    }
    Ok(PathSearchOutcome::Obstructed(report))
}

struct Run {
    points: Vec<PathPoint>,
    last_progress: usize,
    success: bool,
}

/// Precomputed data shared by all restarts.
struct Continuation<'a> {
    z: &'a Zonotope,
    target: usize,
    s_step: f64,
    opts: &'a PathSearchOptions,
    traces: Vec<f64>,
    /// Real coordinates of every generator, one column each.
    gens: DMatrix<f64>,
}

impl<'a> Continuation<'a> {
    fn new(z: &'a Zonotope, target: usize, s_step: f64, opts: &'a PathSearchOptions) -> Self {
        let cols: Vec<DVector<f64>> = z.generators().iter().map(|g| g.realify()).collect();
        let gens = DMatrix::from_fn(z.space().real_dim(), cols.len(), |i, k| cols[k][i]);
        Self {
            z,
            target,
            s_step,
            opts,
            traces: z.generators().iter().map(|g| g.trace()).collect(),
            gens,
        }
    }

    fn nontarget_mass(&self, c: &[f64]) -> f64 {
        (0..c.len())
            .filter(|&k| k != self.target)
            .map(|k| c[k] * self.traces[k])
            .sum()
    }

    fn run(&self, restart: u64) -> Result<Run> {
        let space = self.z.space();
        let n = self.z.len();
        let mut rng = task_rng(self.opts.seed, restart);
        let weights: Vec<f64> = (0..n)
            .map(|_| if restart == 0 { 1.0 } else { 1.0 + 0.1 * rng.gen::<f64>() })
            .collect();
        let mut order: Vec<usize> = (0..space.parties()).collect();
        if restart > 0 {
            order.shuffle(&mut rng);
        }

        let mut factors: Vec<LocalOp> = space.dims().iter().map(|&d| LocalOp::identity(d, d)).collect();
        let mut c: Vec<f64> = self.traces.iter().map(|&tr| if tr > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut points = vec![self.point(c.clone())];
        let mut s = points[0].s;
        let mut best_ratio = self.nontarget_mass(&c) / s;
        let mut last_progress = 0;
        let mut stalled = 0;

        loop {
            let mass = self.nontarget_mass(&c);
            if mass <= self.opts.endpoint_tol && c[self.target] > 0.0 {
                return Ok(Run {
                    points,
                    last_progress,
                    success: true,
                });
            }
            let next_s = if mass < self.s_step { s - mass } else { s - self.s_step };
            if next_s <= 0.0 {
                break;
            }
            let ratio_now = mass / s;
            let mut best: Option<(f64, usize, LocalOp, Vec<f64>)> = None;
            for &p in &order {
                if let Some((obj, a, cn)) = self.step(&factors, p, &c, next_s, &weights)? {
                    if best.as_ref().is_none_or(|b| obj < b.0 - 1e-12) {
                        best = Some((obj, p, a, cn));
                    }
                }
            }
            let local_progress = best
                .as_ref()
                .is_some_and(|(_, _, _, cn)| self.nontarget_mass(cn) / next_s < ratio_now - 1e-9);
            let joint = if local_progress { None } else { self.joint_step(&c, next_s, ratio_now) };
            if let Some((cn, fs)) = joint {
                factors = fs;
                c = cn;
            } else {
                let Some((_, p, a, cn)) = best else { break };
                for (q, f) in factors.iter_mut().enumerate() {
                    if q != p {
                        let tr = f.trace().re;
                        *f = f.unscale(tr);
                    }
                }
                factors[p] = a;
                c = cn;
            }
            let point = self.point(c.clone());
            s = point.s;
            points.push(point);
            let ratio = self.nontarget_mass(&c) / s;
            if ratio < best_ratio - 1e-9 {
                best_ratio = ratio;
                last_progress = points.len() - 1;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= self.opts.patience {
                    break;
                }
            }
        }
        points.truncate(last_progress + 1);
        Ok(Run {
            points,
            last_progress,
            success: false,
        })
    }

    /// Step in which every party's factor may change at once. Used when no
    /// single-party step makes progress: the non-target coefficients are
    /// shrunk uniformly to the next trace, then pulled back onto the product
    /// cone by a descent that keeps `0 <= c' <= c` and the trace pinned.
    /// Accepted only if the result is product and the non-target share of
    /// the trace strictly drops.
    fn joint_step(&self, c: &[f64], next_s: f64, ratio_now: f64) -> Option<(Vec<f64>, Vec<LocalOp>)> {
        let mass = self.nontarget_mass(c);
        let s = mass + c[self.target] * self.traces[self.target];
        let drop = s - next_s;
        if mass <= 0.0 || drop <= 0.0 || drop > mass {
            return None;
        }
        let lambda = (mass - drop) / mass;
        let start: Vec<f64> = (0..c.len())
            .map(|k| if k == self.target { c[k] } else { c[k] * lambda })
            .collect();
        let lower = vec![0.0; c.len()];
        let filter = SampleFilter {
            product_tol: self.opts.product_tol,
            membership_tol: self.opts.membership_tol,
            min_trace: 0.0,
        };
        let p = descend_bounded(self.z, &start, &lower, c, Some(next_s), &filter, JOINT_ITERS)?;
        let cn = p.coefficients;
        if (p.s - next_s).abs() > self.s_step * 1e-6 || self.nontarget_mass(&cn) / p.s >= ratio_now - 1e-9 {
            return None;
        }
        let fac = nearest_product(&p.operator, &FactorizationOptions::default());
        let mut factors = fac.factors;
        factors[0] = factors[0].scale(fac.scale);
        Some((cn, factors))
    }

    fn point(&self, coefficients: Vec<f64>) -> PathPoint {
        PathPoint::from_coefficients(self.z, coefficients)
    }

    /// Exact LP for one step changing party `p`: find `A'` and coefficients
    /// `0 <= c' <= c` with `A' (x) rest = sum c'_k E_k` and trace `next_s`,
    /// minimising the weighted non-target mass.
    fn step(
        &self,
        factors: &[LocalOp],
        p: usize,
        c: &[f64],
        next_s: f64,
        weights: &[f64],
    ) -> Result<Option<(f64, LocalOp, Vec<f64>)>> {
        let space = self.z.space();
        let dp = space.dims()[p];
        let nf = dp * dp;
        let n = c.len();
        let d2 = space.real_dim();

        let mut rest: Vec<LocalOp> = factors
            .iter()
            .map(|f| {
                let tr = f.trace().re;
                f.unscale(tr)
            })
            .collect();
        let mut a_eq = DMatrix::<f64>::zeros(d2 + 1, nf + n);
        for i in 0..nf {
            let mut unit = vec![0.0; nf];
            unit[i] = 1.0;
            rest[p] = unrealify(dp, &unit);
            let col = tensor_unchecked(space, &rest).realify();
            a_eq.view_mut((0, i), (d2, 1)).copy_from(&col);
        }
        for k in 0..n {
            for i in 0..d2 {
                a_eq[(i, nf + k)] = -self.gens[(i, k)];
            }
            a_eq[(d2, nf + k)] = self.traces[k];
        }
        let mut b_eq = DVector::zeros(d2 + 1);
        b_eq[d2] = next_s;

        let mut objective = vec![0.0; nf + n];
        let mut lower = vec![f64::NEG_INFINITY; nf + n];
        let mut upper = vec![f64::INFINITY; nf + n];
        for k in 0..n {
            if k != self.target {
                objective[nf + k] = weights[k] * self.traces[k];
            }
            lower[nf + k] = 0.0;
            upper[nf + k] = c[k];
        }
        let lp = LinearProgram {
            objective,
            a_eq,
            b_eq,
            lower,
            upper,
        };
        match lp.solve()? {
            LpOutcome::Optimal { x, objective } => {
                let a = unrealify(dp, &x[..nf]);
                let cn: Vec<f64> = (0..n).map(|k| x[nf + k].clamp(0.0, c[k])).collect();
                Ok(Some((objective, a, cn)))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PathFlag {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathReport {
    pub points: usize,
    pub min_eigenvalue: f64,
    pub max_product_residual: f64,
    pub max_membership_residual: f64,
    pub trace_monotone: bool,
    pub max_step: f64,
    /// Largest `| |P(s) - P(s')|_1 - (s - s') |` over consecutive points
    /// whose trace equals their parameter.
    pub lipschitz_max_gap: f64,
    pub flags: Vec<PathFlag>,
    pub passed: bool,
}

/// Checks positivity, product form, membership, monotonicity, step size and
/// the Lipschitz equality for every point and consecutive pair.
pub fn verify_path(path: &OperatorPath, z: &Zonotope, tol: f64) -> PathReport {
    let pts = &path.points;
    let per_point: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .map(|p| {
            let min_eig = p.operator.min_eigenvalue();
            let prod = nearest_product(&p.operator, &FactorizationOptions::default()).residual;
            // the stored coefficients are a witness; fall back to a fresh solve
            let witness = (&p.operator - &z.point(&p.coefficients)).frobenius_norm();
            let in_box = p.coefficients.iter().all(|&c| (-tol..=1.0 + tol).contains(&c));
            let member = if in_box && witness <= tol {
                witness
            } else {
                z.contains(&p.operator, tol).map(|m| m.residual).unwrap_or(f64::INFINITY)
            };
            (min_eig, prod, member)
        })
        .collect();

    let mut flags = Vec::new();
    let mut flag = |index: usize, reason: String| flags.push(PathFlag { index, reason });
    for (i, &(min_eig, prod, member)) in per_point.iter().enumerate() {
        if min_eig < -PSD_TOL.max(tol) {
            flag(i, format!("not PSD (min eigenvalue {min_eig:e})"));
        }
        if prod > tol {
            flag(i, format!("not a product operator (residual {prod:e})"));
        }
        if member > tol {
            flag(i, format!("outside the zonotope (residual {member:e})"));
        }
    }

    let on_monotone = |p: &PathPoint| (p.operator.trace() - p.s).abs() <= tol.max(1e-12 * p.s.abs());
    let mut trace_monotone = true;
    let mut max_step: f64 = 0.0;
    let mut lipschitz_max_gap: f64 = 0.0;
    for i in 1..pts.len() {
        let (a, b) = (&pts[i - 1], &pts[i]);
        if b.s > a.s + tol || b.operator.trace() > a.operator.trace() + tol {
            trace_monotone = false;
            flag(i, "trace or parameter increases".into());
        }
        let gap = (&a.operator - &b.operator).trace_norm();
        max_step = max_step.max(gap);
        if gap > path.step_cap + tol {
            flag(i, format!("step {gap:e} exceeds cap {:e}", path.step_cap));
        }
        let ds = a.s - b.s;
        if on_monotone(a) && on_monotone(b) {
            let dev = (gap - ds).abs();
            lipschitz_max_gap = lipschitz_max_gap.max(dev);
            if dev > tol {
                flag(i, format!("Lipschitz equality off by {dev:e}"));
            }
        } else if gap > ds + tol {
            flag(i, format!("Lipschitz bound violated by {:e}", gap - ds));
        }
    }

    PathReport {
        points: pts.len(),
        min_eigenvalue: per_point.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        max_product_residual: per_point.iter().map(|p| p.1).fold(0.0, f64::max),
        max_membership_residual: per_point.iter().map(|p| p.2).fold(0.0, f64::max),
        trace_monotone,
        max_step,
        lipschitz_max_gap,
        passed: flags.is_empty() && !pts.is_empty(),
        flags,
    }
}

/// For each consecutive pair, the parties whose normalised product factor
/// changed by more than `tol`.
pub fn changed_parties(path: &OperatorPath, tol: f64) -> Vec<Vec<usize>> {
    let factors: Vec<Vec<LocalOp>> = path
        .points
        .par_iter()
        .map(|p| nearest_product(&p.operator, &FactorizationOptions::default()).factors)
        .collect();
    factors
        .windows(2)
        .map(|w| {
            (0..w[0].len())
                .filter(|&q| (&w[0][q] - &w[1][q]).norm() > tol)
                .collect()
        })
        .collect()
}
