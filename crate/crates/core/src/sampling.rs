//! Sampling the intersection of a zonotope with the product operators.
//!
//! Strategies implement [`ProductSampler`] and are looked up by name in a
//! [`SamplerRegistry`]; a sampling run interleaves the selected strategies
//! over task indices so results do not depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LoccError, Result};
use crate::factorize::{nearest_product, FactorizationOptions};
use crate::operator::{tensor_unchecked, unrealify, LocalOp};
use crate::path::PathPoint;
use crate::random::{ginibre, random_psd, task_rng};
use crate::solver::BoxLeastSquares;
use crate::zonotope::Zonotope;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleFilter {
    pub product_tol: f64,
    pub membership_tol: f64,
    /// Points with smaller trace are discarded (they crowd around 0).
    pub min_trace: f64,
}

impl Default for SampleFilter {
    fn default() -> Self {
        Self {
            product_tol: 1e-8,
            membership_tol: 1e-8,
            min_trace: 1e-3,
        }
    }
}

pub trait ProductSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// One attempt; `None` when nothing acceptable was found.
    fn draw(&self, z: &Zonotope, filter: &SampleFilter, rng: &mut ChaCha8Rng) -> Option<PathPoint>;
}

/// Random product direction scaled as far into the zonotope as it goes.
pub struct ProductDirections;

/// Sparse random coefficient vector, kept if its point is already product.
pub struct CoefficientDraws;

/// Sparse random coefficient vector pulled onto the product set by
/// box-constrained Gauss-Newton steps.
pub struct LocalDescent {
    pub max_iters: usize,
}

impl Default for LocalDescent {
    fn default() -> Self {
        Self { max_iters: 30 }
    }
}

impl ProductSampler for ProductDirections {
    fn name(&self) -> &'static str {
        "product-directions"
    }

    fn draw(&self, z: &Zonotope, filter: &SampleFilter, rng: &mut ChaCha8Rng) -> Option<PathPoint> {
        let space = z.space();
        let factors: Vec<LocalOp> = space.dims().iter().map(|&d| random_factor(d, rng)).collect();
        let dir = tensor_unchecked(space, &factors);
        let tr = dir.trace();
        if tr <= 0.0 {
            return None;
        }
        let inside = |t: f64| {
            z.contains(&dir.scaled(t), filter.membership_tol)
                .map(|m| m.feasible)
                .unwrap_or(false)
        };
        let (mut lo, mut hi) = (0.0, space.total_dim() as f64 / tr);
        if inside(hi) {
            lo = hi;
        } else {
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let x = dir.scaled(lo);
        if x.trace() < filter.min_trace {
            return None;
        }
        let m = z.contains(&x, filter.membership_tol).ok()?;
        let point = PathPoint::from_coefficients(z, m.coefficients);
        accept(point, filter)
    }
}

impl ProductSampler for CoefficientDraws {
    fn name(&self) -> &'static str {
        "coefficient-draws"
    }

    fn draw(&self, z: &Zonotope, filter: &SampleFilter, rng: &mut ChaCha8Rng) -> Option<PathPoint> {
        let c = sparse_coefficients(z.len(), rng);
        accept(PathPoint::from_coefficients(z, c), filter)
    }
}

impl ProductSampler for LocalDescent {
    fn name(&self) -> &'static str {
        "local-descent"
    }

    fn draw(&self, z: &Zonotope, filter: &SampleFilter, rng: &mut ChaCha8Rng) -> Option<PathPoint> {
        let c = sparse_coefficients(z.len(), rng);
        descend_to_product(z, &c, filter, self.max_iters)
    }
}

fn accept(point: PathPoint, filter: &SampleFilter) -> Option<PathPoint> {
    (point.product_residual <= filter.product_tol && point.s >= filter.min_trace).then_some(point)
}

/// Each coefficient is 0 or 1 with probability 1/4 apiece, else uniform.
fn sparse_coefficients(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        })
        .collect()
}

/// Full-rank, rank-one, or basis-diagonal PSD factor with equal odds.
fn random_factor(d: usize, rng: &mut ChaCha8Rng) -> LocalOp {
    match rng.gen_range(0..3) {
        0 => random_psd(d, rng),
        1 => {
            let v = ginibre(d, 1, rng);
            &v * v.adjoint()
        }
        _ => LocalOp::from_diagonal(&DVector::from_fn(d, |_, _| {
            crate::operator::C64::new(rng.gen_range(0.0..1.0), 0.0)
        })),
    }
}

/// Gauss-Newton on the coefficients, minimising the distance from
/// `sum c_j E_j` to the nearest product operator with `c` kept in the unit
/// box and the trace held at that of the start (otherwise every run slides
/// into the apex `0` of the product cone). Returns the final point if it
/// meets the filter.
pub fn descend_to_product(z: &Zonotope, start: &[f64], filter: &SampleFilter, max_iters: usize) -> Option<PathPoint> {
    let lower = vec![0.0; start.len()];
    let upper = vec![1.0; start.len()];
    let trace = z.point(start).trace();
    descend_bounded(z, start, &lower, &upper, Some(trace), filter, max_iters)
}

/// As [`descend_to_product`] with explicit coefficient bounds and an optional
/// trace to hold (weighted as a penalty row in every step).
pub fn descend_bounded(
    z: &Zonotope,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    trace: Option<f64>,
    filter: &SampleFilter,
    max_iters: usize,
) -> Option<PathPoint> {
    let space = z.space();
    let n = z.len();
    let d2 = space.real_dim();
    let gens: Vec<DVector<f64>> = z.generators().iter().map(|g| g.realify()).collect();
    let g = DMatrix::from_fn(d2, n, |i, k| gens[k][i]);
    let traces: Vec<f64> = z.generators().iter().map(|g| g.trace()).collect();
    let opts = FactorizationOptions::default();
    let merit = |x: &crate::operator::HermitianOperator, res: f64| match trace {
        Some(tr) => res.hypot(TRACE_WEIGHT * (x.trace() - tr)),
        None => res,
    };

    let mut c = start.to_vec();
    let mut x = z.point(&c);
    let mut fac = nearest_product(&x, &opts);
    for _ in 0..max_iters {
        if merit(&x, fac.residual) <= 0.01 * filter.product_tol || fac.scale == 0.0 {
            break;
        }
        let r = x.realify() - fac.product(space).realify();
        let basis = tangent_basis(space, &fac.factors);
        let mut j = &g - &basis * (basis.transpose() * &g);
        let mut rhs = -&r;
        if let Some(tr) = trace {
            j = j.insert_row(d2, 0.0);
            rhs = rhs.insert_row(d2, TRACE_WEIGHT * (tr - x.trace()));
            for k in 0..n {
                j[(d2, k)] = TRACE_WEIGHT * traces[k];
            }
        }
        let lo: Vec<f64> = (0..n).map(|k| lower[k] - c[k]).collect();
        let hi: Vec<f64> = (0..n).map(|k| upper[k] - c[k]).collect();
        let delta = BoxLeastSquares::new(j).solve(&rhs, &lo, &hi).x;

        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let trial: Vec<f64> = (0..n).map(|k| (c[k] + t * delta[k]).clamp(lower[k], upper[k])).collect();
            let xt = z.point(&trial);
            let ft = nearest_product(&xt, &opts);
            if merit(&xt, ft.residual) < merit(&x, fac.residual) {
                c = trial;
                x = xt;
                fac = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let point = PathPoint {
        s: x.trace(),
        coefficients: c,
        product_residual: fac.residual,
        operator: x,
    };
    accept(point, filter)
}

/// Orthonormal basis (columns, real coordinates) of the tangent space of the
/// product operators at `A_1 (x) .. (x) A_P`.
fn tangent_basis(space: &crate::operator::PartitionedSpace, factors: &[LocalOp]) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut work = factors.to_vec();
    for (p, &dp) in space.dims().iter().enumerate() {
        for i in 0..dp * dp {
            let mut unit = vec![0.0; dp * dp];
            unit[i] = 1.0;
            work[p] = unrealify(dp, &unit);
            cols.push(tensor_unchecked(space, &work).realify());
        }
        work[p] = factors[p].clone();
    }
    let m = DMatrix::from_fn(space.real_dim(), cols.len(), |i, k| cols[k][i]);
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-10 * smax)
        .collect();
    DMatrix::from_fn(u.nrows(), keep.len(), |i, k| u[(i, keep[k])])
}

/// Named strategies, selected at run time.
pub struct SamplerRegistry {
    entries: Vec<Box<dyn ProductSampler>>,
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register(Box::new(ProductDirections));
        r.register(Box::new(CoefficientDraws));
        r.register(Box::new(LocalDescent::default()));
        r
    }
}

impl SamplerRegistry {
    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, sampler: Box<dyn ProductSampler>) {
        self.entries.retain(|s| s.name() != sampler.name());
        self.entries.push(sampler);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ProductSampler> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| LoccError::InvalidInput(format!("unknown sampler `{name}`")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }

    pub fn select(&self, names: &[&str]) -> Result<Vec<&dyn ProductSampler>> {
        names.iter().map(|n| self.get(n)).collect()
    }
}

const TRACE_WEIGHT: f64 = 10.0;

pub const DEFAULT_STRATEGIES: [&str; 2] = ["product-directions", "coefficient-draws"];

/// `n` attempts, attempt `i` using strategy `i mod k` with its own random
/// stream. Accepted points are deduplicated (Frobenius distance 1e-10).
pub fn sample_products_in_zonotope(
    z: &Zonotope,
    n: usize,
    seed: u64,
    filter: &SampleFilter,
    strategies: &[&dyn ProductSampler],
) -> Vec<PathPoint> {
    if strategies.is_empty() {
        return Vec::new();
    }
    let found: Vec<PathPoint> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = task_rng(seed, i as u64);
            strategies[i % strategies.len()].draw(z, filter, &mut rng)
        })
        .collect();
    dedup_points(found, 1e-10)
}

fn dedup_points(points: Vec<PathPoint>, tol: f64) -> Vec<PathPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].s.total_cmp(&points[b].s).then(a.cmp(&b)));
    // trace differs by at most sqrt(D) |X - Y|_F
    let window = tol * points.first().map_or(1.0, |p| (p.operator.dim() as f64).sqrt());
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let si = points[i].s;
        let start = kept.partition_point(|&k| points[k].s < si - window);
        if !kept[start..]
            .iter()
            .any(|&k| points[k].operator.distance_frobenius(&points[i].operator) <= tol)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut slots: Vec<Option<PathPoint>> = points.into_iter().map(Some).collect();
    kept.into_iter().map(|i| slots[i].take().expect("unique index")).collect()
}
