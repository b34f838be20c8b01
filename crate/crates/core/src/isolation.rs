//! Probing whether a generator segment `(0, E]` is isolated among the product
//! operators of a zonotope, and the closed-form diagonal family used to prove
//! it for the three-state example.
//!
//! The neighbourhood is a cone around the segment: `X` is near `(0, E]` when
//! `|X - qE|_1 <= epsilon * q * |E|_1` for some `q in (0, 1]`. A fixed-radius
//! ball would also contain every small product operator near `0`, which says
//! nothing about the segment itself.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LoccError, Result};
use crate::factorize::{nearest_product, rank_one_gap, FactorizationOptions};
use crate::operator::{realign, HermitianOperator, PartitionedSpace, C64};
use crate::path::{golden_min, segment_distance};
use crate::random::task_rng;
use crate::sampling::{descend_to_product, SampleFilter};
use crate::zonotope::Zonotope;

pub const DEFAULT_ON_SEGMENT_TOL: f64 = 1e-6;
pub const DEFAULT_ISOLATION_PRODUCT_TOL: f64 = 1e-6;
const DESCENT_CONVERGED: f64 = 1e-2;
const DESCENT_ITERS: usize = 100;
const GRID_CAP: usize = 50_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct IsolationOptions {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    /// Also test every point of the coefficient grid with this spacing.
    pub grid_step: Option<f64>,
    /// Local-descent runs seeded at random points of the neighbourhood.
    pub descent_runs: usize,
    pub product_tol: f64,
    pub on_segment_tol: f64,
    pub membership_tol: f64,
    /// Smallest segment scale `q` drawn for random samples.
    pub min_scale: f64,
    pub max_examples: usize,
}

impl Default for IsolationOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            samples: 100_000,
            seed: 0,
            grid_step: None,
            descent_runs: 1_000,
            product_tol: DEFAULT_ISOLATION_PRODUCT_TOL,
            on_segment_tol: DEFAULT_ON_SEGMENT_TOL,
            membership_tol: 1e-8,
            min_scale: 1e-2,
            max_examples: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IsolationHit {
    pub coefficients: Vec<f64>,
    pub operator: HermitianOperator,
    pub product_residual: f64,
    pub membership_residual: f64,
    /// `min_q (|X - qE|_1 - epsilon q |E|_1)`; nonpositive inside the cone.
    pub neighborhood_margin: f64,
    /// `min_{q in [0,1]} |X - qE|_1` and its minimiser.
    pub segment_distance: f64,
    pub segment_scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsolationProbeReport {
    pub target: usize,
    pub epsilon: f64,
    pub neighborhood: &'static str,
    pub samples_tested: usize,
    pub grid_points_tested: usize,
    pub descent_runs: usize,
    /// Tested points (anywhere in the zonotope) that were product operators.
    pub product_points: usize,
    pub hits_in_neighborhood: usize,
    pub on_segment_hits: usize,
    pub off_segment_hits: Vec<IsolationHit>,
    pub on_segment_examples: Vec<IsolationHit>,
    pub max_on_segment_distance: f64,
    pub all_hits_on_segment: bool,
    pub options: IsolationOptions,
}

enum Outcome {
    NotProduct,
    ProductOutside,
    Hit(Box<IsolationHit>),
}

struct Probe<'a> {
    z: &'a Zonotope,
    target: usize,
    opts: &'a IsolationOptions,
    realigned: Vec<DMatrix<C64>>,
    target_norm: f64,
}

impl Probe<'_> {
    fn classify(&self, c: &[f64]) -> Outcome {
        let mut r = DMatrix::zeros(self.realigned[0].nrows(), self.realigned[0].ncols());
        for (k, rk) in self.realigned.iter().enumerate() {
            if c[k] != 0.0 {
                r += rk * C64::new(c[k], 0.0);
            }
        }
        // the rank-one gap never exceeds the product residual; allow for its rounding
        if rank_one_gap(&r) > self.opts.product_tol + 1e-7 * (1.0 + r.norm()) {
            return Outcome::NotProduct;
        }
        let x = self.z.point(c);
        let fac = nearest_product(&x, &FactorizationOptions::default());
        if fac.residual > self.opts.product_tol {
            return Outcome::NotProduct;
        }
        let e = &self.z.generators()[self.target];
        let eps = self.opts.epsilon * self.target_norm;
        let (margin, _) = golden_min(|q| (&x - &e.scaled(q)).trace_norm() - eps * q, 0.0, 1.0);
        // the cone excludes its apex
        if margin > 1e-12 || x.trace_norm() == 0.0 {
            return Outcome::ProductOutside;
        }
        let membership_residual = self
            .z
            .contains(&x, self.opts.membership_tol)
            .map(|m| m.residual)
            .unwrap_or(f64::INFINITY);
        let (dist, q) = segment_distance(&x, e);
        Outcome::Hit(Box::new(IsolationHit {
            coefficients: c.to_vec(),
            product_residual: fac.residual,
            membership_residual,
            neighborhood_margin: margin,
            segment_distance: dist,
            segment_scale: q,
            operator: x,
        }))
    }

    /// Segment scale `q`, then each other coefficient zero with probability
    /// 1/2 and otherwise a random share of the cone radius at `q`.
    fn random_neighbor(&self, rng: &mut impl Rng) -> Vec<f64> {
        let lq = self.opts.min_scale.ln();
        let q = (lq * (1.0 - rng.gen::<f64>())).exp();
        let budget = self.opts.epsilon * q * self.target_norm;
        (0..self.z.len())
            .map(|k| {
                if k == self.target {
                    q
                } else {
                    let tr = self.z.generators()[k].trace();
                    if tr <= 0.0 || rng.gen_bool(0.5) {
                        0.0
                    } else {
                        (rng.gen::<f64>() * budget / tr).min(1.0)
                    }
                }
            })
            .collect()
    }
}

pub fn isolation_probe(z: &Zonotope, target: usize, opts: &IsolationOptions) -> Result<IsolationProbeReport> {
    if target >= z.len() || z.generators()[target].frobenius_norm() == 0.0 {
        return Err(LoccError::TargetNotGenerator);
    }
    if !(opts.epsilon >= 0.0) {
        return Err(LoccError::InvalidInput("epsilon must be nonnegative".into()));
    }
    let space = z.space();
    let d1 = space.dims()[0];
    let rest = space.total_dim() / d1;
    let probe = Probe {
        z,
        target,
        opts,
        realigned: z.generators().iter().map(|g| realign(g.matrix(), d1, rest)).collect(),
        target_norm: z.generators()[target].trace_norm(),
    };

    let samples: Vec<Outcome> = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(opts.seed, i as u64);
            probe.classify(&probe.random_neighbor(&mut rng))
        })
        .collect();

    let mut grid_points = 0;
    let mut grid: Vec<Outcome> = Vec::new();
    if let Some(step) = opts.grid_step {
        if !(step > 0.0 && step <= 1.0) {
            return Err(LoccError::InvalidInput("grid step must lie in (0, 1]".into()));
        }
        let per_axis = (1.0 / step).round() as usize + 1;
        grid_points = per_axis
            .checked_pow(z.len() as u32)
            .filter(|&g| g <= GRID_CAP)
            .ok_or(LoccError::CapExceeded {
                what: "coefficient grid size",
                count: usize::MAX,
                cap: GRID_CAP,
            })?;
        let n = z.len();
        grid = (0..grid_points)
            .into_par_iter()
            .map(|mut idx| {
                let mut c = vec![0.0; n];
                for ck in c.iter_mut() {
                    *ck = ((idx % per_axis) as f64 * step).min(1.0);
                    idx /= per_axis;
                }
                probe.classify(&c)
            })
            .collect();
    }

    // Descent is a local optimiser: only its converged end points are
    // minima of the product residual. A run cut off at the iteration limit
    // can sit anywhere within `product_tol` of the product cone, including
    // points a distance ~2·product_tol from the segment, which says nothing
    // about isolation; those runs are discarded.
    let filter = SampleFilter {
        product_tol: DESCENT_CONVERGED * opts.product_tol,
        membership_tol: opts.membership_tol,
        min_trace: 0.0,
    };
    let descents: Vec<Outcome> = (0..opts.descent_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(opts.seed ^ 0xde5c, i as u64);
            let start = probe.random_neighbor(&mut rng);
            match descend_to_product(z, &start, &filter, DESCENT_ITERS) {
                Some(p) => probe.classify(&p.coefficients),
                None => Outcome::NotProduct,
            }
        })
        .collect();

    let mut report = IsolationProbeReport {
        target,
        epsilon: opts.epsilon,
        neighborhood: "relative",
        samples_tested: opts.samples,
        grid_points_tested: grid_points,
        descent_runs: opts.descent_runs,
        product_points: 0,
        hits_in_neighborhood: 0,
        on_segment_hits: 0,
        off_segment_hits: Vec::new(),
        on_segment_examples: Vec::new(),
        max_on_segment_distance: 0.0,
        all_hits_on_segment: true,
        options: opts.clone(),
    };
    for outcome in samples.into_iter().chain(grid).chain(descents) {
        match outcome {
            Outcome::NotProduct => {}
            Outcome::ProductOutside => report.product_points += 1,
            Outcome::Hit(hit) => {
                report.product_points += 1;
                report.hits_in_neighborhood += 1;
                if hit.segment_distance <= opts.on_segment_tol {
                    report.on_segment_hits += 1;
                    report.max_on_segment_distance = report.max_on_segment_distance.max(hit.segment_distance);
                    if report.on_segment_examples.len() < opts.max_examples {
                        report.on_segment_examples.push(*hit);
                    }
                } else {
                    report.all_hits_on_segment = false;
                    report.off_segment_hits.push(*hit);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagonalFamilyPoint {
    pub operator: HermitianOperator,
    /// `18 c31 c32` and `c11' (c31 + 2 c32)`.
    pub lhs: f64,
    pub rhs: f64,
    pub product: bool,
}

/// `(1 + sqrt 3) diag(c11', 3 c31, 12 c32, 2 c31 + 4 c32)` on two qubits and
/// the exact test for it to factor as `A (x) B` (diagonal entries `a d = b c`).
pub fn kkb_diagonal_family(c11p: f64, c31: f64, c32: f64) -> Result<DiagonalFamilyPoint> {
    if c11p < 0.0 || c31 < 0.0 || c32 < 0.0 {
        return Err(LoccError::InvalidInput("coefficients must be nonnegative".into()));
    }
    let k = 1.0 + 3f64.sqrt();
    let diag = [k * c11p, k * 3.0 * c31, k * 12.0 * c32, k * (2.0 * c31 + 4.0 * c32)];
    let operator = HermitianOperator::diagonal(&PartitionedSpace::two_qubits(), &diag)?;
    let lhs = 18.0 * c31 * c32;
    let rhs = c11p * (c31 + 2.0 * c32);
    let product = (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
    Ok(DiagonalFamilyPoint {
        operator,
        lhs,
        rhs,
        product,
    })
}
