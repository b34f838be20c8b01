//! The zonotope `Z = sum_j [0, E_j]` generated by a POVM.
//!
//! Membership is a box-constrained least-squares problem over the real
//! coordinates of Hermitian matrices; distances between zonotopes evaluate
//! that projection at extreme points (or at samples) of the first set.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LoccError, Result};
use crate::operator::{HermitianOperator, PartitionedSpace};
use crate::povm::Povm;
use crate::random::task_rng;
use crate::solver::BoxLeastSquares;

pub const MEMBERSHIP_TOL: f64 = 1e-8;
pub const DEFAULT_VERTEX_CAP: usize = 20;
const DEDUP_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Zonotope {
    space: PartitionedSpace,
    generators: Vec<HermitianOperator>,
    /// Indices of the nonzero generators; zero ones never enter a solve.
    active: Vec<usize>,
    solver: BoxLeastSquares,
}

#[derive(Clone, Debug, Serialize)]
pub struct MembershipResult {
    pub feasible: bool,
    /// Minimiser of `|X - sum c_j E_j|_F` over the unit box, one per generator.
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

impl Zonotope {
    pub fn new(space: PartitionedSpace, generators: Vec<HermitianOperator>) -> Result<Self> {
        for g in &generators {
            if g.space() != &space {
                return Err(LoccError::DimensionMismatch {
                    expected: space.total_dim(),
                    actual: g.dim(),
                });
            }
        }
        let active: Vec<usize> = (0..generators.len())
            .filter(|&j| generators[j].frobenius_norm() > 0.0)
            .collect();
        let cols: Vec<DVector<f64>> = active.iter().map(|&j| generators[j].realify()).collect();
        let a = DMatrix::from_fn(space.real_dim(), active.len(), |i, k| cols[k][i]);
        Ok(Self {
            space,
            generators,
            active,
            solver: BoxLeastSquares::new(a),
        })
    }

    pub fn from_povm(povm: &Povm) -> Self {
        Self::new(povm.space().clone(), povm.elements().to_vec())
            .expect("POVM elements share the POVM's space")
    }

    pub fn space(&self) -> &PartitionedSpace {
        &self.space
    }

    pub fn generators(&self) -> &[HermitianOperator] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Number of nonzero generators.
    pub fn rank_count(&self) -> usize {
        self.active.len()
    }

    /// `sum_j c_j E_j`.
    pub fn point(&self, coefficients: &[f64]) -> HermitianOperator {
        HermitianOperator::combination(&self.space, coefficients, &self.generators)
    }

    pub fn contains(&self, x: &HermitianOperator, tol: f64) -> Result<MembershipResult> {
        if x.space() != &self.space {
            return Err(LoccError::DimensionMismatch {
                expected: self.space.total_dim(),
                actual: x.dim(),
            });
        }
        let n = self.active.len();
        Ok(self.project_bounded(x, &vec![0.0; n], &vec![1.0; n], tol))
    }

    /// Projection with per-generator bounds given over the active generators.
    pub(crate) fn project_bounded(
        &self,
        x: &HermitianOperator,
        lower: &[f64],
        upper: &[f64],
        tol: f64,
    ) -> MembershipResult {
        let b = x.realify();
        let sol = self.solver.solve(&b, lower, upper);
        let mut coefficients = vec![0.0; self.generators.len()];
        for (k, &j) in self.active.iter().enumerate() {
            coefficients[j] = sol.x[k];
        }
        MembershipResult {
            feasible: sol.residual <= tol,
            coefficients,
            residual: sol.residual,
        }
    }

    /// All subset sums of the nonzero generators, deduplicated.
    pub fn vertices(&self, cap: usize) -> Result<Vec<HermitianOperator>> {
        let n = self.active.len();
        if n > cap {
            return Err(LoccError::CapExceeded {
                what: "generator count for vertex enumeration",
                count: n,
                cap,
            });
        }
        let d2 = self.space.real_dim();
        let mut current = DVector::<f64>::zeros(d2);
        let mut points = Vec::with_capacity(1 << n);
        points.push(current.clone());
        // Gray code: step k flips the generator at the lowest set bit of k
        let mut on = vec![false; n];
        for k in 1usize..(1 << n) {
            let bit = k.trailing_zeros() as usize;
            let col = self.solver.matrix().column(bit);
            if on[bit] {
                current -= col;
            } else {
                current += col;
            }
            on[bit] = !on[bit];
            points.push(current.clone());
        }
        Ok(dedup(points, DEDUP_TOL)
            .into_iter()
            .map(|v| HermitianOperator::from_realified(&self.space, v.as_slice()).expect("sized by space"))
            .collect())
    }
}

/// Removes points within `tol` (Euclidean) of an earlier kept point.
fn dedup(points: Vec<DVector<f64>>, tol: f64) -> Vec<DVector<f64>> {
    if points.is_empty() {
        return points;
    }
    let dim = points[0].len() as f64;
    let key = |v: &DVector<f64>| v.sum();
    let window = tol * dim.sqrt();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let ki = key(&points[i]);
        let start = kept.partition_point(|&k| key(&points[k]) < ki - window);
        let duplicate = kept[start..].iter().any(|&k| (&points[k] - &points[i]).norm() <= tol);
        if !duplicate {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut points: Vec<Option<DVector<f64>>> = points.into_iter().map(Some).collect();
    kept.into_iter().map(|i| points[i].take().expect("unique index")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Trace,
    Frobenius,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Trace => "trace",
            Norm::Frobenius => "frobenius",
        })
    }
}

impl FromStr for Norm {
    type Err = LoccError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Norm::Trace),
            "frobenius" => Ok(Norm::Frobenius),
            other => Err(LoccError::InvalidInput(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectedDistance {
    pub value: f64,
    /// Largest Frobenius projection distance; a lower bound in either norm.
    pub frobenius_lower_bound: f64,
    /// `sqrt(D)` times the Frobenius value; an upper bound in trace norm.
    pub trace_upper_bound: f64,
    pub points_evaluated: usize,
    /// True when the supremum was taken over every extreme point.
    pub certified: bool,
}

/// A strategy for `sup_{z in Z1} inf_{w in Z2} |z - w|`.
pub trait DistanceMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn directed(&self, from: &Zonotope, to: &Zonotope, norm: Norm) -> Result<DirectedDistance>;
}

/// Exact up to the inner solver: the convex distance function peaks at a vertex.
#[derive(Clone, Copy, Debug)]
pub struct VertexEnumeration {
    pub cap: usize,
}

impl Default for VertexEnumeration {
    fn default() -> Self {
        Self {
            cap: DEFAULT_VERTEX_CAP,
        }
    }
}

impl DistanceMethod for VertexEnumeration {
    fn name(&self) -> &'static str {
        "vertex"
    }

    fn directed(&self, from: &Zonotope, to: &Zonotope, norm: Norm) -> Result<DirectedDistance> {
        check_spaces(from, to)?;
        let points = from.vertices(self.cap)?;
        Ok(evaluate_points(&points, to, norm, true))
    }
}

/// Lower bound from random coefficient vectors plus every vertex spanned by
/// a random subset of generators.
#[derive(Clone, Copy, Debug)]
pub struct SampledVertices {
    pub samples: usize,
    pub seed: u64,
    pub subset_size: usize,
}

impl Default for SampledVertices {
    fn default() -> Self {
        Self {
            samples: 4096,
            seed: 0,
            subset_size: 10,
        }
    }
}

impl DistanceMethod for SampledVertices {
    fn name(&self) -> &'static str {
        "sampled"
    }

    fn directed(&self, from: &Zonotope, to: &Zonotope, norm: Norm) -> Result<DirectedDistance> {
        check_spaces(from, to)?;
        let n = from.len();
        let mut points: Vec<HermitianOperator> = (0..self.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = task_rng(self.seed, i as u64);
                let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
                from.point(&c)
            })
            .collect();

        let mut rng = task_rng(self.seed, u64::MAX);
        let k = self.subset_size.min(n);
        let subset: Vec<usize> = sample(&mut rng, n, k).into_vec();
        let base: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        for mask in 0usize..(1 << k) {
            let mut c = base.clone();
            for (bit, &j) in subset.iter().enumerate() {
                c[j] = ((mask >> bit) & 1) as f64;
            }
            points.push(from.point(&c));
        }
        let mut report = evaluate_points(&points, to, norm, false);
        report.certified = false;
        Ok(report)
    }
}

fn check_spaces(a: &Zonotope, b: &Zonotope) -> Result<()> {
    if a.space != b.space {
        return Err(LoccError::DimensionMismatch {
            expected: a.space.total_dim(),
            actual: b.space.total_dim(),
        });
    }
    Ok(())
}

fn evaluate_points(points: &[HermitianOperator], to: &Zonotope, norm: Norm, certified: bool) -> DirectedDistance {
    let scored: Vec<(f64, f64)> = points
        .par_iter()
        .map(|z| {
            let m = to.contains(z, MEMBERSHIP_TOL).expect("spaces checked");
            let frob = m.residual;
            let trace = match norm {
                Norm::Trace => (z - &to.point(&m.coefficients)).trace_norm(),
                Norm::Frobenius => frob,
            };
            (frob, trace)
        })
        .collect();
    let frob = scored.iter().map(|s| s.0).fold(0.0, f64::max);
    let value = match norm {
        Norm::Trace => scored.iter().map(|s| s.1).fold(0.0, f64::max),
        Norm::Frobenius => frob,
    };
    let sqrt_d = (to.space.total_dim() as f64).sqrt();
    DirectedDistance {
        value,
        frobenius_lower_bound: frob,
        trace_upper_bound: sqrt_d * frob,
        points_evaluated: points.len(),
        certified,
    }
}

pub fn directed_distance(from: &Zonotope, to: &Zonotope, norm: Norm, method: &dyn DistanceMethod) -> Result<DirectedDistance> {
    method.directed(from, to, norm)
}

#[derive(Clone, Debug, Serialize)]
pub struct HausdorffReport {
    pub directed_12: f64,
    pub directed_21: f64,
    pub hausdorff: f64,
    pub norm: Norm,
    pub method: String,
    pub certified: bool,
}

pub fn hausdorff(z1: &Zonotope, z2: &Zonotope, norm: Norm, method: &dyn DistanceMethod) -> Result<HausdorffReport> {
    let d12 = method.directed(z1, z2, norm)?;
    let d21 = method.directed(z2, z1, norm)?;
    Ok(HausdorffReport {
        directed_12: d12.value,
        directed_21: d21.value,
        hausdorff: d12.value.max(d21.value),
        norm,
        method: method.name().to_string(),
        certified: d12.certified && d21.certified,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NestingReport {
    pub points_tested: usize,
    pub max_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks `inner ⊆ outer` on every generator of `inner`, on `samples`
/// random vertices (0/1 coefficient vectors) and on as many random interior
/// points. Vertices suffice for containment of a zonotope, so with all
/// `2^n` of them the check would be exact; sampling makes it evidence.
pub fn nesting_check(inner: &Zonotope, outer: &Zonotope, samples: usize, seed: u64, tol: f64) -> Result<NestingReport> {
    if inner.space != outer.space {
        return Err(LoccError::DimensionMismatch {
            expected: outer.space.total_dim(),
            actual: inner.space.total_dim(),
        });
    }
    let n = inner.len();
    let mut points: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|k| if k == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for i in 0..samples {
        let mut rng = task_rng(seed, i as u64);
        points.push((0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect());
        points.push((0..n).map(|_| rng.gen::<f64>()).collect());
    }
    let residuals: Vec<f64> = points
        .par_iter()
        .map(|c| outer.contains(&inner.point(c), tol).map(|m| m.residual))
        .collect::<Result<_>>()?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(NestingReport {
        points_tested: points.len(),
        max_residual,
        tol,
        passed: max_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_projector, tensor};

    fn footnote_like() -> Zonotope {
        let s = PartitionedSpace::two_qubits();
        let g: Vec<_> = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| tensor(&s, &[basis_projector(2, a), basis_projector(2, b)]).unwrap())
            .collect();
        Zonotope::new(s, g).unwrap()
    }

    #[test]
    fn identity_zero_and_outside() {
        let z = footnote_like();
        let s = z.space().clone();
        let id = z.contains(&HermitianOperator::identity(&s), MEMBERSHIP_TOL).unwrap();
        assert!(id.feasible);
        assert!(id.coefficients.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        let zero = z.contains(&HermitianOperator::zero(&s), MEMBERSHIP_TOL).unwrap();
        assert!(zero.feasible && zero.coefficients.iter().all(|&c| c == 0.0));
        let two = z.contains(&HermitianOperator::identity(&s).scaled(2.0), MEMBERSHIP_TOL).unwrap();
        assert!(!two.feasible);
        assert!(two.residual >= 2.0 - MEMBERSHIP_TOL);
    }

    #[test]
    fn vertex_counts() {
        let s = PartitionedSpace::two_qubits();
        let e = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap();
        let single = Zonotope::new(s.clone(), vec![e.clone()]).unwrap();
        assert_eq!(single.vertices(20).unwrap().len(), 2);
        let twice = Zonotope::new(s.clone(), vec![e.clone(), e.clone()]).unwrap();
        assert_eq!(twice.vertices(20).unwrap().len(), 3);
        assert_eq!(footnote_like().vertices(20).unwrap().len(), 16);
        assert!(matches!(footnote_like().vertices(3), Err(LoccError::CapExceeded { .. })));
        let with_zero = Zonotope::new(s.clone(), vec![e, HermitianOperator::zero(&s)]).unwrap();
        assert_eq!(with_zero.vertices(1).unwrap().len(), 2);
    }

    #[test]
    fn self_distance_zero() {
        let z = footnote_like();
        let r = hausdorff(&z, &z, Norm::Trace, &VertexEnumeration::default()).unwrap();
        assert!(r.hausdorff <= 1e-10);
        assert!(r.certified);
    }

    #[test]
    fn dedup_keeps_first() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0 + 1e-12, 0.0]);
        let c = DVector::from_vec(vec![0.0, 1.0]);
        let out = dedup(vec![a.clone(), b, c.clone()], 1e-10);
        assert_eq!(out, vec![a, c]);
    }

    #[test]
    fn norm_parsing() {
        assert_eq!("trace".parse::<Norm>().unwrap(), Norm::Trace);
        assert!("l1".parse::<Norm>().is_err());
    }
}
