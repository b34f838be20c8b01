//! Finite POVMs: validation, merging of proportional outcomes, and
//! nonnegative completeness weights for candidate rank-one measurements.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LoccError, Result};
use crate::json::{matrix_from_json, matrix_to_json, PovmFile};
use crate::operator::{HermitianOperator, PartitionedSpace, PSD_TOL};
use crate::solver::{BoxLeastSquares, LinearProgram, LpOutcome};

pub const COMPLETENESS_TOL: f64 = 1e-10;
pub const PROPORTIONALITY_TOL: f64 = 1e-8;
pub const DEFAULT_ELEMENT_CAP: usize = 4096;

#[derive(Clone, Debug)]
pub struct Povm {
    space: PartitionedSpace,
    elements: Vec<HermitianOperator>,
    labels: Vec<String>,
}

impl Povm {
    /// Builds a POVM, requiring PSD elements that sum to the identity.
    pub fn new(
        space: PartitionedSpace,
        elements: Vec<HermitianOperator>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let povm = Self::unchecked(space, elements, labels)?;
        let report = validate(&povm, COMPLETENESS_TOL);
        if let Some(bad) = report.psd_margins.iter().copied().find(|&m| m < -PSD_TOL) {
            return Err(LoccError::NotPsd { min_eigenvalue: bad });
        }
        if report.max_entry_deviation > COMPLETENESS_TOL {
            return Err(LoccError::InvalidInput(format!(
                "elements do not sum to the identity (max deviation {:e})",
                report.max_entry_deviation
            )));
        }
        Ok(povm)
    }

    /// Checks only shapes and element count; use [`validate`] for the rest.
    pub fn unchecked(
        space: PartitionedSpace,
        elements: Vec<HermitianOperator>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if elements.is_empty() {
            return Err(LoccError::InvalidInput("a POVM needs at least one element".into()));
        }
        if elements.len() > DEFAULT_ELEMENT_CAP {
            return Err(LoccError::CapExceeded {
                what: "POVM element count",
                count: elements.len(),
                cap: DEFAULT_ELEMENT_CAP,
            });
        }
        for e in &elements {
            if e.space() != &space {
                return Err(LoccError::DimensionMismatch {
                    expected: space.total_dim(),
                    actual: e.dim(),
                });
            }
        }
        let labels = match labels {
            Some(l) if l.len() != elements.len() => {
                return Err(LoccError::InvalidInput(format!(
                    "{} labels for {} elements",
                    l.len(),
                    elements.len()
                )))
            }
            Some(l) => l,
            None => (0..elements.len()).map(|j| format!("E{j}")).collect(),
        };
        Ok(Self {
            space,
            elements,
            labels,
        })
    }

    pub fn space(&self) -> &PartitionedSpace {
        &self.space
    }

    pub fn elements(&self) -> &[HermitianOperator] {
        &self.elements
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn sum(&self) -> HermitianOperator {
        let ones = vec![1.0; self.elements.len()];
        HermitianOperator::combination(&self.space, &ones, &self.elements)
    }

    pub fn from_file(file: &PovmFile) -> Result<Self> {
        let space = PartitionedSpace::new(file.dims.clone())?;
        let elements = file
            .elements
            .iter()
            .map(|m| HermitianOperator::new(space.clone(), matrix_from_json(m)?))
            .collect::<Result<Vec<_>>>()?;
        Self::unchecked(space, elements, file.labels.clone())
    }

    pub fn to_file(&self) -> PovmFile {
        PovmFile {
            dims: self.space.dims().to_vec(),
            elements: self.elements.iter().map(|e| matrix_to_json(e.matrix())).collect(),
            labels: Some(self.labels.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    /// Minimum eigenvalue of each element.
    pub psd_margins: Vec<f64>,
    /// Frobenius norm of `sum E_j - I`.
    pub completeness_residual: f64,
    pub max_entry_deviation: f64,
    pub tol: f64,
    pub valid: bool,
}

pub fn validate(povm: &Povm, tol: f64) -> ValidationReport {
    let psd_margins: Vec<f64> = povm.elements.iter().map(|e| e.min_eigenvalue()).collect();
    let diff = &povm.sum() - &HermitianOperator::identity(&povm.space);
    let max_entry_deviation = diff.matrix().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let valid = max_entry_deviation <= tol && psd_margins.iter().all(|&m| m >= -PSD_TOL);
    ValidationReport {
        psd_margins,
        completeness_residual: diff.frobenius_norm(),
        max_entry_deviation,
        tol,
        valid,
    }
}

/// Sums mutually proportional elements into one; zero elements are dropped.
pub fn merge_proportional(povm: &Povm, tol: f64) -> Povm {
    let mut classes: Vec<(HermitianOperator, HermitianOperator, Vec<String>)> = Vec::new();
    for (e, label) in povm.elements.iter().zip(&povm.labels) {
        let n = e.frobenius_norm();
        if n <= f64::EPSILON {
            continue;
        }
        let unit = e.scaled(1.0 / n);
        match classes.iter_mut().find(|(rep, _, _)| rep.distance_frobenius(&unit) <= tol) {
            Some((_, sum, labels)) => {
                *sum = &*sum + e;
                labels.push(label.clone());
            }
            None => classes.push((unit, e.clone(), vec![label.clone()])),
        }
    }
    if classes.is_empty() {
        // all elements vanish; keep the zero operator so the set stays non-empty
        return povm.clone();
    }
    let (elements, labels): (Vec<_>, Vec<_>) = classes
        .into_iter()
        .map(|(_, sum, labels)| (sum, labels.join("+")))
        .unzip();
    Povm {
        space: povm.space.clone(),
        elements,
        labels,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightSolution {
    pub feasible: bool,
    pub weights: Vec<f64>,
    /// `[min, max]` of each weight over the whole feasible set.
    pub intervals: Vec<[f64; 2]>,
    /// `|sum w_k P_k - I|_F` for the returned weights.
    pub residual: f64,
}

impl WeightSolution {
    /// Indices whose weight is certified to vanish on the entire feasible set.
    pub fn forced_zero(&self, tol: f64) -> Vec<usize> {
        self.intervals
            .iter()
            .enumerate()
            .filter(|(_, iv)| iv[1] <= tol)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Nonnegative weights with `sum_k w_k P_k = I`, plus the range each weight
/// can take over the feasible polytope (two LPs per weight).
pub fn completeness_weights(projectors: &[HermitianOperator]) -> Result<WeightSolution> {
    let first = projectors
        .first()
        .ok_or_else(|| LoccError::InvalidInput("no projectors given".into()))?;
    let space = first.space().clone();
    for p in projectors {
        p.same_space(first)?;
    }
    let n = projectors.len();
    let d2 = space.real_dim();
    let cols: Vec<DVector<f64>> = projectors.iter().map(|p| p.realify()).collect();
    let g = DMatrix::from_fn(d2, n, |i, k| cols[k][i]);
    let target = HermitianOperator::identity(&space).realify();

    let lp_for = |objective: Vec<f64>| LinearProgram {
        objective,
        a_eq: g.clone(),
        b_eq: target.clone(),
        lower: vec![0.0; n],
        upper: vec![f64::INFINITY; n],
    };

    let bounds: Vec<Result<(LpOutcome, LpOutcome)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut c = vec![0.0; n];
            c[k] = 1.0;
            let lo = lp_for(c.clone()).solve()?;
            c[k] = -1.0;
            let hi = lp_for(c).solve()?;
            Ok((lo, hi))
        })
        .collect();

    let mut intervals = Vec::with_capacity(n);
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for b in bounds {
        let (lo, hi) = b?;
        match (lo, hi) {
            (LpOutcome::Optimal { x: xl, objective: ol }, hi) => {
                let upper = match hi {
                    LpOutcome::Optimal { x: xh, objective: oh } => {
                        vertices.push(xh);
                        -oh
                    }
                    _ => f64::INFINITY,
                };
                vertices.push(xl);
                intervals.push([ol.max(0.0), upper.max(0.0)]);
            }
            _ => {
                return Ok(infeasible_solution(&g, &target, n));
            }
        }
    }

    // centroid of the LP vertices is feasible and avoids arbitrary vertex choice
    let mut weights = vec![0.0; n];
    for v in &vertices {
        for (w, x) in weights.iter_mut().zip(v) {
            *w += x / vertices.len() as f64;
        }
    }
    for (w, iv) in weights.iter_mut().zip(&intervals) {
        if iv[1] <= 1e-9 {
            *w = 0.0;
        }
    }
    let weights = polish_on_support(&g, &target, weights);
    let residual = (&g * DVector::from_column_slice(&weights) - &target).norm();
    Ok(WeightSolution {
        feasible: true,
        weights,
        intervals,
        residual,
    })
}

/// Refines an approximately feasible point by exact least squares on its
/// support, keeping the refinement only if it stays nonnegative and improves.
fn polish_on_support(g: &DMatrix<f64>, target: &DVector<f64>, weights: Vec<f64>) -> Vec<f64> {
    let support: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
    if support.is_empty() {
        return weights;
    }
    let gs = DMatrix::from_fn(g.nrows(), support.len(), |i, k| g[(i, support[k])]);
    let base = DVector::from_iterator(support.len(), support.iter().map(|&k| weights[k]));
    // minimum-norm correction keeps us near the centroid when the support is degenerate
    let rhs = target - &gs * &base;
    let svd = gs.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let Ok(delta) = svd.solve(&rhs, eps) else {
        return weights;
    };
    let refined = base + delta;
    if refined.iter().any(|&w| w < 0.0) {
        return weights;
    }
    let mut out = vec![0.0; weights.len()];
    for (k, &j) in support.iter().enumerate() {
        out[j] = refined[k];
    }
    let old = (g * DVector::from_column_slice(&weights) - target).norm();
    let new = (g * DVector::from_column_slice(&out) - target).norm();
    if new <= old {
        out
    } else {
        weights
    }
}

fn infeasible_solution(g: &DMatrix<f64>, target: &DVector<f64>, n: usize) -> WeightSolution {
    let sol = BoxLeastSquares::new(g.clone()).solve(target, &vec![0.0; n], &vec![f64::INFINITY; n]);
    WeightSolution {
        feasible: false,
        weights: sol.x.iter().copied().collect(),
        intervals: vec![[f64::NAN, f64::NAN]; n],
        residual: sol.residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_projector, tensor, C64};
    use nalgebra::DVector;

    fn bell_projectors() -> Vec<HermitianOperator> {
        let s = PartitionedSpace::two_qubits();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let z = C64::new(0.0, 0.0);
        let r = |x: f64| C64::new(x, 0.0);
        [
            [r(h), z, z, r(h)],
            [r(h), z, z, r(-h)],
            [z, r(h), r(h), z],
            [z, r(h), r(-h), z],
        ]
        .iter()
        .map(|v| HermitianOperator::projector(&s, &DVector::from_column_slice(v)).unwrap())
        .collect()
    }

    #[test]
    fn single_element_povm() {
        let s = PartitionedSpace::two_qubits();
        let povm = Povm::new(s.clone(), vec![HermitianOperator::identity(&s)], None).unwrap();
        let r = validate(&povm, 1e-12);
        assert_eq!(r.completeness_residual, 0.0);
        assert!(r.valid);
    }

    #[test]
    fn bell_povm_valid_and_unmerged() {
        let s = PartitionedSpace::two_qubits();
        let povm = Povm::new(s, bell_projectors(), None).unwrap();
        assert!(validate(&povm, 1e-12).completeness_residual <= 1e-12);
        assert_eq!(merge_proportional(&povm, PROPORTIONALITY_TOL).len(), 4);
    }

    #[test]
    fn duplicates_merge() {
        let s = PartitionedSpace::two_qubits();
        let e = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap().scaled(0.25);
        let rest = &HermitianOperator::identity(&s) - &e.scaled(2.0);
        let povm = Povm::new(s, vec![e.clone(), e.clone(), rest.clone()], None).unwrap();
        let merged = merge_proportional(&povm, PROPORTIONALITY_TOL);
        assert_eq!(merged.len(), 2);
        assert!(merged.elements()[0].distance_frobenius(&e.scaled(2.0)) < 1e-15);
        assert_eq!(merged.labels()[0], "E0+E1");
        assert!(merged.elements()[1].distance_frobenius(&rest) < 1e-15);
    }

    #[test]
    fn incomplete_povm_rejected() {
        let s = PartitionedSpace::two_qubits();
        let e = HermitianOperator::identity(&s).scaled(0.5);
        assert!(Povm::new(s.clone(), vec![e], None).is_err());
        assert!(Povm::unchecked(s, vec![], None).is_err());
    }

    #[test]
    fn bell_weights_unique() {
        let w = completeness_weights(&bell_projectors()).unwrap();
        assert!(w.feasible);
        for (x, iv) in w.weights.iter().zip(&w.intervals) {
            assert!((x - 1.0).abs() < 1e-9);
            assert!((iv[0] - 1.0).abs() < 1e-9 && (iv[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_weights_report_residual() {
        let s = PartitionedSpace::two_qubits();
        let p = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap();
        let w = completeness_weights(&[p]).unwrap();
        assert!(!w.feasible);
        // best multiple of |00><00| leaves three unit diagonal entries
        assert!((w.residual - 3f64.sqrt()).abs() < 1e-9);
    }
}
