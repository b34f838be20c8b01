//! Nearest product operator `scale * A_1 (x) .. (x) A_P` in Frobenius norm.
//!
//! Bipartite inputs start from the best rank-one approximation of the
//! realigned matrix; any party count is then refined by alternating
//! single-factor least squares with each factor projected onto the PSD cone.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::json::local_ops_serde;
use crate::operator::{
    hermitize, project_psd, realign, tensor_unchecked, HermitianOperator, LocalOp,
    PartitionedSpace, C64,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FactorizationOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FactorizationOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductFactorization {
    /// Unit Frobenius norm, Hermitian PSD.
    #[serde(with = "local_ops_serde")]
    pub factors: Vec<LocalOp>,
    pub scale: f64,
    pub residual: f64,
    pub iterations: usize,
    pub iterations_exhausted: bool,
}

impl ProductFactorization {
    pub fn product(&self, space: &PartitionedSpace) -> HermitianOperator {
        tensor_unchecked(space, &self.factors).scaled(self.scale)
    }

    /// `|<A, B>|` between unit factors of party `p`; 1 means equal up to scale.
    pub fn factor_fidelity(&self, p: usize, other: &LocalOp) -> f64 {
        let n = other.norm();
        if n == 0.0 {
            return 0.0;
        }
        self.factors[p].dotc(other).norm() / n
    }
}

pub fn nearest_product(x: &HermitianOperator, opts: &FactorizationOptions) -> ProductFactorization {
    let space = x.space();
    let dims = space.dims();
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return ProductFactorization {
            factors: dims.iter().map(|&d| unit_identity(d)).collect(),
            scale: 0.0,
            residual: 0.0,
            iterations: 0,
            iterations_exhausted: false,
        };
    }

    let table = DigitTable::new(space);
    let mut factors = if dims.len() == 2 {
        realignment_start(x.matrix(), dims[0], dims[1])
    } else {
        (0..dims.len())
            .map(|p| {
                let ids: Vec<LocalOp> = dims.iter().map(|&d| unit_identity(d)).collect();
                normalise_or_identity(project_psd(&hermitize(&table.contract_except(x.matrix(), &ids, p))))
            })
            .collect()
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut change: f64 = 0.0;
        for p in 0..factors.len() {
            let g = table.contract_except(x.matrix(), &factors, p);
            let updated = project_psd(&hermitize(&g));
            let n = updated.norm();
            if n == 0.0 {
                // no PSD factor correlates positively with the rest
                change = 0.0;
                factors[p] = unit_identity(dims[p]);
                break;
            }
            let updated = updated.unscale(n);
            change = change.max((&updated - &factors[p]).norm());
            factors[p] = updated;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let prod = tensor_unchecked(space, &factors);
    let scale = x.inner(&prod).max(0.0);
    let residual = (x.matrix() - prod.matrix().scale(scale)).norm();
    ProductFactorization {
        factors,
        scale,
        residual,
        iterations,
        iterations_exhausted: !converged,
    }
}

/// Frobenius distance from `x` to the nearest PSD product operator.
pub fn product_residual(x: &HermitianOperator) -> f64 {
    nearest_product(x, &FactorizationOptions::default()).residual
}

/// Frobenius distance from `x` to the set of operators of the form `A (x) B`
/// across the cut (first party | rest), ignoring positivity. Never exceeds
/// [`product_residual`], so it is a sound cheap filter.
pub fn product_residual_lower_bound(x: &HermitianOperator) -> f64 {
    let dims = x.space().dims();
    let d1 = dims[0];
    rank_one_gap(&realign(x.matrix(), d1, x.dim() / d1))
}

/// `sqrt(|R|_F^2 - sigma_max(R)^2)` for a (realigned) matrix `R`.
pub fn rank_one_gap(r: &DMatrix<C64>) -> f64 {
    let gram = if r.nrows() <= r.ncols() { r * r.adjoint() } else { r.adjoint() * r };
    let top = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    (r.norm_squared() - top).max(0.0).sqrt()
}

fn unit_identity(d: usize) -> LocalOp {
    LocalOp::identity(d, d).unscale((d as f64).sqrt())
}

fn normalise_or_identity(m: LocalOp) -> LocalOp {
    let n = m.norm();
    if n == 0.0 {
        unit_identity(m.nrows())
    } else {
        m.unscale(n)
    }
}

/// Top singular pair of the realigned matrix, rephased to Hermitian and
/// projected onto the PSD cone.
fn realignment_start(x: &DMatrix<C64>, d1: usize, d2: usize) -> Vec<LocalOp> {
    let r = realign(x, d1, d2);
    let svd = r.svd(true, true);
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^H");
    let mut a = DMatrix::from_fn(d1, d1, |i, j| u[(i * d1 + j, k)]);
    let mut b = DMatrix::from_fn(d2, d2, |i, j| vt[(k, i * d2 + j)]);

    // a = e^{-i theta} H for Hermitian H; Tr(a a) = e^{-2 i theta} |H|^2
    let z: C64 = (&a * &a).trace();
    if z.norm() > 0.0 {
        let phase = (z.conj() / z.norm()).sqrt();
        a *= phase;
        b *= phase.conj();
    }
    let mut a = hermitize(&a);
    let mut b = hermitize(&b);
    if a.trace().re < 0.0 {
        a = -a;
        b = -b;
    }
    vec![
        normalise_or_identity(project_psd(&a)),
        normalise_or_identity(project_psd(&b)),
    ]
}

/// Party digits of every joint basis index.
struct DigitTable {
    dims: Vec<usize>,
    digits: Vec<Vec<usize>>,
}

impl DigitTable {
    fn new(space: &PartitionedSpace) -> Self {
        let digits = (0..space.total_dim()).map(|i| space.digits(i)).collect();
        Self {
            dims: space.dims().to_vec(),
            digits,
        }
    }

    /// `G[a, c] = sum X[(..a..), (..c..)] prod_{q != p} conj(F_q[i_q, j_q])`.
    fn contract_except(&self, x: &DMatrix<C64>, factors: &[LocalOp], p: usize) -> LocalOp {
        let dp = self.dims[p];
        let mut g = DMatrix::zeros(dp, dp);
        let n = self.digits.len();
        for j in 0..n {
            let dj = &self.digits[j];
            for i in 0..n {
                let xij = x[(i, j)];
                if xij == C64::new(0.0, 0.0) {
                    continue;
                }
                let di = &self.digits[i];
                let mut w = xij;
                for (q, f) in factors.iter().enumerate() {
                    if q != p {
                        w *= f[(di[q], dj[q])].conj();
                    }
                }
                g[(di[p], dj[p])] += w;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_projector, tensor};
    use crate::random::{random_psd, task_rng};
    use nalgebra::DVector;

    fn opts() -> FactorizationOptions {
        FactorizationOptions::default()
    }

    #[test]
    fn exact_product_recovered() {
        let s = PartitionedSpace::two_qubits();
        let a = DMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.5, 0.3), C64::new(0.5, -0.3), C64::new(1.0, 0.0)]);
        let b = basis_projector(2, 1);
        let x = tensor(&s, &[a.clone(), b.clone()]).unwrap();
        let f = nearest_product(&x, &opts());
        assert!(f.residual <= 1e-10, "{}", f.residual);
        assert!(f.factor_fidelity(0, &a) > 1.0 - 1e-12);
        assert!(f.factor_fidelity(1, &b) > 1.0 - 1e-12);
        assert!(!f.iterations_exhausted);
    }

    #[test]
    fn bell_projector_far_from_product() {
        let s = PartitionedSpace::two_qubits();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = DVector::from_vec(vec![C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)]);
        let bell = HermitianOperator::projector(&s, &v).unwrap();
        let f = nearest_product(&bell, &opts());
        // realigned singular values are all 1/2, so the unconstrained optimum is sqrt(3)/2
        assert!(f.residual > 0.5);
        assert!(f.residual >= 3f64.sqrt() / 2.0 - 1e-9);
    }

    #[test]
    fn lower_bound_below_residual() {
        let s = PartitionedSpace::two_qubits();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = DVector::from_vec(vec![C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)]);
        let bell = HermitianOperator::projector(&s, &v).unwrap();
        let lb = product_residual_lower_bound(&bell);
        assert!((lb - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(lb <= product_residual(&bell) + 1e-12);
        let p = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 1)]).unwrap();
        assert!(product_residual_lower_bound(&p) < 1e-7);
    }

    #[test]
    fn small_perturbation_of_product() {
        let s = PartitionedSpace::two_qubits();
        let p11 = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap();
        let v = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.5, 0.0)]);
        let p22 = HermitianOperator::projector(&s, &v).unwrap();
        let x = &p11 + &p22.scaled(1e-3);
        assert!(nearest_product(&x, &opts()).residual <= 2e-3);
    }

    #[test]
    fn zero_input() {
        let s = PartitionedSpace::two_qubits();
        let f = nearest_product(&HermitianOperator::zero(&s), &opts());
        assert_eq!(f.scale, 0.0);
        assert_eq!(f.residual, 0.0);
        for a in &f.factors {
            assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tripartite_product_recovered() {
        let s = PartitionedSpace::new(vec![2, 3, 2]).unwrap();
        let mut rng = task_rng(5, 0);
        let fs: Vec<LocalOp> = s.dims().iter().map(|&d| random_psd(d, &mut rng)).collect();
        let x = tensor(&s, &fs).unwrap().scaled(3.0);
        let f = nearest_product(&x, &opts());
        assert!(f.residual <= 1e-9, "{}", f.residual);
        for (p, a) in fs.iter().enumerate() {
            assert!(f.factor_fidelity(p, a) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn residual_matches_fields() {
        let s = PartitionedSpace::two_qubits();
        let mut rng = task_rng(9, 1);
        let x = HermitianOperator::new(s.clone(), random_psd(4, &mut rng)).unwrap();
        let f = nearest_product(&x, &opts());
        let recomputed = x.distance_frobenius(&f.product(&s));
        assert!((recomputed - f.residual).abs() < 1e-12);
    }
}
