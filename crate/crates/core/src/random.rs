//! Seeded random operators. Every task draws from its own ChaCha stream
//! keyed by `(seed, index)`, so results do not depend on scheduling.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::operator::{hermitize, psd_sqrt, LocalOp, C64};

pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn ginibre<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Random full-rank PSD matrix `G G^dagger`, unit Frobenius norm.
pub fn random_psd<R: Rng>(d: usize, rng: &mut R) -> LocalOp {
    let g = ginibre(d, d, rng);
    let m = hermitize(&(&g * g.adjoint()));
    let n = m.norm();
    m.unscale(n)
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary<R: Rng>(d: usize, rng: &mut R) -> DMatrix<C64> {
    let qr = ginibre(d, d, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// PSD contraction `0 <= M <= I` with uniformly drawn eigenvalues.
pub fn random_contraction<R: Rng>(d: usize, rng: &mut R) -> LocalOp {
    let u = random_unitary(d, rng);
    let diag = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::new(rng.gen_range(0.0..1.0), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    hermitize(&(&u * diag * u.adjoint()))
}

/// Complete local measurement with `outcomes` elements summing to the identity.
/// Built from nested two-outcome splits `{M, I - M}`.
pub fn random_local_measurement<R: Rng>(d: usize, outcomes: usize, rng: &mut R) -> Vec<LocalOp> {
    let mut elements = Vec::with_capacity(outcomes);
    let mut remainder = LocalOp::identity(d, d);
    for _ in 1..outcomes {
        let m = random_contraction(d, rng);
        let root = psd_sqrt(&remainder);
        let take = hermitize(&(&root * &m * &root));
        let rest = hermitize(&(&root * (LocalOp::identity(d, d) - &m) * &root));
        elements.push(take);
        remainder = rest;
    }
    elements.push(remainder);
    elements
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: f64 = task_rng(1, 0).gen();
        let b: f64 = task_rng(1, 0).gen();
        let c: f64 = task_rng(1, 1).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn local_measurement_is_complete() {
        let mut rng = task_rng(3, 0);
        for outcomes in 1..5 {
            let els = random_local_measurement(3, outcomes, &mut rng);
            assert_eq!(els.len(), outcomes);
            let sum = els.iter().fold(LocalOp::zeros(3, 3), |acc, e| acc + e);
            assert!((sum - LocalOp::identity(3, 3)).norm() < 1e-12);
        }
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = task_rng(4, 0);
        let u = random_unitary(3, &mut rng);
        assert!((&u * u.adjoint() - DMatrix::<C64>::identity(3, 3)).norm() < 1e-12);
    }
}
