//! Real-coordinate solvers: bounded-variable least squares (Stark-Parker
//! active set) and a thin wrapper around `microlp` for linear programs.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{LoccError, Result};

/// Box-constrained least squares `min |A x - b|` with `lower <= x <= upper`.
///
/// Columns are rescaled to unit norm before solving, so that the optimality
/// test sees tiny generators as clearly as large ones. Tall systems are
/// compressed once with a QR factorisation so repeated solves against the
/// same `A` only touch an `n x n` triangle.
#[derive(Clone, Debug)]
pub struct BoxLeastSquares {
    a: DMatrix<f64>,
    /// `A` with unit-norm columns (zero columns left as they are).
    scaled: DMatrix<f64>,
    column_norms: Vec<f64>,
    reduced: Option<(DMatrix<f64>, DMatrix<f64>)>,
    scale: f64,
}

#[derive(Clone, Debug)]
pub struct BoxSolution {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Lower,
    Upper,
    Free,
}

impl BoxLeastSquares {
    pub fn new(a: DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let column_norms: Vec<f64> = a
            .column_iter()
            .map(|c| match c.norm() {
                0.0 => 1.0,
                norm => norm,
            })
            .collect();
        let mut scaled = a.clone();
        for (j, &norm) in column_norms.iter().enumerate() {
            scaled.column_mut(j).unscale_mut(norm);
        }
        let reduced = (m > n && n > 0).then(|| {
            let qr = scaled.clone().qr();
            (qr.q().transpose(), qr.r())
        });
        let scale = scaled.norm().max(1.0);
        Self {
            a,
            scaled,
            column_norms,
            reduced,
            scale,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn solve(&self, b: &DVector<f64>, lower: &[f64], upper: &[f64]) -> BoxSolution {
        let (sys, rhs) = match &self.reduced {
            Some((qt, r)) => (r, qt * b),
            None => (&self.scaled, b.clone()),
        };
        let lo: Vec<f64> = lower.iter().zip(&self.column_norms).map(|(l, d)| l * d).collect();
        let hi: Vec<f64> = upper.iter().zip(&self.column_norms).map(|(u, d)| u * d).collect();
        let (y, iterations) = bvls(sys, &rhs, &lo, &hi, self.scale * (b.norm() + 1.0));
        let x = DVector::from_fn(y.len(), |j, _| (y[j] / self.column_norms[j]).clamp(lower[j], upper[j]));
        let residual = (&self.a * &x - b).norm();
        BoxSolution { x, residual, iterations }
    }
}

fn bvls(a: &DMatrix<f64>, b: &DVector<f64>, lower: &[f64], upper: &[f64], scale: f64) -> (DVector<f64>, usize) {
    let n = a.ncols();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let grad_tol = 1e-14 * scale;
    let mut x = DVector::from_iterator(n, lower.iter().map(|&l| if l.is_finite() { l } else { 0.0 }));
    let mut state = vec![Bound::Lower; n];
    for j in 0..n {
        if !lower[j].is_finite() {
            state[j] = Bound::Free;
        }
    }
    let mut excluded: Option<usize> = None;
    let max_iters = 20 * n + 50;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iters {
            break;
        }
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| Some(j) != excluded)
            .filter_map(|j| match state[j] {
                Bound::Lower if w[j] > grad_tol => Some((j, w[j])),
                Bound::Upper if w[j] < -grad_tol => Some((j, -w[j])),
                _ => None,
            })
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .map(|(j, _)| j);
        let Some(entering) = candidate else { break };
        let previous = state[entering];
        state[entering] = Bound::Free;

        let mut admitted = true;
        let mut first = true;
        loop {
            iterations += 1;
            if iterations > max_iters {
                break;
            }
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == Bound::Free).collect();
            if free.is_empty() {
                break;
            }
            let z = solve_free(a, b, &x, &free);
            if first {
                first = false;
                let k = free.iter().position(|&j| j == entering).expect("entering is free");
                let outward = match previous {
                    Bound::Lower => z[k] <= lower[entering],
                    Bound::Upper => z[k] >= upper[entering],
                    Bound::Free => false,
                };
                if outward {
                    // numerically degenerate entry; keep it bound and try another
                    state[entering] = previous;
                    admitted = false;
                    break;
                }
            }
            let mut alpha = 1.0f64;
            for (k, &j) in free.iter().enumerate() {
                let (xj, zj) = (x[j], z[k]);
                if zj < lower[j] {
                    alpha = alpha.min((lower[j] - xj) / (zj - xj));
                } else if zj > upper[j] {
                    alpha = alpha.min((upper[j] - xj) / (zj - xj));
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (k, &j) in free.iter().enumerate() {
                x[j] += alpha * (z[k] - x[j]);
            }
            if alpha >= 1.0 {
                break;
            }
            let eps = 1e-14 * (1.0 + x.amax());
            for &j in &free {
                if x[j] <= lower[j] + eps {
                    x[j] = lower[j];
                    state[j] = Bound::Lower;
                } else if x[j] >= upper[j] - eps {
                    x[j] = upper[j];
                    state[j] = Bound::Upper;
                }
            }
        }
        excluded = if admitted { None } else { Some(entering) };
    }
    for j in 0..n {
        x[j] = x[j].clamp(lower[j], upper[j]);
    }
    (x, iterations)
}

/// Unconstrained least squares over the free columns, bound columns fixed at
/// `x`. Among minimisers it returns the one closest to the current point:
/// with rank-deficient free columns the minimum-norm solution can move an
/// entering variable back through its bound, the minimum-change one cannot.
fn solve_free(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let m = a.nrows();
    let r = b - a * x;
    let af = DMatrix::from_fn(m, free.len(), |i, k| a[(i, free[k])]);
    let svd = af.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1e-300);
    let step = svd.solve(&r, eps).expect("SVD computed U and V");
    DVector::from_fn(free.len(), |k, _| x[free[k]] + step[k])
}

/// Equality-constrained LP `min c^T x` s.t. `A x = b`, `lower <= x <= upper`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    /// Replaces the equality rows by an orthonormal basis of their row
    /// space, dropping redundant constraints. Returns `None` when `b` has a
    /// component outside the range of `A` larger than `tol`.
    fn reduced(&self, tol: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        if self.a_eq.nrows() == 0 {
            return Some((self.a_eq.clone(), self.b_eq.clone()));
        }
        let svd = self.a_eq.clone().svd(true, false);
        let u = svd.u.as_ref().expect("requested U");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-10 * smax.max(1.0))
            .collect();
        let ur = DMatrix::from_fn(u.nrows(), keep.len(), |i, k| u[(i, keep[k])]);
        let b_r = ur.transpose() * &self.b_eq;
        let outside = (&self.b_eq - &ur * &b_r).norm();
        if outside > tol {
            return None;
        }
        Some((ur.transpose() * &self.a_eq, b_r))
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let Some((a, b)) = self.reduced(1e-9 * (1.0 + self.b_eq.norm())) else {
            return Ok(LpOutcome::Infeasible);
        };
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..self.objective.len())
            .map(|j| problem.add_var(self.objective[j], (self.lower[j], self.upper[j])))
            .collect();
        for i in 0..a.nrows() {
            let terms: Vec<_> = vars
                .iter()
                .enumerate()
                .filter(|(j, _)| a[(i, *j)] != 0.0)
                .map(|(j, &v)| (v, a[(i, j)]))
                .collect();
            problem.add_constraint(terms.as_slice(), ComparisonOp::Eq, b[i]);
        }
        match problem.solve() {
            Ok(outcome) => {
                let sol = outcome
                    .into_solution()
                    .map_err(|e| LoccError::Solver(format!("{e:?}")))?;
                let x = vars.iter().map(|&v| sol.var_value(v)).collect();
                Ok(LpOutcome::Optimal {
                    x,
                    objective: sol.objective(),
                })
            }
            Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
            Err(e) => Err(LoccError::Solver(e.to_string())),
        }
    }
}
