//! State ensembles, the built-in examples, and the certificate linking a
//! product-operator path to a discrimination condition on an ensemble.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LoccError, Result};
use crate::factorize::{nearest_product, FactorizationOptions};
use crate::json::{matrix_from_json, vector_from_json, EnsembleFile, JsonState, JsonVector};
use crate::operator::{hermitian_eigen, HermitianOperator, PartitionedSpace, C64, PSD_TOL};
use crate::path::OperatorPath;
use crate::povm::{completeness_weights, Povm};
use crate::random::{ginibre, task_rng};

pub const TRACE_TOL: f64 = 1e-10;
pub const DEFAULT_PARTITION_TOL: f64 = 1e-9;
pub const DEFAULT_CONTINUITY_TOL: f64 = 0.05;
const KERNEL_EIGEN_TOL: f64 = 1e-10;
const PRODUCT_VECTOR_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Ensemble {
    space: PartitionedSpace,
    states: Vec<HermitianOperator>,
    names: Vec<String>,
}

impl Ensemble {
    pub fn new(space: PartitionedSpace, states: Vec<HermitianOperator>, names: Option<Vec<String>>) -> Result<Self> {
        if states.is_empty() {
            return Err(LoccError::InvalidInput("an ensemble needs at least one state".into()));
        }
        for rho in &states {
            if rho.space() != &space {
                return Err(LoccError::DimensionMismatch {
                    expected: space.total_dim(),
                    actual: rho.dim(),
                });
            }
            let min = rho.min_eigenvalue();
            if min < -PSD_TOL {
                return Err(LoccError::NotPsd { min_eigenvalue: min });
            }
            if (rho.trace() - 1.0).abs() > TRACE_TOL {
                return Err(LoccError::InvalidInput(format!("state has trace {}", rho.trace())));
            }
        }
        let names = match names {
            Some(n) if n.len() != states.len() => {
                return Err(LoccError::InvalidInput(format!("{} names for {} states", n.len(), states.len())))
            }
            Some(n) => n,
            None => (0..states.len()).map(|k| format!("rho{k}")).collect(),
        };
        Ok(Self { space, states, names })
    }

    /// Pure states, normalised here.
    pub fn from_vectors(space: PartitionedSpace, vectors: &[DVector<C64>], names: Option<Vec<String>>) -> Result<Self> {
        let states = vectors
            .iter()
            .map(|v| {
                let n = v.norm();
                if n == 0.0 {
                    return Err(LoccError::InvalidInput("zero state vector".into()));
                }
                HermitianOperator::projector(&space, &v.unscale(n))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, states, names)
    }

    pub fn from_file(file: &EnsembleFile) -> Result<Self> {
        let space = PartitionedSpace::new(file.dims.clone())?;
        let states = file
            .states
            .iter()
            .map(|s| match s {
                JsonState::Matrix(m) => HermitianOperator::new(space.clone(), matrix_from_json(m)?),
                JsonState::Vector(v) => {
                    let v = vector_from_json(v);
                    if v.len() != space.total_dim() {
                        return Err(LoccError::DimensionMismatch {
                            expected: space.total_dim(),
                            actual: v.len(),
                        });
                    }
                    let n = v.norm();
                    if n == 0.0 {
                        return Err(LoccError::InvalidInput("zero state vector".into()));
                    }
                    HermitianOperator::projector(&space, &v.unscale(n))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, states, file.names.clone())
    }

    pub fn space(&self) -> &PartitionedSpace {
        &self.space
    }

    pub fn states(&self) -> &[HermitianOperator] {
        &self.states
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn two_qubit(amps: [f64; 4]) -> DVector<C64> {
    DVector::from_iterator(4, amps.iter().map(|&a| c(a)))
}

fn kron2(a: [f64; 2], b: [f64; 2]) -> DVector<C64> {
    two_qubit([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
}

/// The three mutually orthogonal two-qubit states, unnormalised.
pub fn kkb15_vectors() -> Vec<DVector<C64>> {
    let (s2, s3, s6, r) = (2f64.sqrt(), 3f64.sqrt(), 6f64.sqrt(), 3f64.powf(0.25));
    vec![
        two_qubit([1.0, 0.0, 0.0, 0.0]),
        two_qubit([0.0, 2.0, -(s3 + 1.0), -s6 * r]),
        two_qubit([0.0, 2.0, -(s3 - 1.0), s2 * r]),
    ]
}

/// The unique direction orthogonal to all three states, unnormalised.
pub fn kkb15_orthocomplement_vector() -> DVector<C64> {
    let (s2, s3, r) = (2f64.sqrt(), 3f64.sqrt(), 3f64.powf(0.25));
    two_qubit([0.0, 2.0 * r, r * (s3 + 1.0), -s2])
}

pub const KKB15_PRODUCT_NAMES: [&str; 6] = ["psi11", "psi12", "psi21", "psi22", "psi31", "psi32"];

/// Product states spanned by the orthocomplement and one of the three
/// states, unnormalised, in the order of [`KKB15_PRODUCT_NAMES`].
pub fn kkb15_product_vectors() -> Vec<DVector<C64>> {
    let (s2, s3, r) = (2f64.sqrt(), 3f64.sqrt(), 3f64.powf(0.25));
    let r3 = 3f64.powf(0.75);
    vec![
        kron2([1.0, 0.0], [1.0, 0.0]),
        kron2([s2 * r, -1.0], [r * (s3 + 1.0), -s2]),
        kron2([r, -s2], [0.0, 1.0]),
        kron2([0.0, 1.0], [r * (s3 + 1.0), s2]),
        kron2([r3, s2], [0.0, 1.0]),
        kron2([0.0, 1.0], [r3 * s2, -(s3 + 1.0)]),
    ]
}

fn footnote_vectors() -> Vec<DVector<C64>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        kron2([1.0, 0.0], [1.0, 0.0]),
        kron2([1.0, 0.0], [0.0, 1.0]),
        kron2([0.0, 1.0], [h, h]),
        kron2([0.0, 1.0], [h, -h]),
    ]
}

fn bell_vectors() -> Vec<DVector<C64>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        two_qubit([h, 0.0, 0.0, h]),
        two_qubit([h, 0.0, 0.0, -h]),
        two_qubit([0.0, h, h, 0.0]),
        two_qubit([0.0, h, -h, 0.0]),
    ]
}

const BELL_NAMES: [&str; 4] = ["phi+", "phi-", "psi+", "psi-"];
const FOOTNOTE_NAMES: [&str; 4] = ["00", "01", "1+", "1-"];

pub const BUILTIN_NAMES: [&str; 8] = [
    "bell-states",
    "bell-povm",
    "bell-states-as-povm",
    "kkb15",
    "kkb15-products",
    "kkb15-measurement",
    "footnote-measurement",
    "footnote-states",
];

#[derive(Clone, Debug)]
pub enum Builtin {
    Ensemble(Ensemble),
    Povm(Povm),
}

impl Builtin {
    pub fn into_povm(self) -> Option<Povm> {
        match self {
            Builtin::Povm(p) => Some(p),
            Builtin::Ensemble(_) => None,
        }
    }

    pub fn into_ensemble(self) -> Option<Ensemble> {
        match self {
            Builtin::Ensemble(e) => Some(e),
            Builtin::Povm(_) => None,
        }
    }
}

fn names(list: &[&str]) -> Option<Vec<String>> {
    Some(list.iter().map(|s| s.to_string()).collect())
}

fn projector_povm(vectors: &[DVector<C64>], labels: &[&str]) -> Result<Povm> {
    let space = PartitionedSpace::two_qubits();
    let elements = vectors
        .iter()
        .map(|v| HermitianOperator::projector(&space, &v.unscale(v.norm())))
        .collect::<Result<Vec<_>>>()?;
    Povm::new(space, elements, names(labels))
}

/// The five-outcome rank-one measurement: weights solved for completeness,
/// with every outcome whose weight is forced to zero removed.
pub fn kkb15_measurement() -> Result<Povm> {
    let space = PartitionedSpace::two_qubits();
    let projectors = kkb15_product_vectors()
        .iter()
        .map(|v| HermitianOperator::projector(&space, &v.unscale(v.norm())))
        .collect::<Result<Vec<_>>>()?;
    let sol = completeness_weights(&projectors)?;
    if !sol.feasible {
        return Err(LoccError::Solver("no complete measurement from the product states".into()));
    }
    let dropped = sol.forced_zero(1e-9);
    let (elements, labels): (Vec<_>, Vec<_>) = projectors
        .iter()
        .zip(&sol.weights)
        .enumerate()
        .filter(|(k, _)| !dropped.contains(k))
        .map(|(k, (p, &w))| (p.scaled(w), KKB15_PRODUCT_NAMES[k].to_string()))
        .unzip();
    Povm::new(space, elements, Some(labels))
}

pub fn builtin(name: &str) -> Result<Builtin> {
    let space = PartitionedSpace::two_qubits();
    Ok(match name {
        "bell-states" => Builtin::Ensemble(Ensemble::from_vectors(space, &bell_vectors(), names(&BELL_NAMES))?),
        "bell-povm" | "bell-states-as-povm" => Builtin::Povm(projector_povm(&bell_vectors(), &BELL_NAMES)?),
        "kkb15" => Builtin::Ensemble(Ensemble::from_vectors(space, &kkb15_vectors(), names(&["psi1", "psi2", "psi3"]))?),
        "kkb15-products" => {
            Builtin::Ensemble(Ensemble::from_vectors(space, &kkb15_product_vectors(), names(&KKB15_PRODUCT_NAMES))?)
        }
        "kkb15-measurement" => Builtin::Povm(kkb15_measurement()?),
        "footnote-measurement" => Builtin::Povm(projector_povm(&footnote_vectors(), &FOOTNOTE_NAMES)?),
        "footnote-states" => Builtin::Ensemble(Ensemble::from_vectors(space, &footnote_vectors(), names(&FOOTNOTE_NAMES))?),
        other => return Err(LoccError::UnknownBuiltin(other.to_string())),
    })
}

/// Orthonormal basis of the common kernel of all states.
pub fn orthocomplement(ensemble: &Ensemble) -> Vec<DVector<C64>> {
    let ones = vec![1.0; ensemble.len()];
    let sum = HermitianOperator::combination(&ensemble.space, &ones, &ensemble.states);
    let (vals, vecs) = hermitian_eigen(sum.matrix());
    let top = vals.last().copied().unwrap_or(0.0).max(1.0);
    (0..vals.len())
        .filter(|&k| vals[k] <= KERNEL_EIGEN_TOL * top)
        .map(|k| vecs.column(k).into_owned())
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelProductReport {
    pub kernel_dim: usize,
    pub starts: usize,
    /// Smallest distance from a unit product vector to the kernel found.
    pub min_residual: f64,
    pub product_vector_found: bool,
    pub best_vector: Option<JsonVector>,
}

/// Searches for a product vector in the common kernel by alternating
/// maximisation of its overlap with the kernel, one party at a time.
pub fn kernel_product_search(ensemble: &Ensemble, n: usize, seed: u64) -> KernelProductReport {
    let kernel = orthocomplement(ensemble);
    if kernel.is_empty() {
        return KernelProductReport {
            kernel_dim: 0,
            starts: 0,
            min_residual: 1.0,
            product_vector_found: false,
            best_vector: None,
        };
    }
    let space = &ensemble.space;
    let dtot = space.total_dim();
    let k = DMatrix::from_fn(dtot, kernel.len(), |i, j| kernel[j][i]);
    let proj = &k * k.adjoint();

    let runs: Vec<(f64, DVector<C64>)> = (0..n.max(1))
        .into_par_iter()
        .map(|run| {
            let mut rng = task_rng(seed, run as u64);
            let mut parts: Vec<DVector<C64>> = space
                .dims()
                .iter()
                .map(|&d| {
                    let g = ginibre(d, 1, &mut rng).column(0).into_owned();
                    g.unscale(g.norm())
                })
                .collect();
            let mut overlap = 0.0;
            for _ in 0..500 {
                for p in 0..parts.len() {
                    let embed = embedding(space, &parts, p);
                    let m = embed.adjoint() * &proj * &embed;
                    let (vals, vecs) = hermitian_eigen(&crate::operator::hermitize(&m));
                    parts[p] = vecs.column(vals.len() - 1).into_owned();
                }
                let v = product_vector(space, &parts);
                let next = (&proj * &v).norm_squared();
                let done = (next - overlap).abs() < 1e-15;
                overlap = next;
                if done {
                    break;
                }
            }
            let v = product_vector(space, &parts);
            ((1.0 - overlap).max(0.0).sqrt(), v)
        })
        .collect();
    let (best, v) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start");
    let found = best <= PRODUCT_VECTOR_TOL;
    KernelProductReport {
        kernel_dim: kernel.len(),
        starts: n.max(1),
        min_residual: best,
        product_vector_found: found,
        best_vector: Some(v.iter().map(|z| [z.re, z.im]).collect()),
    }
}

fn product_vector(space: &PartitionedSpace, parts: &[DVector<C64>]) -> DVector<C64> {
    DVector::from_fn(space.total_dim(), |i, _| {
        space.digits(i).iter().zip(parts).map(|(&d, u)| u[d]).product()
    })
}

/// Linear map `a -> (u_1 (x) .. a .. (x) u_P)` with `a` in slot `p`.
fn embedding(space: &PartitionedSpace, parts: &[DVector<C64>], p: usize) -> DMatrix<C64> {
    let dp = space.dims()[p];
    DMatrix::from_fn(space.total_dim(), dp, |i, a| {
        let digits = space.digits(i);
        if digits[p] != a {
            return c(0.0);
        }
        digits
            .iter()
            .zip(parts)
            .enumerate()
            .filter(|(q, _)| *q != p)
            .map(|(_, (&d, u))| u[d])
            .product()
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Discrimination {
    /// `assignment[j]` is the state outcome `j` responds to (none if it
    /// responds to no state); `classes[mu]` lists the outcomes of state `mu`.
    Partition {
        assignment: Vec<Option<usize>>,
        classes: Vec<Vec<usize>>,
    },
    Failure {
        outcome: usize,
        states: [usize; 2],
        probabilities: [f64; 2],
    },
}

pub fn discrimination_partition(povm: &Povm, ensemble: &Ensemble, tol: f64) -> Result<Discrimination> {
    if povm.space() != ensemble.space() {
        return Err(LoccError::DimensionMismatch {
            expected: povm.space().total_dim(),
            actual: ensemble.space().total_dim(),
        });
    }
    let mut assignment = Vec::with_capacity(povm.len());
    let mut classes = vec![Vec::new(); ensemble.len()];
    for (j, e) in povm.elements().iter().enumerate() {
        let responding: Vec<(usize, f64)> = ensemble
            .states()
            .iter()
            .enumerate()
            .map(|(mu, rho)| (mu, e.expectation(rho)))
            .filter(|&(_, p)| p > tol)
            .collect();
        match responding.as_slice() {
            [] => assignment.push(None),
            [(mu, _)] => {
                assignment.push(Some(*mu));
                classes[*mu].push(j);
            }
            [(a, pa), (b, pb), ..] => {
                return Ok(Discrimination::Failure {
                    outcome: j,
                    states: [*a, *b],
                    probabilities: [*pa, *pb],
                })
            }
        }
    }
    Ok(Discrimination::Partition { assignment, classes })
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Options {
    pub continuity_tol: f64,
    pub tol: f64,
}

impl Default for Prop1Options {
    fn default() -> Self {
        Self {
            continuity_tol: DEFAULT_CONTINUITY_TOL,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Sample {
    pub s: f64,
    pub r: HermitianOperator,
    pub f: f64,
    /// `sum_mu Tr(R rho_mu)`.
    pub normalization: f64,
    /// `max_{mu != nu} |Tr(R rho_mu R rho_nu)|`.
    pub max_cross_overlap: f64,
    pub min_eigenvalue: f64,
    pub product_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Conditions {
    pub normalized: bool,
    pub orthogonal: bool,
    pub positive: bool,
    pub product: bool,
    pub f_start: f64,
    pub f_end: f64,
    pub starts_at_uniform: bool,
    pub ends_at_one: bool,
    pub max_f_gap: f64,
    pub continuous: bool,
    pub covers_range: bool,
    pub all_satisfied: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Certificate {
    pub states: usize,
    pub sweep: Vec<Prop1Sample>,
    pub conditions: Prop1Conditions,
    pub options: Prop1Options,
}

/// Normalises each path point against the ensemble,
/// `R = P / sum_mu Tr(P rho_mu)`, and checks the resulting conditions.
pub fn prop1_certificate(path: &OperatorPath, ensemble: &Ensemble, opts: &Prop1Options) -> Result<Prop1Certificate> {
    let first = path
        .points
        .first()
        .ok_or_else(|| LoccError::InvalidInput("empty path".into()))?;
    if first.operator.space() != ensemble.space() {
        return Err(LoccError::DimensionMismatch {
            expected: ensemble.space().total_dim(),
            actual: first.operator.dim(),
        });
    }
    let n = ensemble.len();
    let sweep: Vec<Prop1Sample> = path
        .points
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let den: f64 = ensemble.states().iter().map(|rho| p.operator.expectation(rho)).sum();
            if !(den > 1e-12) {
                return Err(LoccError::VanishingDenominator { index, value: den });
            }
            let r = p.operator.scaled(1.0 / den);
            let probs: Vec<f64> = ensemble.states().iter().map(|rho| r.expectation(rho)).collect();
            let rr: Vec<DMatrix<C64>> = ensemble.states().iter().map(|rho| r.matrix() * rho.matrix()).collect();
            let mut cross: f64 = 0.0;
            for mu in 0..n {
                for nu in mu + 1..n {
                    cross = cross.max((&rr[mu] * &rr[nu]).trace().norm());
                }
            }
            Ok(Prop1Sample {
                s: p.s,
                f: probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                normalization: probs.iter().sum(),
                max_cross_overlap: cross,
                min_eigenvalue: r.min_eigenvalue(),
                product_residual: nearest_product(&r, &FactorizationOptions::default()).residual,
                r,
            })
        })
        .collect::<Result<_>>()?;

    let tol = opts.tol;
    let f_start = sweep.first().map_or(f64::NAN, |s| s.f);
    let f_end = sweep.last().map_or(f64::NAN, |s| s.f);
    let max_f_gap = sweep.windows(2).map(|w| (w[1].f - w[0].f).abs()).fold(0.0, f64::max);
    let normalized = sweep.iter().all(|s| (s.normalization - 1.0).abs() <= tol);
    let orthogonal = sweep.iter().all(|s| s.max_cross_overlap <= tol);
    let positive = sweep.iter().all(|s| s.min_eigenvalue >= -tol);
    let product = sweep
        .iter()
        .all(|s| s.product_residual <= tol * s.r.frobenius_norm().max(1.0));
    let starts_at_uniform = (f_start - 1.0 / n as f64).abs() <= tol;
    let ends_at_one = (f_end - 1.0).abs() <= tol;
    let continuous = max_f_gap <= opts.continuity_tol;
    let covers_range = starts_at_uniform && ends_at_one && continuous;
    let all_satisfied = normalized && orthogonal && positive && product && covers_range;
    Ok(Prop1Certificate {
        states: n,
        sweep,
        conditions: Prop1Conditions {
            normalized,
            orthogonal,
            positive,
            product,
            f_start,
            f_end,
            starts_at_uniform,
            ends_at_one,
            max_f_gap,
            continuous,
            covers_range,
            all_satisfied,
        },
        options: opts.clone(),
    })
}
