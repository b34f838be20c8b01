//! Finite-round LOCC protocols as trees of product operators.
//!
//! Nodes carry positive operators `F_n = A_n (x) B_n (x) ..`; a local
//! measurement `{M_k}` by party `p` at a leaf creates children whose factor
//! for `p` is `A^{1/2} M_k A^{1/2}`, so the children sum to the parent.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LoccError, Result};
use crate::factorize::{nearest_product, FactorizationOptions};
use crate::json::{matrix_from_json, matrix_to_json, JsonMatrix};
use crate::operator::{
    hermiticity_deviation, hermitian_eigenvalues, hermitize, psd_sqrt, tensor_unchecked, HermitianOperator,
    LocalOp, PartitionedSpace, PSD_TOL,
};
use crate::path::{OperatorPath, PathPoint};
use crate::povm::Povm;
use crate::random::{random_local_measurement, task_rng};

pub const LOCAL_COMPLETENESS_TOL: f64 = 1e-10;
pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 32;

#[derive(Clone, Debug)]
pub struct LoccNode {
    pub local_ops: Vec<LocalOp>,
    pub operator: HermitianOperator,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Party whose measurement produced this node; `None` at the root.
    pub acting_party: Option<usize>,
    /// Position among its siblings.
    pub outcome: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct LoccTree {
    space: PartitionedSpace,
    nodes: Vec<LoccNode>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma4Report {
    /// `|F_n - sum of descendant leaves|_F` per node.
    pub node_residuals: Vec<f64>,
    pub max_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

impl LoccTree {
    pub fn new(space: PartitionedSpace) -> Self {
        let local_ops: Vec<LocalOp> = space.dims().iter().map(|&d| LocalOp::identity(d, d)).collect();
        let operator = tensor_unchecked(&space, &local_ops);
        Self {
            nodes: vec![LoccNode {
                local_ops,
                operator,
                children: Vec::new(),
                parent: None,
                acting_party: None,
                outcome: None,
            }],
            space,
        }
    }

    pub fn space(&self) -> &PartitionedSpace {
        &self.space
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[LoccNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&LoccNode> {
        self.nodes.get(id).ok_or(LoccError::NodeNotFound(id))
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes.get(id).is_some_and(|n| n.children.is_empty())
    }

    /// Leaves in depth-first order; this order indexes [`Self::leaf_povm`].
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.children.is_empty() {
                out.push(n);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    pub fn depth(&self, id: usize) -> usize {
        self.ancestry(id).len() - 1
    }

    pub fn round_count(&self) -> usize {
        (0..self.nodes.len()).map(|n| self.depth(n)).max().unwrap_or(0)
    }

    /// Node ids from the root down to `id`.
    fn ancestry(&self, id: usize) -> Vec<usize> {
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Outcome indices along the branch, e.g. `"0.2"`; `"root"` for the root.
    pub fn label(&self, id: usize) -> String {
        let chain = self.ancestry(id);
        if chain.len() == 1 {
            return "root".into();
        }
        chain[1..]
            .iter()
            .map(|&n| self.nodes[n].outcome.unwrap_or(0).to_string())
            .collect::<Vec<_>>()
            .join(".")
    }

    pub fn apply_local_measurement(&mut self, node: usize, party: usize, elements: &[LocalOp]) -> Result<Vec<usize>> {
        let parent = self.node(node)?;
        if !parent.children.is_empty() {
            return Err(LoccError::NotLeaf(node));
        }
        let d = *self
            .space
            .dims()
            .get(party)
            .ok_or_else(|| LoccError::InvalidInput(format!("no party {party}")))?;
        check_local_measurement(d, elements)?;

        let root = psd_sqrt(&parent.local_ops[party]);
        let mut ids = Vec::with_capacity(elements.len());
        let parent_ops = parent.local_ops.clone();
        for (k, m) in elements.iter().enumerate() {
            let mut local_ops = parent_ops.clone();
            local_ops[party] = hermitize(&(&root * m * &root));
            let operator = tensor_unchecked(&self.space, &local_ops);
            ids.push(self.nodes.len());
            self.nodes.push(LoccNode {
                local_ops,
                operator,
                children: Vec::new(),
                parent: Some(node),
                acting_party: Some(party),
                outcome: Some(k),
            });
        }
        self.nodes[node].children = ids.clone();
        Ok(ids)
    }

    /// Checks that every node equals the sum of the leaves below it.
    pub fn check_lemma4(&self, tol: f64) -> Lemma4Report {
        let mut leaf_sums: Vec<Option<HermitianOperator>> = vec![None; self.nodes.len()];
        // children always have larger ids than their parent
        for n in (0..self.nodes.len()).rev() {
            let node = &self.nodes[n];
            let sum = if node.children.is_empty() {
                node.operator.clone()
            } else {
                let mut acc = HermitianOperator::zero(&self.space);
                for &c in &node.children {
                    acc = &acc + leaf_sums[c].as_ref().expect("child visited first");
                }
                acc
            };
            leaf_sums[n] = Some(sum);
        }
        let node_residuals: Vec<f64> = self
            .nodes
            .iter()
            .zip(&leaf_sums)
            .map(|(n, s)| n.operator.distance_frobenius(s.as_ref().expect("all visited")))
            .collect();
        let max_residual = node_residuals.iter().copied().fold(0.0, f64::max);
        Lemma4Report {
            node_residuals,
            max_residual,
            tol,
            passed: max_residual <= tol,
        }
    }

    /// The measurement implemented by the tree: one element per leaf.
    pub fn leaf_povm(&self) -> Result<Povm> {
        let leaves = self.leaves();
        let elements = leaves.iter().map(|&l| self.nodes[l].operator.clone()).collect();
        let labels = leaves.iter().map(|&l| self.label(l)).collect();
        Povm::unchecked(self.space.clone(), elements, Some(labels))
    }

    /// The measurement obtained by stopping every branch after `depth` rounds.
    pub fn truncated_povm(&self, depth: usize) -> Result<Povm> {
        let mut ids = Vec::new();
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.children.is_empty() || self.depth(n) == depth {
                ids.push(n);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        let elements = ids.iter().map(|&l| self.nodes[l].operator.clone()).collect();
        let labels = ids.iter().map(|&l| self.label(l)).collect();
        Povm::unchecked(self.space.clone(), elements, Some(labels))
    }

    /// Piecewise-linear path in the trace parameter from the identity down
    /// the branch to `leaf`, followed by the constant piece `F_leaf` for
    /// `s` below its trace. Coefficients refer to [`Self::leaf_povm`].
    pub fn branch_path(&self, leaf: usize, samples_per_segment: usize) -> Result<OperatorPath> {
        if !self.is_leaf(leaf) {
            return Err(if leaf < self.nodes.len() {
                LoccError::NotLeaf(leaf)
            } else {
                LoccError::NodeNotFound(leaf)
            });
        }
        let samples = samples_per_segment.max(1);
        let leaves = self.leaves();
        let target = leaves.iter().position(|&l| l == leaf).expect("leaf listed");
        let indicator = |n: usize| -> Vec<f64> {
            let mut below = vec![false; self.nodes.len()];
            let mut stack = vec![n];
            while let Some(m) = stack.pop() {
                below[m] = true;
                stack.extend(&self.nodes[m].children);
            }
            leaves.iter().map(|&l| if below[l] { 1.0 } else { 0.0 }).collect()
        };

        let chain = self.ancestry(leaf);
        let mut raw: Vec<(f64, HermitianOperator, Vec<f64>)> = Vec::new();
        let mut max_step: f64 = 0.0;
        for w in chain.windows(2) {
            let (a, b) = (&self.nodes[w[0]], &self.nodes[w[1]]);
            let (ta, tb) = (a.operator.trace(), b.operator.trace());
            let (ca, cb) = (indicator(w[0]), indicator(w[1]));
            if ta - tb <= 0.0 {
                continue;
            }
            max_step = max_step.max((ta - tb) / samples as f64);
            for i in 0..samples {
                let lam = i as f64 / samples as f64;
                let op = &a.operator.scaled(1.0 - lam) + &b.operator.scaled(lam);
                let c: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| (1.0 - lam) * x + lam * y).collect();
                raw.push((ta - lam * (ta - tb), op, c));
            }
        }
        let fl = &self.nodes[leaf].operator;
        let tl = fl.trace();
        let cl = indicator(leaf);
        raw.push((tl, fl.clone(), cl.clone()));
        for i in 1..=samples {
            raw.push((tl * (1.0 - i as f64 / samples as f64), fl.clone(), cl.clone()));
        }
        max_step = max_step.max(tl / samples as f64);

        let points = raw
            .into_par_iter()
            .map(|(s, operator, coefficients)| PathPoint {
                s,
                product_residual: nearest_product(&operator, &FactorizationOptions::default()).residual,
                operator,
                coefficients,
            })
            .collect();
        Ok(OperatorPath {
            target,
            endpoint_scale: 1.0,
            step_cap: max_step,
            points,
        })
    }

    pub fn to_file(&self) -> TreeFile {
        fn build(tree: &LoccTree, n: usize) -> NodeFile {
            let node = &tree.nodes[n];
            NodeFile {
                party: node.acting_party,
                local_ops: node.local_ops.iter().map(matrix_to_json).collect(),
                children: node.children.iter().map(|&c| build(tree, c)).collect(),
            }
        }
        TreeFile {
            dims: self.space.dims().to_vec(),
            root: build(self, 0),
        }
    }

    /// Rebuilds a tree, checking that each sibling set is a complete local
    /// measurement by one party on its parent.
    pub fn from_file(file: &TreeFile) -> Result<Self> {
        let space = PartitionedSpace::new(file.dims.clone())?;
        let mut tree = LoccTree::new(space);
        let root_ops = parse_ops(&tree.space, &file.root.local_ops)?;
        let id_dev = root_ops
            .iter()
            .map(|a| (a - LocalOp::identity(a.nrows(), a.nrows())).norm())
            .fold(0.0, f64::max);
        if id_dev > LOCAL_COMPLETENESS_TOL {
            return Err(LoccError::InvalidInput("root must carry identity factors".into()));
        }
        let mut stack = vec![(0usize, &file.root)];
        while let Some((id, nf)) = stack.pop() {
            if nf.children.is_empty() {
                continue;
            }
            let party = nf.children[0]
                .party
                .ok_or_else(|| LoccError::InvalidInput("child without acting party".into()))?;
            let parent_ops = tree.nodes[id].local_ops.clone();
            let mut sum = LocalOp::zeros(parent_ops[party].nrows(), parent_ops[party].ncols());
            let mut ids = Vec::new();
            for (k, cf) in nf.children.iter().enumerate() {
                if cf.party != Some(party) {
                    return Err(LoccError::InvalidInput("siblings measured by different parties".into()));
                }
                let ops = parse_ops(&tree.space, &cf.local_ops)?;
                for (q, (a, b)) in ops.iter().zip(&parent_ops).enumerate() {
                    if q != party && (a - b).norm() > LOCAL_COMPLETENESS_TOL {
                        return Err(LoccError::InvalidInput(format!("child changes party {q} as well as {party}")));
                    }
                }
                if hermitian_eigenvalues(&ops[party])[0] < -PSD_TOL {
                    return Err(LoccError::InvalidInput("local factor is not PSD".into()));
                }
                sum += &ops[party];
                let operator = tensor_unchecked(&tree.space, &ops);
                ids.push(tree.nodes.len());
                tree.nodes.push(LoccNode {
                    local_ops: ops,
                    operator,
                    children: Vec::new(),
                    parent: Some(id),
                    acting_party: Some(party),
                    outcome: Some(k),
                });
            }
            if (&sum - &parent_ops[party]).norm() > LOCAL_COMPLETENESS_TOL {
                return Err(LoccError::IncompleteMeasurement {
                    deviation: (&sum - &parent_ops[party]).norm(),
                });
            }
            tree.nodes[id].children = ids.clone();
            for (cid, cf) in ids.into_iter().zip(&nf.children).rev() {
                stack.push((cid, cf));
            }
        }
        Ok(tree)
    }
}

fn parse_ops(space: &PartitionedSpace, ops: &[JsonMatrix]) -> Result<Vec<LocalOp>> {
    if ops.len() != space.parties() {
        return Err(LoccError::DimensionMismatch {
            expected: space.parties(),
            actual: ops.len(),
        });
    }
    ops.iter()
        .zip(space.dims())
        .map(|(m, &d)| {
            let a = matrix_from_json(m)?;
            if a.nrows() != d || a.ncols() != d {
                return Err(LoccError::DimensionMismatch { expected: d, actual: a.nrows() });
            }
            if hermiticity_deviation(&a) > 1e-10 {
                return Err(LoccError::NotHermitian {
                    deviation: hermiticity_deviation(&a),
                });
            }
            Ok(hermitize(&a))
        })
        .collect()
}

fn check_local_measurement(d: usize, elements: &[LocalOp]) -> Result<()> {
    if elements.is_empty() {
        return Err(LoccError::InvalidInput("empty local measurement".into()));
    }
    let mut sum = LocalOp::zeros(d, d);
    for m in elements {
        if m.nrows() != d || m.ncols() != d {
            return Err(LoccError::DimensionMismatch { expected: d, actual: m.nrows() });
        }
        let dev = hermiticity_deviation(m);
        if dev > 1e-10 {
            return Err(LoccError::NotHermitian { deviation: dev });
        }
        let min = hermitian_eigenvalues(m)[0];
        if min < -PSD_TOL {
            return Err(LoccError::NotPsd { min_eigenvalue: min });
        }
        sum += m;
    }
    let deviation = (sum - LocalOp::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if deviation > LOCAL_COMPLETENESS_TOL {
        return Err(LoccError::IncompleteMeasurement { deviation });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeFile {
    pub party: Option<usize>,
    pub local_ops: Vec<JsonMatrix>,
    pub children: Vec<NodeFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeFile {
    pub dims: Vec<usize>,
    pub root: NodeFile,
}

/// Every round a random party measures every current leaf with a random
/// complete `branching`-outcome measurement.
pub fn random_protocol(space: &PartitionedSpace, rounds: usize, branching: usize, seed: u64) -> Result<LoccTree> {
    if branching < 1 {
        return Err(LoccError::InvalidInput("branching must be at least 1".into()));
    }
    let mut rng = task_rng(seed, 0);
    let mut tree = LoccTree::new(space.clone());
    let mut frontier = vec![tree.root()];
    for _ in 0..rounds {
        let party = rng.gen_range(0..space.parties());
        let d = space.dims()[party];
        let mut next = Vec::new();
        for leaf in frontier {
            let elements = random_local_measurement(d, branching, &mut rng);
            next.extend(tree.apply_local_measurement(leaf, party, &elements)?);
        }
        frontier = next;
    }
    Ok(tree)
}

/// The footnote-style two-round protocol: A measures in the computational
/// basis, then B measures `{[0],[1]}` after outcome 0 and `{[+],[-]}` after 1.
pub fn footnote_protocol() -> LoccTree {
    use crate::operator::{basis_projector, local_projector, C64};
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut tree = LoccTree::new(PartitionedSpace::two_qubits());
    let a = tree
        .apply_local_measurement(0, 0, &[basis_projector(2, 0), basis_projector(2, 1)])
        .expect("complete measurement");
    tree.apply_local_measurement(a[0], 1, &[basis_projector(2, 0), basis_projector(2, 1)])
        .expect("complete measurement");
    let plus = local_projector(&[C64::new(h, 0.0), C64::new(h, 0.0)]);
    let minus = local_projector(&[C64::new(h, 0.0), C64::new(-h, 0.0)]);
    tree.apply_local_measurement(a[1], 1, &[plus, minus]).expect("complete measurement");
    tree
}

/// `tr(F)` for each node, for quick inspection.
pub fn node_traces(tree: &LoccTree) -> DVector<f64> {
    DVector::from_iterator(tree.nodes().len(), tree.nodes().iter().map(|n| n.operator.trace()))
}
