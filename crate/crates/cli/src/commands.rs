use clap::Args;
use locc_geometry::ensembles::{
    discrimination_partition, prop1_certificate, Prop1Options, BUILTIN_NAMES, DEFAULT_CONTINUITY_TOL,
    DEFAULT_PARTITION_TOL,
};
use locc_geometry::locc::DEFAULT_SAMPLES_PER_SEGMENT;
use locc_geometry::path::{find_path_to_generator, DEFAULT_ENDPOINT_TOL, DEFAULT_PRODUCT_TOL};
use locc_geometry::povm::COMPLETENESS_TOL;
use locc_geometry::zonotope::{DEFAULT_VERTEX_CAP, MEMBERSHIP_TOL};
use locc_geometry::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::input::*;

fn value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize to JSON")
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// POVM file or `builtin:<name>`.
    #[arg(long)]
    pub povm: String,
    #[arg(long, default_value_t = COMPLETENESS_TOL)]
    pub tol_completeness: f64,
}

pub fn validate(a: &ValidateArgs) -> CliResult<Value> {
    let povm = load_povm_unchecked(&a.povm)?;
    Ok(json!({
        "dims": povm.space().dims(),
        "labels": povm.labels(),
        "validation": locc_geometry::validate(&povm, a.tol_completeness),
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct WeightsArgs {
    /// Ensemble whose states are used as (normalised) projectors.
    #[arg(long)]
    pub ensemble: String,
    /// Weights whose whole feasible interval lies below this are forced to zero.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_zero: f64,
    #[arg(long, default_value_t = COMPLETENESS_TOL)]
    pub tol_completeness: f64,
}

pub fn weights(a: &WeightsArgs) -> CliResult<Value> {
    let ens = load_ensemble(&a.ensemble)?;
    let projectors: Vec<HermitianOperator> = ens.states().iter().map(|s| s.scaled(1.0 / s.trace())).collect();
    let sol = completeness_weights(&projectors)?;
    let forced_zero = sol.forced_zero(a.tol_zero);
    let measurement = if sol.feasible {
        let (elements, labels): (Vec<_>, Vec<_>) = projectors
            .iter()
            .zip(&sol.weights)
            .enumerate()
            .filter(|(k, _)| !forced_zero.contains(k))
            .map(|(k, (p, &w))| (p.scaled(w), ens.names()[k].clone()))
            .unzip();
        let povm = Povm::unchecked(ens.space().clone(), elements, Some(labels.clone()))?;
        Some(json!({
            "labels": labels,
            "validation": locc_geometry::validate(&povm, a.tol_completeness),
        }))
    } else {
        None
    };
    Ok(json!({
        "names": ens.names(),
        "solution": sol,
        "forced_zero": forced_zero.iter().map(|&k| &ens.names()[k]).collect::<Vec<_>>(),
        "measurement": measurement,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct MemberArgs {
    #[arg(long)]
    pub povm: String,
    /// JSON matrix file with the operator to test.
    #[arg(long, conflicts_with = "coefficients")]
    pub operator: Option<String>,
    /// Comma-separated coefficients: tests `sum_j c_j E_j`.
    #[arg(long)]
    pub coefficients: Option<String>,
    #[arg(long, default_value_t = MEMBERSHIP_TOL)]
    pub tol_membership: f64,
}

pub fn member(a: &MemberArgs) -> CliResult<Value> {
    let povm = load_povm_unchecked(&a.povm)?;
    let z = Zonotope::from_povm(&povm);
    let x = match (&a.operator, &a.coefficients) {
        (Some(path), _) => load_operator(path, povm.space())?,
        (None, Some(list)) => {
            let c: Vec<f64> = parse_list(list, "--coefficients")?;
            if c.len() != z.len() {
                return Err(LoccError::DimensionMismatch {
                    expected: z.len(),
                    actual: c.len(),
                }
                .into());
            }
            z.point(&c)
        }
        (None, None) => return Err(CliError::Usage("give --operator or --coefficients".into())),
    };
    Ok(json!({
        "trace": x.trace(),
        "membership": z.contains(&x, a.tol_membership)?,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct HausdorffArgs {
    #[arg(long)]
    pub povm: String,
    /// Second POVM; defaults to the first with proportional elements merged.
    #[arg(long)]
    pub other: Option<String>,
    #[arg(long, default_value = "trace")]
    pub norm: Norm,
    /// `vertex` (exact, small POVMs) or `sampled` (lower bound).
    #[arg(long, default_value = "vertex")]
    pub method: String,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn hausdorff(a: &HausdorffArgs) -> CliResult<Value> {
    let p1 = load_povm_unchecked(&a.povm)?;
    let p2 = match &a.other {
        Some(uri) => load_povm_unchecked(uri)?,
        None => merge_proportional(&p1, locc_geometry::povm::PROPORTIONALITY_TOL),
    };
    let vertex = VertexEnumeration { cap: DEFAULT_VERTEX_CAP };
    let sampled = SampledVertices {
        samples: a.samples,
        seed: a.seed,
        ..Default::default()
    };
    let method: &dyn DistanceMethod = match a.method.as_str() {
        "vertex" => &vertex,
        "sampled" => &sampled,
        other => return Err(CliError::Usage(format!("unknown method `{other}` (vertex, sampled)"))),
    };
    let z1 = Zonotope::from_povm(&p1);
    let z2 = Zonotope::from_povm(&p2);
    Ok(json!({
        "generators": [z1.len(), z2.len()],
        "report": locc_geometry::hausdorff(&z1, &z2, a.norm, method)?,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct PathSearchArgs {
    #[arg(long)]
    pub povm: String,
    /// Outcome label, index, or `all`.
    #[arg(long, default_value = "all")]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    /// Trace decrease per step; defaults to D/200.
    #[arg(long)]
    pub s_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PRODUCT_TOL)]
    pub tol_product: f64,
    #[arg(long, default_value_t = MEMBERSHIP_TOL)]
    pub tol_membership: f64,
    #[arg(long, default_value_t = DEFAULT_ENDPOINT_TOL)]
    pub tol_endpoint: f64,
    /// Tolerance used when re-verifying found paths.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_verify: f64,
}

impl PathSearchArgs {
    fn options(&self) -> PathSearchOptions {
        PathSearchOptions {
            s_step: self.s_step,
            restarts: self.restarts,
            seed: self.seed,
            product_tol: self.tol_product,
            membership_tol: self.tol_membership,
            endpoint_tol: self.tol_endpoint,
            ..Default::default()
        }
    }
}

pub fn path_search(a: &PathSearchArgs) -> CliResult<Value> {
    let povm = load_povm(&a.povm)?;
    let z = Zonotope::from_povm(&povm);
    let opts = a.options();
    let mut results = Vec::new();
    let mut found = 0;
    for t in resolve_targets(&povm, &a.target)? {
        let outcome = find_path_to_generator(&z, t, &opts)?;
        let verification = outcome.path().map(|p| verify_path(p, &z, a.tol_verify));
        found += usize::from(outcome.path().is_some());
        results.push(json!({
            "target": povm.labels()[t],
            "outcome": outcome,
            "verification": verification,
        }));
    }
    Ok(json!({
        "options": opts,
        "paths_found": found,
        "targets": results,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct IsolateArgs {
    #[arg(long)]
    pub povm: String,
    #[arg(long)]
    pub target: String,
    /// Relative trace-norm radius of the neighbourhood of the segment.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also scan the full coefficient grid with this spacing.
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long, default_value_t = 1_000)]
    pub descent_runs: usize,
    #[arg(long, default_value_t = locc_geometry::isolation::DEFAULT_ISOLATION_PRODUCT_TOL)]
    pub tol_product: f64,
    #[arg(long, default_value_t = locc_geometry::isolation::DEFAULT_ON_SEGMENT_TOL)]
    pub tol_segment: f64,
    #[arg(long, default_value_t = MEMBERSHIP_TOL)]
    pub tol_membership: f64,
}

pub fn isolate(a: &IsolateArgs) -> CliResult<Value> {
    let povm = load_povm(&a.povm)?;
    let targets = resolve_targets(&povm, &a.target)?;
    let [t] = targets[..] else {
        return Err(CliError::Usage("isolate takes a single target".into()));
    };
    let z = Zonotope::from_povm(&povm);
    let opts = IsolationOptions {
        epsilon: a.epsilon,
        samples: a.samples,
        seed: a.seed,
        grid_step: a.grid_step,
        descent_runs: a.descent_runs,
        product_tol: a.tol_product,
        on_segment_tol: a.tol_segment,
        membership_tol: a.tol_membership,
        ..Default::default()
    };
    let report = isolation_probe(&z, t, &opts)?;
    Ok(json!({
        "target_label": povm.labels()[t],
        "report": report,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Tree file, or `builtin:footnote` for the two-round example protocol.
    /// Without it a random tree is drawn.
    #[arg(long)]
    pub tree: Option<String>,
    /// Local dimensions of the random tree, comma-separated.
    #[arg(long, default_value = "2,2")]
    pub dims: String,
    #[arg(long, default_value_t = 2)]
    pub rounds: usize,
    #[arg(long, default_value_t = 2)]
    pub branching: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_SEGMENT)]
    pub samples_per_segment: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol_lemma4: f64,
    /// Random points per nesting check between consecutive depths.
    #[arg(long, default_value_t = 64)]
    pub nesting_samples: usize,
}

pub fn simulate(a: &SimulateArgs) -> CliResult<Value> {
    let tree = match a.tree.as_deref() {
        Some("builtin:footnote") => footnote_protocol(),
        Some(path) => load_tree(path)?,
        None => {
            let space = PartitionedSpace::new(parse_list(&a.dims, "--dims")?)?;
            random_protocol(&space, a.rounds, a.branching, a.seed)?
        }
    };
    let leaf_povm = tree.leaf_povm()?;
    let z = Zonotope::from_povm(&leaf_povm);
    let mut branches = Vec::new();
    let mut all_passed = true;
    for leaf in tree.leaves() {
        let path = tree.branch_path(leaf, a.samples_per_segment)?;
        let report = verify_path(&path, &z, a.tol);
        all_passed &= report.passed;
        branches.push(json!({
            "leaf": tree.label(leaf),
            "points": path.points.len(),
            "verification": report,
        }));
    }
    let depth = tree.round_count();
    let mut nesting = Vec::new();
    for k in 0..depth {
        let coarse = Zonotope::from_povm(&tree.truncated_povm(k)?);
        let fine = Zonotope::from_povm(&tree.truncated_povm(k + 1)?);
        let report = nesting_check(&coarse, &fine, a.nesting_samples, a.seed ^ k as u64, a.tol)?;
        all_passed &= report.passed;
        nesting.push(json!({ "depth": k, "report": report }));
    }
    let lemma4 = tree.check_lemma4(a.tol_lemma4);
    all_passed &= lemma4.passed;
    Ok(json!({
        "dims": tree.space().dims(),
        "nodes": tree.nodes().len(),
        "leaves": tree.leaves().len(),
        "rounds": depth,
        "lemma4": lemma4,
        "leaf_povm_validation": locc_geometry::validate(&leaf_povm, a.tol_lemma4),
        "branches": branches,
        "nesting": nesting,
        "all_passed": all_passed,
        "tree": tree.to_file(),
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct Prop1Args {
    #[arg(long)]
    pub povm: String,
    #[arg(long)]
    pub ensemble: String,
    #[arg(long, default_value = "all")]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CONTINUITY_TOL)]
    pub continuity_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_PARTITION_TOL)]
    pub tol_partition: f64,
}

pub fn prop1(a: &Prop1Args) -> CliResult<Value> {
    let povm = load_povm(&a.povm)?;
    let ens = load_ensemble(&a.ensemble)?;
    if ens.space() != povm.space() {
        return Err(LoccError::DimensionMismatch {
            expected: povm.space().total_dim(),
            actual: ens.space().total_dim(),
        }
        .into());
    }
    let partition = discrimination_partition(&povm, &ens, a.tol_partition)?;
    let z = Zonotope::from_povm(&povm);
    let search = PathSearchOptions {
        seed: a.seed,
        ..Default::default()
    };
    let opts = Prop1Options {
        continuity_tol: a.continuity_tol,
        tol: a.tol,
    };
    let mut certificates = Vec::new();
    for t in resolve_targets(&povm, &a.target)? {
        let outcome = find_path_to_generator(&z, t, &search)?;
        let certificate = match outcome.path() {
            Some(path) => Some(prop1_certificate(path, &ens, &opts)?),
            None => None,
        };
        certificates.push(json!({
            "target": povm.labels()[t],
            "path_found": certificate.is_some(),
            "certificate": certificate,
        }));
    }
    Ok(json!({
        "partition": partition,
        "targets": certificates,
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct EnsemblesArgs {
    /// Print this fixture instead of listing all of them.
    #[arg(long)]
    pub name: Option<String>,
}

fn describe(b: &Builtin) -> Value {
    match b {
        Builtin::Povm(p) => json!({
            "kind": "povm",
            "dims": p.space().dims(),
            "labels": p.labels(),
        }),
        Builtin::Ensemble(e) => json!({
            "kind": "ensemble",
            "dims": e.space().dims(),
            "labels": e.names(),
        }),
    }
}

pub fn ensembles(a: &EnsemblesArgs) -> CliResult<Value> {
    match &a.name {
        None => {
            let list = BUILTIN_NAMES
                .iter()
                .map(|&n| {
                    let mut d = describe(&builtin(n)?);
                    d["name"] = json!(n);
                    Ok(d)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(json!({ "builtins": list }))
        }
        Some(name) => {
            let name = name.strip_prefix("builtin:").unwrap_or(name);
            let b = builtin(name)?;
            let mut d = describe(&b);
            d["name"] = json!(name);
            d["operators"] = match &b {
                Builtin::Povm(p) => value(&p.elements()),
                Builtin::Ensemble(e) => value(&e.states()),
            };
            Ok(d)
        }
    }
}
