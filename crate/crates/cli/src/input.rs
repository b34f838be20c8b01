//! Loading POVMs, ensembles, operators and trees from `builtin:<name>` URIs
//! or JSON files.

use std::fs;
use std::path::Path;

use locc_geometry::json::{matrix_from_json, EnsembleFile, JsonMatrix, PovmFile};
use locc_geometry::locc::TreeFile;
use locc_geometry::{builtin, Ensemble, HermitianOperator, LoccError, LoccTree, PartitionedSpace, Povm};
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

const BUILTIN_PREFIX: &str = "builtin:";

fn read_json<T: DeserializeOwned>(path: &str) -> CliResult<T> {
    let text = fs::read_to_string(Path::new(path)).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        origin: path.to_string(),
        source,
    })
}

/// A POVM that has not yet been checked for completeness.
pub fn load_povm_unchecked(uri: &str) -> CliResult<Povm> {
    if let Some(name) = uri.strip_prefix(BUILTIN_PREFIX) {
        return builtin(name)?.into_povm().ok_or_else(|| {
            CliError::Core(LoccError::InvalidInput(format!("builtin `{name}` is an ensemble, not a POVM")))
        });
    }
    let file: PovmFile = read_json(uri)?;
    Ok(Povm::from_file(&file)?)
}

/// A POVM that passed the completeness and positivity checks.
pub fn load_povm(uri: &str) -> CliResult<Povm> {
    let povm = load_povm_unchecked(uri)?;
    let space = povm.space().clone();
    let labels = povm.labels().to_vec();
    Ok(Povm::new(space, povm.elements().to_vec(), Some(labels))?)
}

pub fn load_ensemble(uri: &str) -> CliResult<Ensemble> {
    if let Some(name) = uri.strip_prefix(BUILTIN_PREFIX) {
        return builtin(name)?.into_ensemble().ok_or_else(|| {
            CliError::Core(LoccError::InvalidInput(format!("builtin `{name}` is a POVM, not an ensemble")))
        });
    }
    let file: EnsembleFile = read_json(uri)?;
    Ok(Ensemble::from_file(&file)?)
}

pub fn load_operator(path: &str, space: &PartitionedSpace) -> CliResult<HermitianOperator> {
    let m: JsonMatrix = read_json(path)?;
    Ok(HermitianOperator::new(space.clone(), matrix_from_json(&m)?)?)
}

pub fn load_tree(path: &str) -> CliResult<LoccTree> {
    let file: TreeFile = read_json(path)?;
    Ok(LoccTree::from_file(&file)?)
}

/// Resolves an outcome given by label or by index; `all` selects every one.
pub fn resolve_targets(povm: &Povm, target: &str) -> CliResult<Vec<usize>> {
    if target == "all" {
        return Ok((0..povm.len()).collect());
    }
    if let Some(j) = povm.index_of(target) {
        return Ok(vec![j]);
    }
    match target.parse::<usize>() {
        Ok(j) if j < povm.len() => Ok(vec![j]),
        _ => Err(CliError::Core(LoccError::InvalidInput(format!(
            "unknown target `{target}`; labels are {:?}",
            povm.labels()
        )))),
    }
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse `{t}` in {what}")))
        })
        .collect()
}
