//! JSON wire formats. Complex matrices are row-major nested arrays of
//! `[re, im]` pairs; state vectors are flat arrays of pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{LoccError, Result};
use crate::operator::{HermitianOperator, C64};

pub type JsonMatrix = Vec<Vec<[f64; 2]>>;
pub type JsonVector = Vec<[f64; 2]>;

pub fn matrix_to_json(m: &DMatrix<C64>) -> JsonMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &JsonMatrix) -> Result<DMatrix<C64>> {
    let n = rows.len();
    if n == 0 {
        return Err(LoccError::InvalidInput("empty matrix".into()));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(LoccError::DimensionMismatch {
            expected: cols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| {
        let [re, im] = rows[i][j];
        C64::new(re, im)
    }))
}

pub fn vector_from_json(v: &JsonVector) -> DVector<C64> {
    DVector::from_iterator(v.len(), v.iter().map(|&[re, im]| C64::new(re, im)))
}

/// A pure state vector or a density matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonState {
    Matrix(JsonMatrix),
    Vector(JsonVector),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PovmFile {
    pub dims: Vec<usize>,
    pub elements: Vec<JsonMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub dims: Vec<usize>,
    pub states: Vec<JsonState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl Serialize for HermitianOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_json(self.matrix()).serialize(s)
    }
}

pub mod matrix_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<C64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_json(m).serialize(s)
    }
}

pub mod local_ops_serde {
    use super::*;

    pub fn serialize<S: Serializer>(ops: &[DMatrix<C64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<JsonMatrix> = ops.iter().map(matrix_to_json).collect();
        v.serialize(s)
    }
}
