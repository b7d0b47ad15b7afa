//! Serde helpers for dense matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Dense {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    Dense {
        rows: m.nrows(),
        cols: m.ncols(),
        data: m.transpose().as_slice().to_vec(),
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let dense = Dense::deserialize(d)?;
    if dense.data.len() != dense.rows * dense.cols {
        return Err(serde::de::Error::custom(format!(
            "matrix data has {} entries, expected {}x{}",
            dense.data.len(),
            dense.rows,
            dense.cols
        )));
    }
    Ok(DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data))
}
