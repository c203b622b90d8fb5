//! Dense helpers shared by the numerical modules.
//!
//! Everything here works on `DMatrix<f64>` and reports singularity through
//! [`Error::Singular`] with the caller's label, so failures point at the
//! block that broke.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default reciprocal-condition threshold below which a matrix counts as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// Reciprocal 2-norm condition number `σ_min / σ_max` (0 for the zero matrix).
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Reciprocal condition of a symmetric matrix from its eigenvalues.
pub fn rcond_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let (lo, hi) = abs_eig_extremes(m);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Smallest and largest absolute eigenvalue of a symmetric matrix, i.e. its
/// extreme singular values.
pub fn abs_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    ev.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    })
}

/// Solve `m · x = rhs` by LU after checking `m` is numerically invertible.
pub fn solve_checked(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let rc = rcond(m);
    if !(rc >= RCOND_MIN) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

/// Like [`solve_checked`], with the condition estimate taken from the
/// eigenvalues of a symmetric (possibly indefinite) `m`.
pub fn solve_sym_checked(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let rc = rcond_sym(m);
    if !(rc >= RCOND_MIN) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

pub fn inverse_checked(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    solve_checked(m, &DMatrix::identity(m.nrows(), m.ncols()), what)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest entry of `|m - mᵀ|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Check that a block has the expected shape.
pub fn expect_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    what: &str,
    t: Option<usize>,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dims(
            what,
            t,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Row-major nested-array conversion used by every JSON format in the crate.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a `DMatrix<f64>` as row-major nested arrays.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, "matrix").map_err(D::Error::custom)
    }
}

/// Serde adapter for a sequence of matrices.
pub mod rows_seq {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let seq = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        seq.iter()
            .map(|rows| from_rows(rows, "matrix").map_err(D::Error::custom))
            .collect()
    }
}

/// Serde adapter for a vector stored as a flat array.
pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter for a sequence of vectors.
pub mod vector_seq {
    use super::*;

    pub fn serialize<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        vs.iter()
            .map(|v| v.as_slice())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_solve_is_reported_with_label() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = solve_checked(&m, &DMatrix::identity(2, 2), "test block").unwrap_err();
        assert!(err.to_string().contains("test block"));
    }

    #[test]
    fn rows_roundtrip_keeps_row_major_order() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(from_rows(&rows, "m").unwrap(), m);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]], "m").is_err());
    }
}
