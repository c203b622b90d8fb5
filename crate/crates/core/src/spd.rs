//! Symmetric positive-definite kernel: the [`SpdMatrix`] carrier, the
//! affine-invariant Riemannian distance, Loewner-order checks and the usual
//! factorizations.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYM_TOL: f64 = 1e-9;

/// Strict positive definiteness means `λ_min > PD_REL_MARGIN · λ_max`.
pub const PD_REL_MARGIN: f64 = 1e-10;

/// Validate symmetry to `SYM_TOL · (1 + ‖m‖_max)` and return `(m + mᵀ)/2`.
pub fn symmetric_checked(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims(
            what,
            None,
            "square",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let asym = linalg::asymmetry(m);
    if asym > SYM_TOL * (1.0 + m.amax()) || !asym.is_finite() {
        return Err(Error::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    Ok(linalg::symmetrize(m))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let ev = m.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    eig_extremes(m).0
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    eig_extremes(m).1
}

/// Scale-free strict positive-definiteness test.
pub fn is_strictly_pd(m: &DMatrix<f64>) -> bool {
    let (lo, hi) = eig_extremes(m);
    lo > 0.0 && lo > PD_REL_MARGIN * hi
}

/// Symmetric positive-definite matrix with cached extreme eigenvalues.
#[derive(Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    eig_min: f64,
    eig_max: f64,
}

impl SpdMatrix {
    /// Symmetrize and certify strict positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::labelled(m, "matrix")
    }

    pub fn labelled(m: DMatrix<f64>, what: &str) -> Result<Self> {
        let m = symmetric_checked(&m, what)?;
        let (eig_min, eig_max) = eig_extremes(&m);
        if !(eig_min > 0.0 && eig_min > PD_REL_MARGIN * eig_max) {
            return Err(Error::NotPositiveDefinite {
                what: what.to_string(),
                min_eig: eig_min,
            });
        }
        Ok(SpdMatrix {
            m,
            eig_min,
            eig_max,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        assert!(c > 0.0, "scaled_identity needs a positive scale");
        SpdMatrix {
            m: DMatrix::identity(n, n) * c,
            eig_min: c,
            eig_max: c,
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(d),
        ))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn eig_min(&self) -> f64 {
        self.eig_min
    }

    pub fn eig_max(&self) -> f64 {
        self.eig_max
    }

    pub fn inverse(&self) -> SpdMatrix {
        let inv = spd_inverse(&self.m).expect("certified SPD matrix is invertible");
        SpdMatrix {
            m: inv,
            eig_min: 1.0 / self.eig_max,
            eig_max: 1.0 / self.eig_min,
        }
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        spectral_map(&self.m, f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        spectral_map(&self.m, |v| 1.0 / v.sqrt())
    }

    /// Congruence `Mᵀ X M`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<SpdMatrix> {
        SpdMatrix::new(m.transpose() * &self.m * m)
    }
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdMatrix")
            .field("eig_min", &self.eig_min)
            .field("eig_max", &self.eig_max)
            .field("m", &linalg::to_rows(&self.m))
            .finish()
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        linalg::rows::serialize(&self.m, s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = linalg::rows::deserialize(d)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Apply `f` to the spectrum of a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    linalg::symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose()))
}

/// Affine-invariant Riemannian distance `sqrt(Σ log²λ_i)`, `λ_i ∈ spec(X P⁻¹)`.
///
/// The spectrum is taken from the symmetric matrix `P^{-1/2} X P^{-1/2}`.
pub fn riemannian_distance(x: &SpdMatrix, p: &SpdMatrix) -> Result<f64> {
    if x.dim() != p.dim() {
        return Err(Error::dims("riemannian_distance", None, p.dim(), x.dim()));
    }
    if x.matrix() == p.matrix() {
        return Ok(0.0);
    }
    let p_is = p.inv_sqrt();
    let pencil = linalg::symmetrize(&(&p_is * x.matrix() * &p_is));
    let ev = pencil.symmetric_eigenvalues();
    if ev.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite {
            what: "P^{-1/2} X P^{-1/2}".into(),
            min_eig: ev.min(),
        });
    }
    Ok(ev.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// `X ≺ Y` with margin: true iff `λ_min(Y − X) > margin`.
pub fn ordering_lt(x: &DMatrix<f64>, y: &DMatrix<f64>, margin: f64) -> bool {
    if x.shape() != y.shape() {
        return false;
    }
    lambda_min(&linalg::symmetrize(&(y - x))) > margin
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "spd_inverse argument".into(),
            min_eig: lambda_min(m),
        })?;
    Ok(linalg::symmetrize(&chol.inverse()))
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues down to `-SYM_TOL·λ_max` are treated as rounding and clamped.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = symmetric_checked(m, "spd_sqrt argument")?;
    let (lo, hi) = eig_extremes(&m);
    if lo < -SYM_TOL * hi.abs().max(1.0) {
        return Err(Error::NotPositiveDefinite {
            what: "spd_sqrt argument".into(),
            min_eig: lo,
        });
    }
    Ok(spectral_map(&m, |v| v.max(0.0).sqrt()))
}

/// Solve `X · y = b` for symmetric positive-definite `X`.
pub fn sym_solve(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != b.nrows() {
        return Err(Error::dims("sym_solve rhs", None, x.nrows(), b.nrows()));
    }
    let chol = x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "sym_solve matrix".into(),
            min_eig: lambda_min(x),
        })?;
    Ok(chol.solve(b))
}
