//! Small linear-algebra layer over nalgebra: linear maps that may be an
//! implicit identity, orthonormal-row generation and pseudoinverses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A linear map `R^cols -> R^rows`. The identity is kept implicit so the
/// default configurations (r = d) skip dense products entirely.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearMap {
    Identity(usize),
    Dense(DMatrix<f64>),
}

impl LinearMap {
    pub fn rows(&self) -> usize {
        match self {
            LinearMap::Identity(n) => *n,
            LinearMap::Dense(m) => m.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearMap::Identity(n) => *n,
            LinearMap::Dense(m) => m.ncols(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
        if v.len() != self.cols() {
            return Err(Error::DimensionMismatch { context, expected: self.cols(), found: v.len() });
        }
        Ok(match self {
            LinearMap::Identity(_) => v.clone(),
            LinearMap::Dense(m) => m * v,
        })
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            LinearMap::Identity(n) => *n as f64,
            LinearMap::Dense(m) => m.norm_squared(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinearMap::Identity(n) => DMatrix::identity(*n, *n),
            LinearMap::Dense(m) => m.clone(),
        }
    }

    pub fn transpose(&self) -> LinearMap {
        match self {
            LinearMap::Identity(n) => LinearMap::Identity(*n),
            LinearMap::Dense(m) => LinearMap::Dense(m.transpose()),
        }
    }

    /// Moore–Penrose pseudoinverse.
    pub fn pseudo_inverse(&self) -> Result<LinearMap> {
        match self {
            LinearMap::Identity(n) => Ok(LinearMap::Identity(*n)),
            LinearMap::Dense(m) => {
                let tol = f64::EPSILON * m.nrows().max(m.ncols()) as f64 * m.norm().max(1.0);
                m.clone()
                    .pseudo_inverse(tol)
                    .map(LinearMap::Dense)
                    .map_err(|e| Error::InvalidArgument(format!("pseudoinverse failed: {e}")))
            }
        }
    }
}

/// An `rows x cols` matrix with orthonormal rows (`rows <= cols`), drawn as the
/// Q factor of a Gaussian matrix.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(rows <= cols, "orthonormal rows need rows <= cols");
    let g = DMatrix::from_fn(cols, rows, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().transpose()
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, std_dev: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| std_dev * rng.sample::<f64, _>(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_orthonormal_rows(6, 15, &mut rng);
        let gram = &w * w.transpose();
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!((gram - eye).abs().max() < 1e-9);
    }

    #[test]
    fn pseudo_inverse_of_orthonormal_rows_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = LinearMap::Dense(random_orthonormal_rows(4, 9, &mut rng));
        let pinv = w.pseudo_inverse().unwrap().to_dense();
        assert!((pinv - w.transpose().to_dense()).abs().max() < 1e-10);
    }

    #[test]
    fn identity_apply_checks_length() {
        let id = LinearMap::Identity(3);
        assert!(id.apply(&DVector::zeros(4), "test").is_err());
        assert_eq!(id.frobenius_sq(), 3.0);
    }
}
