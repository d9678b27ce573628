use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of Voigt components for a spatial dimension.
pub fn voigt_len(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        6
    }
}

/// Symmetric Voigt matrix in MPa.
///
/// Ordering is (11, 22, 12) in 2d (plane strain) and (11, 22, 33, 12, 23, 13)
/// in 3d. Strain vectors use engineering shears (2ε_ij).
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticityTensor {
    dim: usize,
    voigt: DMatrix<f64>,
}

impl ElasticityTensor {
    pub fn new(dim: usize, voigt: DMatrix<f64>) -> Result<Self> {
        let n = voigt_len(dim);
        if !(dim == 2 || dim == 3) || voigt.nrows() != n || voigt.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "a {dim}d elasticity tensor needs a {n}x{n} Voigt matrix, got {}x{}",
                voigt.nrows(),
                voigt.ncols()
            )));
        }
        Ok(ElasticityTensor { dim, voigt })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("Voigt matrix must be square".into()));
        }
        Self::new(dim, DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn voigt(&self) -> &DMatrix<f64> {
        &self.voigt
    }

    /// Entry with 1-based Voigt indices, matching the usual ℂ_ij symbols.
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.voigt[(i - 1, j - 1)]
    }

    pub fn norm(&self) -> f64 {
        self.voigt.norm()
    }

    /// `||C - C^T|| / ||C||` (Frobenius).
    pub fn asymmetry(&self) -> f64 {
        let n = self.norm();
        if n == 0.0 {
            0.0
        } else {
            (&self.voigt - self.voigt.transpose()).norm() / n
        }
    }

    pub fn symmetrized(&self) -> Self {
        ElasticityTensor {
            dim: self.dim,
            voigt: (&self.voigt + self.voigt.transpose()) * 0.5,
        }
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.voigt
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("elasticity tensor is singular".into()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        ElasticityTensor {
            dim: self.dim,
            voigt: &self.voigt * s,
        }
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.voigt)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.voigt.nrows())
            .map(|i| self.voigt.row(i).iter().copied().collect())
            .collect()
    }

    pub(crate) fn to_array(&self) -> [[f64; 6]; 6] {
        let mut a = [[0.0; 6]; 6];
        for i in 0..self.voigt.nrows() {
            for j in 0..self.voigt.ncols() {
                a[i][j] = self.voigt[(i, j)];
            }
        }
        a
    }
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    dim: usize,
    voigt: Vec<Vec<f64>>,
}

impl Serialize for ElasticityTensor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TensorRepr {
            dim: self.dim,
            voigt: self.to_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ElasticityTensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TensorRepr::deserialize(d)?;
        ElasticityTensor::from_rows(r.dim, &r.voigt).map_err(serde::de::Error::custom)
    }
}

pub fn lame(young: f64, poisson: f64) -> (f64, f64) {
    let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let mu = young / (2.0 * (1.0 + poisson));
    (lambda, mu)
}

fn check_constants(young: f64, poisson: f64) -> Result<()> {
    if !(young > 0.0) {
        return Err(Error::InvalidMaterial(format!("E must be positive, got {young}")));
    }
    if !(poisson > -1.0 && poisson < 0.5) {
        return Err(Error::InvalidMaterial(format!(
            "nu must lie in (-1, 0.5), got {poisson}"
        )));
    }
    Ok(())
}

/// Isotropic stiffness; the 2d variant is the plane-strain restriction.
pub fn phase_stiffness(dim: usize, young: f64, poisson: f64) -> Result<ElasticityTensor> {
    check_constants(young, poisson)?;
    let (l, m) = lame(young, poisson);
    let n = voigt_len(dim);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..dim {
        for j in 0..dim {
            c[(i, j)] = if i == j { l + 2.0 * m } else { l };
        }
    }
    for k in dim..n {
        c[(k, k)] = m;
    }
    ElasticityTensor::new(dim, c)
}

/// Isotropic compliance written out entrywise (plane strain in 2d).
pub fn isotropic_compliance(dim: usize, young: f64, poisson: f64) -> Result<DMatrix<f64>> {
    check_constants(young, poisson)?;
    let shear = 2.0 * (1.0 + poisson) / young;
    Ok(if dim == 2 {
        let a = (1.0 - poisson * poisson) / young;
        let b = -poisson * (1.0 + poisson) / young;
        DMatrix::from_row_slice(3, 3, &[a, b, 0.0, b, a, 0.0, 0.0, 0.0, shear])
    } else {
        let a = 1.0 / young;
        let b = -poisson / young;
        let mut s = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                s[(i, j)] = if i == j { a } else { b };
            }
            s[(i + 3, i + 3)] = shear;
        }
        s
    })
}
