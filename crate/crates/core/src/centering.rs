//! Centering of Gram matrices around a weighted mean `m = sum_j beta_j phi(x_j)`.
//!
//! With `v = K beta` and `s = beta' K beta`,
//! `K^c_ij = K_ij - v_i - v_j + s` and, for test rows,
//! `L^c_ij = L_ij - v_j - (L beta)_i + s`. Uniform `beta` gives the usual
//! `H K H` centering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, GramMatrix, KernelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenteredGram {
    #[serde(with = "crate::serde_util::matrix")]
    pub values: DMatrix<f64>,
    #[serde(with = "crate::serde_util::vector")]
    pub weights_used: DVector<f64>,
}

impl CenteredGram {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Centers test rows with the same weights used for this matrix.
    /// `k` must be the uncentered Gram this was built from.
    pub fn center_test(&self, l: &DMatrix<f64>, k: &GramMatrix) -> Result<DMatrix<f64>> {
        center_test(l, k, &self.weights_used)
    }
}

fn check_weights(n: usize, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: beta.len(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("centering weights"));
    }
    Ok(())
}

pub fn center_train(k: &GramMatrix, beta: &DVector<f64>) -> Result<CenteredGram> {
    let n = k.n();
    check_weights(n, beta)?;
    let km = k.matrix();
    let v = km * beta;
    let s = beta.dot(&v);
    let mut values = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let c = km[(i, j)] - v[i] - v[j] + s;
            values[(i, j)] = c;
            values[(j, i)] = c;
        }
    }
    Ok(CenteredGram {
        values,
        weights_used: beta.clone(),
    })
}

/// `l` is the `m x n` cross-Gram between test points (rows) and training
/// points (columns).
pub fn center_test(l: &DMatrix<f64>, k: &GramMatrix, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = k.n();
    check_weights(n, beta)?;
    if l.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: l.ncols(),
        });
    }
    let v = k.matrix() * beta;
    let s = beta.dot(&v);
    let lb = l * beta;
    Ok(DMatrix::from_fn(l.nrows(), n, |i, j| l[(i, j)] - v[j] - lb[i] + s))
}

/// `k(z,z) - 2 k_z' beta + beta' K beta`, the squared distance between
/// `phi(z)` and the weighted mean.
pub fn centered_test_diag(z: &[f64], x: &DataMatrix, kernel: &KernelSpec, beta: &DVector<f64>) -> Result<f64> {
    check_weights(x.nrows(), beta)?;
    let zm = DataMatrix::from_row_slice(1, z.len(), z)?;
    let kz = cross_gram(kernel, &zm, x)?;
    let k = crate::kernels::gram(kernel, x);
    let s = beta.dot(&(k.matrix() * beta));
    Ok(kernel.eval(z, z) - 2.0 * (kz.row(0) * beta)[0] + s)
}

/// Vectorized [`centered_test_diag`] for every row of `z`, given the
/// cross-Gram `l` (`z` rows by `x` columns) and the training Gram.
pub(crate) fn centered_test_diags(
    z: &DataMatrix,
    kernel: &KernelSpec,
    l: &DMatrix<f64>,
    k: &GramMatrix,
    beta: &DVector<f64>,
) -> DVector<f64> {
    let s = beta.dot(&(k.matrix() * beta));
    let lb = l * beta;
    DVector::from_fn(z.nrows(), |i, _| {
        let zi = z.row(i);
        kernel.eval(zi, zi) - 2.0 * lb[i] + s
    })
}
