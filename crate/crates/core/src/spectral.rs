//! Symmetric eigendecomposition and the solves built on it.
//!
//! Every spectral quantity in the crate goes through [`sym_eig`]: eigenvalues
//! are sorted in descending order, each eigenvector is signed so that its
//! largest-magnitude component is positive, and eigenvalues within
//! `1e-12 * max(gamma_max, 1)` of zero are set to exactly zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a mode counts as numerically absent.
pub const RANK_TOL: f64 = 1e-10;

const CLAMP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;

/// `M = U diag(gamma) U'` with `gamma` descending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigvals.len()
    }

    pub fn max_eigval(&self) -> f64 {
        self.eigvals.get(0).copied().unwrap_or(0.0)
    }

    /// Absolute cutoff `RANK_TOL * gamma_max` for retained modes.
    pub fn rank_threshold(&self) -> f64 {
        RANK_TOL * self.max_eigval().max(0.0)
    }

    /// Indices of modes strictly above the rank threshold, in descending
    /// eigenvalue order.
    pub fn retained(&self) -> Vec<usize> {
        let tau = self.rank_threshold();
        (0..self.n()).filter(|&i| self.eigvals[i] > tau).collect()
    }

    pub fn rank(&self) -> usize {
        self.retained().len()
    }

    /// Smallest eigenvalue above the rank threshold.
    pub fn min_nonzero_eigval(&self) -> Option<f64> {
        self.retained().last().map(|&i| self.eigvals[i])
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.n(), self.n(), |i, j| {
            self.eigvecs[(i, j)] * self.eigvals[j]
        });
        scaled * self.eigvecs.transpose()
    }

    /// Coordinates `U'v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigvecs.tr_mul(v)
    }

    /// Maps any remaining negative eigenvalues to zero. Intended for
    /// matrices that are positive semidefinite analytically.
    pub fn clamp_nonnegative(mut self) -> Self {
        self.eigvals.iter_mut().for_each(|g| *g = g.max(0.0));
        self
    }
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized as
/// `(M + M')/2` first.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigvecs: DMatrix::zeros(0, 0),
            eigvals: DVector::zeros(0),
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let norm = sym.norm();
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::NoConvergence { n, norm })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let gmax = eig.eigenvalues[order[0]];
    let clamp = CLAMP_TOL * gmax.max(1.0);
    let mut eigvals = DVector::zeros(n);
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let g = eig.eigenvalues[src];
        eigvals[dst] = if g.abs() < clamp { 0.0 } else { g };
        let col = eig.eigenvectors.column(src);
        let lead = col
            .iter()
            .copied()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1.abs() {
                    (i, v)
                } else {
                    best
                }
            });
        let sign = if col[lead.0] < 0.0 { -1.0 } else { 1.0 };
        eigvecs.set_column(dst, &(col * sign));
    }
    Ok(SpectralDecomposition { eigvecs, eigvals })
}

/// Solves `(M + lambda I) z = b` as `U (D + lambda I)^{-1} U' b`.
pub fn shifted_solve(dec: &SpectralDecomposition, lambda: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != dec.n() {
        return Err(Error::DimensionMismatch {
            expected: dec.n(),
            got: b.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "shift must be finite and nonnegative, got {lambda}"
        )));
    }
    let mut coords = dec.project(b);
    for (c, g) in coords.iter_mut().zip(dec.eigvals.iter()) {
        let denom = g + lambda;
        if denom == 0.0 {
            return Err(Error::Singular("zero eigenvalue with zero shift".into()));
        }
        *c /= denom;
    }
    Ok(&dec.eigvecs * coords)
}

/// Eigenpairs of `Kc B Kc v = d Kc v` restricted to the range of `Kc`.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    /// `d_j`, descending.
    pub eigvals: DVector<f64>,
    /// Columns `a_j` with `a_j' Kc a_k = delta_jk`.
    pub coefficients: DMatrix<f64>,
}

/// Generalized problem of kernel PCA with a weighted covariance operator.
///
/// With `Kc = U Gamma U'` over the modes above `RANK_TOL * gamma_max`, the
/// problem reduces to the symmetric eigenproblem of
/// `Gamma^{1/2} U' B U Gamma^{1/2}`, and the coefficients are
/// `a_j = U Gamma^{-1/2} w_j`, which are orthonormal in feature space.
pub fn generalized_kpca_eig(kc: &DMatrix<f64>, b_diag: &DVector<f64>) -> Result<GeneralizedEigen> {
    if b_diag.len() != kc.nrows() {
        return Err(Error::DimensionMismatch {
            expected: kc.nrows(),
            got: b_diag.len(),
        });
    }
    if b_diag.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance weights"));
    }
    let dec = sym_eig(kc)?.clamp_nonnegative();
    if dec.max_eigval() <= 0.0 {
        return Err(Error::DegenerateCenteredGram);
    }
    let kept = dec.retained();
    let r = kept.len();
    let n = dec.n();

    // U_r Gamma^{1/2}
    let half = DMatrix::from_fn(n, r, |i, j| {
        let m = kept[j];
        dec.eigvecs[(i, m)] * dec.eigvals[m].sqrt()
    });
    let weighted = DMatrix::from_fn(n, r, |i, j| b_diag[i] * half[(i, j)]);
    let reduced = half.tr_mul(&weighted);
    let inner = sym_eig(&reduced)?;

    let inv_half = DMatrix::from_fn(n, r, |i, j| {
        let m = kept[j];
        dec.eigvecs[(i, m)] / dec.eigvals[m].sqrt()
    });
    Ok(GeneralizedEigen {
        eigvals: inner.eigvals,
        coefficients: inv_half * inner.eigvecs,
    })
}
