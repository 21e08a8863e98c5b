//! Shrinkage covariance operators, kernel PCA and level-2 Gram matrices.
//!
//! A covariance operator is the kernel mean of `k~(x,.) (x) k~(y,.)` in the
//! product RKHS, so its weights come from running a kernel mean estimator
//! on the Hadamard product of the two centered Grams.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centering::{center_test, center_train, centered_test_diags};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimators::{f_kmse_spectral, rkhs_dist_sq, rkhs_inner, uniform_weights, EstimatorKind};
use crate::kernels::{cross_gram, GramMatrix, KernelSpec};
use crate::model_selection::{f_kmse_select, fit_estimator, gram_stats, s_kmse_select, SearchConfig};
use crate::serde_util::extended_f64;
use crate::spectral::{generalized_kpca_eig, sym_eig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovOpSource {
    Standard,
    SCose,
    FCose,
}

impl CovOpSource {
    pub fn name(self) -> &'static str {
        match self {
            CovOpSource::Standard => "standard",
            CovOpSource::SCose => "s_cose",
            CovOpSource::FCose => "f_cose",
        }
    }
}

impl fmt::Display for CovOpSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovOpWeights {
    #[serde(with = "crate::serde_util::vector")]
    pub beta: DVector<f64>,
    pub source: CovOpSource,
    #[serde(with = "extended_f64")]
    pub lambda: f64,
}

impl CovOpWeights {
    pub fn standard(n: usize) -> Self {
        Self {
            beta: uniform_weights(n),
            source: CovOpSource::Standard,
            lambda: 0.0,
        }
    }
}

/// Weights of a (cross-)covariance operator estimate. `ky = None` estimates
/// the self-covariance of `kx`. When `lambda` is `None` it is chosen by
/// leave-one-out on the product Gram.
pub fn cose_weights(
    kx: &GramMatrix,
    ky: Option<&GramMatrix>,
    method: CovOpSource,
    lambda: Option<f64>,
) -> Result<CovOpWeights> {
    let n = kx.n();
    if let Some(ky) = ky {
        if ky.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: ky.n() });
        }
    }
    if method == CovOpSource::Standard {
        return Ok(CovOpWeights::standard(n));
    }
    let product = product_gram(kx, ky)?;
    if product.matrix().amax() <= 0.0 {
        return Err(Error::DegenerateGram("product of centered Grams is zero".into()));
    }
    let (beta, lambda) = match method {
        CovOpSource::SCose => {
            let lambda = match lambda {
                Some(l) => l,
                None => s_kmse_select(&gram_stats(&product))?.lambda,
            };
            if lambda.is_nan() || lambda < 0.0 {
                return Err(Error::InvalidInput(format!("invalid shrinkage {lambda}")));
            }
            let w = if lambda.is_infinite() { 0.0 } else { 1.0 / (n as f64 * (1.0 + lambda)) };
            (DVector::from_element(n, w), lambda)
        }
        CovOpSource::FCose => {
            let dec = sym_eig(product.matrix())?.clamp_nonnegative();
            let lambda = match lambda {
                Some(l) => l,
                None => f_kmse_select(&dec, &SearchConfig::default())?.selected_lambda,
            };
            (f_kmse_spectral(&dec, lambda)?, lambda)
        }
        CovOpSource::Standard => unreachable!(),
    };
    Ok(CovOpWeights { beta, source: method, lambda })
}

/// Hadamard product of the uniformly centered Grams.
pub fn product_gram(kx: &GramMatrix, ky: Option<&GramMatrix>) -> Result<GramMatrix> {
    let u = uniform_weights(kx.n());
    let cx = GramMatrix::from_matrix(center_train(kx, &u)?.values)?;
    match ky {
        Some(ky) => cx.hadamard(&GramMatrix::from_matrix(center_train(ky, &u)?.values)?),
        None => cx.hadamard(&cx),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    /// Columns `a_j`; component `j` is `sum_i a_ij (phi(x_i) - m)`.
    #[serde(with = "crate::serde_util::matrix")]
    pub coefficients: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    #[serde(with = "crate::serde_util::vector")]
    pub centering_beta: DVector<f64>,
    pub train_points: DataMatrix,
    pub kernel: KernelSpec,
    pub components: usize,
}

impl KpcaModel {
    /// The same model keeping only the leading `ell` components.
    pub fn truncate(&self, ell: usize) -> Result<Self> {
        if ell > self.components {
            return Err(Error::RankExceeded {
                requested: ell,
                rank: self.components,
            });
        }
        Ok(Self {
            coefficients: self.coefficients.columns(0, ell).into_owned(),
            eigenvalues: self.eigenvalues[..ell].to_vec(),
            components: ell,
            ..self.clone()
        })
    }
}

/// Kernel PCA with centering around `centering_beta` and covariance weights
/// `covop.beta`: solves `K^c B K^c a = d K^c a` with `B = diag(beta)` and
/// keeps the leading `ell` components. `k` must be the Gram of `x`.
pub fn kpca_fit(
    x: &DataMatrix,
    kernel: KernelSpec,
    k: &GramMatrix,
    centering_beta: &DVector<f64>,
    covop: &CovOpWeights,
    ell: usize,
) -> Result<KpcaModel> {
    if k.n() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: k.n() });
    }
    let kc = center_train(k, centering_beta)?;
    let eig = generalized_kpca_eig(&kc.values, &covop.beta)?;
    let rank = eig.eigvals.len();
    if ell > rank {
        return Err(Error::RankExceeded { requested: ell, rank });
    }
    Ok(KpcaModel {
        coefficients: eig.coefficients.columns(0, ell).into_owned(),
        eigenvalues: eig.eigvals.iter().take(ell).copied().collect(),
        centering_beta: centering_beta.clone(),
        train_points: x.clone(),
        kernel,
        components: ell,
    })
}

/// Numerical rank of the centered Gram, i.e. the largest admissible `ell`.
pub fn centered_rank(k: &GramMatrix, centering_beta: &DVector<f64>) -> Result<usize> {
    let kc = center_train(k, centering_beta)?;
    Ok(sym_eig(&kc.values)?.clamp_nonnegative().rank())
}

/// `|phi~(z)|^2 - sum_j <phi~(z), v_j>^2` for each row of `z`, clamped at 0.
pub fn kpca_reconstruction_error(model: &KpcaModel, z: &DataMatrix) -> Result<Vec<f64>> {
    let x = &model.train_points;
    if z.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: z.ncols() });
    }
    let k = crate::kernels::gram(&model.kernel, x);
    let l = cross_gram(&model.kernel, z, x)?;
    let lc = center_test(&l, &k, &model.centering_beta)?;
    let diag = centered_test_diags(z, &model.kernel, &l, &k, &model.centering_beta);
    let proj = lc * &model.coefficients;
    Ok((0..z.nrows())
        .map(|i| (diag[i] - proj.row(i).norm_squared()).max(0.0))
        .collect())
}

/// Kernel between distributions, applied to their mean embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Level2 {
    Linear,
    /// `exp(-|mu_i - mu_j|^2 / (2 sigma_sq))`
    Gaussian { sigma_sq: f64 },
}

impl FromStr for Level2 {
    type Err = Error;

    /// `linear` or `gaussian:<sigma_sq>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "linear" {
            return Ok(Level2::Linear);
        }
        if let Some(v) = s.strip_prefix("gaussian:") {
            let sigma_sq: f64 = v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad level-2 bandwidth {v:?}")))?;
            if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
                return Err(Error::InvalidInput(format!("level-2 bandwidth must be positive, got {sigma_sq}")));
            }
            return Ok(Level2::Gaussian { sigma_sq });
        }
        Err(Error::InvalidInput(format!(
            "unknown level-2 kernel {s:?}; expected linear or gaussian:<sigma_sq>"
        )))
    }
}

impl fmt::Display for Level2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level2::Linear => f.write_str("linear"),
            Level2::Gaussian { sigma_sq } => write!(f, "gaussian:{sigma_sq}"),
        }
    }
}

/// Gram matrix between groups of points, each summarized by its estimated
/// kernel mean (shrinkage chosen by leave-one-out).
pub fn distribution_gram(
    groups: &[DataMatrix],
    kernel: KernelSpec,
    estimator: EstimatorKind,
    level2: Level2,
) -> Result<DMatrix<f64>> {
    if groups.is_empty() {
        return Err(Error::InvalidInput("no groups".into()));
    }
    if let Level2::Gaussian { sigma_sq } = level2 {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidInput(format!("level-2 bandwidth must be positive, got {sigma_sq}")));
        }
    }
    let search = SearchConfig::default();
    let means = groups
        .par_iter()
        .map(|g| fit_estimator(g, kernel, estimator, None, &search).map(|f| f.estimate))
        .collect::<Result<Vec<_>>>()?;
    let m = means.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let entries = pairs
        .par_iter()
        .map(|&(i, j)| match level2 {
            Level2::Linear => rkhs_inner(&means[i], &means[j]),
            Level2::Gaussian { .. } if i == j => Ok(1.0),
            Level2::Gaussian { sigma_sq } => {
                rkhs_dist_sq(&means[i], &means[j]).map(|d| (-d / (2.0 * sigma_sq)).exp())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}
