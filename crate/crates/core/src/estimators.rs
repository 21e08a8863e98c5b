//! Kernel mean estimators.
//!
//! All estimators return a [`KernelMeanEstimate`]: the function
//! `sum_j beta_j k(x_j, .)` stored as its support points and weights. The
//! feature map is never materialized; every geometric quantity is evaluated
//! through Gram and cross-Gram matrices.
//!
//! * KME uses `beta = 1/n`.
//! * S-KMSE uses `beta = 1/(n (1 + lambda))`, i.e. `(1 - alpha) * KME` with
//!   `alpha = lambda / (1 + lambda)`.
//! * F-KMSE uses `beta = (K + lambda I)^{-1} K 1_n` with `1_n` the uniform
//!   `1/n` vector. In the eigenbasis of `K` this damps each coordinate of the
//!   empirical mean by `gamma_i / (gamma_i + lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram, GramMatrix, KernelSpec};
use crate::spectral::{shifted_solve, SpectralDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "kme")]
    Kme,
    #[serde(rename = "s-kmse")]
    SKmse,
    #[serde(rename = "f-kmse")]
    FKmse,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [Self::Kme, Self::SKmse, Self::FKmse];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kme => "kme",
            Self::SKmse => "s-kmse",
            Self::FKmse => "f-kmse",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "kme" => Ok(Self::Kme),
            "s-kmse" | "skmse" => Ok(Self::SKmse),
            "f-kmse" | "fkmse" => Ok(Self::FKmse),
            other => Err(Error::InvalidInput(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeanEstimate {
    pub kernel: KernelSpec,
    pub points: DataMatrix,
    pub weights: Vec<f64>,
}

impl KernelMeanEstimate {
    pub fn new(kernel: KernelSpec, points: DataMatrix, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("estimate weights"));
        }
        Ok(Self {
            kernel,
            points,
            weights,
        })
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    /// `f(y) = sum_j beta_j k(x_j, y)`.
    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.points.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.points.ncols(),
                got: y.len(),
            });
        }
        Ok(self
            .points
            .rows()
            .zip(&self.weights)
            .map(|(x, w)| w * self.kernel.eval(x, y))
            .sum())
    }
}

/// The uniform vector `1_n` with entries `1/n`.
pub fn uniform_weights(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

pub fn kme(x: &DataMatrix, kernel: KernelSpec) -> KernelMeanEstimate {
    let n = x.nrows();
    KernelMeanEstimate {
        kernel,
        points: x.clone(),
        weights: vec![1.0 / n as f64; n],
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!(
            "shrinkage parameter must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// `lambda = +inf` is accepted and yields the zero function.
pub fn s_kmse(x: &DataMatrix, kernel: KernelSpec, lambda: f64) -> Result<KernelMeanEstimate> {
    check_lambda(lambda)?;
    let n = x.nrows() as f64;
    let w = if lambda.is_infinite() {
        0.0
    } else {
        1.0 / (n * (1.0 + lambda))
    };
    Ok(KernelMeanEstimate {
        kernel,
        points: x.clone(),
        weights: vec![w; x.nrows()],
    })
}

/// `alpha = lambda / (1 + lambda)`, the shrinkage amount toward zero.
pub fn shrinkage_amount(lambda: f64) -> f64 {
    if lambda.is_infinite() {
        1.0
    } else {
        lambda / (1.0 + lambda)
    }
}

/// F-KMSE weights by a dense Cholesky solve of `(K + lambda I) beta = K 1_n`.
///
/// This path does not use the eigendecomposition; see [`f_kmse_spectral`]
/// for the path used in practice.
pub fn f_kmse(k: &GramMatrix, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let n = k.n();
    if lambda.is_infinite() {
        return Ok(DVector::zeros(n));
    }
    let rhs = k.matrix() * uniform_weights(n);
    let shifted = k.matrix() + DMatrix::identity(n, n) * lambda;
    if let Some(chol) = shifted.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    shifted
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("K + {lambda} I is singular")))
}

/// F-KMSE weights from the eigendecomposition of `K`:
/// `beta = sum_i u_i (gamma_i + lambda)^{-1} u_i' K 1_n`.
pub fn f_kmse_spectral(dec: &SpectralDecomposition, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let n = dec.n();
    if lambda.is_infinite() {
        return Ok(DVector::zeros(n));
    }
    // U' K 1_n = D U' 1_n
    let mut coords = dec.project(&uniform_weights(n));
    for (c, g) in coords.iter_mut().zip(dec.eigvals.iter()) {
        let denom = g + lambda;
        if denom == 0.0 {
            return Err(Error::Singular("zero eigenvalue with zero shrinkage".into()));
        }
        *c *= g / denom;
    }
    Ok(&dec.eigvecs * coords)
}

/// F-KMSE weights through [`shifted_solve`] on a precomputed decomposition.
pub fn f_kmse_shifted(dec: &SpectralDecomposition, k: &GramMatrix, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    shifted_solve(dec, lambda, &(k.matrix() * uniform_weights(k.n())))
}

/// Filter factors `gamma_i / (gamma_i + lambda)` applied to each spectral
/// coordinate of the empirical mean.
pub fn filter_factors(dec: &SpectralDecomposition, lambda: f64) -> Vec<f64> {
    dec.eigvals
        .iter()
        .map(|&g| if g > 0.0 { g / (g + lambda) } else { 0.0 })
        .collect()
}

/// Coordinates `<sum_j beta_j phi(x_j), v_i>` along the covariance operator
/// eigenfunctions `v_i = gamma_i^{-1/2} sum_j u_ij phi(x_j)`, which equal
/// `sqrt(gamma_i) u_i' beta`. Zero modes give zero.
pub fn spectral_coefficients(dec: &SpectralDecomposition, beta: &DVector<f64>) -> Vec<f64> {
    let proj = dec.project(beta);
    proj.iter()
        .zip(dec.eigvals.iter())
        .map(|(p, &g)| if g > 0.0 { g.sqrt() * p } else { 0.0 })
        .collect()
}

/// F-KMSE estimate on a sample, using the spectral path.
pub fn f_kmse_estimate(x: &DataMatrix, kernel: KernelSpec, lambda: f64) -> Result<KernelMeanEstimate> {
    let k = gram(&kernel, x);
    let dec = crate::spectral::sym_eig(k.matrix())?.clamp_nonnegative();
    let beta = f_kmse_spectral(&dec, lambda)?;
    KernelMeanEstimate::new(kernel, x.clone(), beta.iter().copied().collect())
}

/// Function `f*` that an estimate is shrunk toward; `None` is the zero
/// function.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageTarget {
    pub expansion: Option<KernelMeanEstimate>,
}

impl ShrinkageTarget {
    pub fn zero() -> Self {
        Self { expansion: None }
    }

    pub fn to(estimate: KernelMeanEstimate) -> Self {
        Self {
            expansion: Some(estimate),
        }
    }
}

/// `alpha f* + (1 - alpha) estimate`, with duplicate support points merged
/// by summing their weights.
pub fn shrink_toward(
    estimate: &KernelMeanEstimate,
    target: &ShrinkageTarget,
    alpha: f64,
) -> Result<KernelMeanEstimate> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "shrinkage amount must lie in [0, 1), got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(estimate.clone());
    }
    let Some(fstar) = &target.expansion else {
        let weights = estimate.weights.iter().map(|w| (1.0 - alpha) * w).collect();
        return KernelMeanEstimate::new(estimate.kernel, estimate.points.clone(), weights);
    };
    if fstar.kernel != estimate.kernel {
        return Err(Error::KernelMismatch);
    }
    if fstar.points.ncols() != estimate.points.ncols() {
        return Err(Error::DimensionMismatch {
            expected: estimate.points.ncols(),
            got: fstar.points.ncols(),
        });
    }
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let scaled = estimate
        .points
        .rows()
        .zip(estimate.weights.iter().map(|w| (1.0 - alpha) * w))
        .chain(fstar.points.rows().zip(fstar.weights.iter().map(|w| alpha * w)));
    for (row, w) in scaled {
        match rows.iter().position(|r| *r == row) {
            Some(i) => weights[i] += w,
            None => {
                rows.push(row);
                weights.push(w);
            }
        }
    }
    let points = DataMatrix::from_rows(&rows)?;
    KernelMeanEstimate::new(estimate.kernel, points, weights)
}

/// `<a, b>_H = beta_a' L beta_b` with `L` the cross-Gram of the supports.
pub fn rkhs_inner(a: &KernelMeanEstimate, b: &KernelMeanEstimate) -> Result<f64> {
    if a.kernel != b.kernel {
        return Err(Error::KernelMismatch);
    }
    let l = cross_gram(&a.kernel, &a.points, &b.points)?;
    Ok((a.weight_vector().transpose() * l * b.weight_vector())[0])
}

/// `|a - b|^2_H`, clamped at zero.
pub fn rkhs_dist_sq(a: &KernelMeanEstimate, b: &KernelMeanEstimate) -> Result<f64> {
    let aa = rkhs_inner(a, a)?;
    let ab = rkhs_inner(a, b)?;
    let bb = rkhs_inner(b, b)?;
    Ok((aa - 2.0 * ab + bb).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::sym_eig;
    use proptest::prelude::*;

    fn sample(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut s = seed | 1;
        let v: Vec<f64> = (0..n * d)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
            })
            .collect();
        DataMatrix::from_vec(n, d, v).unwrap()
    }

    #[test]
    fn kme_weights() {
        let e = kme(&sample(4, 2, 1), KernelSpec::Lin);
        assert_eq!(e.weights, vec![0.25; 4]);
        let e = kme(&sample(1, 2, 1), KernelSpec::Lin);
        assert_eq!(e.weights, vec![1.0]);
        for n in 1..40 {
            let s: f64 = kme(&sample(n, 1, 3), KernelSpec::Lin).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn s_kmse_weights() {
        let x = sample(4, 2, 2);
        assert_eq!(s_kmse(&x, KernelSpec::Lin, 0.0).unwrap(), kme(&x, KernelSpec::Lin));
        let e = s_kmse(&x, KernelSpec::Lin, 1.0).unwrap();
        assert_eq!(e.weights, vec![0.125; 4]);
        assert_eq!(shrinkage_amount(1.0), 0.5);
        let e = s_kmse(&x, KernelSpec::Lin, 1e9).unwrap();
        assert!(e.weight_vector().norm() < 1e-8);
        assert!(s_kmse(&x, KernelSpec::Lin, -0.1).is_err());
        assert!(s_kmse(&x, KernelSpec::Lin, f64::NAN).is_err());
        assert_eq!(s_kmse(&x, KernelSpec::Lin, f64::INFINITY).unwrap().weights, vec![0.0; 4]);
    }

    #[test]
    fn f_kmse_diagonal_example() {
        let k = GramMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).unwrap();
        let beta = f_kmse(&k, 1.0).unwrap();
        assert!((beta[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((beta[1] - 0.25).abs() < 1e-15);
        let dec = sym_eig(k.matrix()).unwrap();
        let beta_s = f_kmse_spectral(&dec, 1.0).unwrap();
        assert!((beta_s - beta).amax() < 1e-15);
    }

    #[test]
    fn f_kmse_limits() {
        let x = sample(6, 3, 5);
        let k = gram(&KernelSpec::rbf(1.0).unwrap(), &x);
        let near0 = f_kmse(&k, 1e-10).unwrap();
        assert!((near0 - uniform_weights(6)).amax() < 1e-6);
        let big = f_kmse(&k, 1e12).unwrap();
        assert!(big.amax() < 1e-11);

        // singular K with zero shrinkage
        let lin = gram(&KernelSpec::Lin, &sample(6, 2, 7));
        let dec = sym_eig(lin.matrix()).unwrap().clamp_nonnegative();
        assert!(matches!(f_kmse_spectral(&dec, 0.0), Err(Error::Singular(_))));
        assert!(f_kmse(&lin, -1.0).is_err());
    }

    #[test]
    fn f_kmse_scaled_identity() {
        let c = 2.5;
        let n = 5;
        let k = GramMatrix::from_matrix(DMatrix::identity(n, n) * c).unwrap();
        let dec = sym_eig(k.matrix()).unwrap();
        let lambda = 0.7;
        let beta = f_kmse_spectral(&dec, lambda).unwrap();
        let want = 1.0 / (n as f64 * (1.0 + lambda / c));
        assert!(beta.iter().all(|b| (b - want).abs() < 1e-15));
    }

    #[test]
    fn shifted_path_agrees() {
        let x = sample(9, 2, 9);
        let k = gram(&KernelSpec::Poly2, &x);
        let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
        let a = f_kmse_shifted(&dec, &k, 0.3).unwrap();
        let b = f_kmse_spectral(&dec, 0.3).unwrap();
        assert!((a - &b).norm() < 1e-10 * b.norm());
    }

    #[test]
    fn shrink_toward_cases() {
        let x = sample(3, 2, 4);
        let mu = kme(&x, KernelSpec::Lin);
        assert_eq!(shrink_toward(&mu, &ShrinkageTarget::zero(), 0.0).unwrap(), mu);
        let half = shrink_toward(&mu, &ShrinkageTarget::zero(), 0.5).unwrap();
        assert!(half.weights.iter().zip(&mu.weights).all(|(h, w)| *h == 0.5 * w));
        let fixed = shrink_toward(&mu, &ShrinkageTarget::to(mu.clone()), 0.37).unwrap();
        assert_eq!(fixed.points, mu.points);
        assert!(fixed.weights.iter().zip(&mu.weights).all(|(a, b)| (a - b).abs() < 1e-15));

        let other = kme(&sample(2, 2, 99), KernelSpec::Lin);
        let merged = shrink_toward(&mu, &ShrinkageTarget::to(other), 0.25).unwrap();
        assert_eq!(merged.points.nrows(), 5);
        let total: f64 = merged.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);

        let wrong = kme(&x, KernelSpec::Poly2);
        assert!(matches!(
            shrink_toward(&mu, &ShrinkageTarget::to(wrong), 0.5),
            Err(Error::KernelMismatch)
        ));
        assert!(shrink_toward(&mu, &ShrinkageTarget::zero(), 1.0).is_err());
    }

    #[test]
    fn inner_products() {
        let rbf = KernelSpec::rbf(0.8).unwrap();
        let x = [0.3, -1.0];
        let y = [1.1, 0.4];
        let a = KernelMeanEstimate::new(rbf, DataMatrix::from_rows(&[x]).unwrap(), vec![1.0]).unwrap();
        let b = KernelMeanEstimate::new(rbf, DataMatrix::from_rows(&[y]).unwrap(), vec![1.0]).unwrap();
        let kxy = rbf.eval(&x, &y);
        assert_eq!(rkhs_inner(&a, &b).unwrap(), kxy);
        assert!((rkhs_dist_sq(&a, &b).unwrap() - (2.0 - 2.0 * kxy)).abs() < 1e-15);
        assert_eq!(rkhs_dist_sq(&a, &a).unwrap(), 0.0);

        let s = sample(7, 2, 8);
        let mu = kme(&s, rbf);
        let k = gram(&rbf, &s);
        let rho = k.matrix().sum() / 49.0;
        assert!((rkhs_inner(&mu, &mu).unwrap() - rho).abs() < 1e-14);

        let other = kme(&s, KernelSpec::Lin);
        assert!(matches!(rkhs_inner(&mu, &other), Err(Error::KernelMismatch)));
    }

    #[test]
    fn estimate_json_shape() {
        let e = kme(&DataMatrix::from_rows(&[[1.0], [2.0]]).unwrap(), KernelSpec::Lin);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"kernel":{"family":"lin"},"points":[[1.0],[2.0]],"weights":[0.5,0.5]}"#);
    }

    proptest! {
        #[test]
        fn dense_and_spectral_agree(seed in any::<u64>(), n in 2usize..30, fam in 0usize..4) {
            let spec = [KernelSpec::Lin, KernelSpec::Poly2, KernelSpec::Poly3, KernelSpec::rbf(1.5).unwrap()][fam];
            let x = sample(n, 3, seed);
            let k = gram(&spec, &x);
            let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
            for lambda in [1e-3, 1e-1, 1.0, 10.0] {
                let a = f_kmse(&k, lambda).unwrap();
                let b = f_kmse_spectral(&dec, lambda).unwrap();
                prop_assert!((&a - &b).norm() <= 1e-8 * a.norm().max(1e-300), "lambda {}", lambda);
                prop_assert!(filter_factors(&dec, lambda).iter().all(|f| *f < 1.0));
            }
        }

        #[test]
        fn shrinkage_never_grows_norm(seed in any::<u64>(), n in 2usize..20, lambda in 1e-4f64..100.0) {
            let x = sample(n, 2, seed);
            let k = gram(&KernelSpec::rbf(1.0).unwrap(), &x);
            let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
            let beta = f_kmse_spectral(&dec, lambda).unwrap();
            prop_assert!(beta.norm() <= uniform_weights(n).norm() * (1.0 + 1e-12));
            let s = s_kmse(&x, KernelSpec::Lin, lambda).unwrap();
            let ratio = s.weights[0] / (1.0 / n as f64);
            prop_assert!((ratio - 1.0 / (1.0 + lambda)).abs() < 1e-14);
        }

        #[test]
        fn spectral_coefficients_monotone(seed in any::<u64>(), n in 2usize..15, l1 in 1e-3f64..1.0, gap in 0.0f64..10.0) {
            let x = sample(n, 2, seed);
            let k = gram(&KernelSpec::Poly2, &x);
            let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
            let l2 = l1 + gap;
            let c1 = spectral_coefficients(&dec, &f_kmse_spectral(&dec, l1).unwrap());
            let c2 = spectral_coefficients(&dec, &f_kmse_spectral(&dec, l2).unwrap());
            for &i in &dec.retained() {
                prop_assert!(c2[i].abs() <= c1[i].abs() * (1.0 + 1e-9) + 1e-12);
            }
        }

        #[test]
        fn rkhs_distance_triangle(seed in any::<u64>()) {
            let rbf = KernelSpec::rbf(1.0).unwrap();
            let e: Vec<_> = (0..3).map(|i| {
                let x = sample(4, 2, seed.wrapping_add(i));
                s_kmse(&x, rbf, i as f64 * 0.3).unwrap()
            }).collect();
            let d = |a: usize, b: usize| rkhs_dist_sq(&e[a], &e[b]).unwrap().sqrt();
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
            prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
            prop_assert!(rkhs_inner(&e[0], &e[0]).unwrap() >= 0.0);
        }
    }
}
