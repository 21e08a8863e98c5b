//! Gaussian-mixture ground truth: sampling, exact kernel means, and the true
//! loss of a weighted estimate.
//!
//! For a component `N(theta, C)` with `C = Sigma + noise_var I`, a point `y`,
//! `m = theta'y` and `s^2 = y'Cy`:
//!
//! | kernel | `E k(x, y)` |
//! |--------|-------------|
//! | lin    | `m` |
//! | poly2  | `(m+1)^2 + s^2` |
//! | poly3  | `(m+1)^3 + 3 (m+1) s^2` |
//! | rbf    | `det(I + C/sigma^2)^{-1/2} exp(-(y-theta)'(C + sigma^2 I)^{-1}(y-theta)/2)` |
//!
//! Mixture values are the `pi`-weighted sums.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimators::ShrinkageTarget;
use crate::kernels::{cross_gram, dot, GramMatrix, KernelSpec};
use crate::rng::{stream, Rng};
use crate::spectral::sym_eig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_util::matrices")]
    pub covariances: Vec<DMatrix<f64>>,
    /// `Sigma_i = G_i G_i'`; used for sampling.
    #[serde(with = "crate::serde_util::matrices")]
    pub factors: Vec<DMatrix<f64>>,
    pub noise_var: f64,
}

#[derive(Deserialize)]
struct RawMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_util::matrices")]
    factors: Vec<DMatrix<f64>>,
    noise_var: f64,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::from_factors(raw.weights, raw.means, raw.factors, raw.noise_var)
    }
}

impl GaussianMixture {
    /// Components `N(theta_i, G_i G_i')` plus isotropic noise.
    pub fn from_factors(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        factors: Vec<DMatrix<f64>>,
        noise_var: f64,
    ) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.len() != c || factors.len() != c {
            return Err(Error::InvalidInput(format!(
                "mixture needs matching component counts, got {} weights, {} means, {} factors",
                c,
                means.len(),
                factors.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("mixture dimension must be positive".into()));
        }
        for (m, g) in means.iter().zip(&factors) {
            if m.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.len() });
            }
            if g.nrows() != d {
                return Err(Error::DimensionMismatch { expected: d, got: g.nrows() });
            }
            if m.iter().chain(g.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture parameters"));
            }
        }
        if !(noise_var.is_finite() && noise_var >= 0.0) {
            return Err(Error::InvalidInput(format!("noise variance must be nonnegative, got {noise_var}")));
        }
        let covariances = factors.iter().map(|g| g * g.transpose()).collect();
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
            noise_var,
        })
    }

    /// Components `N(theta_i, Sigma_i)`; each `Sigma_i` must be symmetric PSD.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>, noise_var: f64) -> Result<Self> {
        let factors = covariances
            .iter()
            .map(|s| {
                if !s.is_square() {
                    return Err(Error::InvalidInput("covariance must be square".into()));
                }
                if (s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
                    return Err(Error::InvalidInput("covariance must be symmetric".into()));
                }
                let dec = sym_eig(s)?;
                if dec.eigvals.iter().any(|&g| g < -1e-10 * dec.max_eigval().max(1.0)) {
                    return Err(Error::InvalidInput("covariance must be positive semidefinite".into()));
                }
                let dec = dec.clamp_nonnegative();
                let d = s.nrows();
                Ok(DMatrix::from_fn(d, d, |i, j| dec.eigvecs[(i, j)] * dec.eigvals[j].sqrt()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mix = Self::from_factors(weights, means, factors, noise_var)?;
        // keep the covariances exactly as given
        mix.covariances = covariances;
        Ok(mix)
    }

    /// All mass at `theta`.
    pub fn point_mass(theta: Vec<f64>) -> Result<Self> {
        let d = theta.len();
        Self::from_factors(vec![1.0], vec![theta], vec![DMatrix::zeros(d, 1)], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// `Sigma_i + noise_var I`
    pub fn effective_cov(&self, i: usize) -> DMatrix<f64> {
        let d = self.dim();
        &self.covariances[i] + DMatrix::identity(d, d) * self.noise_var
    }

    /// `sum_i pi_i theta_i`
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.weights).expect("validated weights")
    }

    fn draw_into(&self, pick: &WeightedIndex<f64>, rng: &mut Rng, out: &mut [f64]) {
        let i = pick.sample(rng);
        let g = &self.factors[i];
        let z: Vec<f64> = (0..g.ncols()).map(|_| rng.sample(StandardNormal)).collect();
        let noise_sd = self.noise_var.sqrt();
        for (r, o) in out.iter_mut().enumerate() {
            let mut v = self.means[i][r];
            for (k, zk) in z.iter().enumerate() {
                v += g[(r, k)] * zk;
            }
            if noise_sd > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                v += noise_sd * e;
            }
            *o = v;
        }
    }
}

/// Settings for random mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub d: usize,
    pub components: usize,
    pub pi: Vec<f64>,
    pub theta_range: (f64, f64),
    pub wishart_scale: f64,
    pub wishart_df: usize,
    pub noise_var: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            d: 30,
            components: 4,
            pi: vec![0.05, 0.3, 0.4, 0.25],
            theta_range: (-10.0, 10.0),
            wishart_scale: 2.0,
            wishart_df: 7,
            noise_var: 0.2,
        }
    }
}

impl ProtocolConfig {
    pub fn with_dim(d: usize) -> Self {
        Self { d, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.d == 0 {
            return bad("dimension must be positive".into());
        }
        if self.components == 0 || self.pi.len() != self.components {
            return bad(format!("{} mixture weights for {} components", self.pi.len(), self.components));
        }
        let (lo, hi) = self.theta_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("invalid mean range ({lo}, {hi})"));
        }
        if !(self.wishart_scale.is_finite() && self.wishart_scale >= 0.0) || self.wishart_df == 0 {
            return bad("Wishart scale must be nonnegative and degrees of freedom positive".into());
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return bad(format!("noise variance must be nonnegative, got {}", self.noise_var));
        }
        Ok(())
    }
}

/// Means uniform in `theta_range`; each `Sigma_i = G G'` with `G` a
/// `d x df` matrix of independent `N(0, wishart_scale)` entries, so
/// `E[Sigma_i] = df * wishart_scale * I` and `rank(Sigma_i) <= df`.
pub fn draw_mixture(config: &ProtocolConfig, rng: &mut Rng) -> Result<GaussianMixture> {
    config.validate()?;
    let d = config.d;
    let (lo, hi) = config.theta_range;
    let sd = config.wishart_scale.sqrt();
    let mut means = Vec::with_capacity(config.components);
    let mut factors = Vec::with_capacity(config.components);
    for _ in 0..config.components {
        means.push((0..d).map(|_| rng.random_range(lo..hi)).collect());
        let g = DMatrix::from_fn(d, config.wishart_df, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        });
        factors.push(g);
    }
    GaussianMixture::from_factors(config.pi.clone(), means, factors, config.noise_var)
}

pub fn sample(mix: &GaussianMixture, n: usize, rng: &mut Rng) -> DataMatrix {
    let d = mix.dim();
    let pick = mix.sampler();
    let mut values = vec![0.0; n * d];
    for row in values.chunks_mut(d) {
        mix.draw_into(&pick, rng, row);
    }
    DataMatrix::from_vec(n, d, values).expect("finite samples")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    /// Zero for exact values.
    pub std_error: f64,
}

impl OracleValue {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }
}

/// Mean and standard error of `f(x, x')` over `samples` independent pairs
/// drawn from `mix`.
pub fn monte_carlo<F>(mix: &GaussianMixture, samples: usize, seed: u64, f: F) -> Result<OracleValue>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    const CHUNK: usize = 8192;
    if samples < 2 {
        return Err(Error::InvalidInput("Monte Carlo needs at least 2 samples".into()));
    }
    let d = mix.dim();
    let pick = mix.sampler();
    let chunks = samples.div_ceil(CHUNK);
    // (count, mean, M2) per chunk, merged in chunk order
    let parts: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
            let (mut mean, mut m2) = (0.0, 0.0);
            for k in 0..len {
                mix.draw_into(&pick, &mut rng, &mut x);
                mix.draw_into(&pick, &mut rng, &mut y);
                let v = f(&x, &y);
                let delta = v - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (v - mean);
            }
            (len as f64, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        let total = n + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * n * nb / total;
        n = total;
    }
    let var = m2 / (n - 1.0);
    Ok(OracleValue {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    theta: DVector<f64>,
    cov: DMatrix<f64>,
    /// RBF only: Cholesky of `C + sigma^2 I` and `det(I + C/sigma^2)^{-1/2}`.
    rbf: Option<(Cholesky<f64, Dyn>, f64)>,
}

/// Exact kernel-mean quantities of one mixture under one kernel.
#[derive(Clone, Debug)]
pub struct MixtureOracle {
    mix: GaussianMixture,
    kernel: KernelSpec,
    comps: Vec<Component>,
}

impl MixtureOracle {
    pub fn new(mix: &GaussianMixture, kernel: KernelSpec) -> Result<Self> {
        let d = mix.dim();
        let comps = (0..mix.components())
            .map(|i| {
                let cov = mix.effective_cov(i);
                let rbf = match kernel {
                    KernelSpec::Rbf { bandwidth_sq } => {
                        let shifted = &cov + DMatrix::identity(d, d) * bandwidth_sq;
                        let chol = Cholesky::new(shifted)
                            .ok_or_else(|| Error::Singular("component covariance plus bandwidth".into()))?;
                        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                        let scale = (-0.5 * (log_det - d as f64 * bandwidth_sq.ln())).exp();
                        Some((chol, scale))
                    }
                    _ => None,
                };
                Ok(Component {
                    weight: mix.weights[i],
                    theta: DVector::from_column_slice(&mix.means[i]),
                    cov,
                    rbf,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mix: mix.clone(),
            kernel,
            comps,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mix
    }

    /// `E_x k(x, y)`.
    pub fn mean_eval(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.mix.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.mix.dim(),
                got: y.len(),
            });
        }
        let yv = DVector::from_column_slice(y);
        let mut total = 0.0;
        for c in &self.comps {
            let m = c.theta.dot(&yv);
            let v = match self.kernel {
                KernelSpec::Lin => m,
                KernelSpec::Poly2 => (m + 1.0).powi(2) + yv.dot(&(&c.cov * &yv)),
                KernelSpec::Poly3 => {
                    let s2 = yv.dot(&(&c.cov * &yv));
                    (m + 1.0).powi(3) + 3.0 * (m + 1.0) * s2
                }
                KernelSpec::Rbf { .. } => {
                    let (chol, scale) = c.rbf.as_ref().expect("rbf cache");
                    let diff = &yv - &c.theta;
                    let q = diff.dot(&chol.solve(&diff));
                    scale * (-0.5 * q).exp()
                }
            };
            total += c.weight * v;
        }
        Ok(total)
    }

    /// `E k(x, x)`.
    pub fn diag_expectation(&self) -> f64 {
        if let KernelSpec::Rbf { .. } = self.kernel {
            return 1.0;
        }
        let mut total = 0.0;
        for c in &self.comps {
            // cumulants of |x|^2 for x ~ N(theta, C)
            let tt = c.theta.norm_squared();
            let c2 = &c.cov * &c.cov;
            let k1 = c.cov.trace() + tt;
            let k2 = 2.0 * (c2.trace() + 2.0 * c.theta.dot(&(&c.cov * &c.theta)));
            let k3 = 8.0 * ((&c2 * &c.cov).trace() + 3.0 * c.theta.dot(&(&c2 * &c.theta)));
            let s = k1 + 1.0;
            let v = match self.kernel {
                KernelSpec::Lin => k1,
                KernelSpec::Poly2 => k2 + s * s,
                KernelSpec::Poly3 => k3 + 3.0 * k2 * s + s * s * s,
                KernelSpec::Rbf { .. } => unreachable!(),
            };
            total += c.weight * v;
        }
        total
    }

    /// `|mu|^2 = E k(x, x')` for independent `x, x'`. Not available exactly
    /// for poly3.
    pub fn sq_norm(&self, mode: OracleMode) -> Result<OracleValue> {
        match mode {
            OracleMode::MonteCarlo { samples, seed } => {
                let k = self.kernel;
                monte_carlo(&self.mix, samples, seed, move |x, y| k.eval(x, y))
            }
            OracleMode::Exact => self.sq_norm_exact().map(OracleValue::exact),
        }
    }

    fn sq_norm_exact(&self) -> Result<f64> {
        let d = self.mix.dim();
        match self.kernel {
            KernelSpec::Lin => {
                let m = self.mix.mean();
                Ok(dot(&m, &m))
            }
            KernelSpec::Poly3 => Err(Error::UnsupportedMode(
                "exact |mu|^2 is not available for poly3; use Monte Carlo".into(),
            )),
            KernelSpec::Poly2 => {
                let mut total = 0.0;
                for a in &self.comps {
                    for b in &self.comps {
                        let tt = a.theta.dot(&b.theta) + 1.0;
                        let v = tt * tt
                            + a.theta.dot(&(&b.cov * &a.theta))
                            + b.theta.dot(&(&a.cov * &b.theta))
                            + (&a.cov * &b.cov).trace();
                        total += a.weight * b.weight * v;
                    }
                }
                Ok(total)
            }
            KernelSpec::Rbf { bandwidth_sq } => {
                let mut total = 0.0;
                for a in &self.comps {
                    for b in &self.comps {
                        let m = &a.cov + &b.cov + DMatrix::identity(d, d) * bandwidth_sq;
                        let chol = Cholesky::new(m).ok_or_else(|| Error::Singular("pair covariance".into()))?;
                        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                        let diff = &a.theta - &b.theta;
                        let q = diff.dot(&chol.solve(&diff));
                        let v = (-0.5 * (log_det - d as f64 * bandwidth_sq.ln()) - 0.5 * q).exp();
                        total += a.weight * b.weight * v;
                    }
                }
                Ok(total)
            }
        }
    }

    /// `|sum_i beta_i k(x_i, .) - mu|^2` given `|mu|^2`, clamped at 0.
    pub fn loss_with_norm(&self, beta: &[f64], x: &DataMatrix, k: &GramMatrix, sq_norm: f64) -> Result<f64> {
        if beta.len() != x.nrows() || k.n() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: beta.len(),
            });
        }
        let b = DVector::from_column_slice(beta);
        let quad = b.dot(&(k.matrix() * &b));
        let mut cross = 0.0;
        for (i, row) in x.rows().enumerate() {
            if beta[i] != 0.0 {
                cross += beta[i] * self.mean_eval(row)?;
            }
        }
        Ok((quad - 2.0 * cross + sq_norm).max(0.0))
    }
}

/// `E_x k(x, y)` for `x` drawn from `mix`.
pub fn true_mean_eval(mix: &GaussianMixture, kernel: KernelSpec, y: &[f64]) -> Result<f64> {
    MixtureOracle::new(mix, kernel)?.mean_eval(y)
}

pub fn true_mean_sq_norm(mix: &GaussianMixture, kernel: KernelSpec, mode: OracleMode) -> Result<OracleValue> {
    MixtureOracle::new(mix, kernel)?.sq_norm(mode)
}

/// True squared RKHS error of the expansion `sum_i beta_i k(x_i, .)`.
pub fn loss(beta: &[f64], x: &DataMatrix, kernel: KernelSpec, mix: &GaussianMixture, mode: OracleMode) -> Result<f64> {
    let oracle = MixtureOracle::new(mix, kernel)?;
    let norm = oracle.sq_norm(mode)?.value;
    oracle.loss_with_norm(beta, x, &crate::kernels::gram(&kernel, x), norm)
}

/// Risk of the plain empirical mean from `n` points:
/// `(E k(x,x) - E k(x,x')) / n`.
pub fn risk_delta(mix: &GaussianMixture, kernel: KernelSpec, n: usize, mode: OracleMode) -> Result<OracleValue> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let oracle = MixtureOracle::new(mix, kernel)?;
    let norm = oracle.sq_norm(mode)?;
    let nf = n as f64;
    Ok(OracleValue {
        value: ((oracle.diag_expectation() - norm.value) / nf).max(0.0),
        std_error: norm.std_error / nf,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAlpha {
    pub alpha: f64,
    pub delta: f64,
    /// `|f* - mu|^2`
    pub distance_sq: f64,
    /// Risk of the best shrinkage minus risk of the plain mean,
    /// `-delta^2 / (delta + distance_sq)`.
    pub risk_gap: f64,
}

/// Best shrinkage amount toward `fstar` for samples of size `n`:
/// `alpha = delta / (delta + |f* - mu|^2)`.
pub fn oracle_alpha(
    mix: &GaussianMixture,
    kernel: KernelSpec,
    n: usize,
    fstar: &ShrinkageTarget,
    mode: OracleMode,
) -> Result<OracleAlpha> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let oracle = MixtureOracle::new(mix, kernel)?;
    let norm = oracle.sq_norm(mode)?.value;
    let delta = ((oracle.diag_expectation() - norm) / n as f64).max(0.0);
    let distance_sq = match &fstar.expansion {
        None => norm,
        Some(f) => {
            if f.kernel != kernel {
                return Err(Error::KernelMismatch);
            }
            let l = cross_gram(&kernel, &f.points, &f.points)?;
            let k = GramMatrix::from_matrix(l)?;
            oracle.loss_with_norm(&f.weights, &f.points, &k, norm)?
        }
    };
    let denom = delta + distance_sq;
    if denom <= 0.0 || delta == 0.0 {
        return Ok(OracleAlpha {
            alpha: 0.0,
            delta,
            distance_sq,
            risk_gap: 0.0,
        });
    }
    Ok(OracleAlpha {
        alpha: delta / denom,
        delta,
        distance_sq,
        risk_gap: -delta * delta / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::KernelMeanEstimate;
    use crate::rng::seeded;

    fn all_kernels() -> [KernelSpec; 4] {
        [KernelSpec::Lin, KernelSpec::Poly2, KernelSpec::Poly3, KernelSpec::rbf(1.7).unwrap()]
    }

    fn small_mixture(seed: u64, d: usize) -> GaussianMixture {
        let cfg = ProtocolConfig {
            d,
            theta_range: (-1.0, 1.0),
            wishart_scale: 0.1,
            wishart_df: 3,
            ..ProtocolConfig::default()
        };
        draw_mixture(&cfg, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn draw_is_reproducible_and_low_rank() {
        let cfg = ProtocolConfig::default();
        let a = draw_mixture(&cfg, &mut seeded(3)).unwrap();
        let b = draw_mixture(&cfg, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        for s in &a.covariances {
            let dec = sym_eig(s).unwrap().clamp_nonnegative();
            assert!(dec.rank() <= 7);
        }
        assert!(a.means.iter().flatten().all(|v| (-10.0..10.0).contains(v)));
    }

    #[test]
    fn wishart_mean() {
        let cfg = ProtocolConfig {
            d: 3,
            ..ProtocolConfig::default()
        };
        let mut rng = seeded(11);
        let mut acc = DMatrix::zeros(3, 3);
        let draws = 10_000;
        let mut count = 0;
        for _ in 0..draws / cfg.components {
            for s in draw_mixture(&cfg, &mut rng).unwrap().covariances {
                acc += s;
                count += 1;
            }
        }
        acc /= count as f64;
        for i in 0..3 {
            assert!((acc[(i, i)] - 14.0).abs() < 0.05 * 14.0, "{}", acc[(i, i)]);
        }
    }

    #[test]
    fn invalid_config() {
        let mut rng = seeded(0);
        let mut cfg = ProtocolConfig::default();
        cfg.pi = vec![0.5, 0.5];
        assert!(draw_mixture(&cfg, &mut rng).is_err());
        let cfg = ProtocolConfig { d: 0, ..ProtocolConfig::default() };
        assert!(draw_mixture(&cfg, &mut rng).is_err());
        let cfg = ProtocolConfig {
            theta_range: (1.0, -1.0),
            ..ProtocolConfig::default()
        };
        assert!(draw_mixture(&cfg, &mut rng).is_err());
        assert!(GaussianMixture::point_mass(vec![]).is_err());
        assert!(GaussianMixture::from_factors(vec![0.4, 0.4], vec![vec![0.0]; 2], vec![DMatrix::zeros(1, 1); 2], 0.0).is_err());
    }

    #[test]
    fn point_mass_sampling_and_values() {
        let theta = vec![0.5, -1.0, 2.0];
        let mix = GaussianMixture::point_mass(theta.clone()).unwrap();
        let x = sample(&mix, 5, &mut seeded(1));
        assert!(x.rows().all(|r| r == theta.as_slice()));
        let y = [0.3, 0.1, -0.7];
        for k in all_kernels() {
            let v = true_mean_eval(&mix, k, &y).unwrap();
            assert!((v - k.eval(&theta, &y)).abs() < 1e-12 * v.abs().max(1.0));
            let o = MixtureOracle::new(&mix, k).unwrap();
            assert!((o.diag_expectation() - k.eval(&theta, &theta)).abs() < 1e-12 * o.diag_expectation().abs().max(1.0));
            if k != KernelSpec::Poly3 {
                let n = o.sq_norm(OracleMode::Exact).unwrap().value;
                assert!((n - k.eval(&theta, &theta)).abs() < 1e-12 * n.abs().max(1.0));
                let r = risk_delta(&mix, k, 3, OracleMode::Exact).unwrap();
                assert!(r.value.abs() < 1e-12 * n.abs().max(1.0));
                let a = oracle_alpha(&mix, k, 3, &ShrinkageTarget::zero(), OracleMode::Exact).unwrap();
                assert_eq!(a.alpha, 0.0);
            }
        }
        let x = DataMatrix::from_rows(&[theta]).unwrap();
        let l = loss(&[1.0], &x, KernelSpec::rbf(1.0).unwrap(), &mix, OracleMode::Exact).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn rbf_one_dimensional_integral() {
        let mix = GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![DMatrix::identity(1, 1)], 0.0).unwrap();
        let v = true_mean_eval(&mix, KernelSpec::rbf(1.0).unwrap(), &[0.0]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lin_gaussian_example() {
        let mix = GaussianMixture::new(vec![1.0], vec![vec![1.0, 0.0]], vec![DMatrix::identity(2, 2)], 0.0).unwrap();
        let r = risk_delta(&mix, KernelSpec::Lin, 4, OracleMode::Exact).unwrap();
        assert_eq!(r.value, 0.5);
        let n = true_mean_sq_norm(&mix, KernelSpec::Lin, OracleMode::Exact).unwrap();
        assert_eq!(n.value, 1.0);
        let a = oracle_alpha(&mix, KernelSpec::Lin, 4, &ShrinkageTarget::zero(), OracleMode::Exact).unwrap();
        assert_eq!(a.alpha, 1.0 / 3.0);
        assert_eq!(a.risk_gap, -0.25 / 1.5);

        let zero = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![DMatrix::identity(2, 2)], 0.0).unwrap();
        assert_eq!(true_mean_sq_norm(&zero, KernelSpec::Lin, OracleMode::Exact).unwrap().value, 0.0);
        let r = risk_delta(&zero, KernelSpec::Lin, 4, OracleMode::Exact).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn target_equal_to_mean_gives_full_shrinkage() {
        // under lin, mu = k(mean, .), which is a one-point expansion
        let mix = GaussianMixture::new(vec![1.0], vec![vec![1.0, 2.0]], vec![DMatrix::identity(2, 2) * 0.5], 0.1).unwrap();
        let f = KernelMeanEstimate::new(KernelSpec::Lin, DataMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![1.0]).unwrap();
        let a = oracle_alpha(&mix, KernelSpec::Lin, 5, &ShrinkageTarget::to(f), OracleMode::Exact).unwrap();
        assert!(a.distance_sq < 1e-12);
        assert!((a.alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poly3_norm_needs_monte_carlo() {
        let mix = small_mixture(1, 2);
        assert!(matches!(
            true_mean_sq_norm(&mix, KernelSpec::Poly3, OracleMode::Exact),
            Err(Error::UnsupportedMode(_))
        ));
        let v = true_mean_sq_norm(&mix, KernelSpec::Poly3, OracleMode::MonteCarlo { samples: 2000, seed: 1 }).unwrap();
        assert!(v.std_error > 0.0);
    }

    #[test]
    fn component_order_does_not_matter() {
        let mix = small_mixture(5, 3);
        let perm = [2, 0, 3, 1];
        let permuted = GaussianMixture::from_factors(
            perm.iter().map(|&i| mix.weights[i]).collect(),
            perm.iter().map(|&i| mix.means[i].clone()).collect(),
            perm.iter().map(|&i| mix.factors[i].clone()).collect(),
            mix.noise_var,
        )
        .unwrap();
        let y = [0.2, -0.4, 0.9];
        for k in all_kernels() {
            let a = MixtureOracle::new(&mix, k).unwrap();
            let b = MixtureOracle::new(&permuted, k).unwrap();
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * u.abs().max(1.0);
            assert!(close(a.mean_eval(&y).unwrap(), b.mean_eval(&y).unwrap()));
            assert!(close(a.diag_expectation(), b.diag_expectation()));
            if k != KernelSpec::Poly3 {
                assert!(close(
                    a.sq_norm(OracleMode::Exact).unwrap().value,
                    b.sq_norm(OracleMode::Exact).unwrap().value
                ));
            }
        }
    }

    #[test]
    fn mixture_json_round_trip() {
        let mix = small_mixture(9, 2);
        let s = serde_json::to_string(&mix).unwrap();
        let back: GaussianMixture = serde_json::from_str(&s).unwrap();
        assert_eq!(back, mix);
        let cfg = ProtocolConfig::default();
        let back: ProtocolConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn exact_values_agree_with_sampling() {
        // smaller sample than the acceptance run; 5 standard errors
        let mix = small_mixture(21, 3);
        let y = [0.3, -0.2, 0.5];
        let samples = 200_000;
        for (i, k) in all_kernels().into_iter().enumerate() {
            let o = MixtureOracle::new(&mix, k).unwrap();
            let exact = o.mean_eval(&y).unwrap();
            let mc = monte_carlo(&mix, samples, 100 + i as u64, |x, _| k.eval(x, &y)).unwrap();
            assert!((exact - mc.value).abs() <= 5.0 * mc.std_error, "{k:?} eval {exact} vs {mc:?}");
            let diag = monte_carlo(&mix, samples, 200 + i as u64, |x, _| k.eval(x, x)).unwrap();
            let e = o.diag_expectation();
            assert!((e - diag.value).abs() <= 5.0 * diag.std_error.max(1e-15), "{k:?} diag {e} vs {diag:?}");
            if k != KernelSpec::Poly3 {
                let exact = o.sq_norm(OracleMode::Exact).unwrap().value;
                let mc = o.sq_norm(OracleMode::MonteCarlo { samples, seed: 300 + i as u64 }).unwrap();
                assert!((exact - mc.value).abs() <= 5.0 * mc.std_error, "{k:?} norm {exact} vs {mc:?}");
            }
        }
    }

    #[test]
    fn sample_mean_matches() {
        let mix = small_mixture(2, 2);
        let n = 100_000;
        let x = sample(&mix, n, &mut seeded(4));
        let mean = mix.mean();
        for j in 0..2 {
            let col: Vec<f64> = x.rows().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - mean[j]).abs() <= 4.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let mix = small_mixture(3, 2);
        let f = |x: &[f64], y: &[f64]| dot(x, y);
        let a = monte_carlo(&mix, 20_000, 5, f).unwrap();
        let b = monte_carlo(&mix, 20_000, 5, f).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo(&mix, 1, 5, f).is_err());
    }

    #[test]
    fn loss_at_zero_weights_is_norm() {
        let mix = small_mixture(4, 2);
        let x = sample(&mix, 6, &mut seeded(8));
        for k in [KernelSpec::Lin, KernelSpec::Poly2, KernelSpec::rbf(0.8).unwrap()] {
            let l = loss(&[0.0; 6], &x, k, &mix, OracleMode::Exact).unwrap();
            let n = true_mean_sq_norm(&mix, k, OracleMode::Exact).unwrap().value;
            assert!((l - n.max(0.0)).abs() <= 1e-12 * n.abs().max(1.0));
        }
    }
}
