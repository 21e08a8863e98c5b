//! Leave-one-out selection of the shrinkage parameter.
//!
//! The LOOCV score is `(1/n) sum_i |phi(x_i) - mu^{(-i)}_lambda|^2`.
//!
//! For S-KMSE the score is a quadratic in `alpha = lambda/(1 + lambda)`
//! whose coefficients depend only on `rho = mean(K)` and
//! `varrho = mean(diag K)`, so the optimum is available in closed form.
//!
//! For F-KMSE the score of the deleted-point estimates reduces to
//! `(1/n) sum_i r_i' C_lambda r_i` with residuals `r_i = K beta - K_{.i}`
//! and `C_lambda = M^{-1} K M^{-1}`, `M = K - (1/n) K (K + lambda I)^{-1} K`.
//! Given `K = U D U'`, `C_lambda` is diagonal in the same basis, so each
//! evaluation costs `O(n^2)`. [`f_kmse_loocv_naive`] computes the same
//! quantity by solving the deleted-point fixed point directly and serves as
//! an independent check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimators::{f_kmse, f_kmse_spectral, kme, s_kmse, uniform_weights, EstimatorKind, KernelMeanEstimate};
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::serde_util::{extended_f64, extended_f64_seq};
use crate::spectral::{sym_eig, SpectralDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramStats {
    /// `(1/n^2) sum_ij K_ij`
    pub rho: f64,
    /// `(1/n) sum_i K_ii`
    pub varrho: f64,
    pub n: usize,
}

pub fn gram_stats(k: &GramMatrix) -> GramStats {
    let n = k.n();
    let nf = n as f64;
    let m = k.matrix();
    GramStats {
        rho: m.sum() / (nf * nf),
        varrho: m.diagonal().sum() / nf,
        n,
    }
}

/// Closed-form S-KMSE optimum. `lambda` is `+inf` when the optimum sits at
/// full shrinkage (`alpha = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SKmseSelection {
    #[serde(with = "extended_f64")]
    pub lambda: f64,
    pub alpha: f64,
    pub score: f64,
}

impl SKmseSelection {
    pub fn is_full_shrinkage(&self) -> bool {
        self.alpha >= 1.0
    }
}

/// `alpha* = (varrho - rho) / ((n - 2) rho + varrho / n)` and
/// `lambda* = (varrho - rho) / ((n - 1) rho + varrho / n - varrho)`.
///
/// When the `lambda` denominator is not positive the quadratic is minimized
/// at or beyond `alpha = 1`; the selection then reports `alpha = 1` and
/// `lambda = +inf`, i.e. the zero function.
pub fn s_kmse_select(stats: &GramStats) -> Result<SKmseSelection> {
    let GramStats { rho, varrho, n } = *stats;
    if n < 2 {
        return Err(Error::InvalidInput("S-KMSE selection needs n >= 2".into()));
    }
    if !(rho.is_finite() && varrho.is_finite()) {
        return Err(Error::NonFinite("Gram statistics"));
    }
    let nf = n as f64;
    let spread = varrho - rho;
    let (alpha, lambda) = if spread <= 0.0 {
        (0.0, 0.0)
    } else {
        let alpha_den = (nf - 2.0) * rho + varrho / nf;
        let lambda_den = (nf - 1.0) * rho + varrho / nf - varrho;
        let alpha = if alpha_den > 0.0 { spread / alpha_den } else { f64::INFINITY };
        if lambda_den <= 0.0 || alpha >= 1.0 {
            (1.0, f64::INFINITY)
        } else {
            (alpha, spread / lambda_den)
        }
    };
    Ok(SKmseSelection {
        lambda,
        alpha,
        score: s_kmse_loocv_poly(stats, alpha),
    })
}

/// LOOCV score of S-KMSE as a function of the shrinkage amount:
/// `((-n^2 + a^2 n^2 + 2 a n - 2 a^2 n) rho + (n^2 - 2 a n + a^2) varrho) / (n - 1)^2`.
pub fn s_kmse_loocv_poly(stats: &GramStats, alpha: f64) -> f64 {
    let n = stats.n as f64;
    let a = alpha;
    ((-n * n + a * a * n * n + 2.0 * a * n - 2.0 * a * a * n) * stats.rho
        + (n * n - 2.0 * a * n + a * a) * stats.varrho)
        / ((n - 1.0) * (n - 1.0))
}

/// Precomputed pieces for repeated F-KMSE LOOCV evaluations on one
/// decomposition.
#[derive(Clone, Debug)]
pub struct FKmseLoocv<'a> {
    dec: &'a SpectralDecomposition,
    /// `U' 1_n`
    mean_coords: DVector<f64>,
    retained: Vec<usize>,
}

impl<'a> FKmseLoocv<'a> {
    pub fn new(dec: &'a SpectralDecomposition) -> Result<Self> {
        let n = dec.n();
        if n < 2 {
            return Err(Error::InvalidInput("LOOCV needs n >= 2".into()));
        }
        let retained = dec.retained();
        if retained.is_empty() || dec.max_eigval() <= 0.0 {
            return Err(Error::DegenerateGram(
                "all eigenvalues below the rank threshold".into(),
            ));
        }
        Ok(Self {
            dec,
            mean_coords: dec.project(&uniform_weights(n)),
            retained,
        })
    }

    pub fn score(&self, lambda: f64) -> Result<f64> {
        self.score_counted(lambda).map(|(s, _)| s)
    }

    /// Score plus the number of scalar multiply-adds spent after the
    /// decomposition.
    pub fn score_counted(&self, lambda: f64) -> Result<(f64, u64)> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "LOOCV shrinkage must be positive and finite, got {lambda}"
            )));
        }
        let n = self.dec.n();
        let nf = n as f64;
        let u = &self.dec.eigvecs;
        let mut ops = 0u64;

        // Per retained mode m:
        //   beta_m = U'beta = gamma/(gamma+lambda) * (U'1_n)_m
        //   C_m    = gamma / (gamma - gamma^2 / (n (gamma + lambda)))^2
        //   U'r_i  = gamma (beta_m - U_im)
        let mut beta_coord = Vec::with_capacity(self.retained.len());
        let mut c_diag = Vec::with_capacity(self.retained.len());
        for &m in &self.retained {
            let g = self.dec.eigvals[m];
            let shrunk = g / (g + lambda);
            beta_coord.push(shrunk * self.mean_coords[m]);
            let inner = g - g * g / (nf * (g + lambda));
            c_diag.push(g / (inner * inner));
            ops += 8;
        }

        let mut total = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for (k, &m) in self.retained.iter().enumerate() {
                let g = self.dec.eigvals[m];
                let r = g * (beta_coord[k] - u[(i, m)]);
                s += c_diag[k] * r * r;
            }
            ops += 4 * self.retained.len() as u64;
            total += s;
        }
        Ok((total / nf, ops))
    }
}

/// O(n^2) F-KMSE LOOCV score after one decomposition of `K`. Modes at or
/// below the rank threshold are dropped from the inverses.
pub fn f_kmse_loocv_score(dec: &SpectralDecomposition, lambda: f64) -> Result<f64> {
    FKmseLoocv::new(dec)?.score(lambda)
}

/// Reference LOOCV score that never forms `C_lambda`.
///
/// For each `i` the deleted-point coefficients `c` satisfy the fixed point
/// `c = A (K 1_n - (1/n) K_{.i} + (1/n) K c)`, `A = (K + lambda I)^{-1}`,
/// which is solved as a dense linear system; the score is
/// `(1/n) sum_i (c'Kc - 2 c'K_{.i} + K_ii)`. Cost is `O(n^3)` and is meant
/// for small test problems.
pub fn f_kmse_loocv_naive(k: &GramMatrix, lambda: f64) -> Result<f64> {
    let n = k.n();
    if n < 2 {
        return Err(Error::InvalidInput("LOOCV needs n >= 2".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "LOOCV shrinkage must be positive and finite, got {lambda}"
        )));
    }
    let nf = n as f64;
    let km = k.matrix();
    let a = (km + DMatrix::identity(n, n) * lambda)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("K + lambda I".into()))?;
    let system = DMatrix::identity(n, n) - (&a * km) / nf;
    let lu = system.lu();
    let k_mean = km * uniform_weights(n);

    let mut total = 0.0;
    for i in 0..n {
        let col = km.column(i);
        let rhs = &a * (&k_mean - col / nf);
        let c = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("I - (1/n) A K".into()))?;
        let kc = km * &c;
        total += c.dot(&kc) - 2.0 * c.dot(&col) + km[(i, i)];
    }
    Ok(total / nf)
}

/// Log-grid plus golden-section search settings for F-KMSE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub grid_size: usize,
    /// Lower grid end as a multiple of `gamma_max`.
    pub lower_mult: f64,
    /// Upper grid end as a multiple of `gamma_max`.
    pub upper_mult: f64,
    /// Relative tolerance on `lambda` for the refinement.
    pub rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_size: 30,
            lower_mult: 1e-6,
            upper_mult: 1e3,
            rel_tol: 1e-4,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_size < 2
            || !(self.lower_mult > 0.0 && self.lower_mult < self.upper_mult && self.upper_mult.is_finite())
            || !(self.rel_tol > 0.0)
        {
            return Err(Error::InvalidInput(format!("invalid search config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoocvMethod {
    SAnalytic,
    FClosedForm,
    NaiveOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoocvProfile {
    pub method: LoocvMethod,
    #[serde(with = "extended_f64_seq")]
    pub lambdas: Vec<f64>,
    pub scores: Vec<f64>,
    #[serde(with = "extended_f64")]
    pub selected_lambda: f64,
    pub selected_score: f64,
}

impl LoocvProfile {
    pub fn from_s_selection(sel: &SKmseSelection) -> Self {
        Self {
            method: LoocvMethod::SAnalytic,
            lambdas: vec![sel.lambda],
            scores: vec![sel.score],
            selected_lambda: sel.lambda,
            selected_score: sel.score,
        }
    }
}

/// Minimizes the F-KMSE LOOCV score over `lambda > 0`: a log-spaced grid on
/// `[lower_mult, upper_mult] * gamma_max`, then golden-section refinement in
/// `log lambda` between the neighbours of the best grid point. Every
/// evaluation is recorded in the profile.
pub fn f_kmse_select(dec: &SpectralDecomposition, search: &SearchConfig) -> Result<LoocvProfile> {
    search.validate()?;
    let eval = FKmseLoocv::new(dec)?;
    let gmax = dec.max_eigval();
    let lo = (search.lower_mult * gmax).ln();
    let hi = (search.upper_mult * gmax).ln();
    let steps = search.grid_size - 1;

    let mut lambdas = Vec::new();
    let mut scores = Vec::new();
    let record = |lambda: f64, lambdas: &mut Vec<f64>, scores: &mut Vec<f64>| -> Result<f64> {
        let s = eval.score(lambda)?;
        lambdas.push(lambda);
        scores.push(s);
        Ok(s)
    };

    let grid: Vec<f64> = (0..=steps)
        .map(|i| (lo + (hi - lo) * i as f64 / steps as f64).exp())
        .collect();
    for &l in &grid {
        record(l, &mut lambdas, &mut scores)?;
    }
    let best = argmin(&scores);

    let mut a = grid[best.saturating_sub(1)].ln();
    let mut b = grid[(best + 1).min(steps)].ln();
    let tol = search.rel_tol.ln_1p();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = record(c.exp(), &mut lambdas, &mut scores)?;
    let mut fd = record(d.exp(), &mut lambdas, &mut scores)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = record(c.exp(), &mut lambdas, &mut scores)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = record(d.exp(), &mut lambdas, &mut scores)?;
        }
    }

    let best = argmin(&scores);
    Ok(LoocvProfile {
        method: LoocvMethod::FClosedForm,
        selected_lambda: lambdas[best],
        selected_score: scores[best],
        lambdas,
        scores,
    })
}

/// An estimate together with how its shrinkage parameter was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimate {
    pub kind: EstimatorKind,
    pub estimate: KernelMeanEstimate,
    #[serde(with = "extended_f64")]
    pub lambda: f64,
    pub stats: GramStats,
    /// Present when `lambda` was chosen by leave-one-out.
    pub profile: Option<LoocvProfile>,
}

/// Fits `kind` on `x`. With `lambda = None` the shrinkage parameter is chosen
/// by leave-one-out; a single point has no leave-one-out score, so it falls
/// back to no shrinkage.
pub fn fit_estimator(
    x: &DataMatrix,
    kernel: KernelSpec,
    kind: EstimatorKind,
    lambda: Option<f64>,
    search: &SearchConfig,
) -> Result<FittedEstimate> {
    let k = gram(&kernel, x);
    let stats = gram_stats(&k);
    let auto = lambda.is_none() && kind != EstimatorKind::Kme && x.nrows() >= 2;
    if lambda.is_none() && !auto && kind != EstimatorKind::Kme {
        log::warn!("single-point sample: using lambda = 0 for {kind}");
    }
    let (estimate, lambda, profile) = match kind {
        EstimatorKind::Kme => (kme(x, kernel), 0.0, None),
        EstimatorKind::SKmse => {
            if auto {
                let sel = s_kmse_select(&stats)?;
                (s_kmse(x, kernel, sel.lambda)?, sel.lambda, Some(LoocvProfile::from_s_selection(&sel)))
            } else {
                let l = lambda.unwrap_or(0.0);
                (s_kmse(x, kernel, l)?, l, None)
            }
        }
        EstimatorKind::FKmse => {
            if auto {
                let dec = sym_eig(k.matrix())?.clamp_nonnegative();
                let profile = f_kmse_select(&dec, search)?;
                let beta = f_kmse_spectral(&dec, profile.selected_lambda)?;
                let est = KernelMeanEstimate::new(kernel, x.clone(), beta.iter().copied().collect())?;
                (est, profile.selected_lambda, Some(profile))
            } else {
                let l = lambda.unwrap_or(0.0);
                let beta = f_kmse(&k, l)?;
                let est = KernelMeanEstimate::new(kernel, x.clone(), beta.iter().copied().collect())?;
                (est, l, None)
            }
        }
    };
    Ok(FittedEstimate {
        kind,
        estimate,
        lambda,
        stats,
        profile,
    })
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataMatrix;
    use crate::kernels::{gram, KernelSpec};
    use crate::spectral::sym_eig;

    fn gm(rows: &[f64], n: usize) -> GramMatrix {
        GramMatrix::from_matrix(DMatrix::from_row_slice(n, n, rows)).unwrap()
    }

    fn sample(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut s = seed | 1;
        let v: Vec<f64> = (0..n * d)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 3.0 - 1.5
            })
            .collect();
        DataMatrix::from_vec(n, d, v).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = gram_stats(&GramMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap());
        assert!((s.rho - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.varrho, 1.0);
        let s = gram_stats(&gm(&[1.0; 9], 3));
        assert_eq!((s.rho, s.varrho), (1.0, 1.0));
        let s = gram_stats(&gm(&[1.0, 0.5, 0.5, 1.0], 2));
        assert_eq!((s.rho, s.varrho), (0.75, 1.0));
    }

    #[test]
    fn s_select_examples() {
        let sel = s_kmse_select(&GramStats { rho: 1.0, varrho: 1.0, n: 5 }).unwrap();
        assert_eq!((sel.lambda, sel.alpha), (0.0, 0.0));

        let sel = s_kmse_select(&GramStats { rho: 0.75, varrho: 1.0, n: 2 }).unwrap();
        assert_eq!(sel.lambda, 1.0);
        assert_eq!(sel.alpha, 0.5);

        let sel = s_kmse_select(&GramStats { rho: 1.0 / 3.0, varrho: 1.0, n: 3 }).unwrap();
        assert!(sel.is_full_shrinkage());
        assert!(sel.lambda.is_infinite());

        assert!(s_kmse_select(&GramStats { rho: 0.5, varrho: 1.0, n: 1 }).is_err());
        assert!(s_kmse_select(&GramStats { rho: f64::NAN, varrho: 1.0, n: 4 }).is_err());
    }

    #[test]
    fn poly_at_zero_is_kme_score() {
        let st = GramStats { rho: 0.4, varrho: 1.3, n: 6 };
        let n = 6.0;
        let want = n * n * (st.varrho - st.rho) / ((n - 1.0) * (n - 1.0));
        assert!((s_kmse_loocv_poly(&st, 0.0) - want).abs() < 1e-14);
        // no spread: minimum at zero
        let flat = GramStats { rho: 0.7, varrho: 0.7, n: 6 };
        assert!(s_kmse_loocv_poly(&flat, 0.0) < s_kmse_loocv_poly(&flat, 0.01));
    }

    /// Leave-one-out by deleting each point and refitting S-KMSE on the rest.
    fn brute_s_loocv(k: &DMatrix<f64>, alpha: f64) -> f64 {
        let n = k.nrows();
        let m = (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let w: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (1.0 - alpha) / m }).collect();
            let mut s = k[(i, i)];
            for a in 0..n {
                s -= 2.0 * w[a] * k[(a, i)];
                for b in 0..n {
                    s += w[a] * w[b] * k[(a, b)];
                }
            }
            total += s;
        }
        total / n as f64
    }

    #[test]
    fn poly_matches_refit_loocv() {
        let x = sample(7, 2, 3);
        let k = gram(&KernelSpec::rbf(0.9).unwrap(), &x);
        let st = gram_stats(&k);
        for alpha in [0.0, 0.1, 0.35, 0.8] {
            let a = s_kmse_loocv_poly(&st, alpha);
            let b = brute_s_loocv(k.matrix(), alpha);
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn closed_form_matches_naive() {
        for (seed, n) in [(1u64, 3usize), (2, 5), (3, 10), (4, 20)] {
            let x = sample(n, 3, seed);
            for spec in [KernelSpec::Lin, KernelSpec::Poly2, KernelSpec::Poly3, KernelSpec::rbf(1.0).unwrap()] {
                let k = gram(&spec, &x);
                let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
                for lambda in [0.01, 0.1, 1.0, 10.0] {
                    let a = f_kmse_loocv_score(&dec, lambda).unwrap();
                    let b = f_kmse_loocv_naive(&k, lambda).unwrap();
                    assert!((a - b).abs() <= 1e-6 * b.abs(), "{spec:?} n={n} l={lambda}: {a} vs {b}");
                    assert!(a >= 0.0);
                }
            }
        }
    }

    #[test]
    fn large_lambda_limit_is_varrho() {
        let x = sample(10, 2, 8);
        let k = gram(&KernelSpec::rbf(1.2).unwrap(), &x);
        let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
        let s = f_kmse_loocv_score(&dec, 1e8).unwrap();
        let varrho = gram_stats(&k).varrho;
        assert!((s - varrho).abs() <= 1e-4 * varrho);
        let naive = f_kmse_loocv_naive(&k, 1e8).unwrap();
        assert!((naive - varrho).abs() <= 1e-4 * varrho);
    }

    #[test]
    fn score_is_continuous() {
        let x = sample(12, 3, 21);
        let k = gram(&KernelSpec::Poly2, &x);
        let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
        for lambda in [1e-3, 0.5, 30.0, 1e4] {
            let a = f_kmse_loocv_score(&dec, lambda).unwrap();
            let b = f_kmse_loocv_score(&dec, lambda * (1.0 + 1e-9)).unwrap();
            assert!((a - b).abs() <= 1e-6 * a);
        }
    }

    #[test]
    fn rejects_degenerate() {
        let z = GramMatrix::from_matrix(DMatrix::zeros(3, 3)).unwrap();
        let dec = sym_eig(z.matrix()).unwrap();
        assert!(matches!(f_kmse_loocv_score(&dec, 1.0), Err(Error::DegenerateGram(_))));
        let one = GramMatrix::from_matrix(DMatrix::identity(1, 1)).unwrap();
        assert!(f_kmse_loocv_naive(&one, 1.0).is_err());
        let dec1 = sym_eig(one.matrix()).unwrap();
        assert!(f_kmse_loocv_score(&dec1, 1.0).is_err());
        let k = gram(&KernelSpec::Lin, &sample(4, 2, 2));
        let dec = sym_eig(k.matrix()).unwrap();
        assert!(f_kmse_loocv_score(&dec, 0.0).is_err());
    }

    #[test]
    fn select_profile_properties() {
        let x = sample(15, 2, 5);
        let k = gram(&KernelSpec::rbf(0.5).unwrap(), &x);
        let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
        let cfg = SearchConfig::default();
        let p = f_kmse_select(&dec, &cfg).unwrap();
        assert_eq!(p.method, LoocvMethod::FClosedForm);
        let grid = &p.scores[..cfg.grid_size];
        assert!(grid.iter().all(|&s| p.selected_score <= s));
        for (l, s) in p.lambdas.iter().zip(&p.scores) {
            assert_eq!(f_kmse_loocv_score(&dec, *l).unwrap(), *s);
        }
        assert_eq!(p.scores.iter().cloned().fold(f64::INFINITY, f64::min), p.selected_score);
        assert_eq!(f_kmse_select(&dec, &cfg).unwrap(), p);
    }

    #[test]
    fn op_count_is_quadratic() {
        let n = 50;
        let x = sample(n, 1, 77);
        let k = gram(&KernelSpec::rbf(1.0).unwrap(), &x);
        let dec = sym_eig(k.matrix()).unwrap().clamp_nonnegative();
        let eval = FKmseLoocv::new(&dec).unwrap();
        let (_, ops) = eval.score_counted(0.1).unwrap();
        assert!(ops < 1000 * (n * n) as u64);
    }

    #[test]
    fn fit_estimator_routes() {
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5 * 3f64.sqrt()]]).unwrap();
        let cfg = SearchConfig::default();
        let f = fit_estimator(&x, KernelSpec::Lin, EstimatorKind::SKmse, None, &cfg).unwrap();
        assert!((f.lambda - 1.0).abs() < 1e-12);
        assert!((f.estimate.weights[0] - 0.25).abs() < 1e-12);
        assert!((f.stats.rho - 0.75).abs() < 1e-12);

        let f = fit_estimator(&x, KernelSpec::Lin, EstimatorKind::SKmse, Some(0.3), &cfg).unwrap();
        assert_eq!(f.lambda, 0.3);
        assert!(f.profile.is_none());

        let f = fit_estimator(&x, KernelSpec::Lin, EstimatorKind::Kme, None, &cfg).unwrap();
        assert_eq!(f.estimate.weights, vec![0.5, 0.5]);

        let f = fit_estimator(&x, KernelSpec::Lin, EstimatorKind::FKmse, None, &cfg).unwrap();
        let p = f.profile.unwrap();
        assert_eq!(p.selected_lambda, f.lambda);

        let one = DataMatrix::from_rows(&[vec![2.0]]).unwrap();
        let f = fit_estimator(&one, KernelSpec::Lin, EstimatorKind::FKmse, None, &cfg).unwrap();
        assert_eq!((f.lambda, f.estimate.weights[0]), (0.0, 1.0));
    }

    #[test]
    fn profile_json_with_infinite_lambda() {
        let sel = s_kmse_select(&GramStats { rho: 1.0 / 3.0, varrho: 1.0, n: 3 }).unwrap();
        let p = LoocvProfile::from_s_selection(&sel);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains(r#""selected_lambda":"inf""#), "{s}");
        let back: LoocvProfile = serde_json::from_str(&s).unwrap();
        assert!(back.selected_lambda.is_infinite());
    }
}
