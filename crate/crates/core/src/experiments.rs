//! Trial runners: shrinkage-parameter sweeps, sample-size/dimension sweeps
//! with leave-one-out selection, and the kernel PCA reconstruction benchmark.
//!
//! Every trial draws from its own random stream derived from the master
//! seed, so reports are identical across runs and thread counts. Wall-clock
//! timings are returned next to the report, never inside it.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::estimators::{f_kmse_spectral, uniform_weights, EstimatorKind};
use crate::kernels::{gram, GramMatrix, KernelConfig, KernelFamily, KernelSpec};
use crate::model_selection::{f_kmse_select, gram_stats, s_kmse_select, SearchConfig};
use crate::operators::{centered_rank, cose_weights, kpca_fit, kpca_reconstruction_error, CovOpSource, CovOpWeights};
use crate::oracle::{draw_mixture, sample, MixtureOracle, OracleMode, ProtocolConfig};
use crate::rng::{derive_seed, seeded, stream};
use crate::serde_util::extended_f64;
use crate::spectral::sym_eig;

pub const SCHEMA_VERSION: u32 = 1;

fn default_kernels() -> Vec<KernelConfig> {
    KernelFamily::ALL.iter().map(|&f| KernelConfig::new(f)).collect()
}

/// Sweep over `lambda = multiplier * gamma_0`, where `gamma_0` is the
/// smallest eigenvalue of `K` above the rank threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaSweepConfig {
    pub seed: u64,
    pub kernels: Vec<KernelConfig>,
    pub multipliers: Vec<f64>,
    pub trials: usize,
    pub n: usize,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    /// Monte Carlo pairs for `|mu|^2` where no closed form exists (poly3).
    pub norm_samples: usize,
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kernels: default_kernels(),
            multipliers: vec![0.01, 0.1, 1.0, 10.0],
            trials: 30,
            n: 10,
            protocol: ProtocolConfig::default(),
            norm_samples: 100_000,
        }
    }
}

/// Grid over sample size and dimension with leave-one-out selected shrinkage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NdSweepConfig {
    pub seed: u64,
    pub kernels: Vec<KernelConfig>,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub trials: usize,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    pub norm_samples: usize,
    pub search: SearchConfig,
}

impl Default for NdSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kernels: vec![KernelConfig::new(KernelFamily::Rbf)],
            n_grid: vec![10, 20, 50, 100],
            d_grid: vec![5, 10, 30],
            trials: 30,
            protocol: ProtocolConfig::default(),
            norm_samples: 100_000,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    SampleSize,
    Dimension,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub seed: u64,
    pub kernel: String,
    pub bandwidth_sq: Option<f64>,
    pub n: usize,
    pub d: usize,
    /// Lambda sweeps only; `None` for the unshrunk estimate.
    pub multiplier: Option<f64>,
    pub estimator: EstimatorKind,
    #[serde(with = "extended_f64")]
    pub lambda_used: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_id: usize,
    pub seed: u64,
    pub kernel: String,
    pub n: usize,
    pub d: usize,
    pub estimator: Option<EstimatorKind>,
    pub multiplier: Option<f64>,
    pub reason: String,
}

/// Summary of one (kernel, estimator, grid point) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub kernel: String,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub d: usize,
    pub multiplier: Option<f64>,
    /// Number of trials that produced a loss.
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    /// Fraction of paired trials where this estimator's loss is strictly
    /// below the unshrunk estimate's. `None` for the unshrunk estimate.
    pub win_rate: Option<f64>,
    pub paired: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub axes: Vec<SweepAxis>,
    pub trials: usize,
    pub records: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub aggregates: Vec<Aggregate>,
}

/// A report plus per-trial wall-clock seconds, indexed by trial id.
#[derive(Clone, Debug)]
pub struct Timed<T> {
    pub report: T,
    pub timings: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Recomputes the aggregate table from per-trial records.
pub fn aggregate(records: &[TrialResult]) -> Vec<Aggregate> {
    type Key = (String, EstimatorKind, usize, usize, Option<u64>);
    let key = |r: &TrialResult| -> Key {
        (r.kernel.clone(), r.estimator, r.n, r.d, r.multiplier.map(f64::to_bits))
    };
    let mut keys: Vec<Key> = Vec::new();
    for r in records {
        let k = key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let cell: Vec<&TrialResult> = records.iter().filter(|r| key(r) == k).collect();
            let mut losses: Vec<f64> = cell.iter().map(|r| r.loss).collect();
            losses.sort_by(f64::total_cmp);
            let (wins, paired) = if k.1 == EstimatorKind::Kme {
                (0, 0)
            } else {
                cell.iter().fold((0, 0), |(w, p), r| {
                    let base = records.iter().find(|b| {
                        b.estimator == EstimatorKind::Kme
                            && b.trial_id == r.trial_id
                            && b.kernel == r.kernel
                            && b.n == r.n
                            && b.d == r.d
                    });
                    match base {
                        Some(b) => (w + usize::from(r.loss < b.loss), p + 1),
                        None => (w, p),
                    }
                })
            };
            let first = cell[0];
            Aggregate {
                kernel: k.0,
                estimator: k.1,
                n: k.2,
                d: k.3,
                multiplier: first.multiplier,
                count: losses.len(),
                mean: losses.iter().sum::<f64>() / losses.len() as f64,
                median: quantile(&losses, 0.5),
                p25: quantile(&losses, 0.25),
                p75: quantile(&losses, 0.75),
                win_rate: (k.1 != EstimatorKind::Kme && paired > 0).then(|| wins as f64 / paired as f64),
                paired,
            }
        })
        .collect()
}

/// One sample from a freshly drawn mixture, with what every estimator needs.
struct TrialSample {
    x: DataMatrix,
    spec: KernelSpec,
    k: GramMatrix,
    oracle: MixtureOracle,
    sq_norm: f64,
}

impl TrialSample {
    fn loss(&self, beta: &[f64]) -> Result<f64> {
        self.oracle.loss_with_norm(beta, &self.x, &self.k, self.sq_norm)
    }
}

fn norm_mode(spec: &KernelSpec, samples: usize, seed: u64) -> OracleMode {
    match spec {
        KernelSpec::Poly3 => OracleMode::MonteCarlo { samples, seed },
        _ => OracleMode::Exact,
    }
}

struct Cell<'a> {
    trial_id: usize,
    seed: u64,
    kernel: String,
    n: usize,
    d: usize,
    records: &'a mut Vec<TrialResult>,
    failures: &'a mut Vec<TrialFailure>,
}

impl Cell<'_> {
    fn push(&mut self, spec: &KernelSpec, estimator: EstimatorKind, multiplier: Option<f64>, run: impl FnOnce() -> Result<(f64, f64)>) {
        match run() {
            Ok((lambda_used, loss)) => self.records.push(TrialResult {
                trial_id: self.trial_id,
                seed: self.seed,
                kernel: self.kernel.clone(),
                bandwidth_sq: match spec {
                    KernelSpec::Rbf { bandwidth_sq } => Some(*bandwidth_sq),
                    _ => None,
                },
                n: self.n,
                d: self.d,
                multiplier,
                estimator,
                lambda_used,
                loss,
            }),
            Err(e) => self.fail(Some(estimator), multiplier, &e),
        }
    }

    fn fail(&mut self, estimator: Option<EstimatorKind>, multiplier: Option<f64>, e: &Error) {
        log::warn!(
            "trial {} kernel {} n={} d={}{}: {e}",
            self.trial_id,
            self.kernel,
            self.n,
            self.d,
            estimator.map(|k| format!(" {k}")).unwrap_or_default()
        );
        self.failures.push(TrialFailure {
            trial_id: self.trial_id,
            seed: self.seed,
            kernel: self.kernel.clone(),
            n: self.n,
            d: self.d,
            estimator,
            multiplier,
            reason: e.to_string(),
        });
    }
}

fn prepare(
    protocol: &ProtocolConfig,
    kernels: &[KernelConfig],
    n: usize,
    seed: u64,
    norm_samples: usize,
) -> Result<Vec<(KernelConfig, Result<TrialSample>)>> {
    let mut rng = seeded(seed);
    let mix = draw_mixture(protocol, &mut rng)?;
    let x = sample(&mix, n, &mut rng);
    Ok(kernels
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let prepared = (|| {
                let spec = cfg.resolve(&x)?;
                let k = gram(&spec, &x);
                let oracle = MixtureOracle::new(&mix, spec)?;
                let sq_norm = oracle
                    .sq_norm(norm_mode(&spec, norm_samples, derive_seed(seed, 1 + i as u64)))?
                    .value;
                Ok(TrialSample {
                    x: x.clone(),
                    spec,
                    k,
                    oracle,
                    sq_norm,
                })
            })();
            (*cfg, prepared)
        })
        .collect())
}

type TrialOutput = (Vec<TrialResult>, Vec<TrialFailure>, f64);

fn collect_report(axes: Vec<SweepAxis>, trials: usize, outputs: Vec<TrialOutput>) -> Timed<SweepReport> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (r, f, t) in outputs {
        records.extend(r);
        failures.extend(f);
        timings.push(t);
    }
    let aggregates = aggregate(&records);
    Timed {
        report: SweepReport {
            schema_version: SCHEMA_VERSION,
            axes,
            trials,
            records,
            failures,
            aggregates,
        },
        timings,
    }
}

fn validate_common(trials: usize, kernels: &[KernelConfig]) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidInput("trial count must be positive".into()));
    }
    if kernels.is_empty() {
        return Err(Error::InvalidInput("at least one kernel is required".into()));
    }
    Ok(())
}

pub fn run_lambda_sweep(config: &LambdaSweepConfig) -> Result<Timed<SweepReport>> {
    validate_common(config.trials, &config.kernels)?;
    config.protocol.validate()?;
    if config.n < 2 {
        return Err(Error::InvalidInput("sample size must be at least 2".into()));
    }
    if config.multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidInput("multipliers must be finite and nonnegative".into()));
    }
    let (n, d) = (config.n, config.protocol.d);
    let outputs: Vec<TrialOutput> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let start = Instant::now();
            let seed = derive_seed(config.seed, t as u64);
            let mut records = Vec::new();
            let mut failures = Vec::new();
            let prepared = prepare(&config.protocol, &config.kernels, n, seed, config.norm_samples)
                .expect("validated protocol");
            for (cfg, sample) in prepared {
                let mut cell = Cell {
                    trial_id: t,
                    seed,
                    kernel: cfg.to_string(),
                    n,
                    d,
                    records: &mut records,
                    failures: &mut failures,
                };
                let s = match sample {
                    Ok(s) => s,
                    Err(e) => {
                        cell.fail(None, None, &e);
                        continue;
                    }
                };
                let dec = match sym_eig(s.k.matrix()) {
                    Ok(dec) => dec.clamp_nonnegative(),
                    Err(e) => {
                        cell.fail(None, None, &e);
                        continue;
                    }
                };
                let Some(gamma0) = dec.min_nonzero_eigval() else {
                    cell.fail(None, None, &Error::DegenerateGram("no eigenvalue above the rank threshold".into()));
                    continue;
                };
                cell.push(&s.spec, EstimatorKind::Kme, None, || Ok((0.0, s.loss(uniform_weights(n).as_slice())?)));
                for &m in &config.multipliers {
                    let lambda = m * gamma0;
                    cell.push(&s.spec, EstimatorKind::SKmse, Some(m), || {
                        let w = vec![1.0 / (n as f64 * (1.0 + lambda)); n];
                        Ok((lambda, s.loss(&w)?))
                    });
                    cell.push(&s.spec, EstimatorKind::FKmse, Some(m), || {
                        let beta = f_kmse_spectral(&dec, lambda)?;
                        Ok((lambda, s.loss(beta.as_slice())?))
                    });
                }
            }
            (records, failures, start.elapsed().as_secs_f64())
        })
        .collect();
    Ok(collect_report(vec![SweepAxis::Lambda], config.trials, outputs))
}

pub fn run_nd_sweep(config: &NdSweepConfig) -> Result<Timed<SweepReport>> {
    validate_common(config.trials, &config.kernels)?;
    if config.n_grid.is_empty() || config.d_grid.is_empty() {
        return Err(Error::InvalidInput("sample-size and dimension grids must be non-empty".into()));
    }
    if config.n_grid.iter().any(|&n| n < 2) || config.d_grid.contains(&0) {
        return Err(Error::InvalidInput("sample sizes must be at least 2 and dimensions positive".into()));
    }
    for &d in &config.d_grid {
        ProtocolConfig { d, ..config.protocol.clone() }.validate()?;
    }
    let cells: Vec<(usize, usize)> = config
        .d_grid
        .iter()
        .flat_map(|&d| config.n_grid.iter().map(move |&n| (n, d)))
        .collect();
    let outputs: Vec<TrialOutput> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let start = Instant::now();
            let trial_seed = derive_seed(config.seed, t as u64);
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for (ci, &(n, d)) in cells.iter().enumerate() {
                let seed = derive_seed(trial_seed, ci as u64);
                let protocol = ProtocolConfig { d, ..config.protocol.clone() };
                let prepared = prepare(&protocol, &config.kernels, n, seed, config.norm_samples).expect("validated protocol");
                for (cfg, sample) in prepared {
                    let mut cell = Cell {
                        trial_id: t,
                        seed,
                        kernel: cfg.to_string(),
                        n,
                        d,
                        records: &mut records,
                        failures: &mut failures,
                    };
                    let s = match sample {
                        Ok(s) => s,
                        Err(e) => {
                            cell.fail(None, None, &e);
                            continue;
                        }
                    };
                    cell.push(&s.spec, EstimatorKind::Kme, None, || Ok((0.0, s.loss(uniform_weights(n).as_slice())?)));
                    cell.push(&s.spec, EstimatorKind::SKmse, None, || {
                        let sel = s_kmse_select(&gram_stats(&s.k))?;
                        let w = if sel.lambda.is_infinite() { 0.0 } else { 1.0 / (n as f64 * (1.0 + sel.lambda)) };
                        Ok((sel.lambda, s.loss(&vec![w; n])?))
                    });
                    cell.push(&s.spec, EstimatorKind::FKmse, None, || {
                        let dec = sym_eig(s.k.matrix())?.clamp_nonnegative();
                        let profile = f_kmse_select(&dec, &config.search)?;
                        let beta = f_kmse_spectral(&dec, profile.selected_lambda)?;
                        Ok((profile.selected_lambda, s.loss(beta.as_slice())?))
                    });
                }
            }
            (records, failures, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut axes = Vec::new();
    if config.n_grid.len() > 1 {
        axes.push(SweepAxis::SampleSize);
    }
    if config.d_grid.len() > 1 {
        axes.push(SweepAxis::Dimension);
    }
    Ok(collect_report(axes, config.trials, outputs))
}

/// The five kernel PCA variants: shrinkage either in the centering mean or
/// in the covariance operator, never both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpcaScenario {
    Standard,
    SKmseCentering,
    FKmseCentering,
    SCose,
    FCose,
}

impl KpcaScenario {
    pub const ALL: [KpcaScenario; 5] = [
        Self::Standard,
        Self::SKmseCentering,
        Self::FKmseCentering,
        Self::SCose,
        Self::FCose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::SKmseCentering => "s_kmse_centering",
            Self::FKmseCentering => "f_kmse_centering",
            Self::SCose => "s_cose",
            Self::FCose => "f_cose",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpcaBenchConfig {
    pub seed: u64,
    pub kernel: KernelConfig,
    pub components: usize,
    pub repetitions: usize,
    pub test_fraction: f64,
    /// Standardize columns with statistics of the training split.
    pub normalize: bool,
}

impl Default for KpcaBenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kernel: KernelConfig::new(KernelFamily::Rbf),
            components: 20,
            repetitions: 10,
            test_fraction: 0.3,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaRecord {
    pub repetition: usize,
    pub scenario: KpcaScenario,
    pub components_used: usize,
    #[serde(with = "extended_f64")]
    pub lambda: f64,
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaSummary {
    pub scenario: KpcaScenario,
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaFailure {
    pub repetition: usize,
    pub scenario: Option<KpcaScenario>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaReport {
    pub schema_version: u32,
    pub records: Vec<KpcaRecord>,
    pub failures: Vec<KpcaFailure>,
    pub notices: Vec<String>,
    pub summaries: Vec<KpcaSummary>,
}

/// Per-scenario mean and sample standard deviation of the repetition means.
pub fn summarize_kpca(records: &[KpcaRecord]) -> Vec<KpcaSummary> {
    KpcaScenario::ALL
        .iter()
        .filter_map(|&scenario| {
            let v: Vec<f64> = records.iter().filter(|r| r.scenario == scenario).map(|r| r.mean_error).collect();
            if v.is_empty() {
                return None;
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let std_dev = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            Some(KpcaSummary {
                scenario,
                count: v.len(),
                mean,
                std_dev,
            })
        })
        .collect()
}

/// Train/test split used by repetition `rep`: shuffled indices, the last
/// `round(test_fraction * n)` (at least one) held out.
pub fn kpca_split(n: usize, test_fraction: f64, seed: u64, rep: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, rep as u64));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Centering weights and covariance weights for one scenario on a
/// training Gram.
pub fn scenario_weights(
    scenario: KpcaScenario,
    k: &GramMatrix,
    search: &SearchConfig,
) -> Result<(DVector<f64>, CovOpWeights, f64)> {
    let n = k.n();
    let uniform = uniform_weights(n);
    Ok(match scenario {
        KpcaScenario::Standard => (uniform, CovOpWeights::standard(n), 0.0),
        KpcaScenario::SKmseCentering => {
            let sel = s_kmse_select(&gram_stats(k))?;
            let w = if sel.lambda.is_infinite() { 0.0 } else { 1.0 / (n as f64 * (1.0 + sel.lambda)) };
            (DVector::from_element(n, w), CovOpWeights::standard(n), sel.lambda)
        }
        KpcaScenario::FKmseCentering => {
            let dec = sym_eig(k.matrix())?.clamp_nonnegative();
            let p = f_kmse_select(&dec, search)?;
            (f_kmse_spectral(&dec, p.selected_lambda)?, CovOpWeights::standard(n), p.selected_lambda)
        }
        KpcaScenario::SCose => {
            let w = cose_weights(k, None, CovOpSource::SCose, None)?;
            let l = w.lambda;
            (uniform, w, l)
        }
        KpcaScenario::FCose => {
            let w = cose_weights(k, None, CovOpSource::FCose, None)?;
            let l = w.lambda;
            (uniform, w, l)
        }
    })
}

pub fn run_kpca_bench(config: &KpcaBenchConfig, data: &DataMatrix) -> Result<Timed<KpcaReport>> {
    let n = data.nrows();
    if n < 10 {
        return Err(Error::InvalidInput(format!("benchmark needs at least 10 points, got {n}")));
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction must lie in (0, 1), got {}", config.test_fraction)));
    }
    if config.repetitions == 0 {
        return Err(Error::InvalidInput("repetition count must be positive".into()));
    }
    let search = SearchConfig::default();
    type RepOutput = (Vec<KpcaRecord>, Vec<KpcaFailure>, Vec<String>, f64);
    let outputs: Vec<RepOutput> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let start = Instant::now();
            let mut records = Vec::new();
            let mut failures = Vec::new();
            let mut notices = Vec::new();
            let (train_idx, test_idx) = kpca_split(n, config.test_fraction, config.seed, rep);
            let prepared = (|| {
                let mut train = data.select_rows(&train_idx)?;
                let mut test = data.select_rows(&test_idx)?;
                if config.normalize {
                    let st = Standardizer::fit(&train);
                    train = st.apply(&train)?;
                    test = st.apply(&test)?;
                }
                let spec = config.kernel.resolve(&train)?;
                let k = gram(&spec, &train);
                Ok::<_, Error>((train, test, spec, k))
            })();
            let (train, test, spec, k) = match prepared {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("repetition {rep}: {e}");
                    failures.push(KpcaFailure { repetition: rep, scenario: None, reason: e.to_string() });
                    return (records, failures, notices, start.elapsed().as_secs_f64());
                }
            };
            for scenario in KpcaScenario::ALL {
                let mut run = || -> Result<KpcaRecord> {
                    let (center, covop, lambda) = scenario_weights(scenario, &k, &search)?;
                    let rank = centered_rank(&k, &center)?;
                    let ell = config.components.min(rank);
                    if ell < config.components {
                        notices.push(format!(
                            "repetition {rep} {}: using {ell} components (rank {rank})",
                            scenario.name()
                        ));
                    }
                    let model = kpca_fit(&train, spec, &k, &center, &covop, ell)?;
                    let errs = kpca_reconstruction_error(&model, &test)?;
                    Ok(KpcaRecord {
                        repetition: rep,
                        scenario,
                        components_used: ell,
                        lambda,
                        mean_error: errs.iter().sum::<f64>() / errs.len() as f64,
                    })
                };
                match run() {
                    Ok(r) => records.push(r),
                    Err(e) => {
                        log::warn!("repetition {rep} {}: {e}", scenario.name());
                        failures.push(KpcaFailure { repetition: rep, scenario: Some(scenario), reason: e.to_string() });
                    }
                }
            }
            (records, failures, notices, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut report = KpcaReport {
        schema_version: SCHEMA_VERSION,
        records: Vec::new(),
        failures: Vec::new(),
        notices: Vec::new(),
        summaries: Vec::new(),
    };
    let mut timings = Vec::new();
    for (r, f, notes, t) in outputs {
        report.records.extend(r);
        report.failures.extend(f);
        report.notices.extend(notes);
        timings.push(t);
    }
    for note in &report.notices {
        log::info!("{note}");
    }
    report.summaries = summarize_kpca(&report.records);
    Ok(Timed { report, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::loss;

    fn small_lambda() -> LambdaSweepConfig {
        LambdaSweepConfig {
            seed: 42,
            trials: 4,
            n: 6,
            protocol: ProtocolConfig::with_dim(3),
            kernels: vec![KernelConfig::new(KernelFamily::Rbf), KernelConfig::new(KernelFamily::Lin)],
            multipliers: vec![0.0, 0.1, 1.0],
            norm_samples: 2000,
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn zero_multiplier_matches_kme() {
        let rep = run_lambda_sweep(&small_lambda()).unwrap().report;
        for r in rep.records.iter().filter(|r| r.multiplier == Some(0.0)) {
            let base = rep
                .records
                .iter()
                .find(|b| b.estimator == EstimatorKind::Kme && b.trial_id == r.trial_id && b.kernel == r.kernel)
                .unwrap();
            assert!((r.loss - base.loss).abs() <= 1e-9 * base.loss.max(1.0), "{r:?} vs {base:?}");
        }
    }

    #[test]
    fn lambda_sweep_is_deterministic() {
        let cfg = small_lambda();
        let a = serde_json::to_string(&run_lambda_sweep(&cfg).unwrap().report).unwrap();
        let b = serde_json::to_string(&run_lambda_sweep(&cfg).unwrap().report).unwrap();
        assert_eq!(a, b);
        let other = LambdaSweepConfig { seed: 43, ..cfg };
        assert_ne!(a, serde_json::to_string(&run_lambda_sweep(&other).unwrap().report).unwrap());
    }

    #[test]
    fn aggregates_recompute() {
        let rep = run_lambda_sweep(&small_lambda()).unwrap().report;
        assert_eq!(aggregate(&rep.records), rep.aggregates);
        // 2 kernels x (1 unshrunk + 2 estimators x 3 multipliers), except
        // lin with n > d: K is singular and f-kmse at lambda = 0 fails
        assert_eq!(rep.aggregates.len(), 13);
        assert_eq!(rep.failures.len(), 4);
        for f in &rep.failures {
            assert_eq!((f.kernel.as_str(), f.estimator, f.multiplier), ("lin", Some(EstimatorKind::FKmse), Some(0.0)));
            assert!(f.reason.contains("singular"), "{}", f.reason);
        }
    }

    #[test]
    fn kme_loss_matches_direct_formula() {
        let cfg = LambdaSweepConfig {
            kernels: vec![KernelConfig::new(KernelFamily::Rbf)],
            ..small_lambda()
        };
        let rep = run_lambda_sweep(&cfg).unwrap().report;
        for r in rep.records.iter().filter(|r| r.estimator == EstimatorKind::Kme) {
            let mut rng = seeded(r.seed);
            let mix = draw_mixture(&cfg.protocol, &mut rng).unwrap();
            let x = sample(&mix, cfg.n, &mut rng);
            let spec = KernelSpec::rbf(r.bandwidth_sq.unwrap()).unwrap();
            let direct = loss(uniform_weights(cfg.n).as_slice(), &x, spec, &mix, OracleMode::Exact).unwrap();
            assert_eq!(direct.to_bits(), r.loss.to_bits());
        }
    }

    #[test]
    fn nd_sweep_shape() {
        let cfg = NdSweepConfig {
            seed: 1,
            trials: 3,
            n_grid: vec![5, 8],
            d_grid: vec![2, 3],
            ..NdSweepConfig::default()
        };
        let rep = run_nd_sweep(&cfg).unwrap().report;
        assert_eq!(rep.aggregates.len(), 2 * 2 * 3);
        assert_eq!(rep.axes, vec![SweepAxis::SampleSize, SweepAxis::Dimension]);
        assert_eq!(rep.records.len() + rep.failures.len(), 3 * 4 * 3);
        for a in rep.aggregates.iter().filter(|a| a.estimator != EstimatorKind::Kme) {
            assert!(a.win_rate.is_some());
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(run_lambda_sweep(&LambdaSweepConfig { trials: 0, ..small_lambda() }).is_err());
        assert!(run_lambda_sweep(&LambdaSweepConfig { multipliers: vec![-1.0], ..small_lambda() }).is_err());
        assert!(run_nd_sweep(&NdSweepConfig { n_grid: vec![], ..NdSweepConfig::default() }).is_err());
        let tiny = DataMatrix::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(run_kpca_bench(&KpcaBenchConfig::default(), &tiny).is_err());
    }

    #[test]
    fn config_json_is_flat() {
        let cfg: LambdaSweepConfig = serde_json::from_str(r#"{"seed": 3, "d": 4, "trials": 2, "kernels": ["rbf:median", "lin"]}"#).unwrap();
        assert_eq!(cfg.protocol.d, 4);
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.kernels.len(), 2);
        assert_eq!(cfg.multipliers, vec![0.01, 0.1, 1.0, 10.0]);
    }

    #[test]
    fn split_is_reproducible() {
        let (a, b) = kpca_split(20, 0.3, 9, 2);
        assert_eq!((a.len(), b.len()), (14, 6));
        assert_eq!(kpca_split(20, 0.3, 9, 2), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn kpca_bench_runs() {
        let mut rng = seeded(5);
        let mix = draw_mixture(&ProtocolConfig::with_dim(4), &mut rng).unwrap();
        let data = sample(&mix, 40, &mut rng);
        let cfg = KpcaBenchConfig {
            seed: 7,
            components: 5,
            repetitions: 3,
            ..KpcaBenchConfig::default()
        };
        let a = run_kpca_bench(&cfg, &data).unwrap().report;
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        assert_eq!(a.summaries.len(), 5);
        assert!(a.records.iter().all(|r| r.mean_error >= 0.0));
        let b = run_kpca_bench(&cfg, &data).unwrap().report;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
