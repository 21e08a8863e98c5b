use std::path::PathBuf;
use std::time::Instant;

use kmshrink::estimators::shrinkage_amount;
use kmshrink::experiments::{run_kpca_bench, run_lambda_sweep, run_nd_sweep, LambdaSweepConfig, NdSweepConfig};
use kmshrink::kernels::gram;
use kmshrink::model_selection::{
    f_kmse_loocv_naive, f_kmse_loocv_score, f_kmse_select, fit_estimator, gram_stats, s_kmse_loocv_poly,
    s_kmse_select, FittedEstimate, LoocvMethod, LoocvProfile,
};
use kmshrink::operators::distribution_gram;
use kmshrink::oracle::{draw_mixture, sample};
use kmshrink::rng::stream;
use kmshrink::spectral::sym_eig;
use kmshrink::{DataMatrix, EstimatorKind, KernelSpec, Standardizer};
use log::info;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{self, DistGramConfig, EstimateConfig, KpcaCommandConfig, ProfileConfig};
use crate::ingest::{ingest_csv, CsvOptions, Dataset};
use crate::output::{self, Metadata};
use crate::{CliError, Command, CommonArgs, Overrides};

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::LambdaSweep(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            sweep_overrides(&mut o, &a.kernel, a.trials);
            lambda_sweep(&a.common, o.into_map())
        }
        Command::NdSweep(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            sweep_overrides(&mut o, &a.kernel, a.trials);
            nd_sweep(&a.common, o.into_map())
        }
        Command::KpcaBench(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            o.csv(&a.csv);
            o.opt("kernel", a.kernel.clone());
            o.opt("components", a.components);
            o.opt("repetitions", a.repetitions);
            kpca_bench(&a.common, o.into_map())
        }
        Command::Estimate(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            o.csv(&a.csv);
            o.opt("kernel", a.kernel.clone());
            o.opt("estimator", a.estimator.clone());
            o.opt("lambda", a.lambda);
            estimate(&a.common, o.into_map())
        }
        Command::LoocvProfile(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            o.csv(&a.csv);
            o.opt("kernel", a.kernel.clone());
            o.opt("estimator", a.estimator.clone());
            if a.naive {
                o.put("naive", true);
            }
            loocv_profile(&a.common, o.into_map())
        }
        Command::DistGram(a) => {
            let mut o = Overrides::default();
            o.common(&a.common);
            o.csv(&a.csv);
            o.opt("group_column", a.group_column.clone());
            o.opt("kernel", a.kernel.clone());
            o.opt("estimator", a.estimator.clone());
            if let Some(l2) = &a.level2 {
                let parsed: kmshrink::operators::Level2 = l2.parse()?;
                o.put("level2", serde_json::to_value(parsed)?);
            }
            dist_gram(&a.common, o.into_map())
        }
    }
}

fn sweep_overrides(o: &mut Overrides, kernels: &[String], trials: Option<usize>) {
    if !kernels.is_empty() {
        let list: Vec<Value> = kernels
            .iter()
            .flat_map(|k| k.split(','))
            .map(|k| Value::String(k.trim().to_string()))
            .collect();
        o.put("kernels", list);
    }
    o.opt("trials", trials);
}

/// Loads the config file and merges flags over it. Experiment commands need
/// a seed from either source.
fn resolve<T>(name: &str, common: &CommonArgs, overrides: Map<String, Value>, needs_seed: bool) -> Result<T, CliError>
where
    T: Default + Serialize + serde::de::DeserializeOwned,
{
    let file = common.config.as_deref().map(config::load_file).transpose()?;
    if needs_seed {
        let in_file = file.as_ref().is_some_and(|m| m.get("seed").is_some_and(|v| !v.is_null()));
        if !overrides.contains_key("seed") && !in_file {
            return Err(CliError::Input(format!(
                "{name} requires --seed (or a \"seed\" key in the config file)"
            )));
        }
    }
    config::merge(file, overrides)
}

/// Prints the effective config when asked. Returns true if the command
/// should stop there.
fn print_config<C: Serialize>(common: &CommonArgs, cfg: &C) -> Result<bool, CliError> {
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(cfg)?);
    }
    Ok(common.print_config)
}

fn with_pool<T: Send>(
    parallelism: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<(T, usize), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(p) = parallelism {
        if p == 0 {
            return Err(CliError::Input("--parallelism must be at least 1".into()));
        }
        builder = builder.num_threads(p);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(f).map(|t| (t, threads))
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn lambda_sweep(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: LambdaSweepConfig = resolve("lambda-sweep", common, overrides, true)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    let start = Instant::now();
    let (timed, threads) = with_pool(common.parallelism, || Ok(run_lambda_sweep(&cfg)?))?;
    let meta = Metadata::new(threads, start.elapsed().as_secs_f64(), timed.timings);
    let report = timed.report;
    info!("{} records, {} failures", report.records.len(), report.failures.len());
    let json = output::write_json(&common.output_dir, "lambda-sweep", meta, &cfg, &report)?;
    let csv = output::write_sweep_csv(&common.output_dir, "lambda-sweep", &report.aggregates)?;
    report_paths(&[json, csv]);
    Ok(())
}

fn nd_sweep(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: NdSweepConfig = resolve("nd-sweep", common, overrides, true)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    let start = Instant::now();
    let (timed, threads) = with_pool(common.parallelism, || Ok(run_nd_sweep(&cfg)?))?;
    let meta = Metadata::new(threads, start.elapsed().as_secs_f64(), timed.timings);
    let report = timed.report;
    info!("{} records, {} failures", report.records.len(), report.failures.len());
    let json = output::write_json(&common.output_dir, "nd-sweep", meta, &cfg, &report)?;
    let csv = output::write_sweep_csv(&common.output_dir, "nd-sweep", &report.aggregates)?;
    report_paths(&[json, csv]);
    Ok(())
}

fn kpca_bench(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: KpcaCommandConfig = resolve("kpca-bench", common, overrides, true)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    let data = match &cfg.data {
        Some(path) => ingest_csv(path, &cfg.csv)?.data,
        None => {
            // a stream index no trial uses
            let mut rng = stream(cfg.bench.seed, u64::MAX);
            let mix = draw_mixture(&cfg.protocol, &mut rng)?;
            sample(&mix, cfg.synthetic_n, &mut rng)
        }
    };
    let start = Instant::now();
    let (timed, threads) = with_pool(common.parallelism, || Ok(run_kpca_bench(&cfg.bench, &data)?))?;
    let meta = Metadata::new(threads, start.elapsed().as_secs_f64(), timed.timings);
    let report = timed.report;
    for n in &report.notices {
        log::warn!("{n}");
    }
    let json = output::write_json(&common.output_dir, "kpca-bench", meta, &cfg, &report)?;
    let csv = output::write_kpca_csv(&common.output_dir, &report.summaries)?;
    report_paths(&[json, csv]);
    Ok(())
}

fn load_data(data: &Option<PathBuf>, csv: &CsvOptions, normalize: bool, command: &str) -> Result<Dataset, CliError> {
    let path = data
        .as_deref()
        .ok_or_else(|| CliError::Input(format!("{command} requires --data")))?;
    let mut ds = ingest_csv(path, csv)?;
    if normalize {
        ds.data = Standardizer::fit(&ds.data).apply(&ds.data)?;
    }
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    kernel: KernelSpec,
    #[serde(flatten)]
    fitted: FittedEstimate,
    /// Shrinkage toward zero, for the S-KMSE family.
    alpha: Option<f64>,
    /// Leave-one-out score at the reported lambda.
    loocv_score: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

fn estimate(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: EstimateConfig = resolve("estimate", common, overrides, false)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    let start = Instant::now();
    let ds = load_data(&cfg.data, &cfg.csv, cfg.normalize, "estimate")?;
    let x = ds.data;
    let kernel = cfg.kernel.resolve(&x)?;
    let fitted = fit_estimator(&x, kernel, cfg.estimator, cfg.lambda, &cfg.search)?;
    let n = x.nrows();
    let alpha = match fitted.kind {
        EstimatorKind::Kme => Some(0.0),
        EstimatorKind::SKmse => Some(shrinkage_amount(fitted.lambda)),
        EstimatorKind::FKmse => None,
    };
    let loocv_score = match (&fitted.profile, fitted.kind) {
        (Some(p), _) => Some(p.selected_score),
        (None, _) if n < 2 => None,
        (None, EstimatorKind::FKmse) if fitted.lambda > 0.0 && fitted.lambda.is_finite() => {
            let dec = sym_eig(gram(&kernel, &x).matrix())?.clamp_nonnegative();
            Some(f_kmse_loocv_score(&dec, fitted.lambda)?)
        }
        (None, EstimatorKind::FKmse) => None,
        (None, _) => alpha.map(|a| s_kmse_loocv_poly(&fitted.stats, a)),
    };
    println!("estimator = {}", fitted.kind);
    println!("lambda = {}", fitted.lambda);
    if let Some(a) = alpha {
        println!("alpha = {a}");
    }
    println!("rho = {}", fitted.stats.rho);
    println!("varrho = {}", fitted.stats.varrho);
    println!("loocv score = {}", fmt_opt(loocv_score));
    let report = EstimateReport {
        kernel,
        fitted,
        alpha,
        loocv_score,
    };
    let meta = Metadata::new(1, start.elapsed().as_secs_f64(), Vec::new());
    let json = output::write_json(&common.output_dir, "estimate", meta, &cfg, &report)?;
    report_paths(&[json]);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProfileReport {
    kernel: KernelSpec,
    estimator: EstimatorKind,
    #[serde(flatten)]
    profile: LoocvProfile,
    /// Direct fixed-point scores at the same lambdas (F-KMSE only).
    naive_scores: Option<Vec<f64>>,
}

fn loocv_profile(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: ProfileConfig = resolve("loocv-profile", common, overrides, false)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    let start = Instant::now();
    let ds = load_data(&cfg.data, &cfg.csv, cfg.normalize, "loocv-profile")?;
    let x = ds.data;
    let kernel = cfg.kernel.resolve(&x)?;
    let k = gram(&kernel, &x);
    let (profile, naive) = match cfg.estimator {
        EstimatorKind::Kme => {
            return Err(CliError::Input("loocv-profile needs --estimator s-kmse or f-kmse".into()));
        }
        EstimatorKind::SKmse => {
            if cfg.naive {
                log::warn!("--naive applies to f-kmse only; ignored");
            }
            let stats = gram_stats(&k);
            let sel = s_kmse_select(&stats)?;
            let m = cfg.search.grid_size.max(2);
            let mut lambdas = Vec::with_capacity(m);
            let mut scores = Vec::with_capacity(m);
            for i in 0..m {
                let a = i as f64 / (m - 1) as f64;
                lambdas.push(if a < 1.0 { a / (1.0 - a) } else { f64::INFINITY });
                scores.push(s_kmse_loocv_poly(&stats, a));
            }
            let profile = LoocvProfile {
                method: LoocvMethod::SAnalytic,
                lambdas,
                scores,
                selected_lambda: sel.lambda,
                selected_score: sel.score,
            };
            (profile, None)
        }
        EstimatorKind::FKmse => {
            let dec = sym_eig(k.matrix())?.clamp_nonnegative();
            let profile = f_kmse_select(&dec, &cfg.search)?;
            let naive = if cfg.naive {
                Some(
                    profile
                        .lambdas
                        .iter()
                        .map(|&l| f_kmse_loocv_naive(&k, l))
                        .collect::<kmshrink::Result<Vec<f64>>>()?,
                )
            } else {
                None
            };
            (profile, naive)
        }
    };
    println!("selected lambda = {}", profile.selected_lambda);
    println!("selected score = {}", profile.selected_score);

    let mut order: Vec<usize> = (0..profile.lambdas.len()).collect();
    order.sort_by(|&a, &b| profile.lambdas[a].total_cmp(&profile.lambdas[b]));
    let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let csv = output::write_profile_csv(
        &common.output_dir,
        &pick(&profile.lambdas),
        &pick(&profile.scores),
        &naive.as_deref().map(pick).unwrap_or_default(),
    )?;
    let report = ProfileReport {
        kernel,
        estimator: cfg.estimator,
        profile,
        naive_scores: naive,
    };
    let meta = Metadata::new(1, start.elapsed().as_secs_f64(), Vec::new());
    let json = output::write_json(&common.output_dir, "loocv-profile", meta, &cfg, &report)?;
    report_paths(&[json, csv]);
    Ok(())
}

#[derive(Debug, Serialize)]
struct DistGramReport {
    kernel: KernelSpec,
    groups: Vec<String>,
    sizes: Vec<usize>,
    gram: Vec<Vec<f64>>,
}

/// Splits rows by group id, keeping groups in order of first appearance.
fn split_groups(x: &DataMatrix, ids: &[String]) -> Result<(Vec<String>, Vec<DataMatrix>), CliError> {
    let mut names: Vec<String> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (row, id) in ids.iter().enumerate() {
        match names.iter().position(|n| n == id) {
            Some(g) => members[g].push(row),
            None => {
                names.push(id.clone());
                members.push(vec![row]);
            }
        }
    }
    let groups = members
        .iter()
        .map(|rows| x.select_rows(rows))
        .collect::<kmshrink::Result<Vec<_>>>()?;
    Ok((names, groups))
}

fn dist_gram(common: &CommonArgs, overrides: Map<String, Value>) -> Result<(), CliError> {
    let cfg: DistGramConfig = resolve("dist-gram", common, overrides, false)?;
    if print_config(common, &cfg)? {
        return Ok(());
    }
    if cfg.csv.group_column.is_none() {
        return Err(CliError::Input("dist-gram requires --group-column".into()));
    }
    let start = Instant::now();
    let ds = load_data(&cfg.data, &cfg.csv, cfg.normalize, "dist-gram")?;
    let ids = ds.groups.expect("group column requested");
    let kernel = cfg.kernel.resolve(&ds.data)?;
    let (names, groups) = split_groups(&ds.data, &ids)?;
    let (g, threads) = with_pool(common.parallelism, || {
        Ok(distribution_gram(&groups, kernel, cfg.estimator, cfg.level2)?)
    })?;
    let csv = output::write_gram_csv(&common.output_dir, &names, &g)?;
    let report = DistGramReport {
        kernel,
        sizes: groups.iter().map(DataMatrix::nrows).collect(),
        groups: names,
        gram: g.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let meta = Metadata::new(threads, start.elapsed().as_secs_f64(), Vec::new());
    let json = output::write_json(&common.output_dir, "dist-gram", meta, &cfg, &report)?;
    report_paths(&[json, csv]);
    Ok(())
}
