use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tpbs::experiment::fit_train_density;
use tpbs::{
    de_decomposition, dirichlet_energy, evaluate_missing, load_model, local_dirichlet_energy, mean_std,
    run_selfcheck, save_model, train_split, DensityFitConfig, Encoding, LdeConfig, Manifest, MetricReport, Model,
    ModelSpec, RawTable, Scale, TrainConfig, TrainSummary,
};

use crate::config::{Checkpoint, RunConfig};
use crate::error::CliError;

/// Relative deviation of `sᵀZs` from the energy above which the report
/// flags the decomposition as inconsistent.
const DECOMPOSITION_FLAG: f64 = 1e-6;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

struct Loaded {
    cfg: RunConfig,
    manifest: Manifest,
    table: RawTable,
}

fn load(config: &Path, seed: Option<u64>) -> Result<Loaded, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = Manifest::load(&cfg.manifest)?;
    let table = manifest.load_table()?;
    Ok(Loaded { cfg, manifest, table })
}

fn split_indices(manifest: &Manifest, only: Option<usize>) -> Result<Vec<usize>, CliError> {
    match only {
        Some(i) if i >= manifest.seeds.len() => Err(CliError::Config(format!(
            "split {i} requested, manifest '{}' defines {}",
            manifest.name,
            manifest.seeds.len()
        ))),
        Some(i) => Ok(vec![i]),
        None => Ok((0..manifest.seeds.len()).collect()),
    }
}

#[derive(Serialize)]
struct SplitReport<'a> {
    dataset: &'a str,
    split: usize,
    split_seed: u64,
    train_seed: u64,
    model: &'a ModelSpec,
    train: &'a TrainConfig,
    test_best_val: &'a MetricReport,
    test_after_overfit: Option<&'a MetricReport>,
    summary: &'a TrainSummary,
}

pub fn train(config: &Path, seed: Option<u64>, out: &Path, only: Option<usize>) -> Result<(), CliError> {
    let Loaded { cfg, manifest, table } = load(config, seed)?;
    let mut best = Vec::new();
    let mut after = Vec::new();
    for i in split_indices(&manifest, only)? {
        let dataset = manifest.dataset(&table, manifest.seeds[i], cfg.scaler_eps)?;
        for &j in &dataset.widened {
            eprintln!(
                "warning: feature '{}' is constant on the training rows of split {i}; widened by {}",
                dataset.table.feature_names[j], cfg.scaler_eps
            );
        }
        let train_cfg = TrainConfig {
            seed: cfg.train_seed(i),
            ..cfg.train.clone()
        };
        let outcome = train_split(&dataset, &cfg.model, &train_cfg)?;
        let dir = out.join(format!("split{i}"));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        save_model(&outcome.report.best_val_model, &dir.join(Checkpoint::BestVal.file_name()), Encoding::Binary)?;
        let after_path = dir.join(Checkpoint::AfterOverfit.file_name());
        match &outcome.report.after_overfit_model {
            Some(m) => save_model(m, &after_path, Encoding::Binary)?,
            None if after_path.exists() => fs::remove_file(&after_path).map_err(|e| io_err(&after_path, e))?,
            None => {}
        }
        let summary = &outcome.report.summary;
        write_json(
            &dir.join("report.json"),
            &SplitReport {
                dataset: &manifest.name,
                split: i,
                split_seed: manifest.seeds[i],
                train_seed: train_cfg.seed,
                model: &cfg.model,
                train: &train_cfg,
                test_best_val: &outcome.test_best_val,
                test_after_overfit: outcome.test_after_overfit.as_ref(),
                summary,
            },
        )?;
        let after_text = match &outcome.test_after_overfit {
            Some(m) => format!("{:.6} (epoch {})", m.error(), summary.after_overfit.as_ref().map_or(0, |c| c.epoch)),
            None => "none".to_string(),
        };
        println!(
            "split {i}: epochs {} ({:?}), best_val test error {:.6} (epoch {}), after_overfit test error {after_text}",
            summary.epochs_run,
            summary.stop_reason,
            outcome.test_best_val.error(),
            summary.best_val.epoch,
        );
        best.push(outcome.test_best_val.error());
        if let Some(m) = &outcome.test_after_overfit {
            after.push(m.error());
        }
    }
    let (m, s) = mean_std(&best);
    println!("{}: best_val test error {m:.6} ± {s:.6} over {} split(s)", manifest.name, best.len());
    if !after.is_empty() {
        let (m, s) = mean_std(&after);
        println!("{}: after_overfit test error {m:.6} ± {s:.6} over {} split(s)", manifest.name, after.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    dataset: &'a str,
    checkpoint: &'static str,
    split: usize,
    split_seed: u64,
    estimator: String,
    num_missing: usize,
    count: usize,
    mse: f64,
    relative_mse: Option<f64>,
    accuracy: Option<f64>,
    error: f64,
}

pub fn eval(config: &Path, seed: Option<u64>, run: &Path, out: &Path, only: Option<usize>) -> Result<(), CliError> {
    let Loaded { cfg, manifest, table } = load(config, seed)?;
    let spec = &cfg.eval;
    let needs_density = spec.estimators.contains(&tpbs::Estimator::Pdf);
    let mut rows = Vec::new();
    for i in split_indices(&manifest, only)? {
        let dataset = manifest.dataset(&table, manifest.seeds[i], cfg.scaler_eps)?;
        let density = if needs_density {
            let dcfg = DensityFitConfig {
                seed: cfg.train_seed(i),
                ..cfg.density.clone()
            };
            Some(fit_train_density(&dataset, &dcfg)?)
        } else {
            None
        };
        for &cp in &spec.checkpoints {
            let path = run.join(format!("split{i}")).join(cp.file_name());
            if cp == Checkpoint::AfterOverfit && !path.exists() {
                eprintln!("note: split {i} has no after-overfit checkpoint");
                continue;
            }
            let model: Model = load_model(&path).map_err(|e| io_err(&path, e))?;
            if model.input_dim() != dataset.table.num_features() {
                return Err(CliError::Config(format!(
                    "{} expects {} inputs, dataset '{}' has {}",
                    path.display(),
                    model.input_dim(),
                    manifest.name,
                    dataset.table.num_features()
                )));
            }
            for &k in &spec.num_missing {
                let results =
                    evaluate_missing(&model, &dataset, density.as_ref(), &spec.estimators, k, cfg.mask_seed(i, k))?;
                for r in results {
                    rows.push(MetricRow {
                        dataset: &manifest.name,
                        checkpoint: cp.name(),
                        split: i,
                        split_seed: manifest.seeds[i],
                        estimator: r.estimator.to_string(),
                        num_missing: k,
                        count: r.metrics.count,
                        mse: r.metrics.mse,
                        relative_mse: r.metrics.relative_mse,
                        accuracy: r.metrics.accuracy,
                        error: r.metrics.error(),
                    });
                }
            }
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut w = csv::Writer::from_path(out).map_err(|e| io_err(out, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| io_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))?;

    let mut groups: BTreeMap<(&str, usize, String), Vec<f64>> = BTreeMap::new();
    for row in &rows {
        groups
            .entry((row.checkpoint, row.num_missing, row.estimator.clone()))
            .or_default()
            .push(row.error);
    }
    println!("checkpoint\tmissing\testimator\terror (mean ± std)\tsplits");
    for ((cp, k, est), errs) in &groups {
        let (m, s) = mean_std(errs);
        println!("{cp}\t{k}\t{est}\t{m:.6} ± {s:.6}\t{}", errs.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct LocalReport {
    rho: f64,
    points: usize,
    energy: f64,
}

#[derive(Serialize)]
struct DecompositionReport {
    quadratic_form: Option<f64>,
    relative_deviation: Option<f64>,
    inconsistent: bool,
    degenerate_pairs: Vec<(usize, usize)>,
    z_eigenvalues: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct EnergyReport {
    input_dim: usize,
    rank: usize,
    dirichlet_energy: f64,
    /// First-order complexity proxy `1 + DE/2`.
    omega_proxy: f64,
    local: Option<LocalReport>,
    factor_norms: Vec<f64>,
    decomposition: Option<DecompositionReport>,
    decomposition_error: Option<String>,
}

fn read_points(path: &Path, model: &Model) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(path, format!("row {}: {e}", i + 2)))?;
        if row.len() != model.input_dim() {
            return Err(CliError::Config(format!(
                "{}: row {} has {} coordinates, model expects {}",
                path.display(),
                i + 2,
                row.len(),
                model.input_dim()
            )));
        }
        points.push(match model.scaler() {
            Some(s) => s.apply(&row),
            None => row,
        });
    }
    Ok(points)
}

pub fn de(
    model_path: &Path,
    points: Option<&Path>,
    rho: Option<f64>,
    tol_den: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model: Model = load_model(model_path).map_err(|e| io_err(model_path, e))?;
    let energy = dirichlet_energy(&model);
    let local = match (rho, points) {
        (None, None) => None,
        (None, Some(_)) => return Err(CliError::Config("--points needs --rho".into())),
        (Some(_), None) => return Err(CliError::Config("--rho needs --points".into())),
        (Some(rho), Some(p)) => {
            let pts = read_points(p, &model)?;
            let n = pts.len();
            let cfg = LdeConfig::new(rho, pts).map_err(|e| CliError::Config(e.to_string()))?;
            let e = local_dirichlet_energy(&model, &cfg).map_err(|e| CliError::Config(e.to_string()))?;
            Some(LocalReport {
                rho,
                points: n,
                energy: e,
            })
        }
    };
    let (decomposition, decomposition_error) = match de_decomposition(&model, tol_den) {
        Ok(d) => {
            let q = d.quadratic_form();
            let dev = q.map(|q| (q - energy).abs() / (1.0 + energy.abs()));
            (
                Some(DecompositionReport {
                    quadratic_form: q,
                    relative_deviation: dev,
                    inconsistent: dev.is_some_and(|d| d > DECOMPOSITION_FLAG),
                    degenerate_pairs: d.degenerate_pairs(),
                    z_eigenvalues: d.z_eigenvalues(),
                }),
                None,
            )
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let report = EnergyReport {
        input_dim: model.input_dim(),
        rank: model.rank(),
        dirichlet_energy: energy,
        omega_proxy: 1.0 + energy / 2.0,
        local,
        factor_norms: model.factor_norms(),
        decomposition,
        decomposition_error,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{text}");
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    if !energy.is_finite() {
        return Err(CliError::Numeric("energy is not finite".into()));
    }
    Ok(())
}

pub fn fit_density(config: &Path, seed: Option<u64>, split: usize, out: &Path) -> Result<(), CliError> {
    let Loaded { cfg, manifest, table } = load(config, seed)?;
    let i = split_indices(&manifest, Some(split))?[0];
    let dataset = manifest.dataset(&table, manifest.seeds[i], cfg.scaler_eps)?;
    let dcfg = DensityFitConfig {
        seed: cfg.train_seed(i),
        ..cfg.density.clone()
    };
    let train = dataset.inputs(tpbs::Part::Train);
    let fit = tpbs::fit_density(&train, &dcfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fit.model.save(out)?;
    let first = fit.log_likelihood.first().copied().unwrap_or(f64::NAN);
    let last = fit.log_likelihood.last().copied().unwrap_or(f64::NAN);
    let held_out = fit.model.log_likelihood(&dataset.inputs(tpbs::Part::Val));
    println!(
        "{} split {i}: {} components × {} bins, train log-likelihood {first:.4} -> {last:.4} over {} EM steps, validation {held_out:.4}",
        manifest.name,
        dcfg.components,
        dcfg.bins,
        dcfg.em_iters
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn selfcheck(scale: Scale, seed: u64, out: Option<&PathBuf>) -> Result<(), CliError> {
    let report = run_selfcheck(scale, seed);
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let failing = c.failing_seed.map(|s| format!(" first failing seed {s}")).unwrap_or_default();
        println!(
            "{status} {:<42} cases {:>4}  worst {:.3e}  tol {:.0e}{failing}",
            c.name, c.cases, c.worst_error, c.tolerance
        );
    }
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::SelfCheck)
    }
}
