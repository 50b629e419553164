//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Criteria 8 to 11 are reproduction targets rather than correctness
//! checks (see the README); their failures are reported but only fail the
//! process when `TPBS_ACCEPTANCE_STRICT=1`. Every other failure
//! exits nonzero. `TPBS_ACCEPTANCE_ONLY=1,4,10` restricts the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use tpbs::dirichlet::DEFAULT_TOL_DEN;
use tpbs::oracle::{self, ModelLimits};
use tpbs::{
    de_decomposition, dirichlet_energy, fit_density, grad_objective, local_dirichlet_energy, mask_suite, mean_std,
    objective, predict_density_marginal, predict_uniform_marginal, train_split, DensityFitConfig, DensityModel,
    Estimator, LdeConfig, Loss, Manifest, Marginalizer, Model, ModelSpec, Samples, SplineSpace, SplitOutcome,
    TrainConfig,
};

// Pinned tolerances and budgets.
const C1_MODELS: u64 = 200;
const C1_TOL: f64 = 1e-9;
const C1_BUDGET: Duration = Duration::from_secs(30);
const C2_TOL: f64 = 1e-9;
const C3_CASES: u64 = 100;
const C3_PROPERTY_TOL: f64 = 1e-12;
const C3_ANALYTIC_TOL: f64 = 1e-12;
const C4_INSTANCES: u64 = 50;
const C4_TOL: f64 = 1e-5;
const C4_FD_STEP: f64 = 1e-5;
const C6_CASES: u64 = 100;
const C6_QUAD_TOL: f64 = 1e-9;
const C6_REDUCTION_TOL: f64 = 1e-12;
const C7_MIXTURES: u64 = 10;
const C7_ITERS: usize = 100;
const C7_TOL: f64 = 1e-10;
const C8_TARGET: f64 = 0.01;
const C8_BUDGET: Duration = Duration::from_secs(15 * 60);
const C9_TARGET: f64 = 0.20;
const C10_SEEDS: u64 = 20;
const C10_REQUIRED: usize = 16;

const NONFATAL: &[u8] = &[8, 9, 10, 11];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn suite_model(seed: u64) -> Model {
    oracle::random_model(seed, ModelLimits::default())
}

fn c1_energy_vs_quadrature() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..C1_MODELS {
        let m = suite_model(seed);
        worst = worst.max(rel(dirichlet_energy(&m), oracle::quadrature_energy(&m, None, None)));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < C1_TOL && elapsed < C1_BUDGET,
        format!("{C1_MODELS} models, worst rel err {worst:.2e} (tol {C1_TOL:.0e}), {:.1}s (budget {}s)", elapsed.as_secs_f64(), C1_BUDGET.as_secs()),
    )
}

fn c2_decomposition_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..C1_MODELS {
        let m = suite_model(seed);
        let Ok(d) = de_decomposition(&m, DEFAULT_TOL_DEN) else { continue };
        let Some(q) = d.quadratic_form() else { continue };
        worst = worst.max(rel(q, dirichlet_energy(&m)));
        checked += 1;
    }
    outcome(
        checked > 0 && worst < C2_TOL,
        format!("{checked}/{C1_MODELS} non-degenerate, worst |sᵀZs − DE|/(1+DE) {worst:.2e} (tol {C2_TOL:.0e})"),
    )
}

fn lde(m: &Model, rho: f64, pts: Vec<Vec<f64>>) -> f64 {
    local_dirichlet_energy(m, &LdeConfig::new(rho, pts).unwrap()).unwrap()
}

fn c3_local_energy() -> Outcome {
    let mut mono = 0.0f64;
    let mut additive = 0.0f64;
    let mut covering = 0.0f64;
    for seed in 0..C3_CASES {
        let m = suite_model(10_000 + seed);
        let n = m.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..3).map(|_| oracle::random_point(&mut rng, n)).collect();
        let r1 = rng.random_range(0.01..0.5);
        let r2 = r1 + rng.random_range(0.0..0.5);
        let (a, b) = (lde(&m, r1, pts.clone()), lde(&m, r2, pts.clone()));
        mono = mono.max((a - b) / (1.0 + b.abs()));
        let both = lde(&m, r1, pts.clone());
        let split = lde(&m, r1, pts[..1].to_vec()) + lde(&m, r1, pts[1..].to_vec());
        additive = additive.max(rel(split, both));
        covering = covering.max(rel(lde(&m, 0.5, vec![vec![0.5; n]]), dirichlet_energy(&m)));
    }
    let spaces = vec![SplineSpace::new(2, 1).unwrap(); 2];
    let xy = Model::from_parts(spaces, 1, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0]).unwrap();
    let analytic = (lde(&xy, 0.25, vec![vec![0.5, 0.5]]) - 13.0 / 96.0).abs();
    outcome(
        mono <= C3_PROPERTY_TOL && additive <= C3_PROPERTY_TOL && covering <= C3_PROPERTY_TOL && analytic < C3_ANALYTIC_TOL,
        format!(
            "{C3_CASES} cases: monotonicity excess {mono:.1e}, additivity {additive:.1e}, covering box {covering:.1e} (tol {C3_PROPERTY_TOL:.0e}); 13/96 error {analytic:.1e} (tol {C3_ANALYTIC_TOL:.0e})"
        ),
    )
}

fn c4_gradient_fidelity() -> Outcome {
    let limits = ModelLimits {
        max_dim: 3,
        max_rank: 4,
        max_basis: 7,
        max_degree: 3,
        max_outputs: 2,
    };
    let mut worst = 0.0f64;
    for i in 0..C4_INSTANCES {
        let m = oracle::random_model(20_000 + i, limits);
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let loss = if i % 2 == 0 { Loss::Squared } else { Loss::Logistic };
        let count = rng.random_range(1..8);
        let inputs: Vec<Vec<f64>> = (0..count).map(|_| oracle::random_point(&mut rng, m.input_dim())).collect();
        let targets = (0..count)
            .map(|_| {
                (0..m.output_dim())
                    .map(|_| match loss {
                        Loss::Squared => rng.random_range(-1.0..1.0),
                        Loss::Logistic => f64::from(rng.random_bool(0.5) as u8),
                    })
                    .collect()
            })
            .collect();
        let batch = Samples::new(inputs, targets).unwrap();
        let cfg = TrainConfig {
            loss,
            rho: Some(rng.random_range(0.05..0.5)),
            ..TrainConfig::default()
        };
        let lambda = rng.random_range(0.0..2.0);
        let g = grad_objective(&m, &batch, &cfg, lambda).unwrap();
        let fd = oracle::finite_difference_grad(&m, C4_FD_STEP, |mm| objective(mm, &batch, &cfg, lambda).unwrap());
        worst = worst.max(oracle::relative_error(&g, &fd, 1e-8));
    }
    outcome(worst < C4_TOL, format!("{C4_INSTANCES} instances, worst rel err {worst:.2e} (tol {C4_TOL:.0e})"))
}

fn half_model(n: usize, space: SplineSpace<f64>) -> Model {
    let mut m = Model::zeros(vec![space; n], 2, 1).unwrap();
    m.coeffs_mut().iter_mut().for_each(|c| *c = 0.5);
    m.out_vectors_mut().copy_from_slice(&[3.0, -1.5]);
    m
}

fn c5_exponential_smallness() -> Outcome {
    let mut exact = true;
    let mut cubic = 0.0f64;
    for n in 2..=20 {
        let scale = 0.5f64.powi(n as i32);
        let want = [3.0 * scale, 1.5 * scale];
        // Indicator factors on a dyadic grid: every product and Gram sum is exact.
        for k in [1, 2, 4, 8] {
            exact &= half_model(n, SplineSpace::new(k, 0).unwrap()).factor_norms() == want;
        }
        let s = half_model(n, SplineSpace::new(8, 3).unwrap()).factor_norms();
        for (a, b) in s.iter().zip(&want) {
            cubic = cubic.max((a - b).abs() / b);
        }
    }
    outcome(
        exact && cubic < 1e-13,
        format!("N = 2..20: bit-exact on dyadic indicator spaces: {exact}; cubic rel dev {cubic:.1e}"),
    )
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> DensityModel {
    let s = rng.random_range(1..=3);
    let bins = rng.random_range(1..=6);
    let mut w: Vec<f64> = (0..s).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let values = (0..dim)
        .map(|_| {
            (0..s)
                .map(|_| {
                    let raw: Vec<f64> = (0..bins).map(|_| rng.random_range(0.05..1.0)).collect();
                    let mass = raw.iter().sum::<f64>() / bins as f64;
                    raw.iter().map(|v| v / mass).collect()
                })
                .collect()
        })
        .collect();
    DensityModel::new(w, values).unwrap()
}

fn c6_marginalization() -> Outcome {
    let limits = ModelLimits {
        max_dim: 3,
        ..ModelLimits::default()
    };
    let mut worst_quad = 0.0f64;
    let mut worst_red = 0.0f64;
    let mut cases = 0;
    let mut seed = 30_000;
    while cases < C6_CASES {
        seed += 1;
        let m = oracle::random_model(seed, limits);
        let n = m.input_dim();
        if n < 2 {
            continue;
        }
        cases += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_density(&mut rng, n);
        let x = oracle::random_point(&mut rng, n);
        let hide = rng.random_range(1..n);
        let mut observed = vec![true; n];
        for j in rand::seq::index::sample(&mut rng, n, hide) {
            observed[j] = false;
        }
        let mz = Marginalizer::new(&m).with_density(&d).unwrap();
        for (est, dens) in [(Estimator::Uni, None), (Estimator::Pdf, Some(&d))] {
            let fast = mz.predict(est, &x, &observed).unwrap();
            let slow = oracle::quadrature_marginal(&m, dens, &x, &observed);
            for (a, b) in fast.iter().zip(&slow) {
                worst_quad = worst_quad.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        let u = DensityModel::uniform(n);
        let a = predict_density_marginal(&m, &u, &x, &observed).unwrap();
        let b = predict_uniform_marginal(&m, &x, &observed).unwrap();
        for (p, q) in a.iter().zip(&b) {
            worst_red = worst_red.max((p - q).abs() / q.abs().max(1.0));
        }
    }
    outcome(
        worst_quad < C6_QUAD_TOL && worst_red < C6_REDUCTION_TOL,
        format!(
            "{C6_CASES} cases: vs quadrature {worst_quad:.2e} (tol {C6_QUAD_TOL:.0e}), uniform reduction {worst_red:.2e} (tol {C6_REDUCTION_TOL:.0e})"
        ),
    )
}

fn c7_em_monotone() -> Outcome {
    let mut worst_drop = 0.0f64;
    for seed in 0..C7_MIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + seed);
        let dim = rng.random_range(2..=5);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random_range(0.1..0.9)).collect()).collect();
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let c = &centers[rng.random_range(0..3)];
                c.iter().map(|&m| (m + 0.2 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect()
            })
            .collect();
        let cfg = DensityFitConfig {
            components: rng.random_range(2..=4),
            bins: rng.random_range(5..=25),
            em_iters: C7_ITERS,
            smoothing: 1.0,
            seed,
        };
        let fit = fit_density(&pts, &cfg).unwrap();
        for w in fit.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(
        worst_drop <= C7_TOL,
        format!("{C7_MIXTURES} mixtures × {C7_ITERS} iterations, largest decrease {worst_drop:.2e} (tol {C7_TOL:.0e})"),
    )
}

fn manifests_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests");
    dir.canonicalize().unwrap_or(dir)
}

/// The penalty schedule shared by the data criteria: start small enough to
/// overfit, then grow the penalty by `h` at every convergence.
fn protocol(rho: Option<f64>) -> TrainConfig {
    TrainConfig {
        rho,
        lambda0: 1.0,
        h: 4.0,
        lambda_max: Some(1e8),
        convergence_tol: 1e-3,
        patience: 20,
        max_epochs: 3000,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

struct DataRuns {
    regularized: Vec<SplitOutcome>,
    unregularized: Vec<SplitOutcome>,
    split_times: Vec<Duration>,
}

fn run_manifest(manifest: &Manifest, spec: &ModelSpec, with_unregularized: bool) -> Result<DataRuns, String> {
    let table = manifest.load_table().map_err(|e| e.to_string())?;
    let mut runs = DataRuns {
        regularized: Vec::new(),
        unregularized: Vec::new(),
        split_times: Vec::new(),
    };
    for (i, &split_seed) in manifest.seeds.iter().enumerate() {
        let ds = manifest
            .dataset(&table, split_seed, tpbs::scaler::DEFAULT_SCALER_EPS)
            .map_err(|e| e.to_string())?;
        let start = Instant::now();
        let cfg = TrainConfig {
            seed: i as u64,
            ..protocol(Some(0.1))
        };
        runs.regularized.push(train_split(&ds, spec, &cfg).map_err(|e| e.to_string())?);
        runs.split_times.push(start.elapsed());
        if with_unregularized {
            let cfg = TrainConfig {
                seed: i as u64,
                ..protocol(None)
            };
            runs.unregularized.push(train_split(&ds, spec, &cfg).map_err(|e| e.to_string())?);
        }
    }
    Ok(runs)
}

fn yacht_manifest() -> Result<Manifest, String> {
    let mut m = Manifest::load(&manifests_dir().join("yacht.toml")).map_err(|e| e.to_string())?;
    if let Some(p) = std::env::var_os("TPBS_YACHT_CSV") {
        m.csv_path = PathBuf::from(p);
    }
    if !m.csv_path.exists() {
        return Err(format!(
            "dataset not available: {} is missing (set TPBS_YACHT_CSV)",
            m.csv_path.display()
        ));
    }
    Ok(m)
}

const YACHT_SPEC: ModelSpec = ModelSpec {
    knots: 20,
    degree: 3,
    rank: 14,
    init_scale: 0.1,
};

const DIABETES_SPEC: ModelSpec = ModelSpec {
    knots: 10,
    degree: 3,
    rank: 16,
    init_scale: 0.1,
};

fn c8_yacht(runs: &Result<DataRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let errs: Vec<f64> = runs.regularized.iter().map(|o| o.test_best_val.error()).collect();
    let hits = errs.iter().filter(|&&e| e <= C8_TARGET).count();
    let slowest = runs.split_times.iter().max().copied().unwrap_or_default();
    outcome(
        hits >= 2 && slowest <= C8_BUDGET,
        format!(
            "best-val test relMSE per split {errs:.4?}, {hits}/3 ≤ {C8_TARGET}; slowest split {:.0}s (budget {}s)",
            slowest.as_secs_f64(),
            C8_BUDGET.as_secs()
        ),
    )
}

fn c9_diabetes(runs: &Result<DataRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let errs: Vec<f64> = runs.regularized.iter().map(|o| o.test_best_val.error()).collect();
    let energy: Vec<f64> = runs
        .regularized
        .iter()
        .filter_map(|o| o.test_best_val.energy_relative_mse)
        .collect();
    let (m, s) = mean_std(&errs);
    let (em, es) = mean_std(&energy);
    outcome(
        m <= C9_TARGET,
        format!(
            "best-val test relMSE {m:.4} ± {s:.4} (target ≤ {C9_TARGET}); Σy²-normalized diagnostic {em:.4} ± {es:.4}"
        ),
    )
}

/// Splits where the regularized after-overfit checkpoint is no worse than
/// the unregularized one. A missing checkpoint on either side counts as a
/// loss for that split.
fn regularization_wins(runs: &DataRuns) -> (usize, Vec<String>) {
    let mut wins = 0;
    let mut notes = Vec::new();
    for (r, u) in runs.regularized.iter().zip(&runs.unregularized) {
        match (&r.test_after_overfit, &u.test_after_overfit) {
            (Some(a), Some(b)) => {
                if a.error() <= b.error() {
                    wins += 1;
                }
                notes.push(format!("{:.3} vs {:.3}", a.error(), b.error()));
            }
            (a, b) => notes.push(format!(
                "checkpoint missing (regularized {}, unregularized {})",
                if a.is_some() { "present" } else { "absent" },
                if b.is_some() { "present" } else { "absent" }
            )),
        }
    }
    (wins, notes)
}

fn c11_regularization(yacht: &Result<DataRuns, String>, diabetes: &Result<DataRuns, String>) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, runs) in [("yacht", yacht), ("diabetes", diabetes)] {
        match runs {
            Ok(r) => {
                let (wins, notes) = regularization_wins(r);
                let majority = wins * 2 > r.regularized.len();
                passed &= majority;
                parts.push(format!("{name}: {wins}/{} splits [{}]", r.regularized.len(), notes.join("; ")));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(passed, format!("regularized vs unregularized after-overfit test error; {}", parts.join(" | ")))
}

/// One trial of the synthetic missing-data benchmark: a known two-component
/// product mixture of Beta marginals on `[0,1]^4`, a random separable
/// target with 10% noise, the fitted histogram density and two hidden
/// coordinates per test sample. Returns test MSEs of (pdf, uni, mean).
fn missing_data_trial(seed: u64) -> (f64, f64, f64) {
    const N: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
    let w0 = rng.random_range(0.3..0.7);
    let comps: Vec<Vec<Beta<f64>>> = (0..2)
        .map(|_| {
            (0..N)
                .map(|_| {
                    let m: f64 = rng.random_range(0.15..0.85);
                    Beta::new(12.0 * m, 12.0 * (1.0 - m)).unwrap()
                })
                .collect()
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng, count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let c = if rng.random::<f64>() < w0 { 0 } else { 1 };
                comps[c].iter().map(|b| b.sample(rng)).collect()
            })
            .collect()
    };
    let train_x = draw(&mut rng, 500);
    let test_x = draw(&mut rng, 500);

    let rank = 3;
    let spaces = vec![SplineSpace::new(8, 3).unwrap(); N];
    let coeffs = (0..N * rank * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = (0..rank).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let g = Model::from_parts(spaces, rank, 1, coeffs, out).unwrap();
    let clean: Vec<f64> = train_x.iter().map(|x| g.forward(x).unwrap()[0]).collect();
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64).sqrt();
    let test_y: Vec<f64> = test_x
        .iter()
        .map(|x| g.forward(x).unwrap()[0] + 0.1 * rms * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let density = fit_density(
        &train_x,
        &DensityFitConfig {
            components: 2,
            bins: 20,
            em_iters: 100,
            smoothing: 1.0,
            seed,
        },
    )
    .unwrap()
    .model;
    let means: Vec<f64> = (0..N)
        .map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / train_x.len() as f64)
        .collect();
    let mz = Marginalizer::new(&g).with_density(&density).unwrap().with_means(means);
    let masks = mask_suite(test_x.len(), N, 2, seed).unwrap();
    let mse = |est: Estimator| {
        test_x
            .iter()
            .zip(&masks)
            .zip(&test_y)
            .map(|((x, mask), y)| {
                let p = mz.predict(est, x, mask).unwrap()[0];
                (p - y) * (p - y)
            })
            .sum::<f64>()
            / test_x.len() as f64
    };
    (mse(Estimator::Pdf), mse(Estimator::Uni), mse(Estimator::Mean))
}

fn c10_missing_data_ordering() -> Outcome {
    let mut ordered = 0;
    let mut misses = Vec::new();
    let mut ratios = (Vec::new(), Vec::new());
    for seed in 0..C10_SEEDS {
        let (pdf, uni, mean) = missing_data_trial(seed);
        if pdf <= uni && uni <= mean {
            ordered += 1;
        } else {
            misses.push(format!("seed {seed}: {pdf:.4}/{uni:.4}/{mean:.4}"));
        }
        ratios.0.push(pdf / uni);
        ratios.1.push(uni / mean);
    }
    let (a, _) = mean_std(&ratios.0);
    let (b, _) = mean_std(&ratios.1);
    outcome(
        ordered >= C10_REQUIRED,
        format!(
            "pdf ≤ uni ≤ mean on {ordered}/{C10_SEEDS} seeds (need {C10_REQUIRED}); mean MSE ratios pdf/uni {a:.3}, uni/mean {b:.3}; out of order (pdf/uni/mean) [{}]",
            misses.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u8>> = std::env::var("TPBS_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("TPBS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut run = |id: u8, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            let r = f();
            println!("{} {id:>2} {name:<32} {}", if r.passed { "PASS" } else { "FAIL" }, r.detail);
            results.push((id, name, r));
        }
    };
    run(1, "closed-form energy", &c1_energy_vs_quadrature);
    run(2, "decomposition identity", &c2_decomposition_identity);
    run(3, "local energy properties", &c3_local_energy);
    run(4, "gradient fidelity", &c4_gradient_fidelity);
    run(5, "exponential smallness", &c5_exponential_smallness);
    run(6, "marginalization oracles", &c6_marginalization);
    run(7, "EM monotonicity", &c7_em_monotone);

    let need_yacht = wanted(8) || wanted(11);
    let need_diabetes = wanted(9) || wanted(11);
    let yacht = if need_yacht {
        yacht_manifest().and_then(|m| run_manifest(&m, &YACHT_SPEC, wanted(11)))
    } else {
        Err("not run".into())
    };
    let diabetes = if need_diabetes {
        Manifest::load(&manifests_dir().join("diabetes.toml"))
            .map_err(|e| e.to_string())
            .and_then(|m| run_manifest(&m, &DIABETES_SPEC, wanted(11)))
    } else {
        Err("not run".into())
    };
    run(8, "yacht reproduction", &|| c8_yacht(&yacht));
    run(9, "diabetes reproduction", &|| c9_diabetes(&diabetes));
    run(10, "missing-data ordering", &c10_missing_data_ordering);
    run(11, "regularization effect", &|| c11_regularization(&yacht, &diabetes));

    let failed: Vec<u8> = results.iter().filter(|(_, _, r)| !r.passed).map(|(id, _, _)| *id).collect();
    let fatal: Vec<u8> = failed.iter().copied().filter(|id| strict || !NONFATAL.contains(id)).collect();
    println!(
        "acceptance: {} passed, {} failed {:?}{}",
        results.len() - failed.len(),
        failed.len(),
        failed,
        if fatal.is_empty() { String::new() } else { format!(", fatal {fatal:?}") }
    );
    if fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
