//! Randomized agreement checks between the fast implementations and the
//! reference oracles.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{fit_density, DensityFitConfig, DensityModel};
use crate::dirichlet::dirichlet_energy;
use crate::marginal::{Estimator, Marginalizer};
use crate::model::TpbsModel;
use crate::oracle::{self, ModelLimits};
use crate::trainer::{grad_objective, objective, Loss, Samples, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    fn factor(self) -> usize {
        match self {
            Scale::Small => 1,
            Scale::Medium => 4,
            Scale::Large => 10,
        }
    }
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            "large" => Ok(Scale::Large),
            other => Err(format!("unknown scale '{other}' (small, medium or large)")),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Small => "small",
            Scale::Medium => "medium",
            Scale::Large => "large",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub tolerance: f64,
    pub worst_error: f64,
    pub passed: bool,
    /// Seed of the first failing case.
    pub failing_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub scale: Scale,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    failing: Option<u64>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
            failing: None,
        }
    }

    fn record(&mut self, seed: u64, err: f64) {
        self.cases += 1;
        // NaN counts as a failure.
        if !(err <= self.worst) {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err < self.tolerance) && self.failing.is_none() {
            self.failing = Some(seed);
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            cases: self.cases,
            tolerance: self.tolerance,
            worst_error: self.worst,
            passed: self.failing.is_none(),
            failing_seed: self.failing,
        }
    }
}

fn case_seed(root: u64, check: u64, i: usize) -> u64 {
    root.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (check << 48) ^ i as u64
}

/// Runs every check with the production energy.
pub fn run_selfcheck(scale: Scale, seed: u64) -> SelfCheckReport {
    run_selfcheck_with(scale, seed, &|m| dirichlet_energy(m))
}

/// Same as [`run_selfcheck`] with a caller-supplied energy in place of the
/// closed-form one, so that a deliberately broken assembly can be shown to
/// fail.
pub fn run_selfcheck_with(scale: Scale, seed: u64, energy: &dyn Fn(&TpbsModel<f64>) -> f64) -> SelfCheckReport {
    let f = scale.factor();
    let checks = vec![
        check_energy(seed, 20 * f, energy),
        check_gradient(seed, 5 * f),
        check_marginals(seed, 5 * f),
        check_em(seed, 2 * f),
    ];
    SelfCheckReport { scale, seed, checks }
}

fn check_energy(root: u64, cases: usize, energy: &dyn Fn(&TpbsModel<f64>) -> f64) -> CheckResult {
    let mut t = Tracker::new("dirichlet_energy_vs_quadrature", 1e-9);
    for i in 0..cases {
        let s = case_seed(root, 1, i);
        let model = oracle::random_model(s, ModelLimits::default());
        let fast = energy(&model);
        let slow = oracle::quadrature_energy(&model, None, None);
        t.record(s, (fast - slow).abs() / (1.0 + slow.abs()));
    }
    t.finish()
}

fn random_batch(model: &TpbsModel<f64>, rng: &mut ChaCha8Rng, count: usize) -> Samples<f64> {
    let inputs: Vec<Vec<f64>> = (0..count).map(|_| oracle::random_point(rng, model.input_dim())).collect();
    let targets = (0..count)
        .map(|_| (0..model.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Samples { inputs, targets }
}

fn check_gradient(root: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new("objective_gradient_vs_finite_differences", 1e-5);
    let limits = ModelLimits {
        max_dim: 3,
        max_rank: 3,
        max_basis: 6,
        max_degree: 3,
        max_outputs: 2,
    };
    for i in 0..cases {
        let s = case_seed(root, 2, i);
        let model = oracle::random_model(s, limits);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let batch = random_batch(&model, &mut rng, 6);
        let cfg = TrainConfig {
            loss: if i % 2 == 0 { Loss::Squared } else { Loss::Logistic },
            rho: Some(rng.random_range(0.05..0.5)),
            ..TrainConfig::default()
        };
        let lambda = 0.3;
        let Ok(analytic) = grad_objective(&model, &batch, &cfg, lambda) else {
            t.record(s, f64::INFINITY);
            continue;
        };
        let fd = oracle::finite_difference_grad(&model, 1e-5, |m| {
            objective(m, &batch, &cfg, lambda).unwrap_or(f64::NAN)
        });
        t.record(s, oracle::relative_error(&analytic, &fd, 1e-8));
    }
    t.finish()
}

fn check_marginals(root: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new("marginals_vs_quadrature", 1e-9);
    let limits = ModelLimits {
        max_dim: 3,
        max_rank: 3,
        max_basis: 6,
        max_degree: 3,
        max_outputs: 1,
    };
    for i in 0..cases {
        let s = case_seed(root, 3, i);
        let mut model = oracle::random_model(s, limits);
        if model.input_dim() < 2 {
            model = oracle::random_model(s ^ 1, ModelLimits { max_dim: 2, ..limits });
            if model.input_dim() < 2 {
                continue;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = model.input_dim();
        let pts: Vec<Vec<f64>> = (0..40).map(|_| oracle::random_point(&mut rng, n)).collect();
        let density = fit_density(
            &pts,
            &DensityFitConfig {
                components: 2,
                bins: rng.random_range(1..6),
                em_iters: 5,
                smoothing: 1.0,
                seed: s,
            },
        )
        .map(|f| f.model)
        .unwrap_or_else(|_| DensityModel::uniform(n));
        let Ok(mz) = Marginalizer::new(&model).with_density(&density) else {
            t.record(s, f64::INFINITY);
            continue;
        };
        let x = oracle::random_point(&mut rng, n);
        let mut observed = vec![true; n];
        let hide = rng.random_range(1..n);
        for j in rand::seq::index::sample(&mut rng, n, hide) {
            observed[j] = false;
        }
        for (est, dens) in [(Estimator::Uni, None), (Estimator::Pdf, Some(&density))] {
            let fast = mz.predict(est, &x, &observed).map(|v| v[0]).unwrap_or(f64::NAN);
            let slow = oracle::quadrature_marginal(&model, dens, &x, &observed)[0];
            t.record(s, (fast - slow).abs() / slow.abs().max(1.0));
        }
    }
    t.finish()
}

fn check_em(root: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new("em_log_likelihood_monotone", 1e-10);
    for i in 0..cases {
        let s = case_seed(root, 4, i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let c = if rng.random_bool(0.5) { 0.25 } else { 0.7 };
                (0..3)
                    .map(|_| (c + 0.15 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        let cfg = DensityFitConfig {
            components: 3,
            bins: 10,
            em_iters: 50,
            smoothing: 1.0,
            seed: s,
        };
        let worst_drop = match fit_density(&pts, &cfg) {
            Ok(fit) => fit
                .log_likelihood
                .windows(2)
                .map(|w| w[0] - w[1])
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        t.record(s, worst_drop);
    }
    t.finish()
}
