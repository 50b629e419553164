//! Regularized empirical risk minimization with Adam, a multiplicative
//! penalty schedule and two retained checkpoints.
//!
//! The objective is `(1/M) Σ_m ℓ(y_m, g(x_m)) + λ · LDE_ρ(g)` with boxes
//! centered at the training inputs. Each time the objective stops improving
//! the penalty weight is multiplied by `h`. Two models are kept: the one
//! with the lowest validation error overall, and the one with the lowest
//! validation error among epochs at or after the first epoch whose training
//! error reached the overfit threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{EnergyError, EnergyRegions, LdeConfig};
use crate::metrics::{metrics, MetricError, MetricReport, Task};
use crate::model::{ForwardWorkspace, ModelError, ModelGrad, TpbsModel};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("objective became non-finite at epoch {epoch} after a previous rollback")]
    Diverged { epoch: usize },
    #[error("model output is not finite for sample {index}")]
    NonFiniteOutput { index: usize },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `‖y − ŷ‖²`.
    Squared,
    /// Binary cross-entropy on `σ(ŷ)`; targets in `{0, 1}`.
    Logistic,
}

impl Loss {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Loss::Squared,
            Task::Classification => Loss::Logistic,
        }
    }

    pub fn task(self) -> Task {
        match self {
            Loss::Squared => Task::Regression,
            Loss::Logistic => Task::Classification,
        }
    }
}

mod rho_field {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(rho: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match rho {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(Some(v)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "rho must be a number or \"none\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    /// Box half-width of the localized energy; `None` trains without it.
    /// Written as `rho = "none"` in config files.
    #[serde(with = "rho_field")]
    pub rho: Option<f64>,
    pub lambda0: f64,
    pub h: f64,
    /// Schedule ceiling; defaults to `1e3 · lambda0`.
    pub lambda_max: Option<f64>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// `None` means full batch up to 1000 samples and 256 above.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub patience: usize,
    /// Training-error level that counts as overfitting. Defaults to a
    /// relative MSE of `1e-3` for regression and zero error (accuracy 1)
    /// for classification.
    pub overfit_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Squared,
            rho: Some(0.1),
            lambda0: 1e-4,
            h: 2.0,
            lambda_max: None,
            learning_rate: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-4,
            weight_decay: 0.0,
            batch_size: None,
            max_epochs: 2000,
            convergence_tol: 1e-5,
            patience: 20,
            overfit_threshold: None,
            seed: 0,
        }
    }
}

pub const FULL_BATCH_LIMIT: usize = 1000;
pub const DEFAULT_MINI_BATCH: usize = 256;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.h > 1.0 && self.h.is_finite()) {
            return bad(format!("h must exceed 1, got {}", self.h));
        }
        if let Some(max) = self.lambda_max {
            if !(max >= self.lambda0) {
                return bad(format!("lambda_max ({max}) is below lambda0 ({})", self.lambda0));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad(format!("rho must be positive, got {rho}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if let Some(t) = self.overfit_threshold {
            if !(t >= 0.0) {
                return bad(format!("overfit_threshold must be >= 0, got {t}"));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be >= 0, got {}", self.convergence_tol));
        }
        Ok(())
    }

    pub fn lambda_ceiling(&self) -> f64 {
        self.lambda_max.unwrap_or(1e3 * self.lambda0)
    }

    pub fn effective_overfit_threshold(&self) -> f64 {
        self.overfit_threshold.unwrap_or(match self.loss.task() {
            Task::Regression => 1e-3,
            Task::Classification => 0.0,
        })
    }

    pub fn effective_batch_size(&self, samples: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(samples).max(1),
            None if samples <= FULL_BATCH_LIMIT => samples,
            None => DEFAULT_MINI_BATCH,
        }
    }
}

/// Inputs in `[0,1]^N` paired with `M`-dimensional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T: Scalar> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
}

impl<T: Scalar> Samples<T> {
    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<Vec<T>>) -> Result<Self, TrainError> {
        if inputs.len() != targets.len() {
            return Err(TrainError::BadSample {
                index: inputs.len().min(targets.len()),
                reason: format!("{} inputs but {} targets", inputs.len(), targets.len()),
            });
        }
        Ok(Samples { inputs, targets })
    }

    /// Scalar-target convenience constructor.
    pub fn scalar(inputs: Vec<Vec<T>>, targets: Vec<T>) -> Result<Self, TrainError> {
        Self::new(inputs, targets.into_iter().map(|y| vec![y]).collect())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, model: &TpbsModel<T>) -> Result<(), TrainError> {
        for (index, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            model.check_point(x).map_err(|e| TrainError::BadSample {
                index,
                reason: e.to_string(),
            })?;
            if y.len() != model.output_dim() {
                return Err(TrainError::BadSample {
                    index,
                    reason: format!("target has {} entries, model outputs {}", y.len(), model.output_dim()),
                });
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Loss of one sample and `∂ℓ/∂ŷ` written into `dy`.
fn loss_and_dy<T: Scalar>(loss: Loss, yhat: &[T], y: &[T], dy: &mut [T]) -> T {
    let two = T::of(2.0);
    let mut total = T::zero();
    for j in 0..y.len() {
        match loss {
            Loss::Squared => {
                let r = yhat[j] - y[j];
                total += r * r;
                dy[j] = two * r;
            }
            Loss::Logistic => {
                total += softplus(yhat[j]) - y[j] * yhat[j];
                dy[j] = sigmoid(yhat[j]) - y[j];
            }
        }
    }
    total
}

const SAMPLE_CHUNK: usize = 32;

struct SampleScratch<T: Scalar> {
    ws: ForwardWorkspace<T>,
    yhat: Vec<T>,
    dy: Vec<T>,
    prefix: Vec<T>,
}

impl<T: Scalar> SampleScratch<T> {
    fn new(model: &TpbsModel<T>) -> Self {
        SampleScratch {
            ws: ForwardWorkspace::new(model),
            yhat: vec![T::zero(); model.output_dim()],
            dy: vec![T::zero(); model.output_dim()],
            prefix: vec![T::zero(); model.input_dim() + 1],
        }
    }
}

/// Adds `weight · ∇ℓ` of one sample to `grad`; returns `ℓ`.
fn sample_grad<T: Scalar>(
    model: &TpbsModel<T>,
    loss: Loss,
    x: &[T],
    y: &[T],
    weight: T,
    s: &mut SampleScratch<T>,
    grad: &mut ModelGrad<T>,
) -> T {
    model.forward_with(x, &mut s.ws, &mut s.yhat);
    let l = loss_and_dy(loss, &s.yhat, y, &mut s.dy);
    let rank = model.rank();
    let m = model.output_dim();
    let n_dims = model.input_dim();
    let width = s.ws.width();
    for r in 0..rank {
        let pr = s.ws.products[r];
        let v = model.out_vector(r);
        let mut a = T::zero();
        for j in 0..m {
            grad.out[r * m + j] += weight * s.dy[j] * pr;
            a += s.dy[j] * v[j];
        }
        a *= weight;
        if a == T::zero() {
            continue;
        }
        // Π_{m≠n} g_{m,r} from a prefix product and a running suffix.
        s.prefix[0] = T::one();
        for n in 0..n_dims {
            s.prefix[n + 1] = s.prefix[n] * s.ws.factors[n * rank + r];
        }
        let mut suffix = T::one();
        for n in (0..n_dims).rev() {
            let coef = a * s.prefix[n] * suffix;
            let k = model.space(n).num_basis();
            let p1 = model.space(n).degree() + 1;
            let base = model.dim_offset(n) + r * k + s.ws.first[n];
            let vals = &s.ws.basis[n * width..n * width + p1];
            for (g, &b) in grad.coeffs[base..base + p1].iter_mut().zip(vals) {
                *g += coef * b;
            }
            suffix *= s.ws.factors[n * rank + r];
        }
    }
    l
}

/// Mean loss over `indices` of `data` and its gradient (added to `grad`
/// times `scale`). Inputs are assumed validated.
fn loss_grad_indices<T: Scalar>(
    model: &TpbsModel<T>,
    loss: Loss,
    data: &Samples<T>,
    indices: &[usize],
    scale: T,
    grad: &mut ModelGrad<T>,
) -> T {
    let w = scale / T::of_usize(indices.len());
    let partials: Vec<(T, ModelGrad<T>)> = indices
        .par_chunks(SAMPLE_CHUNK)
        .map(|chunk| {
            let mut s = SampleScratch::new(model);
            let mut g = ModelGrad::zeros_like(model);
            let mut total = T::zero();
            for &i in chunk {
                total += sample_grad(model, loss, &data.inputs[i], &data.targets[i], w, &mut s, &mut g);
            }
            (total, g)
        })
        .collect();
    let mut total = T::zero();
    for (l, g) in partials {
        total += l;
        grad.axpy(T::one(), &g);
    }
    total / T::of_usize(indices.len())
}

fn loss_indices<T: Scalar>(model: &TpbsModel<T>, loss: Loss, data: &Samples<T>, indices: &[usize]) -> T {
    let partials: Vec<T> = indices
        .par_chunks(SAMPLE_CHUNK)
        .map(|chunk| {
            let mut s = SampleScratch::new(model);
            let mut total = T::zero();
            for &i in chunk {
                model.forward_with(&data.inputs[i], &mut s.ws, &mut s.yhat);
                total += loss_and_dy(loss, &s.yhat, &data.targets[i], &mut s.dy);
            }
            total
        })
        .collect();
    partials.into_iter().fold(T::zero(), |a, b| a + b) / T::of_usize(indices.len())
}

fn batch_regions<T: Scalar>(
    model: &TpbsModel<T>,
    batch: &Samples<T>,
    cfg: &TrainConfig,
) -> Result<Option<EnergyRegions<T>>, TrainError> {
    match cfg.rho {
        None => Ok(None),
        Some(rho) => {
            let lde = LdeConfig::new(T::of(rho), batch.inputs.clone())?;
            Ok(Some(EnergyRegions::local(model.spaces(), &lde)?))
        }
    }
}

fn check_batch<T: Scalar>(model: &TpbsModel<T>, batch: &Samples<T>, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(TrainError::EmptySet("batch"));
    }
    batch.check(model)
}

/// Mean loss over `batch` and its gradient.
pub fn loss_and_grad<T: Scalar>(
    model: &TpbsModel<T>,
    batch: &Samples<T>,
    loss: Loss,
) -> Result<(T, ModelGrad<T>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySet("batch"));
    }
    batch.check(model)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut g = ModelGrad::zeros_like(model);
    let l = loss_grad_indices(model, loss, batch, &idx, T::one(), &mut g);
    Ok((l, g))
}

/// `(1/|B|) Σ ℓ + λ · LDE_ρ` with boxes around the batch inputs. Without
/// `rho` the penalty term is absent.
pub fn objective<T: Scalar>(
    model: &TpbsModel<T>,
    batch: &Samples<T>,
    cfg: &TrainConfig,
    lambda: T,
) -> Result<T, TrainError> {
    check_batch(model, batch, cfg)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut value = loss_indices(model, cfg.loss, batch, &idx);
    if !value.is_finite() {
        let index = first_non_finite(model, batch);
        return Err(TrainError::NonFiniteOutput { index });
    }
    if let Some(regions) = batch_regions(model, batch, cfg)? {
        if lambda != T::zero() {
            value += lambda * regions.energy(model);
        }
    }
    Ok(value)
}

/// Gradient of [`objective`].
pub fn grad_objective<T: Scalar>(
    model: &TpbsModel<T>,
    batch: &Samples<T>,
    cfg: &TrainConfig,
    lambda: T,
) -> Result<ModelGrad<T>, TrainError> {
    check_batch(model, batch, cfg)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut g = ModelGrad::zeros_like(model);
    loss_grad_indices(model, cfg.loss, batch, &idx, T::one(), &mut g);
    if let Some(regions) = batch_regions(model, batch, cfg)? {
        if lambda != T::zero() {
            regions.energy_and_grad(model, lambda, &mut g);
        }
    }
    Ok(g)
}

fn first_non_finite<T: Scalar>(model: &TpbsModel<T>, data: &Samples<T>) -> usize {
    let mut s = SampleScratch::new(model);
    for (i, x) in data.inputs.iter().enumerate() {
        model.forward_with(x, &mut s.ws, &mut s.yhat);
        if s.yhat.iter().any(|v| !v.is_finite()) {
            return i;
        }
    }
    0
}

/// Predictions as used by the metrics: raw outputs for squared loss,
/// sigmoid probabilities for logistic loss. Flattened sample-major.
pub fn predict<T: Scalar>(model: &TpbsModel<T>, inputs: &[Vec<T>], loss: Loss) -> Vec<f64> {
    let m = model.output_dim();
    let mut out = vec![0.0; inputs.len() * m];
    out.par_chunks_mut(SAMPLE_CHUNK * m)
        .zip(inputs.par_chunks(SAMPLE_CHUNK))
        .for_each(|(dst, xs)| {
            let mut ws = ForwardWorkspace::new(model);
            let mut y = vec![T::zero(); m];
            for (i, x) in xs.iter().enumerate() {
                model.forward_with(x, &mut ws, &mut y);
                for j in 0..m {
                    dst[i * m + j] = match loss {
                        Loss::Squared => y[j].to_f64_lossy(),
                        Loss::Logistic => sigmoid(y[j]).to_f64_lossy(),
                    };
                }
            }
        });
    out
}

/// Metrics of `model` on `data`.
pub fn evaluate<T: Scalar>(model: &TpbsModel<T>, data: &Samples<T>, loss: Loss) -> Result<MetricReport, TrainError> {
    let pred = predict(model, &data.inputs, loss);
    let targets: Vec<f64> = data.targets.iter().flatten().map(|v| v.to_f64_lossy()).collect();
    Ok(metrics(&pred, &targets, loss.task())?)
}

/// Bias-corrected Adam with optional decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<T: Scalar>(&mut self, model: &mut TpbsModel<T>, grad: &ModelGrad<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (coeffs, out) = model.params_mut();
        let params = coeffs.iter_mut().chain(out.iter_mut());
        for (i, (p, g)) in params.zip(grad.iter()).enumerate() {
            let g = g.to_f64_lossy();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            let pv = p.to_f64_lossy();
            let next = pv - self.learning_rate * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * pv);
            *p = T::of(next);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    LambdaCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub objective: f64,
    pub train_error: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEvent {
    pub epoch: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub lambda: f64,
    pub train: MetricReport,
    pub val: MetricReport,
}

/// Everything about a run except the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Task,
    pub regularized: bool,
    pub best_val: CheckpointInfo,
    pub after_overfit: Option<CheckpointInfo>,
    pub overfit_epoch: Option<usize>,
    pub overfit_threshold: f64,
    /// Starts with `(0, lambda0)`; every later entry is the previous one times `h`.
    pub lambda_trajectory: Vec<LambdaEvent>,
    pub curves: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    pub rollbacks: usize,
    pub final_learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Scalar> {
    pub summary: TrainSummary,
    pub best_val_model: TpbsModel<T>,
    pub after_overfit_model: Option<TpbsModel<T>>,
}

/// Copy of `model` with output vectors multiplied by `factor`.
fn rescaled<T: Scalar>(model: &TpbsModel<T>, factor: T) -> TpbsModel<T> {
    let mut m = model.clone();
    m.out_vectors_mut().iter_mut().for_each(|v| *v *= factor);
    m
}

/// Trains from `initial` on `train`, selecting checkpoints on `val`.
///
/// For squared loss the targets are divided by their root mean square
/// during optimization. The objective then differs from the original one
/// by a constant factor, so the minimizers are the same; the returned
/// models and all reported numbers are in the original units.
pub fn train<T: Scalar>(
    initial: TpbsModel<T>,
    train_set: &Samples<T>,
    val_set: &Samples<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport<T>, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    train_set.check(&initial)?;
    val_set.check(&initial)?;

    let loss = cfg.loss;
    let task = loss.task();
    let target_scale = match loss {
        Loss::Squared => {
            let ms = train_set.targets.iter().flatten().fold(T::zero(), |a, &v| a + v * v)
                / T::of_usize(train_set.len() * initial.output_dim());
            if ms > T::zero() {
                ms.sqrt()
            } else {
                T::one()
            }
        }
        Loss::Logistic => T::one(),
    };
    let scaled_train = Samples {
        inputs: train_set.inputs.clone(),
        targets: train_set
            .targets
            .iter()
            .map(|y| y.iter().map(|&v| v / target_scale).collect())
            .collect(),
    };
    let obj_unit = (target_scale * target_scale).to_f64_lossy();

    let mut model = rescaled(&initial, T::one() / target_scale);
    let regions = match cfg.rho {
        Some(rho) => {
            let lde = LdeConfig::new(T::of(rho), train_set.inputs.clone())?;
            Some(EnergyRegions::local(model.spaces(), &lde)?)
        }
        None => None,
    };

    let m_train = train_set.len();
    let batch = cfg.effective_batch_size(m_train);
    let mut order: Vec<usize> = (0..m_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.num_params(), cfg);
    let threshold = cfg.effective_overfit_threshold();
    let ceiling = cfg.lambda_ceiling();

    let mut lambda = cfg.lambda0;
    let mut trajectory = vec![LambdaEvent { epoch: 0, lambda }];
    let mut history: Vec<f64> = Vec::new();
    let mut curves = Vec::new();
    let mut best: Option<(CheckpointInfo, TpbsModel<T>)> = None;
    let mut after: Option<(CheckpointInfo, TpbsModel<T>)> = None;
    let mut overfit_epoch = None;
    let mut last_good = model.clone();
    let mut rollbacks = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut grad = ModelGrad::zeros_like(&model);
    let mut epochs_run = 0;

    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        let lam = T::of(lambda);
        // Full-batch objective and (for full batch) the step direction at θ_t.
        grad.fill_zero();
        let full_obj = if batch == m_train {
            let l = loss_grad_indices(&model, loss, &scaled_train, &order, T::one(), &mut grad);
            let e = match &regions {
                Some(r) => r.energy_and_grad(&model, lam, &mut grad),
                None => T::zero(),
            };
            l + lam * e
        } else {
            let l = loss_indices(&model, loss, &scaled_train, &order);
            let e = regions.as_ref().map_or(T::zero(), |r| r.energy(&model));
            l + lam * e
        };
        let obj = full_obj.to_f64_lossy();
        if !obj.is_finite() || (batch == m_train && !grad.is_finite()) {
            if rollbacks > 0 {
                return Err(TrainError::Diverged { epoch });
            }
            rollbacks += 1;
            model = last_good.clone();
            adam.reset();
            adam.learning_rate *= 0.5;
            history.clear();
            continue;
        }
        last_good = model.clone();

        let original = rescaled(&model, target_scale);
        let train_m = evaluate(&original, train_set, loss)?;
        let val_m = evaluate(&original, val_set, loss)?;
        let (train_err, val_err) = (train_m.error(), val_m.error());
        curves.push(EpochRecord {
            epoch,
            lambda,
            objective: obj * obj_unit,
            train_error: train_err,
            val_error: val_err,
        });
        let info = CheckpointInfo {
            epoch,
            lambda,
            train: train_m,
            val: val_m,
        };
        if best.as_ref().is_none_or(|(b, _)| val_err < b.val.error()) {
            best = Some((info.clone(), original.clone()));
        }
        if overfit_epoch.is_none() && train_err <= threshold {
            overfit_epoch = Some(epoch);
        }
        if overfit_epoch.is_some() && after.as_ref().is_none_or(|(b, _)| val_err < b.val.error()) {
            after = Some((info, original));
        }
        epochs_run = epoch + 1;

        // Parameter update(s).
        if batch == m_train {
            adam.update(&mut model, &grad);
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                grad.fill_zero();
                loss_grad_indices(&model, loss, &scaled_train, chunk, T::one(), &mut grad);
                if let Some(r) = &regions {
                    let scale = lam * T::of_usize(m_train) / T::of_usize(chunk.len());
                    r.subset_energy_and_grad(&model, chunk, scale, &mut grad);
                }
                adam.update(&mut model, &grad);
            }
            order.sort_unstable();
        }

        // Convergence and penalty schedule.
        history.push(obj);
        let p = cfg.patience;
        if history.len() > p {
            let past = history[history.len() - 1 - p];
            let improvement = past - obj;
            if improvement <= cfg.convergence_tol * past.abs() {
                let next = lambda * cfg.h;
                if next > ceiling * (1.0 + 1e-12) {
                    stop_reason = StopReason::LambdaCeiling;
                    break;
                }
                lambda = next;
                trajectory.push(LambdaEvent { epoch: epoch + 1, lambda });
                history.clear();
            }
        }
        epoch += 1;
    }

    let (best_info, best_model) = best.ok_or(TrainError::Config("max_epochs must be positive".into()))?;
    let (after_info, after_model) = match after {
        Some((i, m)) => (Some(i), Some(m)),
        None => (None, None),
    };
    Ok(TrainReport {
        summary: TrainSummary {
            task,
            regularized: cfg.rho.is_some(),
            best_val: best_info,
            after_overfit: after_info,
            overfit_epoch,
            overfit_threshold: threshold,
            lambda_trajectory: trajectory,
            curves,
            stop_reason,
            epochs_run,
            rollbacks,
            final_learning_rate: adam.learning_rate,
        },
        best_val_model: best_model,
        after_overfit_model: after_model,
    })
}
