//! Per-split pipeline on a manifest dataset: build and train a model,
//! score both checkpoints on the test part, and run the missing-data
//! estimators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Part};
use crate::density::{fit_density, DensityError, DensityFitConfig, DensityModel};
use crate::marginal::{mask_suite, Estimator, MarginalError, Marginalizer};
use crate::metrics::{metrics, MetricError, MetricReport, Task};
use crate::model::{ModelError, TpbsModel};
use crate::spline::{SplineError, SplineSpace};
use crate::trainer::{evaluate, train, Loss, Samples, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Marginal(#[from] MarginalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("estimator 'pdf' requested without a density")]
    NoDensity,
}

/// Shape of the model built for each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Basis functions per input dimension.
    pub knots: usize,
    pub degree: usize,
    pub rank: usize,
    pub init_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            knots: 100,
            degree: 3,
            rank: 14,
            init_scale: 0.1,
        }
    }
}

impl ModelSpec {
    /// A fresh model for `dataset`, carrying the dataset's scaler.
    pub fn build(&self, dataset: &Dataset, seed: u64) -> Result<TpbsModel<f64>, ExperimentError> {
        let space = SplineSpace::new(self.knots, self.degree)?;
        let spaces = vec![space; dataset.table.num_features()];
        let mut model = TpbsModel::init(spaces, self.rank, 1, seed, self.init_scale)?;
        model.set_scaler(Some(dataset.scaler.clone()));
        Ok(model)
    }
}

pub fn samples(dataset: &Dataset, part: Part) -> Result<Samples<f64>, TrainError> {
    Samples::scalar(dataset.inputs(part), dataset.targets(part))
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub report: TrainReport<f64>,
    pub test_best_val: MetricReport,
    pub test_after_overfit: Option<MetricReport>,
}

/// Trains on the train part with early-stopping data from the validation
/// part. The loss always follows the dataset's task.
pub fn train_split(dataset: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<SplitOutcome, ExperimentError> {
    let cfg = TrainConfig {
        loss: Loss::for_task(dataset.task),
        ..cfg.clone()
    };
    let model = spec.build(dataset, cfg.seed)?;
    let train_set = samples(dataset, Part::Train)?;
    let val_set = samples(dataset, Part::Val)?;
    let test_set = samples(dataset, Part::Test)?;
    let report = train(model, &train_set, &val_set, &cfg)?;
    let test_best_val = evaluate(&report.best_val_model, &test_set, cfg.loss)?;
    let test_after_overfit = report
        .after_overfit_model
        .as_ref()
        .map(|m| evaluate(m, &test_set, cfg.loss))
        .transpose()?;
    Ok(SplitOutcome {
        report,
        test_best_val,
        test_after_overfit,
    })
}

/// Fits the feature density on the scaled training inputs.
pub fn fit_train_density(dataset: &Dataset, cfg: &DensityFitConfig) -> Result<DensityModel, ExperimentError> {
    Ok(fit_density(&dataset.inputs(Part::Train), cfg)?.model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingResult {
    pub estimator: Estimator,
    pub num_missing: usize,
    pub metrics: MetricReport,
}

/// Scores each estimator on the test part with `num_missing` coordinates
/// hidden per sample. Masks depend only on `mask_seed`, so every estimator
/// sees the same ones.
pub fn evaluate_missing(
    model: &TpbsModel<f64>,
    dataset: &Dataset,
    density: Option<&DensityModel>,
    estimators: &[Estimator],
    num_missing: usize,
    mask_seed: u64,
) -> Result<Vec<MissingResult>, ExperimentError> {
    let inputs = dataset.inputs(Part::Test);
    let targets = dataset.targets(Part::Test);
    let masks = mask_suite(inputs.len(), model.input_dim(), num_missing, mask_seed)?;
    let mut mz = Marginalizer::new(model).with_means(dataset.train_means());
    if let Some(d) = density {
        mz = mz.with_density(d)?;
    }
    let mut out = Vec::with_capacity(estimators.len());
    for &est in estimators {
        if est == Estimator::Pdf && density.is_none() {
            return Err(ExperimentError::NoDensity);
        }
        let mut pred = Vec::with_capacity(inputs.len());
        for (x, mask) in inputs.iter().zip(&masks) {
            let y = mz.predict(est, x, mask)?[0];
            pred.push(match dataset.task {
                Task::Regression => y,
                Task::Classification => 1.0 / (1.0 + (-y).exp()),
            });
        }
        out.push(MissingResult {
            estimator: est,
            num_missing,
            metrics: metrics(&pred, &targets, dataset.task)?,
        });
    }
    Ok(out)
}
