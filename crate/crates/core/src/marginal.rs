//! Prediction when some input coordinates are missing.
//!
//! * `mean`: substitute the training mean of every missing coordinate.
//! * `uni`: integrate the model over the missing coordinates under the
//!   uniform measure; each missing factor becomes `∫₀¹ g_{d,r}`.
//! * `pdf`: conditional expectation `E_p[g | x_obs]` under a histogram
//!   mixture `p`,
//!
//! ```text
//! Σ_{r,s} v_r w_s Π_obs g_{n,r}(x_n) p_{n,s}(x_n) Π_miss ⟨g_{d,r}, p_{d,s}⟩
//! ───────────────────────────────────────────────────────────────────────
//!                  Σ_t w_t Π_obs p_{n,t}(x_n)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityModel;
use crate::model::{ModelError, TpbsModel};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error)]
pub enum MarginalError {
    #[error("mask has {got} entries, model expects {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("observed coordinate {index} = {value} lies outside [0, 1]")]
    OutOfDomain { index: usize, value: f64 },
    #[error("no training mean available for missing coordinate {index}")]
    MissingMean { index: usize },
    #[error("density has dimension {density}, model has {model}")]
    DensityDimension { density: usize, model: usize },
    #[error("density of the observed coordinates is {value:e}, below the floor")]
    DenominatorTooSmall { value: f64 },
    #[error("cannot hide {num_missing} of {dim} coordinates")]
    TooManyMissing { num_missing: usize, dim: usize },
    #[error("estimator '{0}' needs {1}")]
    Unavailable(Estimator, &'static str),
    #[error("unknown estimator '{0}' (expected full, mean, uni or pdf)")]
    UnknownEstimator(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Full,
    Mean,
    Uni,
    Pdf,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Full, Estimator::Mean, Estimator::Uni, Estimator::Pdf];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Full => "full",
            Estimator::Mean => "mean",
            Estimator::Uni => "uni",
            Estimator::Pdf => "pdf",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = MarginalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Estimator::Full),
            "mean" | "mean_impute" => Ok(Estimator::Mean),
            "uni" | "uniform" => Ok(Estimator::Uni),
            "pdf" | "density" => Ok(Estimator::Pdf),
            other => Err(MarginalError::UnknownEstimator(other.to_string())),
        }
    }
}

pub const DEFAULT_DEN_FLOOR: f64 = 1e-300;

fn check_mask<T: Scalar>(model: &TpbsModel<T>, x: &[T], observed: &[bool]) -> Result<(), MarginalError> {
    let n = model.input_dim();
    if x.len() != n {
        return Err(ModelError::DimensionMismatch { expected: n, got: x.len() }.into());
    }
    if observed.len() != n {
        return Err(MarginalError::MaskLength {
            expected: n,
            got: observed.len(),
        });
    }
    for (index, (&v, &o)) in x.iter().zip(observed).enumerate() {
        if o && !(v >= T::zero() && v <= T::one()) {
            return Err(MarginalError::OutOfDomain {
                index,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// `g(x)`.
pub fn predict_full<T: Scalar>(model: &TpbsModel<T>, x: &[T]) -> Result<Vec<T>, MarginalError> {
    Ok(model.forward(x)?)
}

/// `g` at `x` with every missing coordinate replaced by `means[n]`.
/// Entries of `x` at missing positions are ignored.
pub fn predict_mean_impute<T: Scalar>(
    model: &TpbsModel<T>,
    x: &[T],
    observed: &[bool],
    means: &[T],
) -> Result<Vec<T>, MarginalError> {
    check_mask(model, x, observed)?;
    let mut filled = x.to_vec();
    for (index, &o) in observed.iter().enumerate() {
        if !o {
            match means.get(index) {
                Some(&m) if m.is_finite() => filled[index] = m.max(T::zero()).min(T::one()),
                _ => return Err(MarginalError::MissingMean { index }),
            }
        }
    }
    Ok(model.forward(&filled)?)
}

/// Observed-factor products `Π_obs g_{n,r}(x_n)` for every `r`.
fn observed_products<T: Scalar>(model: &TpbsModel<T>, x: &[T], observed: &[bool]) -> Result<Vec<T>, MarginalError> {
    let rank = model.rank();
    let mut prod = vec![T::one(); rank];
    for n in 0..model.input_dim() {
        if !observed[n] {
            continue;
        }
        let (first, vals) = model.space(n).eval_basis(x[n], 0).map_err(ModelError::from)?;
        for (r, p) in prod.iter_mut().enumerate() {
            let c = &model.factor(n, r)[first..first + vals.len()];
            *p *= dot(&vals, c);
        }
    }
    Ok(prod)
}

/// `Σ_r v_r term_r`.
fn combine<T: Scalar>(model: &TpbsModel<T>, terms: &[T]) -> Vec<T> {
    let m = model.output_dim();
    let mut y = vec![T::zero(); m];
    for (r, &t) in terms.iter().enumerate() {
        for (yi, &vi) in y.iter_mut().zip(model.out_vector(r)) {
            *yi += vi * t;
        }
    }
    y
}

/// `∫₀¹ g_{n,r}` for every `(n, r)`, indexed `[n * R + r]`.
pub fn factor_integrals<T: Scalar>(model: &TpbsModel<T>) -> Vec<T> {
    let rank = model.rank();
    let mut out = Vec::with_capacity(model.input_dim() * rank);
    for n in 0..model.input_dim() {
        let masses = model.space(n).basis_masses();
        for r in 0..rank {
            out.push(dot(model.factor(n, r), masses));
        }
    }
    out
}

/// Precomputed state for repeated incomplete-observation predictions with
/// one model, and optionally one density and one set of training means.
pub struct Marginalizer<'a, T: Scalar> {
    model: &'a TpbsModel<T>,
    integrals: Vec<T>,
    density: Option<(&'a DensityModel, Vec<T>)>,
    means: Option<Vec<T>>,
    den_floor: f64,
}

impl<'a, T: Scalar> Marginalizer<'a, T> {
    pub fn new(model: &'a TpbsModel<T>) -> Self {
        Marginalizer {
            model,
            integrals: factor_integrals(model),
            density: None,
            means: None,
            den_floor: DEFAULT_DEN_FLOOR,
        }
    }

    /// Attaches a density and caches `⟨g_{n,r}, p_{n,s}⟩` at `[(n * R + r) * S + s]`.
    pub fn with_density(mut self, density: &'a DensityModel) -> Result<Self, MarginalError> {
        let model = self.model;
        if density.dim() != model.input_dim() {
            return Err(MarginalError::DensityDimension {
                density: density.dim(),
                model: model.input_dim(),
            });
        }
        let s_count = density.num_components();
        let rank = model.rank();
        let mut cross = vec![T::zero(); model.input_dim() * rank * s_count];
        for n in 0..model.input_dim() {
            for s in 0..s_count {
                let proj = density.cross_gram(model.space(n), n, s);
                for r in 0..rank {
                    cross[(n * rank + r) * s_count + s] = dot(model.factor(n, r), &proj);
                }
            }
        }
        self.density = Some((density, cross));
        Ok(self)
    }

    pub fn with_means(mut self, means: Vec<T>) -> Self {
        self.means = Some(means);
        self
    }

    pub fn with_den_floor(mut self, floor: f64) -> Self {
        self.den_floor = floor;
        self
    }

    pub fn model(&self) -> &TpbsModel<T> {
        self.model
    }

    pub fn predict(&self, estimator: Estimator, x: &[T], observed: &[bool]) -> Result<Vec<T>, MarginalError> {
        check_mask(self.model, x, observed)?;
        if estimator == Estimator::Full || observed.iter().all(|&o| o) {
            if estimator != Estimator::Full {
                self.require(estimator)?;
            }
            return Ok(self.model.forward(x)?);
        }
        match estimator {
            Estimator::Full => unreachable!(),
            Estimator::Mean => {
                let means = self.means.as_ref().ok_or(MarginalError::Unavailable(estimator, "training means"))?;
                predict_mean_impute(self.model, x, observed, means)
            }
            Estimator::Uni => self.uniform(x, observed),
            Estimator::Pdf => self.density_weighted(x, observed),
        }
    }

    fn require(&self, estimator: Estimator) -> Result<(), MarginalError> {
        match estimator {
            Estimator::Mean if self.means.is_none() => Err(MarginalError::Unavailable(estimator, "training means")),
            Estimator::Pdf if self.density.is_none() => Err(MarginalError::Unavailable(estimator, "a density")),
            _ => Ok(()),
        }
    }

    fn uniform(&self, x: &[T], observed: &[bool]) -> Result<Vec<T>, MarginalError> {
        let rank = self.model.rank();
        let obs = observed_products(self.model, x, observed)?;
        let terms: Vec<T> = (0..rank)
            .map(|r| {
                let mut miss = T::one();
                for n in 0..self.model.input_dim() {
                    if !observed[n] {
                        miss *= self.integrals[n * rank + r];
                    }
                }
                obs[r] * miss
            })
            .collect();
        Ok(combine(self.model, &terms))
    }

    fn density_weighted(&self, x: &[T], observed: &[bool]) -> Result<Vec<T>, MarginalError> {
        let (density, cross) = self
            .density
            .as_ref()
            .ok_or(MarginalError::Unavailable(Estimator::Pdf, "a density"))?;
        let rank = self.model.rank();
        let s_count = density.num_components();
        let n_dims = self.model.input_dim();
        let xf: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
        // w_s Π_obs p_{n,s}(x_n)
        let obs_density: Vec<T> = (0..s_count)
            .map(|s| {
                let mut p = density.weights()[s];
                for n in 0..n_dims {
                    if observed[n] {
                        p *= density.marginal_value(n, s, xf[n]);
                    }
                }
                T::of(p)
            })
            .collect();
        let den = obs_density.iter().fold(T::zero(), |a, &b| a + b);
        if !(den.to_f64_lossy() > self.den_floor) {
            return Err(MarginalError::DenominatorTooSmall { value: den.to_f64_lossy() });
        }
        let obs = observed_products(self.model, x, observed)?;
        let terms: Vec<T> = (0..rank)
            .map(|r| {
                let mut acc = T::zero();
                for (s, &ws) in obs_density.iter().enumerate() {
                    let mut miss = T::one();
                    for n in 0..n_dims {
                        if !observed[n] {
                            miss *= cross[(n * rank + r) * s_count + s];
                        }
                    }
                    acc += ws * miss;
                }
                obs[r] * acc
            })
            .collect();
        let mut y = combine(self.model, &terms);
        y.iter_mut().for_each(|v| *v /= den);
        Ok(y)
    }
}

/// `∫ g(x_obs, ·)` over the missing coordinates under the uniform measure.
pub fn predict_uniform_marginal<T: Scalar>(
    model: &TpbsModel<T>,
    x: &[T],
    observed: &[bool],
) -> Result<Vec<T>, MarginalError> {
    Marginalizer::new(model).predict(Estimator::Uni, x, observed)
}

/// `E_p[g | x_obs]`.
pub fn predict_density_marginal<T: Scalar>(
    model: &TpbsModel<T>,
    density: &DensityModel,
    x: &[T],
    observed: &[bool],
) -> Result<Vec<T>, MarginalError> {
    Marginalizer::new(model).with_density(density)?.predict(Estimator::Pdf, x, observed)
}

/// One observation mask per sample, each hiding `num_missing` coordinates
/// chosen uniformly at random. `true` marks an observed coordinate.
pub fn mask_suite(
    num_samples: usize,
    dim: usize,
    num_missing: usize,
    seed: u64,
) -> Result<Vec<Vec<bool>>, MarginalError> {
    if num_missing >= dim && num_missing > 0 {
        return Err(MarginalError::TooManyMissing { num_missing, dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_samples)
        .map(|_| {
            let mut mask = vec![true; dim];
            if num_missing > 0 {
                for i in sample(&mut rng, dim, num_missing) {
                    mask[i] = false;
                }
            }
            mask
        })
        .collect())
}

/// One row of a batch prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: usize,
    pub estimator: Estimator,
    pub output: usize,
    pub prediction: f64,
    pub target: f64,
    pub num_missing: usize,
}

/// Predictions for every sample under its mask.
pub fn predict_batch<T: Scalar>(
    marginalizer: &Marginalizer<'_, T>,
    estimator: Estimator,
    inputs: &[Vec<T>],
    targets: &[Vec<T>],
    masks: &[Vec<bool>],
) -> Result<Vec<PredictionRow>, MarginalError> {
    let mut rows = Vec::with_capacity(inputs.len());
    for (i, ((x, y), mask)) in inputs.iter().zip(targets).zip(masks).enumerate() {
        let pred = marginalizer.predict(estimator, x, mask)?;
        let num_missing = mask.iter().filter(|&&o| !o).count();
        for (j, (&p, &t)) in pred.iter().zip(y).enumerate() {
            rows.push(PredictionRow {
                sample_id: i,
                estimator,
                output: j,
                prediction: p.to_f64_lossy(),
                target: t.to_f64_lossy(),
                num_missing,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::SplineSpace;

    fn product_xy() -> TpbsModel<f64> {
        let spaces = vec![SplineSpace::new(2, 1).unwrap(), SplineSpace::new(2, 1).unwrap()];
        TpbsModel::from_parts(spaces, 1, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn uniform_marginal_of_product() {
        let m = product_xy();
        let y = predict_uniform_marginal(&m, &[0.6, 0.0], &[true, false]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn all_observed_is_forward() {
        let spaces = vec![SplineSpace::new(7, 3).unwrap(); 3];
        let m = TpbsModel::<f64>::init(spaces, 3, 2, 5, 0.4).unwrap();
        let x = [0.1, 0.5, 0.93];
        let full = m.forward(&x).unwrap();
        let density = DensityModel::uniform(3);
        let mz = Marginalizer::new(&m).with_density(&density).unwrap().with_means(vec![0.5; 3]);
        for e in Estimator::ALL {
            assert_eq!(mz.predict(e, &x, &[true; 3]).unwrap(), full);
        }
    }

    #[test]
    fn mean_impute_substitutes_means() {
        let m = product_xy();
        let y = predict_mean_impute(&m, &[0.4, f64::NAN], &[true, false], &[0.0, 0.25]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15);
        assert!(matches!(
            predict_mean_impute(&m, &[0.4, 0.0], &[true, false], &[0.0]),
            Err(MarginalError::MissingMean { index: 1 })
        ));
    }

    #[test]
    fn masks_hide_requested_count() {
        let masks = mask_suite(50, 6, 4, 3).unwrap();
        assert!(masks.iter().all(|m| m.iter().filter(|&&o| o).count() == 2));
        assert_eq!(masks, mask_suite(50, 6, 4, 3).unwrap());
        assert!(mask_suite(3, 4, 0, 1).unwrap().iter().all(|m| m.iter().all(|&o| o)));
        assert!(matches!(mask_suite(1, 3, 3, 0), Err(MarginalError::TooManyMissing { .. })));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("median".parse::<Estimator>().is_err());
    }

    #[test]
    fn missing_density_is_reported() {
        let m = product_xy();
        let mz = Marginalizer::new(&m);
        assert!(matches!(
            mz.predict(Estimator::Pdf, &[0.5, 0.5], &[true, false]),
            Err(MarginalError::Unavailable(Estimator::Pdf, _))
        ));
    }
}
