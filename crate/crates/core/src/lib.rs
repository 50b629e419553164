//! Low-rank tensor-product B-spline regression with closed-form Dirichlet
//! energy regularization and marginalization over missing inputs.
//!
//! A model is `g(x) = Σ_r v_r Π_n g_{n,r}(x_n)` on `[0,1]^N`, where each
//! univariate factor is a B-spline expansion. The numerical core is generic
//! over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.
//!
//! ```
//! use tpbs::{dirichlet_energy, Model, SplineSpace};
//!
//! let spaces = vec![SplineSpace::new(10, 3).unwrap(); 2];
//! let model = Model::init(spaces, 4, 1, 7, 0.1).unwrap();
//! let y = model.forward(&[0.25, 0.5]).unwrap();
//! assert_eq!(y.len(), 1);
//! assert!(dirichlet_energy(&model) >= 0.0);
//! ```

pub mod data;
pub mod density;
pub mod dirichlet;
pub mod experiment;
pub mod format;
pub mod marginal;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod scaler;
pub mod selfcheck;
pub mod spline;
pub mod trainer;

pub use data::{load_csv, parse_csv, split, DataError, Dataset, Manifest, Part, RawTable, Split, SplitCounts};
pub use density::{fit_density, DensityError, DensityFit, DensityFitConfig, DensityModel};
pub use dirichlet::{
    de_decomposition, dirichlet_energy, grad_energy, local_dirichlet_energy, DeDecomposition, EnergyError,
    EnergyRegions, LdeConfig,
};
pub use experiment::{evaluate_missing, train_split, ExperimentError, ModelSpec, SplitOutcome};
pub use format::{decode_model, encode_model, load_model, save_model, Encoding};
pub use marginal::{
    mask_suite, predict_density_marginal, predict_full, predict_mean_impute, predict_uniform_marginal, Estimator,
    MarginalError, Marginalizer,
};
pub use metrics::{mean_std, metrics, MetricReport, Task};
pub use model::{ForwardWorkspace, ModelError, ModelGrad, TpbsModel};
pub use scalar::Scalar;
pub use scaler::ScalerParams;
pub use selfcheck::{run_selfcheck, run_selfcheck_with, Scale, SelfCheckReport};
pub use spline::{gauss_legendre, BandedGram, SplineError, SplineSpace};
pub use trainer::{
    evaluate, grad_objective, loss_and_grad, objective, predict, train, Loss, Samples, TrainConfig, TrainError,
    TrainReport, TrainSummary,
};

pub type Model = TpbsModel<f64>;
pub type Model32 = TpbsModel<f32>;
pub type Space = SplineSpace<f64>;
pub type Gradient = ModelGrad<f64>;
