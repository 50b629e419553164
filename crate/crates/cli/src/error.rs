use thiserror::Error;
use tpbs::{DataError, DensityError, ExperimentError, MarginalError, ModelError, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("self-check failed")]
    SelfCheck,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::SelfCheck => 5,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Manifest { .. } | DataError::CountsExceed { .. } | DataError::MissingTarget { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite => CliError::Numeric(e.to_string()),
            ModelError::DimensionMismatch { .. } | ModelError::InvalidShape(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptySet(_) => CliError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DensityError> for CliError {
    fn from(e: DensityError) -> Self {
        match e {
            DensityError::Io(_) | DensityError::Format(_) => CliError::Input(e.to_string()),
            DensityError::NoComponents | DensityError::TooManyComponents { .. } | DensityError::NoBins => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MarginalError> for CliError {
    fn from(e: MarginalError) -> Self {
        match e {
            MarginalError::DenominatorTooSmall { .. } => CliError::Numeric(e.to_string()),
            MarginalError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train(t) => t.into(),
            ExperimentError::Model(m) => m.into(),
            ExperimentError::Density(d) => d.into(),
            ExperimentError::Marginal(m) => m.into(),
            ExperimentError::Spline(_) | ExperimentError::NoDensity => CliError::Config(e.to_string()),
            ExperimentError::Metric(_) => CliError::Numeric(e.to_string()),
        }
    }
}
