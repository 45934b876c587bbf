use funsens::data::DataError;
use funsens::design::DesignError;
use funsens::estimators::EstimatorError;
use funsens::formula::FormulaError;
use funsens::joint::JointError;
use funsens::metamodel::MetamodelError;
use funsens::model::ModelError;
use funsens::sampling::SamplingError;
use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data-contract error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FormulaError> for CliError {
    fn from(e: FormulaError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SamplingError> for CliError {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::ZeroVariance => CliError::Numerical(e.to_string()),
            EstimatorError::BlockSize { .. } | EstimatorError::BlockCount { .. } | EstimatorError::Store(_) => {
                CliError::Data(e.to_string())
            }
            EstimatorError::Sampling(s) => s.into(),
            EstimatorError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<JointError> for CliError {
    fn from(e: JointError) -> Self {
        match e {
            JointError::Glm(_) | JointError::Gam(_) | JointError::NonConvergence { .. } | JointError::EqlDecrease { .. } => {
                CliError::Numerical(e.to_string())
            }
            JointError::SmoothInGlm(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetamodelError> for CliError {
    fn from(e: MetamodelError) -> Self {
        match e {
            MetamodelError::Joint(j) => j.into(),
            MetamodelError::Estimator(x) => x.into(),
            MetamodelError::Sampling(s) => s.into(),
            MetamodelError::Model(m) => m.into(),
            MetamodelError::DegenerateVariance(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
