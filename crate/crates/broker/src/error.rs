use std::time::Duration;

use thiserror::Error;

/// Everything a ListBehaviors or PerformBehavior request can fail with. The
/// variant name doubles as the error code on the wire.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BrokerError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),
    #[error("structoid `{sid}` has schema `{found}` but the mechanism requires `{required}`")]
    SchemaMismatch { sid: String, found: String, required: String },
    #[error("mechanism `{mechanism}` has no behavior `{behavior}`")]
    BehaviorNotFound { mechanism: String, behavior: String },
    #[error("{0}")]
    MissingParam(String),
    #[error("{0}")]
    BadParamType(String),
    #[error("structoid `{sid}` has no role labeled `{label}`")]
    RoleResolutionFailed { sid: String, label: String },
    #[error("could not fetch content from {url}: {reason}")]
    ContentFetchFailed { url: String, reason: String },
    #[error("mechanism fault: {0}")]
    MechanismFault(String),
    #[error("mechanism exceeded the {}s time limit", .0.as_secs_f64())]
    Timeout(Duration),
    #[error("mechanism output exceeds {0} bytes")]
    OutputTooLarge(usize),
    #[error("object `{0}` does not exist in the repository")]
    ObjectNotFound(String),
    #[error("object has no structoid `{0}`")]
    StructoidNotFound(String),
    #[error("repository unavailable: {0}")]
    RepositoryUnavailable(String),
    #[error("could not fetch manifest from {url}: {reason}")]
    FetchFailed { url: String, reason: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unsupported execution: {0}")]
    UnsupportedExecution(String),
    #[error("registry: {0}")]
    Registry(String),
}

impl BrokerError {
    pub fn code(&self) -> &'static str {
        match self {
            BrokerError::InvalidRequest(_) => "InvalidRequest",
            BrokerError::UnknownMechanism(_) => "UnknownMechanism",
            BrokerError::SchemaMismatch { .. } => "SchemaMismatch",
            BrokerError::BehaviorNotFound { .. } => "BehaviorNotFound",
            BrokerError::MissingParam(_) => "MissingParam",
            BrokerError::BadParamType(_) => "BadParamType",
            BrokerError::RoleResolutionFailed { .. } => "RoleResolutionFailed",
            BrokerError::ContentFetchFailed { .. } => "ContentFetchFailed",
            BrokerError::MechanismFault(_) => "MechanismFault",
            BrokerError::Timeout(_) => "Timeout",
            BrokerError::OutputTooLarge(_) => "OutputTooLarge",
            BrokerError::ObjectNotFound(_) => "ObjectNotFound",
            BrokerError::StructoidNotFound(_) => "StructoidNotFound",
            BrokerError::RepositoryUnavailable(_) => "RepositoryUnavailable",
            BrokerError::FetchFailed { .. } => "FetchFailed",
            BrokerError::InvalidManifest(_) => "InvalidManifest",
            BrokerError::UnsupportedExecution(_) => "UnsupportedExecution",
            BrokerError::Registry(_) => "Registry",
        }
    }

    /// HTTP status used when the error is returned over the broker protocol.
    pub fn status(&self) -> u16 {
        match self {
            BrokerError::InvalidRequest(_) | BrokerError::MissingParam(_) | BrokerError::BadParamType(_) => 400,
            BrokerError::UnknownMechanism(_)
            | BrokerError::BehaviorNotFound { .. }
            | BrokerError::ObjectNotFound(_)
            | BrokerError::StructoidNotFound(_) => 404,
            BrokerError::SchemaMismatch { .. } => 409,
            BrokerError::RoleResolutionFailed { .. }
            | BrokerError::InvalidManifest(_)
            | BrokerError::UnsupportedExecution(_) => 422,
            BrokerError::Registry(_) => 500,
            BrokerError::ContentFetchFailed { .. }
            | BrokerError::MechanismFault(_)
            | BrokerError::OutputTooLarge(_)
            | BrokerError::RepositoryUnavailable(_)
            | BrokerError::FetchFailed { .. } => 502,
            BrokerError::Timeout(_) => 504,
        }
    }
}
