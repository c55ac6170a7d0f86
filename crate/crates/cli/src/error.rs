use latentkg::cluster::ClusterError;
use latentkg::corpus::CorpusError;
use latentkg::embedsim::EmbedError;
use latentkg::kgraph::KgError;
use latentkg::metrics::MetricsError;
use latentkg::patching::PatchError;
use latentkg::trace::TraceError;
use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Degenerate(m) => CliError::Degenerate(format!("{what}: {m}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Config(_) | TraceError::Capacity { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PatchError> for CliError {
    fn from(e: PatchError) -> Self {
        match e {
            PatchError::DegenerateWeights => CliError::Degenerate(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::EmptyTemporal(_) => CliError::Degenerate(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::TooFewGraphs(_) | EmbedError::EmptyGraph(_) | EmbedError::Undefined => {
                CliError::Degenerate(e.to_string())
            }
            EmbedError::Argument(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}
