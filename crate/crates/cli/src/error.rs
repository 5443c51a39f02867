use std::io;

use thiserror::Error;
use vizaudit_core::analysis::AnalysisError;
use vizaudit_core::featviz::VizError;
use vizaudit_core::fooling::FoolError;
use vizaudit_core::netgraph::NetError;
use vizaudit_theory::TheoryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Stable identifier printed as `error[CODE]: message`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::MissingInput(_) => "E_MISSING_INPUT",
            CliError::Malformed(_) => "E_MALFORMED",
            CliError::Precondition(_) => "E_PRECONDITION",
            CliError::Io(_) => "E_IO",
        }
    }

    /// Single-line rendering for stderr.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg.trim())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::NotFound => CliError::MissingInput(e.to_string()),
            io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => CliError::Malformed(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(io) => io.into(),
            NetError::Manifest(_)
            | NetError::Version { .. }
            | NetError::Truncated { .. }
            | NetError::MissingTensor(_)
            | NetError::Idx(_) => CliError::Malformed(e.to_string()),
            NetError::BadUnit(_) | NetError::InvalidHyper(_) | NetError::UnknownLayer(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::Net(n) => n.into(),
            VizError::Io(io) => io.into(),
            VizError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<FoolError> for CliError {
    fn from(e: FoolError) -> Self {
        match e {
            FoolError::Net(n) => n.into(),
            FoolError::Viz(v) => v.into(),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Net(n) => n.into(),
            AnalysisError::Config(_) => CliError::Usage(e.to_string()),
            AnalysisError::Csv(_) => CliError::Malformed(e.to_string()),
            AnalysisError::Io(io) => io.into(),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Config(_) => CliError::Usage(e.to_string()),
            TheoryError::Io(io) => io.into(),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Malformed(e.to_string())
    }
}
