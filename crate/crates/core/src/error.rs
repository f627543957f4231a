use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{var}` expects {expected} values, got {got}")]
    Dimension {
        var: String,
        expected: usize,
        got: usize,
    },

    #[error("variable `{0}` has a non-finite value")]
    NonFinite(String),

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("simulation diverged at t={time:.4}s: {body}")]
    SimulationDiverged { body: String, time: f64 },

    #[error("fractional overlap is undefined: {0}")]
    MetricUndefined(String),

    #[error("dense reward is not defined for family `{0}`")]
    UnsupportedFamily(String),

    #[error("unknown task family `{0}`")]
    UnknownFamily(String),

    #[error("task parameters rejected: {0}")]
    TaskParams(String),

    #[error("action: {0}")]
    Action(String),

    #[error("lifecycle: {0}")]
    Lifecycle(String),

    #[error("aggregation: {0}")]
    Aggregation(String),

    #[error("log schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used by the wire protocol.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownVariable(_) | Error::Dimension { .. } | Error::NonFinite(_) => {
                "malformed_intervention"
            }
            Error::Catalog(_) => "catalog",
            Error::Config(_) => "config",
            Error::SimulationDiverged { .. } => "diverged",
            Error::MetricUndefined(_) => "metric_undefined",
            Error::UnsupportedFamily(_) => "unsupported_family",
            Error::UnknownFamily(_) => "unknown_family",
            Error::TaskParams(_) => "task_params",
            Error::Action(_) => "action",
            Error::Lifecycle(_) => "lifecycle",
            Error::Aggregation(_) => "aggregation",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
