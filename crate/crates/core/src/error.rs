use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An enumeration string outside its closed vocabulary.
    #[error("unknown {what} `{value}`")]
    UnknownVariant { what: &'static str, value: String },

    #[error("malformed line{}: byte {offset}: {message}", line.map(|l| format!(" {l}")).unwrap_or_default())]
    MalformedLine {
        line: Option<usize>,
        offset: usize,
        message: String,
    },

    #[error("negative timestamp in `{field}`: {value}")]
    NegativeTimestamp { field: &'static str, value: i64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("empty input: no spans to load")]
    EmptyInput,

    #[error("duplicate span `{span_id}` in trace `{trace_id}`")]
    DuplicateSpan { trace_id: String, span_id: String },

    #[error("dependency cycle detected among tasks [{}]", tasks.join(" -> "))]
    CycleDetected { tasks: Vec<String> },

    #[error("task `{task}` depends on `{missing}`, which never appears in the trace")]
    MissingDependency { task: String, missing: String },

    #[error("malformed flow file at {location}: {message}")]
    MalformedFlowFile { location: String, message: String },

    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("division by zero at position {position}")]
    DivisionByZero { position: usize },

    #[error("unknown natural-language snippet `{0}`")]
    UnknownSnippet(String),

    #[error("invalid case spec: {0}")]
    InvalidSpec(String),

    #[error("infeasible suite config: {0}")]
    InfeasibleConfig(String),

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("inconsistent ground truth for case `{case_id}`: {message}")]
    InconsistentGt { case_id: String, message: String },

    #[error("candidate output references unknown case `{0}`")]
    UnknownCase(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Analysis errors are failures of the data rather than of the input plumbing.
    pub fn is_analysis_error(&self) -> bool {
        matches!(
            self,
            Error::CycleDetected { .. }
                | Error::MissingDependency { .. }
                | Error::InconsistentGt { .. }
        )
    }
}
