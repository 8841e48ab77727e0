use std::path::PathBuf;

use hierctl_core::Error as CoreError;

use crate::validate::Issue;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n{}", list(.0))]
    Config(Vec<Issue>),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown preset `{name}`; available presets: {}", .available.join(", "))]
    UnknownPreset {
        name: String,
        available: Vec<String>,
    },
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("budget violation in {context}: {detail}")]
    Budget { context: String, detail: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn list(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Parse { .. } | Self::UnknownPreset { .. } => EXIT_CONFIG,
            Self::Solver { .. } => EXIT_SOLVER,
            Self::Budget { .. } => EXIT_BUDGET,
            Self::Io { .. } => EXIT_IO,
        }
    }

    /// Wraps a core error; an infinite weighted budget is a budget violation.
    pub fn solver(context: &str, source: CoreError) -> Self {
        match source {
            CoreError::InfiniteBudget { .. } => Self::Budget {
                context: context.to_string(),
                detail: source.to_string(),
            },
            source => Self::Solver {
                context: context.to_string(),
                source,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, HarnessError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn ctx(self, context: &str) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::solver(context, e))
    }
}
