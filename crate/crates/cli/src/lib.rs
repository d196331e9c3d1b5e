//! Library side of the `ieq` command: configuration, work-directory layout
//! and the five subcommands, kept callable from tests.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{cmd_benchmark, cmd_evaluate, cmd_prepare, cmd_synth, cmd_train, Workspace};
pub use config::{Overrides, RunConfig, WORKDIR_ENV};

/// What went wrong, which decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad flags or configuration: exit 1.
    Config,
    /// Unreadable, malformed or insufficient data: exit 2.
    Data,
    /// Non-finite loss or gradient during training: exit 3.
    Training,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 1,
            FailureKind::Data => 2,
            FailureKind::Training => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: FailureKind::Config,
            stage: "config".into(),
            message: message.into(),
        }
    }

    /// Wraps a library error raised while running `stage`.
    pub fn at(stage: &str, e: ieq_core::Error) -> Self {
        let kind = match e {
            ieq_core::Error::Config(_) => FailureKind::Config,
            ieq_core::Error::TrainingAborted { .. } => FailureKind::Training,
            _ => FailureKind::Data,
        };
        CliError {
            kind,
            stage: stage.into(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.starts_with(&format!("{}:", self.stage)) {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.stage, self.message)
        }
    }
}

impl std::error::Error for CliError {}
