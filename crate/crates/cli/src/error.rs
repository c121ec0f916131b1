use edeblur_core::CoreError;
use edeblur_model::ModelError;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STATE: i32 = 3;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn state(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_STATE,
            message: message.into(),
        }
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_) => EXIT_USAGE,
        CoreError::Input(_) | CoreError::Format { .. } | CoreError::Io { .. } => EXIT_INPUT,
        CoreError::Dimension(_) | CoreError::Invariant(_) | CoreError::Tensor(_) => EXIT_STATE,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError {
            code: core_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::Core(c) => core_code(c),
            ModelError::Config(_) => EXIT_USAGE,
            ModelError::Input(_) => EXIT_INPUT,
            ModelError::Tensor(_)
            | ModelError::MissingTensor(_)
            | ModelError::Shape { .. }
            | ModelError::Diverged { .. } => EXIT_STATE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
