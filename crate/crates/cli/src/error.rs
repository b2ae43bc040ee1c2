use std::fmt;

use zeta_core::embed::EmbedError;
use zeta_core::eval::EvalError;
use zeta_core::infer::InferError;
use zeta_core::kb::KbError;
use zeta_core::llmgen::GenError;
use zeta_core::study::StudyError;
use zeta_service::ServiceError;

/// Process exit classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 1,
    Validation = 2,
    Runtime = 3,
    Remote = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ExitClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Usage, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Validation, message)
    }

    /// Prefix the message with what was being read or written.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn code(&self) -> u8 {
        self.class as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

fn classify_embed(e: &EmbedError) -> ExitClass {
    match e {
        EmbedError::Io(_) => ExitClass::Runtime,
        EmbedError::HttpError { .. } | EmbedError::Transport(_) => ExitClass::Remote,
        _ => ExitClass::Validation,
    }
}

fn classify_infer(e: &InferError) -> ExitClass {
    match e {
        InferError::Embed(inner) => classify_embed(inner),
        InferError::Sample { source, .. } => classify_infer(source),
        _ => ExitClass::Validation,
    }
}

fn classify_eval(e: &EvalError) -> ExitClass {
    match e {
        EvalError::Io(_) => ExitClass::Runtime,
        EvalError::Infer(inner) => classify_infer(inner),
        _ => ExitClass::Validation,
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        Self::new(classify_embed(&e), e.to_string())
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        Self::new(classify_infer(&e), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::new(classify_eval(&e), e.to_string())
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        let class = match e {
            KbError::Io(_) => ExitClass::Runtime,
            _ => ExitClass::Validation,
        };
        Self::new(class, e.to_string())
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        let class = match e {
            GenError::AuthError { .. }
            | GenError::RateLimited { .. }
            | GenError::Http { .. }
            | GenError::Transport { .. }
            | GenError::EmptyResponse { .. }
            | GenError::MissingToken { .. }
            | GenError::AllModelsFailed(_) => ExitClass::Remote,
            GenError::Io(_) => ExitClass::Runtime,
            _ => ExitClass::Validation,
        };
        Self::new(class, e.to_string())
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        let class = match &e {
            StudyError::Io(_) => ExitClass::Runtime,
            StudyError::Eval(inner) => classify_eval(inner),
            _ => ExitClass::Validation,
        };
        Self::new(class, e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Kb(e) => e.into(),
            ServiceError::Embed(e) => e.into(),
            ServiceError::Infer(e) => e.into(),
            ServiceError::Study(e) => e.into(),
            ServiceError::Io(e) => e.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ExitClass::Runtime, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        let class = if e.is_io() {
            ExitClass::Runtime
        } else {
            ExitClass::Validation
        };
        Self::new(class, e.to_string())
    }
}
