use thiserror::Error;

pub type Result<T> = std::result::Result<T, GrftError>;

#[derive(Debug, Error)]
pub enum GrftError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("enumeration guard: {0}")]
    Guard(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl GrftError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GrftError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        GrftError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        GrftError::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        GrftError::Numeric(msg.into())
    }

    /// True for errors caused by the caller's configuration or inputs rather
    /// than by the computation itself.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            GrftError::Shape(_)
                | GrftError::Config(_)
                | GrftError::Input(_)
                | GrftError::Guard(_)
                | GrftError::Json(_)
                | GrftError::Csv(_)
        )
    }
}
