use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The pre-normalization embedding vanished, i.e. the network is dead.
    #[error("degenerate embedding in row {row}: norm {norm:e} below 1e-12")]
    DegenerateNorm { row: usize, norm: f64 },
}
