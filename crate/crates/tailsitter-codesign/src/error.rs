use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("attitude near the roll singularity (phi = {0})")]
    Singular(f64),
    #[error("design variable `{field}` = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        field: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no trim found: {0}")]
    NoTrim(String),
    #[error("surrogate fit failed: {0}")]
    Surrogate(String),
    #[error("kernel matrix not positive definite after jitter")]
    IllConditioned,
    #[error("hover degeneracy: speed {0} below guard")]
    Hover(f64),
    #[error("mission infeasible: {0}")]
    Infeasible(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("closed loop diverged at t = {0}")]
    Diverged(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
