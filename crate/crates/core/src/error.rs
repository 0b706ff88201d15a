use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("division by an interval containing zero: {0}")]
    DivisionByZero(String),
    #[error("{op} is undefined on {arg}")]
    Domain { op: &'static str, arg: String },
    #[error("invalid interval bounds [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("branch {0} is not monotone on its domain")]
    NotMonotone(usize),
    #[error("branch domains do not tile [0, 1]: {0}")]
    BadTiling(String),
    #[error("cannot separate branch endpoints near {0}")]
    EndpointSeparation(f64),
    #[error("target {y} lies outside the branch image {image}")]
    PreimageOutside { y: String, image: String },
    #[error("Lasota-Yorke contraction fails: lambda1 = {lambda1} >= 1")]
    NoContraction { lambda1: f64 },
    #[error("entry tolerance {requested:e} unachievable in double precision, achieved {achieved:e}")]
    EntryTolUnachievable { requested: f64, achieved: f64 },
    #[error("power iteration did not converge after {iterations} steps (last difference {diff:e})")]
    NotConverged { iterations: usize, diff: f64 },
    #[error("no contraction below 1/2 within {cap} steps (last bound {last:e})")]
    ContractionCapExceeded { cap: usize, last: f64 },
    #[error("column {col} loses mass: sum {sum} does not contain 1 within {tol:e}")]
    Leak { col: usize, sum: String, tol: f64 },
    #[error("empty cell set")]
    EmptyCellSet,
    #[error("support mismatch: {0}")]
    SupportMismatch(String),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error("invalid format: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
