use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid carrier allocation: {0}")]
    Allocation(String),
    #[error("invalid frequency grid: {0}")]
    Grid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("selection failed: {0}")]
    Selection(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("i/o: {0}")]
    Io(String),
}
