use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("root finding supports degree <= 2, got degree {0}")]
    UnsupportedDegree(usize),

    #[error("beam propagation is singular (Cq + D = 0)")]
    PropagationSingularity,

    #[error("empty range: {0}")]
    EmptyRange(&'static str),

    #[error("work zone at ({x:.3}, {y:.3}) mm lies outside the camera field of view")]
    OutOfView { x: f64, y: f64 },

    #[error("region of interest selects no pixels (diameter {diameter_mm} mm)")]
    EmptyRoi { diameter_mm: f64 },

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
