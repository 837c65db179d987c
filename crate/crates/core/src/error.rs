use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid user-supplied parameters (non-positive widths, bad grids, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A quantity left its mathematical domain (negative radicand, bad PSF data).
    #[error("domain error: {0}")]
    Domain(String),

    /// The two source states are too close for the e-basis to be built.
    #[error("singular basis: delta = {delta} is too close to 1")]
    SingularBasis { delta: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    /// The commutation conditions for a gauge pair have no solution.
    #[error("no commuting gauge pair: {0}")]
    NoSolution(String),

    /// A closed-form gauge failed its residual check.
    #[error("gauge pair does not commute (residual {residual:.3e})")]
    GaugeInvalid { residual: f64 },

    #[error("SLD pair does not commute (commutator {norm:.3e} > tolerance {tol:.3e})")]
    NotCommuting { norm: f64, tol: f64 },

    #[error("degenerate joint eigenbasis could not be resolved (residual {residual:.3e})")]
    DegeneracyUnresolved { residual: f64 },

    #[error("SPADE alignment {alignment} too far from centroid {centroid}")]
    AlignmentOutOfRange { alignment: f64, centroid: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("classical FIM exceeds QFI for parameter {index} (gap {gap:.3e})")]
    FimExceedsQfi { index: usize, gap: f64 },

    /// The likelihood is flat over the search box.
    #[error("degenerate likelihood: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for errors that reflect the numerical model rather than bad configuration.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::InvalidInput(_) | Error::Shape(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
