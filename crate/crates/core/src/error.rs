use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel {0} has no closed-form Fourier transform")]
    UnsupportedKernel(String),

    #[error("quadrature did not converge: convolution residual {residual:.3e} at grid order {grid_order}")]
    QuadratureNotConverged { residual: f64, grid_order: usize },

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("point ({0}, {1}) is not a lattice site")]
    OffLattice(f64, f64),

    #[error("point at radius {radius:.3} is outside the certified radius of truncation {truncation}; need N >= {required}")]
    OutsideCertifiedRadius {
        radius: f64,
        truncation: usize,
        required: usize,
    },

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ResourceCap(_) => 3,
            _ => 2,
        }
    }
}
