use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("root not bracketed: {0}")]
    NotBracketed(String),

    #[error("quadrature failed on [{a}, {b}]: estimated error {error:.3e} after {subdivisions} subdivisions")]
    Quadrature {
        a: f64,
        b: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("imaginary residual {imag:.3e} exceeds tolerance {tol:.1e}")]
    ImaginaryResidual { imag: f64, tol: f64 },

    #[error("saddle is on the window boundary; use term_integrals instead")]
    BoundarySaddle,

    #[error("memory budget exceeded: N^p = {entries} > {cap}; reduce N or p")]
    Budget { entries: u128, cap: u128 },

    #[error("instance blob: {0}")]
    Blob(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
