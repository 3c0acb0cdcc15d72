use ndarray::Array2;
use num_complex::Complex64;
use serde_json::{json, Value};
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: operands live on different grids")]
    GridMismatch,

    #[error("empty operator: rank-one term list is empty")]
    EmptyOperator,

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("negative transition rate {rate:e} at node {node}, atom {atom}")]
    NegativeRate { rate: f64, node: usize, atom: usize },

    /// The zero-fiber generator has a kernel of dimension other than one.
    /// `vectors` holds an orthonormal basis of the numerical null space
    /// (one column per vector) and `residuals` the norms `|A v|`.
    #[error("zero eigenvalue is not simple: kernel dimension {kernel_dim}")]
    NonSimpleKernel {
        kernel_dim: usize,
        vectors: Array2<Complex64>,
        residuals: Vec<f64>,
    },

    #[error("stationary vector is not nonnegative (min value {min:e})")]
    NonPositiveStationary { min: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("kernel derivatives unavailable")]
    DerivativesUnavailable,

    #[error("model does not declare the V symmetry")]
    SymmetryNotDeclared,

    #[error("weight vanishes at node {node}")]
    DegenerateWeight { node: usize },

    #[error("kinetic mode mismatch: model is {model}, requested {requested}")]
    ModeMismatch { model: String, requested: String },

    #[error("numerical blow-up: {0}")]
    NumericalBlowup(String),

    #[error("eigenvalue branch tracking failed at p = {p:?} (overlap {overlap:.3})")]
    BranchTrackingFailed { p: Vec<f64>, overlap: f64 },

    #[error("finite-difference stencil disagreement {discrepancy:e} exceeds {limit:e}")]
    StencilError { discrepancy: f64, limit: f64 },

    #[error("horizon too short: tail bound {tail:e} exceeds half the standard error {stderr:e}")]
    HorizonTooShort { tail: f64, stderr: f64 },

    #[error("particle sampler supports only pure-jump models (kinetic term must vanish)")]
    KineticNotSupported,

    #[error("imaginary residual {value:e} in a quantity that must be real")]
    ImaginaryResidual { value: f64 },

    #[error("linear algebra backend: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::GridMismatch => "GridMismatch",
            Error::EmptyOperator => "EmptyOperator",
            Error::UnknownModel(_) => "UnknownModel",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::InvalidParams(_) => "InvalidParams",
            Error::ModelEvaluation(_) => "ModelEvaluationError",
            Error::NegativeRate { .. } => "NegativeRate",
            Error::NonSimpleKernel { .. } => "NonSimpleKernel",
            Error::NonPositiveStationary { .. } => "NonPositiveStationary",
            Error::SolveFailed(_) => "SolveFailed",
            Error::DerivativesUnavailable => "DerivativesUnavailable",
            Error::SymmetryNotDeclared => "SymmetryNotDeclared",
            Error::DegenerateWeight { .. } => "DegenerateWeight",
            Error::ModeMismatch { .. } => "ModeMismatch",
            Error::NumericalBlowup(_) => "NumericalBlowup",
            Error::BranchTrackingFailed { .. } => "BranchTrackingFailed",
            Error::StencilError { .. } => "StencilError",
            Error::HorizonTooShort { .. } => "HorizonTooShort",
            Error::KineticNotSupported => "KineticNotSupported",
            Error::ImaginaryResidual { .. } => "ImaginaryResidual",
            Error::Linalg(_) => "LinalgError",
        }
    }

    /// Whether the error signals a violated modelling assumption (as opposed to
    /// a malformed request or a backend failure).
    pub fn is_assumption_violation(&self) -> bool {
        matches!(
            self,
            Error::NegativeRate { .. }
                | Error::NonSimpleKernel { .. }
                | Error::NonPositiveStationary { .. }
                | Error::SymmetryNotDeclared
                | Error::DegenerateWeight { .. }
                | Error::HorizonTooShort { .. }
                | Error::KineticNotSupported
                | Error::BranchTrackingFailed { .. }
                | Error::ModeMismatch { .. }
                | Error::ImaginaryResidual { .. }
                | Error::DerivativesUnavailable
                | Error::NumericalBlowup(_)
                | Error::ModelEvaluation(_)
        )
    }

    /// Whether the error comes from a malformed request: bad grid,
    /// unknown model, unparseable parameters or an out-of-range argument.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::UnknownModel(_)
                | Error::InvalidParams(_)
                | Error::InvalidArgument(_)
                | Error::EmptyOperator
                | Error::GridMismatch
        )
    }

    /// Structured representation for embedding in reports.
    pub fn to_json(&self) -> Value {
        let mut v = json!({ "kind": self.kind(), "message": self.to_string() });
        if let Error::NonSimpleKernel {
            kernel_dim,
            vectors,
            residuals,
        } = self
        {
            let vecs: Vec<Vec<[f64; 2]>> = vectors
                .columns()
                .into_iter()
                .map(|c| c.iter().map(|z| [z.re, z.im]).collect())
                .collect();
            v["kernel_dim"] = json!(kernel_dim);
            v["residuals"] = json!(residuals);
            v["vectors"] = json!(vecs);
        }
        v
    }
}
