use thiserror::Error;

/// Errors raised by the geometry pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("invalid chart grid: {0}")]
    InvalidGrid(String),
    #[error("metric is not positive definite at node {0}")]
    DegenerateMetric(usize),
    #[error("finite-difference stencil leaves the grid on axis {axis} at non-margin node {node}")]
    StencilOutOfDomain { node: usize, axis: usize },
    #[error("plane vectors are linearly dependent")]
    DegeneratePlane,
    #[error("exponent p = {0} must be at least 1")]
    InvalidExponent(f64),
    #[error("domain grid is not a closed manifold")]
    NotClosedManifold,
    #[error("immersion Jacobian is rank deficient at node {0}")]
    DegenerateImmersion(usize),
    #[error("ambient space has no constant curvature set")]
    AmbientNotSpaceForm,
    #[error("operation requires a hypersurface (codimension 1), got codimension {0}")]
    HypersurfaceOnly(usize),
    #[error("iterative solver did not converge: {0}")]
    SolverDiverged(SolverStats),
    #[error("function vanishes at node {0}")]
    ZeroCrossing(usize),
    #[error("unknown catalog entry `{0}`")]
    UnknownEntry(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("unknown check `{0}`")]
    UnknownCheck(String),
    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Iteration statistics of CG and Lanczos runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub kernel_projection_applied: bool,
}

impl std::fmt::Display for SolverStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} iterations, residual {:e}, kernel projection {}",
            self.iterations, self.final_residual, self.kernel_projection_applied
        )
    }
}

pub type Result<T> = std::result::Result<T, GeomError>;
