use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("projection is ambiguous at {point:?} (focal point of the reference manifold)")]
    AmbiguousProjection { point: Vec<f64> },

    #[error("point lies outside the tube: |r| = {r} > alpha = {alpha}")]
    OutsideTube { r: f64, alpha: f64 },

    #[error("image left the tube N({alpha}): offset {r}")]
    LeftTube { r: f64, alpha: f64 },

    #[error("unsupported manifold: {0}")]
    UnsupportedManifold(String),

    #[error("mesh resolution {requested} is below the minimum {minimum}")]
    ResolutionTooSmall { requested: usize, minimum: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("Newton iteration diverged after {} steps (last residual {:e})", .trace.len(), .trace.last().copied().unwrap_or(f64::NAN))]
    NewtonDivergence { trace: Vec<f64> },

    #[error("family provides no inverse and numeric inversion is disabled")]
    NoInverseProvided,

    #[error("matrix is not a rotation: orthogonality defect {orthogonality:e}, determinant {determinant}")]
    NotRotation { orthogonality: f64, determinant: f64 },

    #[error("no crossing of 1 on [{lo}, {hi}]: endpoint values {q_lo} and {q_hi}")]
    NoCrossing { lo: f64, hi: f64, q_lo: f64, q_hi: f64 },

    #[error("iteration is not contracting: ratio >= 1 for {consecutive} consecutive steps (last ratio {ratio})")]
    NotContracting { consecutive: usize, ratio: f64 },

    #[error("branch collapse at iteration {iteration}: values crossed zero")]
    BranchCollapse { iteration: usize },

    #[error("no bifurcation at mu = {mu}: {reason}")]
    NoBifurcation { mu: f64, reason: String },

    #[error("interpolation point {0:?} is not covered by the mesh")]
    InterpolationOutOfRange(Vec<f64>),

    #[error("Gronwall parameters violate sigma, nu, sigma^2, nu^2 < s/4: {0}")]
    ParamsViolateIneq(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
