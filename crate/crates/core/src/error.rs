use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("epigraph profile queried at {at} outside its evaluation bound {bound}")]
    OutsideEvaluationBound { at: f64, bound: f64 },
    #[error("domain is not convex: {0}")]
    NonConvex(String),
    #[error("point is not on the boundary (distance to boundary {0:e})")]
    NotOnBoundary(f64),
    #[error("point is not inside the domain")]
    OutsideDomain,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid has {nodes} nodes, cap is {cap}")]
    GridTooLarge { nodes: usize, cap: usize },
    #[error("no grid node lies inside the domain")]
    EmptyMask,
    #[error("requires p > n (got p = {p}, n = {n})")]
    ExponentTooSmall { p: f64, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular point too close to the boundary: d = {d}, need at least {min}")]
    SnapRejected { d: f64, min: f64 },
    #[error("Rayleigh quotient undefined for the zero function")]
    ZeroFunction,
    #[error("no admissible candidate points (domain thinner than 4h?)")]
    NoCandidates,
    #[error("grid ladder exhausted: {0}")]
    LadderExhausted(String),
    #[error("grid spacing {h} too coarse for eps = {eps} (need h <= eps/8)")]
    GridTooCoarse { h: f64, eps: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
