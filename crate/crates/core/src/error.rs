use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed network document: {0}")]
    Malformed(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("duplicate line {0}-{1}")]
    DuplicateLine(i64, i64),
    #[error("network is disconnected: {0}")]
    Disconnected(String),
    #[error("power imbalance {0:.3e} exceeds tolerance")]
    PowerImbalance(f64),
    #[error("unknown line {0}-{1}")]
    UnknownLine(i64, i64),
    #[error("empty line set")]
    EmptyLineSet,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("singular jacobian at the operating point")]
    SingularJacobian,
    #[error("equilibrium leaves the pi/2 polytope (max edge angle {0:.6})")]
    OutsidePolytope(f64),
    #[error("invalid angle gap: {0}")]
    InvalidGap(String),
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("solver failed to converge: {0}")]
    SolverNonConvergence(String),
    #[error("certificate infeasible at gamma = 0 (lambda_max {0:.3e})")]
    InfeasibleAtZero(f64),
    #[error("internal inconsistency: {0}")]
    Internal(String),
    #[error("state outside the pi/2 polytope: {0}")]
    StateOutsidePolytope(String),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("system still stable at the clearing-time cap: CCT >= {0}")]
    CctAboveCap(f64),
    #[error("stability is not monotone in clearing time: {0}")]
    NonMonotone(String),
    #[error("clearing time {0} from the certificate is already unstable")]
    BracketUnstable(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
