use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Expression text failed to parse. `position` is a byte offset.
    Parse {
        position: usize,
        message: String,
    },
    /// An expression could not be evaluated at a point (log of a
    /// non-positive value, division by zero, ...).
    Domain {
        expr: String,
        x: f64,
        y: f64,
    },
    /// A field or its first derivatives disagree across the seam.
    Periodicity {
        what: String,
        mismatch: f64,
    },
    /// The sampled metric is not symmetric positive definite (or falls below
    /// the nondegeneracy floor) at the listed nodes.
    NotPositiveDefinite {
        nodes: Vec<(usize, usize)>,
        min_det: f64,
    },
    /// Mollification destroyed positive definiteness; `eps_max` is the largest
    /// dyadic fraction of the requested ε that still worked, if any.
    SmoothingNotPositive {
        eps: f64,
        eps_max: Option<f64>,
    },
    /// Mollifier radius is at least half the torus.
    KernelExceedsChart {
        eps: f64,
    },
    /// The operation needs more regularity than the model carries.
    Unsupported(String),
    InvalidInput(String),
    /// Two fields or a field and a kernel do not live on the same grid.
    ResolutionMismatch {
        left: usize,
        right: usize,
    },
    Singular {
        what: String,
    },
    /// An iterative solver failed; `residual` is the best value reached.
    NoConvergence {
        what: String,
        residual: f64,
    },
    /// An ODE trajectory produced NaN or infinity.
    NonFinite {
        what: String,
        t: f64,
    },
    /// Determinant of a flow Jacobian became non-positive at time `t`.
    NonInvertibleFlow {
        t: f64,
    },
    /// A Riccati solution left every bound before the end of the grid.
    BlowUp {
        t: f64,
    },
    /// Measures with a singular part relative to the reference volume.
    NotAbsolutelyContinuous,
    Infeasible(String),
    CapacityExceeded {
        sources: usize,
        targets: usize,
        cap: usize,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { position, message } => {
                write!(f, "syntax error at {position}: {message}")
            }
            Error::Domain { expr, x, y } => {
                write!(f, "`{expr}` is undefined at ({x}, {y})")
            }
            Error::Periodicity { what, mismatch } => {
                write!(f, "{what} is not periodic (seam mismatch {mismatch:.3e})")
            }
            Error::NotPositiveDefinite { nodes, min_det } => write!(
                f,
                "metric not positive definite at {} node(s) (min det {min_det:.3e}); first: {:?}",
                nodes.len(),
                nodes.first()
            ),
            Error::SmoothingNotPositive { eps, eps_max } => match eps_max {
                Some(m) => write!(f, "g_eps not positive definite at eps={eps}; eps <= {m} works"),
                None => write!(f, "g_eps not positive definite at eps={eps}"),
            },
            Error::KernelExceedsChart { eps } => {
                write!(f, "kernel exceeds chart: eps = {eps} must be < 1/2")
            }
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ResolutionMismatch { left, right } => {
                write!(f, "resolution mismatch: {left} vs {right}")
            }
            Error::Singular { what } => write!(f, "singular matrix: {what}"),
            Error::NoConvergence { what, residual } => {
                write!(f, "{what} did not converge (best residual {residual:.3e})")
            }
            Error::NonFinite { what, t } => write!(f, "{what} became non-finite at t = {t}"),
            Error::NonInvertibleFlow { t } => {
                write!(f, "flow Jacobian not invertible at t = {t}")
            }
            Error::BlowUp { t } => write!(f, "Riccati solution blew up at t = {t}"),
            Error::NotAbsolutelyContinuous => {
                write!(f, "measure is not absolutely continuous w.r.t. the reference")
            }
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::CapacityExceeded { sources, targets, cap } => {
                write!(f, "support {sources}x{targets} exceeds the exact-solver cap {cap}")
            }
        }
    }
}

impl core::error::Error for Error {}
