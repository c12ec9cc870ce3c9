use thiserror::Error;

/// Errors raised by the workbench. Every variant names the module it came from
/// so that command-line reports can point at the violated precondition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("exact-arith: {0}")]
    Arith(String),

    #[error("gadget-algebra: {0}")]
    Gadget(String),

    #[error("transform-engine: undefined at this stage (point {point}, defined for {defined_up_to} step(s))")]
    Undefined { point: String, defined_up_to: usize },

    #[error("transform-engine: {0}")]
    Transform(String),

    #[error("randomness-tests: {0}")]
    Test(String),

    #[error("martingale-lab: {0}")]
    Martingale(String),

    #[error("instability-construction: {0}")]
    Construction(String),

    #[error("universal-code: {0}")]
    Code(String),
}

impl Error {
    /// Short module tag, used for exit reports.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Arith(_) => "exact-arith",
            Error::Gadget(_) => "gadget-algebra",
            Error::Undefined { .. } | Error::Transform(_) => "transform-engine",
            Error::Test(_) => "randomness-tests",
            Error::Martingale(_) => "martingale-lab",
            Error::Construction(_) => "instability-construction",
            Error::Code(_) => "universal-code",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
