//! Error type shared by all modules of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not antisymmetric within tolerance (defect {defect:.3e})")]
    NotAntisymmetric { defect: f64 },

    #[error("matrix is not a rotation within tolerance (defect {defect:.3e})")]
    NotARotation { defect: f64 },

    #[error("vector of norm {norm:.6e} cannot be a unit bearing")]
    NotUnitNorm { norm: f64 },

    #[error("landmark count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("landmark {index} is co-located with the robot (range {range:.3e} m)")]
    CoLocated { index: usize, range: f64 },

    #[error("estimated range {range:.6e} m is at or below the barrier floor {epsilon:.6e} m")]
    BarrierViolated { range: f64, epsilon: f64 },

    #[error("output error for landmark {index} is antipodal to its origin bearing")]
    Antipodal { index: usize },

    #[error("duplicate landmark id {0}")]
    DuplicateId(u64),

    #[error("unknown landmark id {0}")]
    UnknownId(u64),

    #[error("initial depth {depth:.3} m is below the range floor {floor:.3} m")]
    DepthBelowFloor { depth: f64, floor: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("integration step rejected after {retries} halvings (last dt {dt:.3e} s)")]
    StepFailed { retries: u32, dt: f64 },

    #[error("empty sample window")]
    EmptyWindow,

    #[error("sample window spans {span:.3} s, shorter than the {horizon:.3} s horizon")]
    WindowTooShort { span: f64, horizon: f64 },

    #[error("degenerate point configuration: {0}")]
    Degenerate(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step {step} (t = {t:.3} s): {source}")]
    AtStep {
        step: usize,
        t: f64,
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches the step index and time at which a runner hit this error.
    pub fn at_step(self, step: usize, t: f64) -> Error {
        Error::AtStep {
            step,
            t,
            source: Box::new(self),
        }
    }
}
