/// Crate-wide error type.
///
/// Math-level failures (non-unit quaternion, bad region, infeasible seed)
/// are reported here; the solver never returns `Err` for numerical trouble,
/// it reports a status in its `SolveReport` instead.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A constructor or operation received a value outside its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Stage index outside `0..num_stages`.
    #[error("stage index {index} out of range for chain with {num_stages} stages")]
    StageOutOfRange { index: usize, num_stages: usize },

    /// A per-stage vector does not match the chain's stage count.
    #[error("length mismatch: {what} has {got} entries, chain needs {want}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },

    /// Free-region extraction could not keep the seed segment interior.
    #[error("free-region seed infeasible: {0}")]
    SeedInfeasible(String),

    /// A free region violated its structural invariants.
    #[error("invalid free region: {0}")]
    InvalidRegion(String),

    /// Obstacle world generation could not satisfy its placement rules.
    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    /// A reference path with no waypoints was supplied.
    #[error("empty reference path")]
    EmptyPath,
}

pub type Result<T> = std::result::Result<T, Error>;
