use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid rate {name} = {value}: rates must be finite and strictly positive")]
    InvalidRate { name: &'static str, value: f64 },

    #[error("invalid distribution ({p0}, {p1}): entries must lie in [0, 1] and sum to 1")]
    InvalidDistribution { p0: f64, p1: f64 },

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("terminal desirability is identically zero; the cost-to-go is +inf everywhere")]
    ZeroTerminal,

    #[error("protocol is singular at t = {t}: the rate out of state {state} diverges")]
    TerminalSingularity { t: f64, state: usize },

    #[error("grid protocol has a negative rate {value} for {name} at node {index}")]
    NegativeRate {
        name: &'static str,
        index: usize,
        value: f64,
    },

    #[error("step h = {h} too large: h * rate = {product} >= 1 at t = {t}")]
    StepTooLarge { h: f64, t: f64, product: f64 },

    #[error("enumeration over {n_steps} steps exceeds the bound of {max} steps; use sampling instead")]
    EnumerationTooLarge { n_steps: usize, max: usize },

    #[error("absolute continuity violated at t = {t}: reference rate for {from}->{to} is zero")]
    AbsoluteContinuity { t: f64, from: usize, to: usize },

    #[error("logarithm of `{term}` diverges at t = {t}")]
    LogDivergence { term: &'static str, t: f64 },

    #[error("marginal reaches zero at t = {t} (state {state})")]
    MarginalVanishes { t: f64, state: usize },

    #[error("sampler could not bracket the holding time out of state {state} from t = {t}")]
    HazardBracket { state: usize, t: f64 },

    #[error("erasure not enforced: path ends in state {state} although an erasure protocol was requested")]
    ErasureNotEnforced { state: usize },

    #[error("ODE integration failed at x = {x}: {reason}")]
    Integration { x: f64, reason: String },

    #[error("iterative proportional fitting did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("at least {min} samples are required, got {got}")]
    TooFewSamples { min: usize, got: usize },
}
