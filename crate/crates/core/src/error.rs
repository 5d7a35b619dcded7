use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared across the library. Every variant carries enough
/// context to locate the offending level, atom, or clause.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("level {level} is not refined by level {next}: atom {atom} splits")]
    NonNested { level: usize, next: usize, atom: usize },
    #[error("invalid probabilities: {0}")]
    BadProbability(String),
    #[error("random variable lives at level {found}, expected level {expected}")]
    LevelMismatch { expected: usize, found: usize },
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("arbitrage at level {level}, node {node}: no strictly positive deflator exists")]
    ArbitrageDetected { level: usize, node: usize },
    #[error("aggregate state-price density vanishes at level {level}, atom {atom}")]
    VanishingAggregateSpd { level: usize, atom: usize },
    #[error("value is not in the payoff space at level {level} (residual {residual:.3e})")]
    NotInPayoffSpace { level: usize, residual: f64 },
    #[error("filtration witness fails clause '{clause}': {detail}")]
    InvalidWitness { clause: String, detail: String },
    #[error("invalid preferences: {0}")]
    InvalidPreferences(String),
    #[error("perturbed consumption {value:.6e} leaves the utility domain at period {period}, atom {atom}")]
    DomainViolation { period: usize, atom: usize, value: f64 },
    #[error("aggregate state-price density is zero at period {period}, atom {atom}")]
    DivisionByZeroSpd { period: usize, atom: usize },
    #[error("wrong market class: {0}")]
    WrongMarketClass(String),
    #[error("wrong utility family: {0}")]
    WrongUtilityFamily(String),
    #[error("instance too large for the oracle: dimension {dim} exceeds {max}")]
    InstanceTooLarge { dim: usize, max: usize },
    #[error("no feasible consumption plan keeps perturbed consumption in the domain: {0}")]
    Infeasible(String),
    #[error("Newton failed to converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("root bracket not found: {0}")]
    BracketFailure(String),
    #[error("scenario generation exhausted after {attempts} rejected draws")]
    GenerationExhausted { attempts: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed input: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
