use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: disjointness violated, path set also used by group `{other}`")]
    DisjointnessViolated { path: String, other: String },
    #[error("{path}: demand must be strictly positive")]
    NonpositiveDemand { path: String },
    #[error("{path}: leading coefficient must be strictly positive")]
    ZeroLeadingCoefficient { path: String },
    #[error("{path}: coefficients must be non-negative")]
    NegativeCoefficient { path: String },
    #[error("{path}: unknown arc `{arc}`")]
    UnknownArc { path: String, arc: String },
    #[error("unknown path id {0}")]
    UnknownPath(usize),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("group subset must be nonempty")]
    EmptySubset,
    #[error("flow has {got} entries but the game has {expected} paths")]
    FlowLength { expected: usize, got: usize },
    #[error("infeasible flow: {0}")]
    InfeasibleFlow(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("enumeration needs {needed} states, budget is {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },
    #[error("instance outside solver limits: {0}")]
    TooLarge(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no atomic equilibrium exists")]
    NoAtomicEquilibrium,
    #[error("no mixed equilibrium found: {0}")]
    MixedNotFound(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("bound evaluators require a single common degree, found {0:?}")]
    MixedDegrees(Vec<usize>),
    #[error("parameter out of domain: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompositionError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("family has no regular group (every demand exponent is zero)")]
    NoRegularGroup,
    #[error("family needs one demand law per group: {groups} groups, {laws} laws")]
    LawCount { groups: usize, laws: usize },
    #[error("{path}: {message}")]
    InvalidLaw { path: String, message: String },
    #[error("group `{0}` has no tight path")]
    NoTightPath(String),
    #[error("group `{0}` loses every path in the limit game")]
    NoLimitPath(String),
    #[error("grid must be nonempty and strictly increasing")]
    InvalidGrid,
}

impl GameError {
    /// Prepends `prefix.` to the field path of schema-style errors.
    pub fn prefixed(self, prefix: &str) -> Self {
        let join = |p: String| if p.is_empty() { prefix.to_string() } else { format!("{prefix}.{p}") };
        match self {
            GameError::Schema { path, message } => GameError::Schema { path: join(path), message },
            GameError::NegativeCoefficient { path } => GameError::NegativeCoefficient { path: join(path) },
            GameError::ZeroLeadingCoefficient { path } => GameError::ZeroLeadingCoefficient { path: join(path) },
            other => other,
        }
    }
}
