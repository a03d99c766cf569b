use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Why a local stencil was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnisolvencyReason {
    /// Fewer neighbours than polynomial basis functions.
    TooFewNeighbors,
    /// Enough neighbours, but the Gram matrix is numerically singular.
    DegenerateGeometry,
}

impl fmt::Display for UnisolvencyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnisolvencyReason::TooFewNeighbors => f.write_str("too few neighbors"),
            UnisolvencyReason::DegenerateGeometry => f.write_str("degenerate geometry"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(
        "unisolvency error ({reason}) at y={center:?}: delta={delta}, N_loc={n_local}, Q={q}{}",
        condition.map(|c| format!(", condition estimate {c:.3e}")).unwrap_or_default()
    )]
    Unisolvency {
        reason: UnisolvencyReason,
        center: Vec<f64>,
        delta: f64,
        n_local: usize,
        q: usize,
        condition: Option<f64>,
    },

    #[error(
        "zero row: the local weak-form functional at node {node} vanishes on all polynomials of degree m={degree}; \
         weak DMLPG variants will necessarily fail for m <= 1 (use m >= 2)"
    )]
    ZeroRow { node: usize, degree: usize },

    #[error("subdomain containment violated at node {node}: {detail}; choose a smaller sigma0")]
    Containment { node: usize, detail: String },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the index of the assembled row (test node) to an error.
    pub fn at_row(self, row: usize) -> Self {
        match self {
            e @ (Error::Row { .. } | Error::ZeroRow { .. } | Error::Containment { .. }) => e,
            other => Error::Row {
                row,
                source: Box::new(other),
            },
        }
    }

    /// Strips any [`Error::Row`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Row { source, .. } => source.root(),
            other => other,
        }
    }
}
