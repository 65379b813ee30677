use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("line search failed at iteration {iteration}: no admissible step above {step_floor:e} (energy {energy})")]
    LineSearchFailure {
        iteration: usize,
        energy: f64,
        step_floor: f64,
    },

    #[error("minimizer hit the iteration cap {iterations} with gradient norm {grad_norm:e} > {tol:e}")]
    MaxIterations {
        iterations: usize,
        grad_norm: f64,
        tol: f64,
    },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single configuration problem; `line` is 1-based when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| match i.line {
            Some(l) => format!("  line {l}: {}", i.message),
            None => format!("  {}", i.message),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 validation, 3 solver failure, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Invariant(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
