//! Experiment outcomes and their exit codes.

use std::fmt;

use mflab_core::Error;

/// Outcome of an experiment, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
    Regime,
    Divergence,
    Config,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Config => 2,
            Status::Regime => 3,
            Status::Divergence => 4,
            Status::Inconclusive => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Config => "config_error",
            Status::Regime => "regime_error",
            Status::Divergence => "divergence",
            Status::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// An error that ends an experiment early.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { status: Status::Config, message: message.into() }
    }

    pub fn io(e: std::io::Error) -> Self {
        Failure::config(format!("output error: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Regime { .. } => Status::Regime,
            Error::Diverged { .. } | Error::NonFiniteEnergy { .. } | Error::Tuning { .. } => Status::Divergence,
            Error::Inconclusive { .. } => Status::Inconclusive,
            _ => Status::Config,
        };
        Failure { status, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::config(format!("output error: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_status_wins() {
        let all = [Status::Pass, Status::Inconclusive, Status::Fail, Status::Regime];
        assert_eq!(all.iter().max(), Some(&Status::Regime));
        assert_eq!(Status::Inconclusive.code(), 5);
        assert_eq!(Failure::from(Error::Diverged { time: 1.0, replica: 2 }).status, Status::Divergence);
    }
}
