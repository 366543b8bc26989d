use std::fmt;

use twostream::ErrorKind;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Gradient check ran but some variant exceeded the tolerance.
    CheckFailed(String),
    Config(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::CheckFailed(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::CheckFailed(m) | Failure::Config(m) | Failure::Data(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<twostream::Error> for Failure {
    fn from(e: twostream::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            ErrorKind::Config => Failure::Config(msg),
            ErrorKind::Data => Failure::Data(msg),
            ErrorKind::Runtime => Failure::Runtime(msg),
        }
    }
}
