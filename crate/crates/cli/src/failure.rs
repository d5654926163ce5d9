//! Errors sorted by exit code.

use std::fmt::Display;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(msg: impl Display) -> Self {
        Self {
            code: EXIT_INPUT,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn degenerate(msg: impl Display) -> Self {
        Self {
            code: EXIT_DEGENERATE,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

pub trait ResultExt<T> {
    /// Bad or missing input: exit 2.
    fn input(self, context: impl Display) -> Result<T, Failure>;
    /// Valid input without a meaningful result: exit 3.
    fn degenerate(self, context: impl Display) -> Result<T, Failure>;
    /// Anything else: exit 1.
    fn internal(self, context: impl Display) -> Result<T, Failure>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn input(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into().context(context.to_string()),
        })
    }

    fn degenerate(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_DEGENERATE,
            error: e.into().context(context.to_string()),
        })
    }

    fn internal(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INTERNAL,
            error: e.into().context(context.to_string()),
        })
    }
}
