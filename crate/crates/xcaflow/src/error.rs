//! Error categories behind the command-line exit codes.

use std::fmt;

use xcaflow_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

macro_rules! marker_error {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(msg: impl Into<String>) -> Self {
                Self(msg.into())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::error::Error for $name {}
    };
}

marker_error!(UsageError);
marker_error!(DataError);
marker_error!(NumericError);

/// Exit code for an error chain: the first categorized cause wins.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if cause.is::<NumericError>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Diverged { .. } => EXIT_NUMERIC,
                CoreError::Config(_) | CoreError::Schedule { .. } | CoreError::LossWeights { .. } => EXIT_USAGE,
                CoreError::Padding { .. } | CoreError::Shape { .. } => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn categories_survive_context() {
        let e: anyhow::Result<()> = Err(CoreError::Diverged { step: 3 }.into());
        assert_eq!(exit_code(&e.context("training").unwrap_err()), EXIT_NUMERIC);
        let e = anyhow::Error::new(UsageError::new("no such preset"));
        assert_eq!(exit_code(&e), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("anything else")), EXIT_DATA);
    }
}
