//! Batch front-end for `ou-design`: JSON run configurations in, CSV
//! tables out.

pub mod commands;
pub mod config;
pub mod figure1;
pub mod table;

use thiserror::Error;

pub use commands::{run, Output};
pub use config::{parse_config, read_config, Command, ConfigError, RunConfig};
pub use figure1::run_figure1;
pub use table::{num, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),

    #[error("numeric failure: {0}")]
    Numeric(#[from] ou_design::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => EXIT_CONFIG,
            RunError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

/// Builds the global rayon pool from `OU_DESIGN_THREADS` when it is set.
pub fn init_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("OU_DESIGN_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError::Field {
                field: "OU_DESIGN_THREADS".into(),
                message: format!("expected a positive integer, got `{raw}`"),
            })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::Field {
            field: "OU_DESIGN_THREADS".into(),
            message: e.to_string(),
        })
}
