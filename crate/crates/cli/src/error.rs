use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{source_name}: {message}")]
    Config {
        source_name: String,
        message: String,
    },

    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error(transparent)]
    Core(#[from] isd_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input or configuration, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid { .. } => 2,
            CliError::Core(e) => match e {
                isd_core::Error::InvalidParameter { .. }
                | isd_core::Error::InvalidPatch { .. }
                | isd_core::Error::ScheduleOutOfBounds(_)
                | isd_core::Error::Raster(_) => 2,
                _ => 3,
            },
            CliError::Io { .. } | CliError::Json(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Prefixes parameter errors with the config section they came from.
pub fn in_section(section: &str) -> impl Fn(isd_core::Error) -> CliError + '_ {
    move |e| match e {
        isd_core::Error::InvalidParameter { field, reason } => CliError::Invalid {
            field: format!("{section}.{field}"),
            reason,
        },
        other => CliError::Core(other),
    }
}
