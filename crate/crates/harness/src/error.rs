use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] flowscore::Error),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("unsupported dimension {0}: scatter output needs a 2-dimensional target")]
    UnsupportedDimension(usize),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(format!("json: {e}"))
    }
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        use flowscore::Error as E;
        match self {
            Self::Config(_) | Self::UnsupportedDimension(_) => 2,
            Self::Io(_) | Self::MissingCheckpoint(_) => 4,
            Self::Seed { source, .. } => source.exit_code(),
            Self::Core(e) => match e {
                E::InvalidConfig(_)
                | E::DimensionMismatch { .. }
                | E::UnsupportedForTarget(_)
                | E::UnboundSlot(_)
                | E::InsufficientSeeds(_) => 2,
                E::Divergence { .. } | E::Domain(_) | E::DegenerateWeights => 3,
            },
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self::Seed {
            seed,
            source: Box::new(self),
        }
    }
}
