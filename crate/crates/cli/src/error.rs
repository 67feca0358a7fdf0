use std::io;

use sbmc_core::limits::LimitError;
use sbmc_core::replaw::LawError;
use sbmc_core::tagged::TaggedError;
use sbmc_core::tree::TreeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Tagged(#[from] TaggedError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

fn law_code(e: &LawError) -> u8 {
    match e {
        LawError::NoMalthusianExponent { .. } => 3,
        LawError::Invalid(_) | LawError::Domain { .. } => 2,
        _ => 1,
    }
}

fn tree_code(e: &TreeError) -> u8 {
    match e {
        TreeError::CapExceeded { .. } => 4,
        TreeError::InvalidParameter(_) => 2,
        _ => 1,
    }
}

fn tagged_code(e: &TaggedError) -> u8 {
    match e {
        TaggedError::Law(l) => law_code(l),
        TaggedError::UnsupportedRegime(_) => 5,
        TaggedError::Invalid(_) => 2,
        TaggedError::PathTooShort { .. } => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Json(_) | CliError::ChecksFailed(_) => 1,
            CliError::Law(e) => law_code(e),
            CliError::Tree(e) => tree_code(e),
            CliError::Tagged(e) => tagged_code(e),
            CliError::Limit(e) => match e {
                LimitError::Law(l) => law_code(l),
                LimitError::Tree(t) => tree_code(t),
                LimitError::Tagged(t) => tagged_code(t),
                LimitError::UnsupportedRegime(_) => 5,
                LimitError::Domain { .. } | LimitError::Invalid(_) => 2,
                LimitError::EmptyInput => 1,
            },
        }
    }
}
