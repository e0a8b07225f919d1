//! One-line `error[category]: message` reports.

use std::fmt;

use sgrec::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Config,
    Data,
    Artifact,
    Diverged,
    Io,
}

impl Category {
    fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Data => "data",
            Category::Artifact => "artifact",
            Category::Diverged => "diverged",
            Category::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub message: String,
}

impl Failure {
    pub fn new(category: Category, message: impl fmt::Display) -> Self {
        Self {
            category,
            message: message.to_string().replace('\n', " "),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Self::new(Category::Usage, message)
    }

    pub fn artifact(message: impl fmt::Display) -> Self {
        Self::new(Category::Artifact, message)
    }

    pub fn exit_code(&self) -> u8 {
        match self.category {
            Category::Usage => 2,
            Category::Config => 3,
            Category::Data => 4,
            Category::Artifact => 5,
            Category::Diverged => 6,
            Category::Io => 7,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category.name(), self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::Parse { .. } | Error::Invalid(_) => Category::Data,
            Error::Diverged { .. } => Category::Diverged,
            Error::Io(_) => Category::Io,
            Error::Tensor(_) => Category::Artifact,
        };
        Failure::new(category, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Category::Io, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let category = if e.downcast_ref::<std::io::Error>().is_some() {
            Category::Io
        } else {
            Category::Artifact
        };
        Failure::new(category, format!("{e:#}"))
    }
}
