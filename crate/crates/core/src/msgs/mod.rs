//! Schema-driven messages and their JSON byte encoding.

mod codec;
pub mod convert;
mod schema;
mod value;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

pub use codec::{decode, encode, Codec, DecodeMode};
pub use schema::{
    parse_schema_file, render_schema_file, FieldDef, FieldType, MessageSchema, SchemaRegistry,
    Shape, BUILTIN_SCHEMAS,
};
pub use value::{MessageValue, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    Missing,
    Unknown,
    WrongType { expected: String },
    WrongLength { expected: usize, found: usize },
    NonFinite,
    OutOfRange,
}

/// One offending field, addressed by a dotted path such as `states[2].x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub path: String,
    pub kind: IssueKind,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::Missing => write!(f, "{}: missing required field", self.path),
            IssueKind::Unknown => write!(f, "{}: unknown field", self.path),
            IssueKind::WrongType { expected } => write!(f, "{}: expected {expected}", self.path),
            IssueKind::WrongLength { expected, found } => {
                write!(f, "{}: expected length {expected}, found {found}", self.path)
            }
            IssueKind::NonFinite => write!(f, "{}: non-finite number", self.path),
            IssueKind::OutOfRange => write!(f, "{}: integer out of range", self.path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issues(pub Vec<FieldIssue>);

impl fmt::Display for Issues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl Issues {
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|i| i.path.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MsgError {
    #[error("{line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("duplicate field '{field}' in message '{schema}'")]
    DuplicateField { schema: String, field: String },
    #[error("duplicate message definition '{0}'")]
    DuplicateSchema(String),
    #[error("field '{field}' of '{schema}' references unknown type '{ty}'")]
    UnknownType {
        schema: String,
        field: String,
        ty: String,
    },
    #[error("unknown schema '{0}'")]
    UnknownSchema(String),
    #[error("validation failed: {0}")]
    Validation(Issues),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(Issues),
}
