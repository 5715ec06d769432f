//! Validation of a directory of `.msg` schema files as one message set.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use formation_core::msgs::{parse_schema_file, FieldType, MessageSchema, MsgError};

pub const SCHEMA_EXTENSION: &str = "msg";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

#[derive(Debug, Default)]
pub struct CheckReport {
    pub files: Vec<PathBuf>,
    /// Message name to the file that defines it.
    pub schemas: BTreeMap<String, PathBuf>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Parses every `.msg` file under `dir` (non-recursive, sorted by name) and cross-checks the set.
pub fn check_dir(dir: &Path) -> io::Result<CheckReport> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == SCHEMA_EXTENSION))
        .collect();
    files.sort();

    let mut report = CheckReport::default();
    let mut parsed: Vec<(PathBuf, MessageSchema)> = Vec::new();
    for path in &files {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                report.diagnostics.push(Diagnostic {
                    path: path.clone(),
                    message: format!("cannot read: {e}"),
                });
                continue;
            }
        };
        match parse_schema_file(&text) {
            Ok(schemas) => parsed.extend(schemas.into_iter().map(|s| (path.clone(), s))),
            Err(e @ MsgError::Parse { .. }) => report.diagnostics.push(Diagnostic {
                path: path.clone(),
                message: format!("syntax error at {e}"),
            }),
            Err(e) => report.diagnostics.push(Diagnostic {
                path: path.clone(),
                message: e.to_string(),
            }),
        }
    }

    for (path, schema) in &parsed {
        match report.schemas.get(&schema.name) {
            Some(first) => report.diagnostics.push(Diagnostic {
                path: path.clone(),
                message: format!("message '{}' is already defined in {}", schema.name, first.display()),
            }),
            None => {
                report.schemas.insert(schema.name.clone(), path.clone());
            }
        }
    }
    for (path, schema) in &parsed {
        for field in &schema.fields {
            if let FieldType::Message(ty) = &field.ty {
                if !report.schemas.contains_key(ty) {
                    report.diagnostics.push(Diagnostic {
                        path: path.clone(),
                        message: format!("field '{}' of '{}' references unknown type '{ty}'", field.name, schema.name),
                    });
                }
            }
        }
    }
    report.files = files;
    Ok(report)
}
